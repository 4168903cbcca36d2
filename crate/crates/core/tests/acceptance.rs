//! Acceptance criteria, one `PASS`/`FAIL` line each.
//!
//! Runs without the libtest harness so every line is printed. The process
//! fails on any red criterion except those listed in `KNOWN_RED`, which
//! still print `FAIL` with their measurements.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use metamem::fedsim::{init_server, run_federated_with, run_round, ClientState, FedParams};
use metamem::harness::run_experiment;
use metamem::models::{hvp_fd, MlpModel};
use metamem::optim::{meta_grad_estimate, run_optimizer, run_optimizer_traced, MemoryStore, TermBatches};
use metamem::oracle::OracleHandle;
use metamem::sampling::sample_without_replacement;
use metamem::tasks::{gen_quad_tasks, gen_quad_tasks_with, Batch, QuadSpec, SINE_X_MAX, SINE_X_MIN};
use metamem::vector::ParamVector;
use metamem::{load_config, Algorithm, Error, FedMode, Result, RngStream, RunConfig, TaskSet64};
use rand::Rng;

/// Criteria that fail at desk scale; see the README.
const KNOWN_RED: &[u32] = &[6];

type Outcome = Result<(bool, String)>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn max_rel(a: &ParamVector<f64>, b: &ParamVector<f64>) -> f64 {
    a.max_abs_diff(b).unwrap() / b.norm_inf().max(1e-12)
}

fn trajectory(cfg: &RunConfig, set: &TaskSet64) -> Result<Vec<ParamVector<f64>>> {
    let mut out = Vec::new();
    run_optimizer_traced(cfg, set, |s, _| out.push(s.w.clone()))?;
    Ok(out)
}

fn fed_trajectory(cfg: &RunConfig, set: &TaskSet64, params: &FedParams<f64>) -> Result<Vec<ParamVector<f64>>> {
    let oracle = OracleHandle::best(set, params.step.alpha);
    let mut server = init_server(cfg, set);
    let mut clients: Vec<ClientState<f64>> = (0..set.len()).map(ClientState::new).collect();
    let mut out = vec![server.w_global.clone()];
    for _ in 0..params.rounds {
        run_round(&mut server, &mut clients, set, params, &oracle)?;
        out.push(server.w_global.clone());
    }
    Ok(out)
}

fn max_dev(a: &[ParamVector<f64>], b: &[ParamVector<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x.max_abs_diff(y).unwrap())
        .fold(0.0, f64::max)
}

fn oracle_agreement() -> Outcome {
    let (mut fd_worst, mut est_worst) = (0.0f64, 0.0f64);
    for s in 0..12u64 {
        let mut rng = RngStream::root(1000 + s);
        let n = 1 + (s as usize * 5) % 8;
        let d = 1 + (s as usize * 3) % 8;
        let set = gen_quad_tasks::<f64>(n, d, 5.0, &mut rng)?;
        let alpha = 0.05 + 0.01 * s as f64;
        let h = OracleHandle::analytic(&set, alpha)?;
        let w = ParamVector::from_vec((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let exact = h.exact_meta_grad(&w)?;
        fd_worst = fd_worst.max(max_rel(
            &h.fd_meta_grad(&w, OracleHandle::<f64>::default_fd_eps(&w))?,
            &exact,
        ));

        let all: Vec<usize> = (0..n).collect();
        let mut memory = MemoryStore::new(n, d);
        for i in 0..n {
            memory.set(i, h.exact_inner(i, &w)?, 0)?;
        }
        let batches = all
            .iter()
            .map(|&i| {
                let mut r = rng.substream("pop", i as u64);
                Ok(TermBatches {
                    s2: set.get(i).sample_batch(1, &mut r)?,
                    s3: set.get(i).sample_batch(1, &mut r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let est = meta_grad_estimate(&set, &all, &w, &memory, &batches, alpha)?;
        est_worst = est_worst.max(est.max_abs_diff(&exact)?);
    }
    Ok((
        fd_worst < 1e-6 && est_worst <= 1e-12,
        format!(
            "12 task sets: fd relative error {fd_worst:.2e} (< 1e-6), estimator deviation {est_worst:.2e} (<= 1e-12)"
        ),
    ))
}

fn reduction_identities() -> Outcome {
    let spec = QuadSpec {
        noise_std: 0.5,
        ..QuadSpec::new(8, 4, 4.0)
    };
    let set = gen_quad_tasks_with::<f64>(&spec, &mut RngStream::root(21))?;
    let base = RunConfig {
        n_tasks: 8,
        tasks_per_iter: 3,
        batch_size: 2,
        iterations: 500,
        dim: 4,
        alpha: 0.1,
        eta: 0.03,
        seed: 7,
        oracle_every: 0,
        ..RunConfig::default()
    };
    let v1 = trajectory(
        &RunConfig {
            algorithm: Algorithm::MomlV1,
            beta: 1.0,
            ..base.clone()
        },
        &set,
    )?;
    let bsgd = trajectory(
        &RunConfig {
            algorithm: Algorithm::Bsgd,
            ..base.clone()
        },
        &set,
    )?;
    let d1 = max_dev(&v1, &bsgd);

    let fed = RunConfig {
        rounds: 50,
        local_steps: 3,
        ..base.clone()
    };
    let lm_cfg = RunConfig {
        algorithm: Algorithm::LocalMoml,
        beta: 1.0,
        ..fed.clone()
    };
    let pf_cfg = RunConfig {
        algorithm: Algorithm::PerFedavg,
        ..fed
    };
    let lm = fed_trajectory(&lm_cfg, &set, &FedParams::from_config(&lm_cfg, &set)?)?;
    let pf = fed_trajectory(&pf_cfg, &set, &FedParams::from_config(&pf_cfg, &set)?)?;
    let d2 = max_dev(&lm, &pf);

    let one = RunConfig {
        tasks_per_iter: 8,
        local_steps: 1,
        rounds: 60,
        iterations: 60,
        ..base
    };
    let h1_cfg = RunConfig {
        algorithm: Algorithm::LocalMoml,
        beta: 1.0,
        ..one.clone()
    };
    let h1 = fed_trajectory(&h1_cfg, &set, &FedParams::from_config(&h1_cfg, &set)?)?;
    let full = trajectory(
        &RunConfig {
            algorithm: Algorithm::Bsgd,
            ..one
        },
        &set,
    )?;
    let d3 = max_dev(&h1, &full);
    Ok((
        d1 == 0.0 && d2 == 0.0 && d3 <= 1e-12,
        format!("v1(beta=1) vs bsgd over 500 its {d1:e}; local_moml(beta=1) vs per_fedavg over 50 rounds {d2:e}; H=1,B=n vs bsgd {d3:.2e} (<= 1e-12)"),
    ))
}

fn gradient_numerics() -> Outcome {
    let model = MlpModel::new(vec![1, 40, 40, 1])?;
    let mut worst = 0.0f64;
    for s in 0..10u64 {
        let mut rng = RngStream::root(300 + s);
        let w: ParamVector<f64> = model.init(&mut rng.substream("w", 0));
        let xs: Vec<f64> = (0..3).map(|_| rng.random_range(SINE_X_MIN..SINE_X_MAX)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (x + 0.6).sin()).collect();
        let batch = Batch::new(1, 1, xs, ys)?;
        let g = model.loss_grad(&w, batch.samples())?.1;
        let mut fd = Vec::with_capacity(w.len());
        for k in 0..w.len() {
            let mut plus = w.clone().into_vec();
            let mut minus = plus.clone();
            plus[k] += 1e-6;
            minus[k] -= 1e-6;
            let lp = model.loss(&ParamVector::from_vec(plus)?, batch.samples())?;
            let lm = model.loss(&ParamVector::from_vec(minus)?, batch.samples())?;
            fd.push((lp - lm) / 2e-6);
        }
        worst = worst.max(max_rel(&ParamVector::from_vec(fd)?, &g));
    }
    let mut hvp_worst = 0.0f64;
    for s in 0..5u64 {
        let mut rng = RngStream::root(400 + s);
        let set = gen_quad_tasks::<f64>(1, 6, 8.0, &mut rng)?;
        let q = set.get(0).quadratic().unwrap();
        let w = ParamVector::from_vec((0..6).map(|_| rng.random_range(-3.0..3.0)).collect())?;
        let v = ParamVector::from_vec((0..6).map(|_| rng.random_range(-3.0..3.0)).collect())?;
        let fd = hvp_fd(|x| q.grad(x), &w, &v, 1e-4)?;
        hvp_worst = hvp_worst.max(fd.max_abs_diff(&q.hvp(&v)?)?);
    }
    Ok((
        worst < 1e-6 && hvp_worst <= 1e-6,
        format!("backprop vs fd over 10 draws {worst:.2e} (< 1e-6); hvp_fd vs Av {hvp_worst:.2e} (<= 1e-6)"),
    ))
}

fn deterministic_descent() -> Outcome {
    let set = gen_quad_tasks::<f64>(6, 5, 5.0, &mut RngStream::root(31))?;
    let h = OracleHandle::analytic(&set, 0.1)?;
    let eta = 1.0 / h.meta_smoothness()?;
    let cfg = RunConfig {
        algorithm: Algorithm::MomlV1,
        beta: 1.0,
        n_tasks: 6,
        tasks_per_iter: 6,
        iterations: 200,
        dim: 5,
        alpha: 0.1,
        eta,
        seed: 3,
        oracle_every: 1,
        ..RunConfig::default()
    };
    let traj = trajectory(&cfg, &set)?;
    let reference = h.exact_gd_reference(&traj[0], eta, 200)?;
    let dev = max_dev(&traj, &reference);
    let values: Vec<f64> = traj.iter().map(|w| h.exact_meta_value(w)).collect::<Result<_>>()?;
    let monotone = values.windows(2).all(|p| p[1] <= p[0] + 1e-12 * p[0].abs().max(1.0));
    Ok((
        dev <= 1e-12 && monotone,
        format!("200 steps at eta = 1/L_F = {eta:.4}: max deviation {dev:.2e} (<= 1e-12), F monotone: {monotone}"),
    ))
}

fn tail_tracking(cfg: &RunConfig) -> Result<f64> {
    let set = metamem::harness::build_taskset(cfg)?;
    let records = run_optimizer(cfg, &set)?;
    let start = 3 * cfg.iterations / 4;
    let tail: Vec<f64> = records
        .iter()
        .filter(|r| r.t as usize > start)
        .filter_map(|r| r.tracking_error)
        .collect();
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

fn tracking_advantage() -> Outcome {
    let moml = load_config(configs_dir().join("quadratic_tracking_beta05.cfg"))?;
    let plain = load_config(configs_dir().join("quadratic_tracking_beta1.cfg"))?;
    let (mut wins, mut a_sum, mut b_sum, mut rows) = (0, 0.0, 0.0, Vec::new());
    for k in 0..5u64 {
        let a = tail_tracking(&RunConfig {
            seed: moml.seed + k,
            ..moml.clone()
        })?;
        let b = tail_tracking(&RunConfig {
            seed: plain.seed + k,
            ..plain.clone()
        })?;
        wins += (a < b) as usize;
        a_sum += a;
        b_sum += b;
        rows.push(format!("{a:.4}/{b:.4}"));
    }
    let ratio = b_sum / a_sum;
    Ok((
        wins >= 4 && ratio >= 2.0,
        format!("final-quarter tracking error beta=0.5/beta=1 per seed [{}]; wins {wins}/5 (>= 4), pooled ratio {ratio:.2} (>= 2)", rows.join(", ")),
    ))
}

fn sinewave_ordering() -> Outcome {
    let mut means = BTreeMap::new();
    let mut parts = Vec::new();
    for name in [
        "sinewave_k1_bsgd",
        "sinewave_k1_moml",
        "sinewave_k5_bsgd",
        "sinewave_k5_moml",
    ] {
        let cfg = load_config(configs_dir().join(format!("{name}.cfg")))?;
        let s = run_experiment(&cfg, None)?;
        parts.push(format!(
            "{name} {:.3}±{:.3} (eta {})",
            s.test_error_mean, s.test_error_std, s.cfg.eta
        ));
        means.insert(name, s.test_error_mean);
    }
    let k1 = means["sinewave_k1_moml"] <= 0.8 * means["sinewave_k1_bsgd"];
    let k5 = means["sinewave_k5_moml"] <= means["sinewave_k5_bsgd"];
    Ok((
        k1 && k5,
        format!(
            "{}; K=1 moml <= 0.8 bsgd: {k1}; K=5 moml <= bsgd: {k5}",
            parts.join("; ")
        ),
    ))
}

fn fed_grad_ratio(cfg: &RunConfig, set: &TaskSet64) -> Result<(f64, u64)> {
    let params = FedParams::from_config(cfg, set)?;
    let out = run_federated_with(cfg, set, &params)?;
    let first = out.reports.first().and_then(|r| r.oracle_grad_norm).unwrap();
    let last = out.reports.last().and_then(|r| r.oracle_grad_norm).unwrap();
    Ok((last / first, out.server.comms))
}

fn federated_descent() -> Outcome {
    let base = load_config(configs_dir().join("federated_local_moml.cfg"))?;
    let set = metamem::harness::build_taskset(&base)?;
    // Tune eta on seed 0, report on the config's seed.
    let mut best = (f64::INFINITY, base.eta);
    for eta in [0.001, 0.005, 0.01, 0.05, 0.1] {
        let cfg = RunConfig {
            seed: 0,
            eta,
            ..base.clone()
        };
        match fed_grad_ratio(&cfg, &set) {
            Ok((ratio, _)) if ratio < best.0 => best = (ratio, eta),
            Ok(_) | Err(Error::NonFinite(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let cfg = RunConfig { eta: best.1, ..base };
    let (ratio, comms) = fed_grad_ratio(&cfg, &set)?;
    let expect = 2 * (cfg.tasks_per_iter * cfg.rounds) as u64;

    let mut wiped = FedParams::from_config(&cfg, &set)?;
    let kept = fed_trajectory(&cfg, &set, &wiped)?;
    wiped.wipe_memory = true;
    let wiped = fed_trajectory(&cfg, &set, &wiped)?;
    let same = cfg.fed_mode == FedMode::CrossDevice && kept == wiped;
    Ok((
        ratio <= 0.1 && comms == expect && same,
        format!("eta {} tuned on seed 0; ||grad F(w_R)||/||grad F(w_1)|| = {ratio:.4} (<= 0.1); comms {comms} (= 2BR = {expect}); wipe equivalence bitwise: {same}", cfg.eta),
    ))
}

fn sampling_statistics() -> Outcome {
    let (n, b, iters) = (25usize, 3usize, 100_000u64);
    let root = RngStream::root(77);
    let mut counts = vec![0u64; n];
    let mut last = vec![None::<u64>; n];
    let (mut gaps, mut gap_sum, mut gap_sq) = (0u64, 0.0, 0.0);
    for t in 0..iters {
        for i in sample_without_replacement(&mut root.substream("tasks", t), n, b)? {
            counts[i] += 1;
            if let Some(prev) = last[i] {
                let g = (t - prev) as f64;
                gaps += 1;
                gap_sum += g;
                gap_sq += g * g;
            }
            last[i] = Some(t);
        }
    }
    let p = b as f64 / n as f64;
    let freq_dev = counts
        .iter()
        .map(|&c| (c as f64 / iters as f64 - p).abs())
        .fold(0.0, f64::max);
    let mean = gap_sum / gaps as f64;
    let second = gap_sq / gaps as f64;
    let target = n as f64 / b as f64;
    let bound = 2.0 * target * target;
    Ok((
        freq_dev <= 0.01 && (mean / target - 1.0).abs() <= 0.05 && second <= bound,
        format!("inclusion deviation {freq_dev:.4} (<= 0.01); gap mean {mean:.3} vs n/B {target:.3}; second moment {second:.2} (<= {bound:.2})"),
    ))
}

fn v2_schedule() -> Outcome {
    let set = gen_quad_tasks::<f64>(10, 4, 4.0, &mut RngStream::root(41))?;
    let l = set.lipschitz().unwrap();
    let bound = RunConfig::eta0_bound(l);
    let base = RunConfig {
        algorithm: Algorithm::MomlV2,
        n_tasks: 10,
        tasks_per_iter: 3,
        batch_size: 2,
        dim: 4,
        alpha: 0.1,
        eta0: 0.9 * bound,
        iterations: 300,
        oracle_every: 0,
        ..RunConfig::default()
    };
    let mut flat = true;
    run_optimizer_traced(
        &RunConfig {
            hessian_lipschitz: Some(0.0),
            ..base.clone()
        },
        &set,
        |_, o| {
            if let Some(o) = o {
                flat &= o.eta == base.eta0 / (4.0 * l);
            }
        },
    )?;
    let (mut identity, mut capped, mut prev) = (true, true, base.eta0 / (4.0 * l));
    run_optimizer_traced(
        &RunConfig {
            hessian_lipschitz: Some(2.0),
            ..base.clone()
        },
        &set,
        |_, o| {
            if let Some(o) = o {
                let expect = 6.0 * l * l * base.eta0.powf(-1.0 / 3.0) * prev;
                identity &= (o.beta - expect).abs() <= 1e-15 * expect;
                capped &= o.beta <= 1.0;
                prev = o.eta;
            }
        },
    )?;
    let text = format!("algorithm = moml_v2\nseed = 1\nL = {l}\neta0 = {}\n", 1.01 * bound);
    let rejected = matches!(RunConfig::parse(&text, "bad.cfg"), Err(Error::ConfigParse { .. }));
    Ok((
        flat && identity && capped && rejected,
        format!("rho=0 eta constant at eta0/(4L): {flat}; beta_t identity every iteration: {identity}; beta_t <= 1: {capped}; eta0 above (2/(3L))^(3/2) rejected at load: {rejected}"),
    ))
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "timing.txt" {
            out.insert(name, fs::read(&path)?);
        }
    }
    Ok(out)
}

fn replay_determinism() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let mut names = Vec::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(configs_dir())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.sort();
    let mut all_same = true;
    for path in paths.iter().filter(|p| p.extension().is_some_and(|e| e == "cfg")) {
        let cfg = load_config(path)?;
        // Shortened horizons keep the check fast; everything else is as shipped.
        let cfg = RunConfig {
            iterations: cfg.iterations.min(300),
            rounds: cfg.rounds.min(20),
            num_seeds: cfg.num_seeds.min(2),
            ..cfg
        };
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let a = tmp.path().join(format!("{stem}_a"));
        let b = tmp.path().join(format!("{stem}_b"));
        run_experiment(&cfg, Some(&a))?;
        run_experiment(&cfg, Some(&b))?;
        let same = dir_bytes(&a)? == dir_bytes(&b)?;
        all_same &= same;
        names.push(format!("{stem}:{}", if same { "same" } else { "DIFF" }));
    }
    Ok((
        all_same && !names.is_empty(),
        format!("{} configs replayed: {}", names.len(), names.join(" ")),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "oracle agreement", oracle_agreement),
        (2, "reduction identities", reduction_identities),
        (3, "gradient and HVP numerics", gradient_numerics),
        (4, "deterministic descent", deterministic_descent),
        (5, "tracking-error advantage", tracking_advantage),
        (6, "sinewave ordering", sinewave_ordering),
        (7, "federated descent", federated_descent),
        (8, "sampling-law statistics", sampling_statistics),
        (9, "v2 schedule", v2_schedule),
        (10, "replay determinism", replay_determinism),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let status = if passed { "PASS" } else { "FAIL" };
        let note = if !passed && KNOWN_RED.contains(&id) {
            " [known red]"
        } else {
            ""
        };
        println!("{status} criterion {id} ({name}){note}: {detail} [{secs:.1}s]");
        if !passed && !KNOWN_RED.contains(&id) {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
