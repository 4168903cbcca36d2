//! Line-oriented task-set manifest for reproducibility audits.
//!
//! One header line, then one line per task of space-separated `key=value`
//! fields. Reals are printed with 17 significant digits; vectors and
//! matrices (row-major) are `;`-separated.

use std::fmt::Write;

use super::{Backend, FamilyKind, TaskSet};
use crate::scalar::Real;

pub(crate) fn real<S: Real>(x: S) -> String {
    format!("{:.16e}", x.as_f64())
}

fn reals<S: Real>(xs: &[S]) -> String {
    xs.iter().map(|&x| real(x)).collect::<Vec<_>>().join(";")
}

pub fn write_manifest<S: Real>(set: &TaskSet<S>) -> String {
    let family = match set.kind() {
        FamilyKind::Quadratic => "quadratic",
        FamilyKind::Sinewave => "sinewave",
        FamilyKind::Blob => "blob",
    };
    let mut out = format!("# metamem taskset family={family} n={} dim={}", set.len(), set.dim());
    if let Some(l) = set.lipschitz() {
        let _ = write!(out, " L={}", real(l));
    }
    out.push('\n');
    for t in set.tasks() {
        let _ = write!(out, "id={} ", t.id());
        match t.backend() {
            Backend::Sinewave {
                amplitude,
                phase,
                model,
            } => {
                let _ = write!(
                    out,
                    "backend=sinewave amplitude={} phase={} layers={:?}",
                    real(*amplitude),
                    real(*phase),
                    model.layer_sizes()
                );
            }
            Backend::Quadratic { model, noise_std } => {
                let _ = write!(
                    out,
                    "backend=quadratic d={} noise_std={} A={} b={} c={}",
                    model.dim(),
                    real(*noise_std),
                    reals(model.matrix()),
                    reals(model.linear().as_slice()),
                    real(model.offset())
                );
            }
            Backend::Blob {
                data,
                class_counts,
                model,
            } => {
                let _ = write!(
                    out,
                    "backend=blob samples={} class_counts={} layers={:?}",
                    data.len(),
                    class_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
                    model.layer_sizes()
                );
            }
        }
        out.push('\n');
    }
    out.replace(", ", ",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tasks::{gen_quad_tasks, gen_sinewave_tasks};

    #[test]
    fn sinewave_manifest_lines() {
        let set = gen_sinewave_tasks::<f64>(&[40, 40]).unwrap();
        let m = write_manifest(&set);
        let lines: Vec<_> = m.lines().collect();
        assert_eq!(lines.len(), 26);
        assert!(lines[0].starts_with("# metamem taskset family=sinewave n=25"));
        assert_eq!(
            lines[1],
            "id=1 backend=sinewave amplitude=1.0000000000000000e0 phase=6.2831853071795862e-1 layers=[1,40,40,1]"
        );
    }

    #[test]
    fn quadratic_manifest_is_deterministic() {
        let a = gen_quad_tasks::<f64>(3, 2, 4.0, &mut RngStream::root(1)).unwrap();
        let b = gen_quad_tasks::<f64>(3, 2, 4.0, &mut RngStream::root(1)).unwrap();
        assert_eq!(write_manifest(&a), write_manifest(&b));
        assert!(write_manifest(&a)
            .lines()
            .nth(2)
            .unwrap()
            .contains("backend=quadratic d=2"));
    }
}
