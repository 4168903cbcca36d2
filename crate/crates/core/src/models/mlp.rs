//! Fully connected ReLU network with mean-squared-error loss.
//!
//! Parameter layout: for each layer in order, the weight matrix
//! (`out × in`, row-major) followed by the bias vector (`out`).
//! Hidden layers use ReLU; the output layer is linear. The loss on a batch of
//! `N` samples is `(1/N) Σ ½‖ŷ − y‖²`. ReLU's derivative at exactly 0 is
//! taken to be 0.

use rand::Rng;

use super::hvp::hvp_fd;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::vector::{check_len, ParamVector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
}

/// Flat, row-major view of `(input, target)` pairs.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a, S> {
    pub inputs: &'a [S],
    pub targets: &'a [S],
    pub len: usize,
}

impl MlpModel {
    /// `layer_sizes` lists input width, hidden widths, output width.
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "MLP needs >= 2 positive layer sizes, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (in, out, offset of weights)
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let here = offset;
            offset += w[0] * w[1] + w[1];
            (w[0], w[1], here)
        })
    }

    /// Per-layer `(weights, biases)` views into a flat vector.
    pub fn unflatten<'a, S: Real>(&self, w: &'a ParamVector<S>) -> Result<Vec<(&'a [S], &'a [S])>> {
        check_len(self.num_params(), w.len())?;
        let s = w.as_slice();
        Ok(self
            .layers()
            .map(|(i, o, off)| (&s[off..off + i * o], &s[off + i * o..off + i * o + o]))
            .collect())
    }

    /// Inverse of [`unflatten`](Self::unflatten).
    pub fn flatten<S: Real>(&self, layers: &[(Vec<S>, Vec<S>)]) -> Result<ParamVector<S>> {
        let shapes: Vec<_> = self.layers().collect();
        check_len(shapes.len(), layers.len())?;
        let mut out = Vec::with_capacity(self.num_params());
        for ((i, o, _), (wts, bias)) in shapes.iter().zip(layers) {
            check_len(i * o, wts.len())?;
            check_len(*o, bias.len())?;
            out.extend_from_slice(wts);
            out.extend_from_slice(bias);
        }
        ParamVector::from_vec(out)
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` for every weight and bias of a layer.
    pub fn init<S: Real>(&self, rng: &mut RngStream) -> ParamVector<S> {
        let mut out = Vec::with_capacity(self.num_params());
        for (fan_in, o, _) in self.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in * o + o) {
                out.push(S::lit(rng.random_range(-bound..=bound)));
            }
        }
        ParamVector::from_vec(out).expect("bounded init is finite")
    }

    pub fn forward<S: Real>(&self, w: &ParamVector<S>, x: &[S]) -> Result<Vec<S>> {
        check_len(self.input_dim(), x.len())?;
        let layers = self.unflatten(w)?;
        let n_layers = layers.len();
        let mut h = x.to_vec();
        for (li, (wts, bias)) in layers.iter().enumerate() {
            let fan_in = h.len();
            let mut z: Vec<S> = bias
                .iter()
                .enumerate()
                .map(|(r, &b)| {
                    wts[r * fan_in..(r + 1) * fan_in]
                        .iter()
                        .zip(&h)
                        .fold(b, |acc, (&a, &x)| acc + a * x)
                })
                .collect();
            if li + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.max(S::zero()));
            }
            h = z;
        }
        Ok(h)
    }

    /// Mean ½-squared-error loss and its gradient by backpropagation.
    pub fn loss_grad<S: Real>(&self, w: &ParamVector<S>, batch: Samples<'_, S>) -> Result<(S, ParamVector<S>)> {
        self.backprop(w, batch, None)
    }

    /// Hidden-unit activity `z > 0` at `w`, sample-major then layer by layer.
    pub fn activation_pattern<S: Real>(&self, w: &ParamVector<S>, batch: Samples<'_, S>) -> Result<Vec<bool>> {
        let mut pattern = Vec::with_capacity(batch.len * self.hidden_units());
        self.backprop_with(w, batch, None, Some(&mut pattern))?;
        Ok(pattern)
    }

    /// Gradient of the network whose ReLUs are frozen to `pattern`: each
    /// hidden unit is either the identity or zero. Agrees with
    /// [`loss_grad`](Self::loss_grad) wherever the pattern is `w`'s own.
    pub fn loss_grad_frozen<S: Real>(
        &self,
        w: &ParamVector<S>,
        batch: Samples<'_, S>,
        pattern: &[bool],
    ) -> Result<(S, ParamVector<S>)> {
        check_len(batch.len * self.hidden_units(), pattern.len())?;
        self.backprop(w, batch, Some(pattern))
    }

    /// Symmetric-difference Hessian-vector product of the batch loss with
    /// the activation pattern frozen at `w`.
    ///
    /// Plain differences of a ReLU network's gradient jump by `O(1/eps)`
    /// whenever `w ± eps·v` crosses an activation boundary; freezing the
    /// pattern removes those jumps and leaves the product exact away from
    /// the boundaries.
    pub fn hvp<S: Real>(
        &self,
        w: &ParamVector<S>,
        v: &ParamVector<S>,
        batch: Samples<'_, S>,
        eps: S,
    ) -> Result<ParamVector<S>> {
        let pattern = self.activation_pattern(w, batch)?;
        hvp_fd(|x| Ok(self.loss_grad_frozen(x, batch, &pattern)?.1), w, v, eps)
    }

    fn hidden_units(&self) -> usize {
        self.layer_sizes[1..self.layer_sizes.len() - 1].iter().sum()
    }

    fn backprop<S: Real>(
        &self,
        w: &ParamVector<S>,
        batch: Samples<'_, S>,
        frozen: Option<&[bool]>,
    ) -> Result<(S, ParamVector<S>)> {
        self.backprop_with(w, batch, frozen, None)
    }

    fn backprop_with<S: Real>(
        &self,
        w: &ParamVector<S>,
        batch: Samples<'_, S>,
        frozen: Option<&[bool]>,
        mut record: Option<&mut Vec<bool>>,
    ) -> Result<(S, ParamVector<S>)> {
        if batch.len == 0 {
            return Err(Error::EmptyBatch);
        }
        let (din, dout) = (self.input_dim(), self.output_dim());
        check_len(batch.len * din, batch.inputs.len())?;
        check_len(batch.len * dout, batch.targets.len())?;
        let layers = self.unflatten(w)?;
        let shapes: Vec<_> = self.layers().collect();
        let n_layers = layers.len();
        let inv_n = S::one() / S::lit(batch.len as f64);
        let half = S::lit(0.5);

        let mut grad = vec![S::zero(); w.len()];
        let mut loss = S::zero();
        // acts[l] is the input to layer l; acts[n_layers] is the output.
        let mut acts: Vec<Vec<S>> = self.layer_sizes.iter().map(|&s| vec![S::zero(); s]).collect();
        let mut delta: Vec<S> = Vec::new();
        let mut delta_prev: Vec<S> = Vec::new();
        let hidden = self.hidden_units();
        // active[k] for the k-th hidden unit of the current sample.
        let mut active = vec![false; hidden];

        for s in 0..batch.len {
            acts[0].copy_from_slice(&batch.inputs[s * din..(s + 1) * din]);
            let mut unit = 0;
            for (li, (wts, bias)) in layers.iter().enumerate() {
                let (fan_in, fan_out, _) = shapes[li];
                let (prev, next) = acts.split_at_mut(li + 1);
                let h = &prev[li];
                let z = &mut next[0];
                for r in 0..fan_out {
                    let row = &wts[r * fan_in..(r + 1) * fan_in];
                    let mut acc = bias[r];
                    for (&a, &x) in row.iter().zip(h.iter()) {
                        acc = acc + a * x;
                    }
                    z[r] = if li + 1 < n_layers {
                        let on = match frozen {
                            Some(p) => p[s * hidden + unit],
                            None => acc > S::zero(),
                        };
                        active[unit] = on;
                        unit += 1;
                        if on {
                            acc
                        } else {
                            S::zero()
                        }
                    } else {
                        acc
                    };
                }
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.extend_from_slice(&active);
            }
            let target = &batch.targets[s * dout..(s + 1) * dout];
            delta.clear();
            for (&y_hat, &y) in acts[n_layers].iter().zip(target) {
                let e = y_hat - y;
                loss = loss + half * e * e;
                delta.push(e * inv_n);
            }
            for li in (0..n_layers).rev() {
                let (fan_in, fan_out, off) = shapes[li];
                let h = &acts[li];
                let wts = layers[li].0;
                for r in 0..fan_out {
                    let d = delta[r];
                    if d == S::zero() {
                        continue;
                    }
                    let g_row = &mut grad[off + r * fan_in..off + (r + 1) * fan_in];
                    for (g, &x) in g_row.iter_mut().zip(h.iter()) {
                        *g = *g + d * x;
                    }
                    let gb = &mut grad[off + fan_in * fan_out + r];
                    *gb = *gb + d;
                }
                if li == 0 {
                    break;
                }
                delta_prev.clear();
                delta_prev.resize(fan_in, S::zero());
                for r in 0..fan_out {
                    let d = delta[r];
                    if d == S::zero() {
                        continue;
                    }
                    for (dp, &a) in delta_prev.iter_mut().zip(&wts[r * fan_in..(r + 1) * fan_in]) {
                        *dp = *dp + a * d;
                    }
                }
                // Units of layer li-1 start at the sum of the earlier hidden widths.
                let first: usize = self.layer_sizes[1..li].iter().sum();
                for (dp, &on) in delta_prev.iter_mut().zip(&active[first..first + fan_in]) {
                    if !on {
                        *dp = S::zero();
                    }
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
        let g = ParamVector::from_vec(grad).map_err(|_| Error::non_finite("MLP gradient"))?;
        let loss = loss * inv_n;
        if !loss.is_finite() {
            return Err(Error::non_finite("MLP loss"));
        }
        Ok((loss, g))
    }

    pub fn loss<S: Real>(&self, w: &ParamVector<S>, batch: Samples<'_, S>) -> Result<S> {
        if batch.len == 0 {
            return Err(Error::EmptyBatch);
        }
        let (din, dout) = (self.input_dim(), self.output_dim());
        let mut total = S::zero();
        for s in 0..batch.len {
            let y_hat = self.forward(w, &batch.inputs[s * din..(s + 1) * din])?;
            let y = &batch.targets[s * dout..(s + 1) * dout];
            total = total + y_hat.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>();
        }
        Ok(S::lit(0.5) * total / S::lit(batch.len as f64))
    }
}
