//! Two stacked GRU layers followed by a linear head, with backpropagation
//! through time.
//!
//! Gate equations (rows ordered reset, update, candidate):
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! All parameters live in one flat vector so that the optimizer, the
//! checkpoint codec and gradient checks can treat them uniformly.

use rand::Rng;

use crate::{Error, Result};

/// Offsets of one GRU layer's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: Vec<LayerLayout>,
    pub head_w: usize,
    pub head_b: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden: usize, n_layers: usize) -> Self {
        let mut off = 0;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let input = if l == 0 { input_dim } else { hidden };
            let w_ih = off;
            let w_hh = w_ih + 3 * hidden * input;
            let b_ih = w_hh + 3 * hidden * hidden;
            let b_hh = b_ih + 3 * hidden;
            let end = b_hh + 3 * hidden;
            layers.push(LayerLayout {
                input,
                hidden,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                end,
            });
            off = end;
        }
        let head_w = off;
        let head_b = head_w + input_dim * hidden;
        let len = head_b + input_dim;
        Layout {
            input_dim,
            hidden,
            layers,
            head_w,
            head_b,
            len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruModel {
    pub layout: Layout,
    pub params: Vec<f64>,
}

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LAYERS: usize = 2;

impl GruModel {
    pub fn zeros(input_dim: usize, hidden: usize, n_layers: usize) -> Self {
        let layout = Layout::new(input_dim, hidden, n_layers);
        let params = vec![0.0; layout.len];
        GruModel { layout, params }
    }

    /// Uniform initialization in ±1/√fan_in, where fan_in is the hidden size
    /// for recurrent tensors and the head.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, n_layers: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input_dim, hidden, n_layers);
        let k = 1.0 / (hidden as f64).sqrt();
        for p in &mut m.params {
            *p = rng.random_range(-k..k);
        }
        m
    }

    pub fn from_params(input_dim: usize, hidden: usize, n_layers: usize, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(input_dim, hidden, n_layers);
        if params.len() != layout.len {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                layout.len,
                params.len()
            )));
        }
        Ok(GruModel { layout, params })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn n_layers(&self) -> usize {
        self.layout.layers.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out[n×m] = a[n×k] · w[m×k]ᵀ + bias[m]
fn affine(a: &[f64], n: usize, k: usize, w: &[f64], m: usize, bias: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &a[i * k..(i + 1) * k];
        let o = &mut out[i * m..(i + 1) * m];
        for j in 0..m {
            let wr = &w[j * k..(j + 1) * k];
            let mut s = bias[j];
            for (x, y) in row.iter().zip(wr) {
                s += x * y;
            }
            o[j] = s;
        }
    }
}

/// dw[m×k] += dy[n×m]ᵀ · a[n×k]; db[m] += Σ_n dy
fn accumulate_weight_grad(dy: &[f64], n: usize, m: usize, a: &[f64], k: usize, dw: &mut [f64], db: &mut [f64]) {
    for i in 0..n {
        let d = &dy[i * m..(i + 1) * m];
        let row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let g = d[j];
            if g == 0.0 {
                continue;
            }
            db[j] += g;
            let wr = &mut dw[j * k..(j + 1) * k];
            for (w, x) in wr.iter_mut().zip(row) {
                *w += g * x;
            }
        }
    }
}

/// da[n×k] += dy[n×m] · w[m×k]
fn accumulate_input_grad(dy: &[f64], n: usize, m: usize, w: &[f64], k: usize, da: &mut [f64]) {
    for i in 0..n {
        let d = &dy[i * m..(i + 1) * m];
        let out = &mut da[i * k..(i + 1) * k];
        for j in 0..m {
            let g = d[j];
            if g == 0.0 {
                continue;
            }
            let wr = &w[j * k..(j + 1) * k];
            for (o, x) in out.iter_mut().zip(wr) {
                *o += g * x;
            }
        }
    }
}

/// Activations of one layer at one time step, for a batch.
#[derive(Debug, Clone)]
struct StepCache {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// W_hn h + b_hn
    gh_n: Vec<f64>,
}

/// Forward pass over a batch.
///
/// `inputs` is `[batch][steps][input_dim]` flattened; returns the head output
/// `[batch][input_dim]` and, when `keep` is set, the per-step caches.
struct Forward {
    output: Vec<f64>,
    /// layer → step → cache
    caches: Vec<Vec<StepCache>>,
    /// layer → step → input [batch × input] (only when caching)
    inputs: Vec<Vec<Vec<f64>>>,
    last_hidden: Vec<f64>,
}

fn forward_batch(model: &GruModel, inputs: &[f64], batch: usize, steps: usize, keep: bool) -> Forward {
    let lay = &model.layout;
    let p = &model.params;
    let h = lay.hidden;
    let d = lay.input_dim;
    assert_eq!(inputs.len(), batch * steps * d, "input shape mismatch");

    // Re-layout to step-major [steps][batch × d].
    let mut seq: Vec<Vec<f64>> = (0..steps)
        .map(|t| {
            let mut x = Vec::with_capacity(batch * d);
            for b in 0..batch {
                let s = (b * steps + t) * d;
                x.extend_from_slice(&inputs[s..s + d]);
            }
            x
        })
        .collect();

    let mut caches = Vec::new();
    let mut layer_inputs = Vec::new();
    let mut gi = vec![0.0; batch * 3 * h];
    let mut gh = vec![0.0; batch * 3 * h];
    for l in &lay.layers {
        let mut hcur = vec![0.0; batch * h];
        let mut layer_cache = Vec::with_capacity(if keep { steps } else { 0 });
        let mut outs = Vec::with_capacity(steps);
        for x in seq.iter() {
            affine(x, batch, l.input, &p[l.w_ih..l.w_hh], 3 * h, &p[l.b_ih..l.b_hh], &mut gi);
            affine(&hcur, batch, h, &p[l.w_hh..l.b_ih], 3 * h, &p[l.b_hh..l.end], &mut gh);
            let mut r = vec![0.0; batch * h];
            let mut z = vec![0.0; batch * h];
            let mut nn = vec![0.0; batch * h];
            let mut ghn = vec![0.0; batch * h];
            let mut hnext = vec![0.0; batch * h];
            for b in 0..batch {
                let gib = &gi[b * 3 * h..(b + 1) * 3 * h];
                let ghb = &gh[b * 3 * h..(b + 1) * 3 * h];
                for j in 0..h {
                    let k = b * h + j;
                    let rj = sigmoid(gib[j] + ghb[j]);
                    let zj = sigmoid(gib[h + j] + ghb[h + j]);
                    let hn = ghb[2 * h + j];
                    let nj = (gib[2 * h + j] + rj * hn).tanh();
                    r[k] = rj;
                    z[k] = zj;
                    nn[k] = nj;
                    ghn[k] = hn;
                    hnext[k] = (1.0 - zj) * nj + zj * hcur[k];
                }
            }
            if keep {
                layer_cache.push(StepCache {
                    h_prev: hcur,
                    r,
                    z,
                    n: nn,
                    gh_n: ghn,
                });
            }
            outs.push(hnext.clone());
            hcur = hnext;
        }
        if keep {
            caches.push(layer_cache);
            layer_inputs.push(std::mem::replace(&mut seq, outs));
        } else {
            seq = outs;
        }
    }

    let last_hidden = seq.pop().unwrap_or_else(|| vec![0.0; batch * h]);
    let mut output = vec![0.0; batch * d];
    affine(&last_hidden, batch, h, &p[lay.head_w..lay.head_b], d, &p[lay.head_b..lay.len], &mut output);
    Forward {
        output,
        caches,
        inputs: layer_inputs,
        last_hidden,
    }
}

/// Raw network output for one window of `steps × input_dim` values.
pub fn gru_forward(model: &GruModel, window: &[f64]) -> Result<Vec<f64>> {
    let d = model.input_dim();
    if d == 0 || window.is_empty() || window.len() % d != 0 {
        return Err(Error::Contract(format!(
            "window length {} is not a positive multiple of input dim {d}",
            window.len()
        )));
    }
    Ok(forward_batch(model, window, 1, window.len() / d, false).output)
}

/// Outputs for a batch `[batch][steps][input_dim]`.
pub fn gru_forward_batch(model: &GruModel, inputs: &[f64], batch: usize, steps: usize) -> Vec<f64> {
    forward_batch(model, inputs, batch, steps, false).output
}

/// Root mean square error over all batch entries and output components.
pub fn rmse(outputs: &[f64], targets: &[f64]) -> f64 {
    let s: f64 = outputs.iter().zip(targets).map(|(y, t)| (y - t) * (y - t)).sum();
    (s / outputs.len() as f64).sqrt()
}

/// Below this loss the RMSE gradient is taken as zero.
pub const RMSE_FLOOR: f64 = 1e-12;

/// Loss and gradient of the batch RMSE with respect to every parameter.
pub fn gru_backward(model: &GruModel, inputs: &[f64], targets: &[f64], batch: usize, steps: usize) -> Result<(f64, Vec<f64>)> {
    if batch == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let lay = &model.layout;
    let p = &model.params;
    let h = lay.hidden;
    let d = lay.input_dim;
    if targets.len() != batch * d {
        return Err(Error::Contract("target shape mismatch".into()));
    }
    let fwd = forward_batch(model, inputs, batch, steps, true);
    let loss = rmse(&fwd.output, targets);
    let mut grad = vec![0.0; lay.len];
    if !loss.is_finite() {
        return Ok((loss, grad));
    }
    if loss < RMSE_FLOOR {
        return Ok((loss, grad));
    }

    let scale = 1.0 / (batch as f64 * d as f64 * loss);
    let dy: Vec<f64> = fwd.output.iter().zip(targets).map(|(y, t)| (y - t) * scale).collect();

    // Head.
    {
        let (gw, gb) = grad[lay.head_w..lay.len].split_at_mut(lay.head_b - lay.head_w);
        accumulate_weight_grad(&dy, batch, d, &fwd.last_hidden, h, gw, gb);
    }
    let mut dh_top = vec![0.0; batch * h];
    accumulate_input_grad(&dy, batch, d, &p[lay.head_w..lay.head_b], h, &mut dh_top);

    // Gradient flowing into each step's output of the current layer.
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; batch * h]; steps];
    if steps > 0 {
        d_out[steps - 1] = dh_top;
    }

    let mut dgi = vec![0.0; batch * 3 * h];
    let mut dgh = vec![0.0; batch * 3 * h];
    for (li, l) in lay.layers.iter().enumerate().rev() {
        let caches = &fwd.caches[li];
        let xs = &fwd.inputs[li];
        let mut d_in: Vec<Vec<f64>> = vec![vec![0.0; batch * l.input]; steps];
        let mut dh_next = vec![0.0; batch * h];
        for t in (0..steps).rev() {
            let c = &caches[t];
            for b in 0..batch {
                for j in 0..h {
                    let k = b * h + j;
                    let dh = d_out[t][k] + dh_next[k];
                    let (r, z, n) = (c.r[k], c.z[k], c.n[k]);
                    let dn = dh * (1.0 - z);
                    let dz = dh * (c.h_prev[k] - n);
                    dh_next[k] = dh * z;
                    let da_n = dn * (1.0 - n * n);
                    let dr = da_n * c.gh_n[k];
                    let da_r = dr * r * (1.0 - r);
                    let da_z = dz * z * (1.0 - z);
                    let g = b * 3 * h;
                    dgi[g + j] = da_r;
                    dgi[g + h + j] = da_z;
                    dgi[g + 2 * h + j] = da_n;
                    dgh[g + j] = da_r;
                    dgh[g + h + j] = da_z;
                    dgh[g + 2 * h + j] = da_n * r;
                }
            }
            {
                let (w_ih, rest) = grad[l.w_ih..l.end].split_at_mut(l.w_hh - l.w_ih);
                let (w_hh, rest) = rest.split_at_mut(l.b_ih - l.w_hh);
                let (b_ih, b_hh) = rest.split_at_mut(l.b_hh - l.b_ih);
                accumulate_weight_grad(&dgi, batch, 3 * h, &xs[t], l.input, w_ih, b_ih);
                accumulate_weight_grad(&dgh, batch, 3 * h, &c.h_prev, h, w_hh, b_hh);
            }
            accumulate_input_grad(&dgi, batch, 3 * h, &p[l.w_ih..l.w_hh], l.input, &mut d_in[t]);
            accumulate_input_grad(&dgh, batch, 3 * h, &p[l.w_hh..l.b_ih], h, &mut dh_next);
        }
        d_out = d_in;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_sizes() {
        let l = Layout::new(4, 128, 2);
        let first = 3 * 128 * 4 + 3 * 128 * 128 + 6 * 128;
        let second = 3 * 128 * 128 * 2 + 6 * 128;
        assert_eq!(l.len, first + second + 4 * 128 + 4);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = GruModel::zeros(4, 8, 2);
        let y = gru_forward(&m, &[0.3; 40]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn hand_evaluated_single_step() {
        // One layer, 2 hidden units, D = 1, window [1], h0 = 0.
        let mut m = GruModel::zeros(1, 2, 1);
        let l = m.layout.layers[0];
        // W_ih rows: r0 r1 z0 z1 n0 n1 (input dim 1)
        let w_ih = [0.5, -0.5, 0.25, 1.0, 2.0, -1.0];
        let b_ih = [0.1, 0.0, 0.0, -0.2, 0.0, 0.3];
        let b_hh = [0.0, 0.2, 0.1, 0.0, 0.5, -0.4];
        m.params[l.w_ih..l.w_hh].copy_from_slice(&w_ih);
        m.params[l.b_ih..l.b_hh].copy_from_slice(&b_ih);
        m.params[l.b_hh..l.end].copy_from_slice(&b_hh);
        // Head: y = 1.5 h0 - 2 h1 + 0.05
        let hw = m.layout.head_w;
        m.params[hw] = 1.5;
        m.params[hw + 1] = -2.0;
        m.params[m.layout.head_b] = 0.05;

        // Hand evaluation with h_prev = 0 (so W_hh h = 0):
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let r0 = sig(0.5 + 0.1 + 0.0);
        let r1 = sig(-0.5 + 0.0 + 0.2);
        let z0 = sig(0.25 + 0.0 + 0.1);
        let z1 = sig(1.0 - 0.2 + 0.0);
        let n0 = (2.0 + 0.0 + r0 * 0.5).tanh();
        let n1 = (-1.0 + 0.3 + r1 * -0.4).tanh();
        let h0 = (1.0 - z0) * n0;
        let h1 = (1.0 - z1) * n1;
        let expect = 1.5 * h0 - 2.0 * h1 + 0.05;

        let y = gru_forward(&m, &[1.0]).unwrap();
        assert!((y[0] - expect).abs() < 1e-14, "{} vs {}", y[0], expect);
        // Frozen value of the expression above.
        assert!((y[0] - 1.093_235_496_2).abs() < 1e-9, "{}", y[0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = GruModel::init(4, 6, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = gru_forward(&m, &w).unwrap();
        let b = gru_forward(&m, &w).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(gru_forward(&m, &w[..7]).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let m = GruModel::init(4, 5, 2, &mut ChaCha8Rng::seed_from_u64(2));
        let xs: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 0.11).cos()).collect();
        let batch = gru_forward_batch(&m, &xs, 2, 3);
        let a = gru_forward(&m, &xs[..12]).unwrap();
        let b = gru_forward(&m, &xs[12..]).unwrap();
        for i in 0..4 {
            assert!((batch[i] - a[i]).abs() < 1e-15);
            assert!((batch[4 + i] - b[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let m = GruModel::init(4, 3, 2, &mut ChaCha8Rng::seed_from_u64(3));
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let y = gru_forward(&m, &xs).unwrap();
        let (loss, g) = gru_backward(&m, &xs, &y, 1, 3).unwrap();
        assert!(loss < RMSE_FLOOR);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let m = GruModel::init(4, 3, 2, &mut ChaCha8Rng::seed_from_u64(4));
        let xs: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let t = [0.9, 0.1, -0.2, 0.3];
        let (l1, g1) = gru_backward(&m, &xs, &t, 1, 3).unwrap();
        let xs2: Vec<f64> = xs.iter().chain(&xs).copied().collect();
        let t2: Vec<f64> = t.iter().chain(&t).copied().collect();
        let (l2, g2) = gru_backward(&m, &xs2, &t2, 2, 3).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-12), "{a} {b}");
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let m = GruModel::zeros(4, 2, 2);
        assert!(gru_backward(&m, &[], &[], 0, 3).is_err());
    }
}
