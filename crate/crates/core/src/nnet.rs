//! Small dense networks with explicit reverse-mode gradients.
//!
//! The denoiser is a residual MLP over the concatenation of the flattened
//! noisy patch, the condition vector, and a sinusoidal time embedding. The
//! condition-only prior reuses the same machinery without a time input.
//! Gradients are accumulated by hand over the fixed topology rather than
//! through a general tape, which keeps them checkable against central
//! finite differences.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Condition, Patch};
use crate::error::{Error, Result};
use crate::schedule::{skip_coefficients, ScheduleConfig};

/// Base of the sinusoidal time embedding.
pub const TIME_EMBED_BASE: f64 = 10_000.0;

/// Sinusoidal embedding of a time level: entry 2i is sin(t / B^(2i/dim)),
/// entry 2i+1 is cos of the same argument.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "time embedding dimension {dim} must be even and positive"
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("time level {t} must be non-negative")));
    }
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let scale = TIME_EMBED_BASE.powf(2.0 * i as f64 / dim as f64);
        let arg = t / scale;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    Ok(out)
}

/// Fixed layer structure of an MLP. Hidden layers share one width so the
/// inner layers can carry residual connections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    /// Apply tanh to the output layer (used by the prior).
    pub squash_output: bool,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config("topology dimensions must be positive".into()));
        }
        if !(2..=4).contains(&self.hidden_layers) {
            return Err(Error::Config(format!(
                "hidden layer count {} outside 2..=4",
                self.hidden_layers
            )));
        }
        Ok(())
    }

    /// (input, output) dimensions of each linear layer in order.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut dims = vec![(self.input_dim, w)];
        for _ in 1..self.hidden_layers {
            dims.push((w, w));
        }
        dims.push((w, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights and biases of an MLP with the residual structure described above.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    topology: Topology,
    /// Row-major (out × in) weight matrix per linear layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn matvec(w: &[f64], in_dim: usize, x: &[f64], out: &mut [f64], bias: &[f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * in_dim..(r + 1) * in_dim];
        *o = bias[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// y += W^T d
fn matvec_transpose_add(w: &[f64], in_dim: usize, d: &[f64], y: &mut [f64]) {
    for (r, dr) in d.iter().enumerate() {
        let row = &w[r * in_dim..(r + 1) * in_dim];
        for (yc, wc) in y.iter_mut().zip(row) {
            *yc += dr * wc;
        }
    }
}

/// Activations cached by a forward pass, consumed by the backward pass.
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

impl MlpParams {
    /// Xavier-uniform initialization, biases zero, deterministic in the seed.
    pub fn init(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, o) in topology.layer_dims() {
            let limit = (6.0 / (i + o) as f64).sqrt();
            weights.push(
                (0..i * o)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                    .collect(),
            );
            biases.push(vec![0.0; o]);
        }
        Ok(Self { topology, weights, biases })
    }

    /// All-zero parameters (useful as the "untrained" reference in tests).
    pub fn zeros(topology: Topology) -> Result<Self> {
        topology.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, o) in topology.layer_dims() {
            weights.push(vec![0.0; i * o]);
            biases.push(vec![0.0; o]);
        }
        Ok(Self { topology, weights, biases })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn param_count(&self) -> usize {
        self.topology.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Flatten all parameters (per layer: weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Rebuild parameters from a flat array in [`flatten`] order.
    pub fn from_flat(topology: Topology, flat: &[f64]) -> Result<Self> {
        topology.validate()?;
        if flat.len() != topology.param_count() {
            return Err(Error::Dimension(format!(
                "flat parameter array has {} entries, topology needs {}",
                flat.len(),
                topology.param_count()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut at = 0;
        for (i, o) in topology.layer_dims() {
            weights.push(flat[at..at + i * o].to_vec());
            at += i * o;
            biases.push(flat[at..at + o].to_vec());
            at += o;
        }
        Ok(Self { topology, weights, biases })
    }

    /// Read one parameter by flat index (test support).
    pub fn get_param(&self, index: usize) -> f64 {
        self.flatten()[index]
    }

    /// Write one parameter by flat index (test support).
    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < at + w.len() {
                w[index - at] = value;
                return;
            }
            at += w.len();
            if index < at + b.len() {
                b[index - at] = value;
                return;
            }
            at += b.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.out)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.topology.input_dim {
            return Err(Error::Dimension(format!(
                "input length {} vs topology input {}",
                input.len(),
                self.topology.input_dim
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let hidden = self.topology.hidden_layers;
        let width = self.topology.hidden_width;
        let mut pre = Vec::with_capacity(hidden);
        let mut act = Vec::with_capacity(hidden);

        let mut p = vec![0.0; width];
        matvec(&self.weights[0], self.topology.input_dim, input, &mut p, &self.biases[0]);
        let a: Vec<f64> = p.iter().map(|&x| silu(x)).collect();
        pre.push(p);
        act.push(a);

        for k in 1..hidden {
            let mut p = vec![0.0; width];
            matvec(&self.weights[k], width, &act[k - 1], &mut p, &self.biases[k]);
            // residual connection between equal-width hidden layers
            let a: Vec<f64> = act[k - 1]
                .iter()
                .zip(&p)
                .map(|(prev, &x)| prev + silu(x))
                .collect();
            pre.push(p);
            act.push(a);
        }

        let mut out = vec![0.0; self.topology.output_dim];
        matvec(
            &self.weights[hidden],
            width,
            &act[hidden - 1],
            &mut out,
            &self.biases[hidden],
        );
        if self.topology.squash_output {
            for o in out.iter_mut() {
                *o = o.tanh();
            }
        }
        Ok(ForwardCache { input: input.to_vec(), pre, act, out })
    }

    /// Accumulate gradients of a scalar loss into `grads`, given dL/d(out).
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grads: &mut Gradients) {
        let hidden = self.topology.hidden_layers;
        let width = self.topology.hidden_width;

        let mut dpre_out: Vec<f64> = if self.topology.squash_output {
            cache.out.iter().zip(dout).map(|(&o, &d)| d * (1.0 - o * o)).collect()
        } else {
            dout.to_vec()
        };

        // output layer
        let a_last = &cache.act[hidden - 1];
        for (r, &d) in dpre_out.iter().enumerate() {
            let gw = &mut grads.weights[hidden][r * width..(r + 1) * width];
            for (g, a) in gw.iter_mut().zip(a_last) {
                *g += d * a;
            }
            grads.biases[hidden][r] += d;
        }
        let mut da = vec![0.0; width];
        matvec_transpose_add(&self.weights[hidden], width, &dpre_out, &mut da);

        // residual hidden layers, top down
        for k in (1..hidden).rev() {
            dpre_out = cache.pre[k].iter().zip(&da).map(|(&p, &d)| d * silu_deriv(p)).collect();
            let a_prev = &cache.act[k - 1];
            for (r, &d) in dpre_out.iter().enumerate() {
                let gw = &mut grads.weights[k][r * width..(r + 1) * width];
                for (g, a) in gw.iter_mut().zip(a_prev) {
                    *g += d * a;
                }
                grads.biases[k][r] += d;
            }
            // identity path of the residual carries da through unchanged
            matvec_transpose_add(&self.weights[k], width, &dpre_out, &mut da);
        }

        // first hidden layer
        dpre_out = cache.pre[0].iter().zip(&da).map(|(&p, &d)| d * silu_deriv(p)).collect();
        let in_dim = self.topology.input_dim;
        for (r, &d) in dpre_out.iter().enumerate() {
            let gw = &mut grads.weights[0][r * in_dim..(r + 1) * in_dim];
            for (g, a) in gw.iter_mut().zip(&cache.input) {
                *g += d * a;
            }
            grads.biases[0][r] += d;
        }
    }
}

/// Gradient accumulator with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn shape_matches(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(a, b)| a.len() == b.len())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Mean-squared-error loss and gradients for a plain MLP over a batch of
/// (input, target) pairs: loss = mean over the batch of ‖target - out‖².
pub fn mse_backprop(
    mlp: &MlpParams,
    batch: &[(&[f64], &[f64])],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(mlp);
    let mut loss = 0.0;
    for (input, target) in batch {
        if target.len() != mlp.topology.output_dim {
            return Err(Error::Dimension(format!(
                "target length {} vs output {}",
                target.len(),
                mlp.topology.output_dim
            )));
        }
        let cache = mlp.forward_cached(input)?;
        let mut dout = vec![0.0; target.len()];
        for ((d, &o), &t) in dout.iter_mut().zip(&cache.out).zip(*target) {
            let r = o - t;
            loss += r * r * inv_b;
            *d = 2.0 * r * inv_b;
        }
        mlp.backward(&cache, &dout, &mut grads);
    }
    Ok((loss, grads))
}

/// Adaptive-moment optimizer state (first/second moments, bias-corrected).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Gradients,
    v: Gradients,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub stabilizer: f64,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            stabilizer: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One adaptive-moment update. Rejects the step (state untouched) when the
/// gradients are non-finite or mis-shaped.
pub fn optimizer_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if !grads.shape_matches(params) {
        return Err(Error::Dimension("gradient shape does not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradients; step rejected".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr_t = state.learning_rate * (1.0 - state.beta2.powi(t)).sqrt()
        / (1.0 - state.beta1.powi(t));
    for l in 0..params.weights.len() {
        for (idx, slot) in [
            (&mut params.weights[l], &grads.weights[l]),
            (&mut params.biases[l], &grads.biases[l]),
        ]
        .into_iter()
        .enumerate()
        {
            let (p, g) = slot;
            let (m, v) = if idx == 0 {
                (&mut state.m.weights[l], &mut state.v.weights[l])
            } else {
                (&mut state.m.biases[l], &mut state.v.biases[l])
            };
            for i in 0..p.len() {
                m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
                v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + state.stabilizer);
            }
        }
    }
    Ok(())
}

/// Weights of the consistency denoiser together with its input layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    mlp: MlpParams,
    patch_rows: usize,
    patch_cols: usize,
    cond_dim: usize,
    time_dim: usize,
}

impl DenoiserParams {
    pub fn init(
        patch_rows: usize,
        patch_cols: usize,
        cond_dim: usize,
        time_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        if time_dim == 0 || !time_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time embedding dimension {time_dim} must be even and positive"
            )));
        }
        let patch_len = patch_rows * patch_cols;
        let topology = Topology {
            input_dim: patch_len + cond_dim + time_dim,
            hidden_width,
            hidden_layers,
            output_dim: patch_len,
            squash_output: false,
        };
        Ok(Self {
            mlp: MlpParams::init(topology, seed)?,
            patch_rows,
            patch_cols,
            cond_dim,
            time_dim,
        })
    }

    /// All-zero denoiser with the same layout (zero output everywhere).
    pub fn zeros(
        patch_rows: usize,
        patch_cols: usize,
        cond_dim: usize,
        time_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
    ) -> Result<Self> {
        let mut d = Self::init(patch_rows, patch_cols, cond_dim, time_dim, hidden_width, hidden_layers, 0)?;
        d.mlp = MlpParams::zeros(d.mlp.topology.clone())?;
        Ok(d)
    }

    /// Rebuild a denoiser around an existing MLP, checking that the layer
    /// dimensions agree with the declared input layout.
    pub(crate) fn from_mlp(
        mlp: MlpParams,
        patch_rows: usize,
        patch_cols: usize,
        cond_dim: usize,
        time_dim: usize,
    ) -> Result<Self> {
        let patch_len = patch_rows * patch_cols;
        let topo = mlp.topology();
        if topo.input_dim != patch_len + cond_dim + time_dim
            || topo.output_dim != patch_len
            || topo.squash_output
        {
            return Err(Error::Dimension("MLP topology does not fit a denoiser".into()));
        }
        Ok(Self { mlp, patch_rows, patch_cols, cond_dim, time_dim })
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpParams {
        &mut self.mlp
    }

    pub fn patch_rows(&self) -> usize {
        self.patch_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.patch_cols
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    fn assemble_input(&self, x_t: &Patch, cond: &Condition, t: f64) -> Result<Vec<f64>> {
        if x_t.rows() != self.patch_rows || x_t.cols() != self.patch_cols {
            return Err(Error::Dimension(format!(
                "patch {}x{} vs denoiser {}x{}",
                x_t.rows(),
                x_t.cols(),
                self.patch_rows,
                self.patch_cols
            )));
        }
        if cond.dim() != self.cond_dim {
            return Err(Error::Dimension(format!(
                "condition dim {} vs denoiser {}",
                cond.dim(),
                self.cond_dim
            )));
        }
        if !x_t.is_finite() || !cond.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite denoiser input".into()));
        }
        let embed = time_embed(t, self.time_dim)?;
        let mut input = Vec::with_capacity(self.mlp.topology.input_dim);
        input.extend_from_slice(x_t.data());
        input.extend_from_slice(cond.values());
        input.extend_from_slice(&embed);
        Ok(input)
    }

    /// Raw network output F(x_t, cond, t), before the skip combination.
    pub fn forward_raw(&self, x_t: &Patch, cond: &Condition, t: f64) -> Result<Patch> {
        let input = self.assemble_input(x_t, cond, t)?;
        let out = self.mlp.forward(&input)?;
        Patch::from_vec(self.patch_rows, self.patch_cols, out)
    }

    /// Consistency output c_skip(t)·x_t + c_out(t)·F(x_t, cond, t). At the
    /// minimum level this returns x_t exactly for any parameters.
    pub fn consistency_forward(
        &self,
        x_t: &Patch,
        cond: &Condition,
        t: f64,
        cfg: &ScheduleConfig,
    ) -> Result<Patch> {
        let coeffs = skip_coefficients(t, cfg)?;
        let raw = self.forward_raw(x_t, cond, t)?;
        let mut out = x_t.clone();
        for (o, r) in out.data_mut().iter_mut().zip(raw.data()) {
            *o = coeffs.c_skip * *o + coeffs.c_out * r;
        }
        Ok(out)
    }
}

/// One training example for [`backprop`].
pub struct TrainItem<'a> {
    pub x_t: &'a Patch,
    pub cond: &'a Condition,
    pub t: f64,
    pub target: &'a Patch,
}

enum LossPath<'a> {
    Consistency(&'a ScheduleConfig),
    Raw,
}

fn backprop_inner(
    params: &DenoiserParams,
    batch: &[TrainItem],
    path: LossPath,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(&params.mlp);
    let mut loss = 0.0;
    for item in batch {
        if !item.target.same_shape(item.x_t) {
            return Err(Error::Dimension("target shape differs from input".into()));
        }
        let (c_skip, c_out) = match path {
            LossPath::Consistency(cfg) => {
                let k = skip_coefficients(item.t, cfg)?;
                (k.c_skip, k.c_out)
            }
            LossPath::Raw => (0.0, 1.0),
        };
        let input = params.assemble_input(item.x_t, item.cond, item.t)?;
        let cache = params.mlp.forward_cached(&input)?;
        let mut dout = vec![0.0; cache.out.len()];
        for (j, d) in dout.iter_mut().enumerate() {
            let f = c_skip * item.x_t.data()[j] + c_out * cache.out[j];
            let r = f - item.target.data()[j];
            loss += r * r * inv_b;
            *d = 2.0 * r * c_out * inv_b;
        }
        params.mlp.backward(&cache, &dout, &mut grads);
    }
    Ok((loss, grads))
}

/// Loss and exact gradients of the consistency objective over a batch:
/// loss = mean of ‖target - (c_skip·x_t + c_out·F(x_t, cond, t))‖².
pub fn backprop(
    params: &DenoiserParams,
    batch: &[TrainItem],
    cfg: &ScheduleConfig,
) -> Result<(f64, Gradients)> {
    backprop_inner(params, batch, LossPath::Consistency(cfg))
}

/// Loss and gradients of plain regression through the raw network output,
/// used when the consistency constraint is ablated.
pub fn backprop_raw(params: &DenoiserParams, batch: &[TrainItem]) -> Result<(f64, Gradients)> {
    backprop_inner(params, batch, LossPath::Raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_denoiser(seed: u64) -> DenoiserParams {
        DenoiserParams::init(3, 3, 2, 8, 8, 2, seed).unwrap()
    }

    fn patch_of(vals: &[f64]) -> Patch {
        Patch::from_vec(3, 3, vals.to_vec()).unwrap()
    }

    fn random_patch(rng: &mut ChaCha8Rng) -> Patch {
        Patch::from_vec(3, 3, (0..9).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn time_embed_at_zero() {
        let e = time_embed(0.0, 8).unwrap();
        for i in 0..4 {
            assert_eq!(e[2 * i], 0.0);
            assert_eq!(e[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn time_embed_bounded() {
        for &t in &[0.0, 0.02, 1.0, 19.2, 80.0, 1e6] {
            let e = time_embed(t, 32).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn time_embed_separates_endpoints() {
        let a = time_embed(0.02, 32).unwrap();
        let b = time_embed(80.0, 32).unwrap();
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.1, "embeddings too close: {max_diff}");
    }

    #[test]
    fn time_embed_rejects_odd_dim() {
        assert!(matches!(time_embed(1.0, 7), Err(Error::Config(_))));
        assert!(matches!(time_embed(-1.0, 8), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_params_zero_output() {
        let d = DenoiserParams::zeros(3, 3, 2, 8, 8, 2).unwrap();
        let x = patch_of(&[0.5; 9]);
        let cond = Condition(vec![0.3, 0.7]);
        let out = d.forward_raw(&x, &cond, 1.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let d = tiny_denoiser(42);
        let x = patch_of(&[0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9]);
        let cond = Condition(vec![0.2, 0.9]);
        let a = d.forward_raw(&x, &cond, 2.5).unwrap();
        let b = d.forward_raw(&x, &cond, 2.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jacobian_not_degenerate() {
        let d = tiny_denoiser(7);
        let cond = Condition(vec![0.2, 0.9]);
        let x = patch_of(&[0.1; 9]);
        let base = d.forward_raw(&x, &cond, 2.5).unwrap();
        let mut bumped = x.clone();
        bumped.data_mut()[4] += 1e-4;
        let out = d.forward_raw(&bumped, &cond, 2.5).unwrap();
        let moved = out
            .data()
            .iter()
            .zip(base.data())
            .any(|(a, b)| (a - b).abs() > 1e-9);
        assert!(moved, "perturbing an input coordinate must change the output");
    }

    #[test]
    fn consistency_boundary_returns_input() {
        let cfg = ScheduleConfig::default();
        let d = tiny_denoiser(3);
        let x = patch_of(&[0.9, -0.9, 0.1, 0.0, 0.5, -0.5, 0.3, -0.3, 1.0]);
        let cond = Condition(vec![0.6, 0.1]);
        let out = d.consistency_forward(&x, &cond, cfg.epsilon, &cfg).unwrap();
        for (o, x) in out.data().iter().zip(x.data()) {
            assert!((o - x).abs() <= 1e-12);
        }
    }

    #[test]
    fn consistency_with_zero_net_scales_by_c_skip() {
        let cfg = ScheduleConfig::default();
        let d = DenoiserParams::zeros(3, 3, 2, 8, 8, 2).unwrap();
        let x = patch_of(&[0.4; 9]);
        let cond = Condition(vec![0.5, 0.5]);
        let t = 5.0;
        let k = skip_coefficients(t, &cfg).unwrap();
        let out = d.consistency_forward(&x, &cond, t, &cfg).unwrap();
        for (o, x) in out.data().iter().zip(x.data()) {
            assert!((o - k.c_skip * x).abs() < 1e-15);
        }
    }

    #[test]
    fn consistency_at_t_max_matches_coefficient_oracle() {
        let cfg = ScheduleConfig::default();
        let d = tiny_denoiser(11);
        let x = patch_of(&[0.25; 9]);
        let cond = Condition(vec![0.1, 0.8]);
        let raw = d.forward_raw(&x, &cond, 80.0).unwrap();
        let out = d.consistency_forward(&x, &cond, 80.0, &cfg).unwrap();
        // frozen oracle values for c_skip(80) and c_out(80)
        let (cs, co) = (3.908_051_123_061_341e-5, 0.499_865_237_102_427_7);
        for ((o, x), r) in out.data().iter().zip(x.data()).zip(raw.data()) {
            assert!((o - (cs * x + co * r)).abs() < 1e-12);
        }
    }

    #[test]
    fn self_target_gives_zero_loss_and_gradient() {
        let cfg = ScheduleConfig::default();
        let d = tiny_denoiser(5);
        let x = patch_of(&[0.2; 9]);
        let cond = Condition(vec![0.4, 0.6]);
        let t = 3.0;
        let target = d.consistency_forward(&x, &cond, t, &cfg).unwrap();
        let items = [TrainItem { x_t: &x, cond: &cond, t, target: &target }];
        let (loss, grads) = backprop(&d, &items, &cfg).unwrap();
        assert!(loss.abs() < 1e-24);
        assert!(grads.flatten().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn doubling_residual_quadruples_loss() {
        let cfg = ScheduleConfig::default();
        let d = tiny_denoiser(6);
        let x = patch_of(&[0.2; 9]);
        let cond = Condition(vec![0.4, 0.6]);
        let t = 3.0;
        let out = d.consistency_forward(&x, &cond, t, &cfg).unwrap();
        let shift = |scale: f64| {
            let data: Vec<f64> = out.data().iter().map(|v| v + scale * 0.1).collect();
            Patch::from_vec(3, 3, data).unwrap()
        };
        let t1 = shift(1.0);
        let t2 = shift(2.0);
        let items1 = [TrainItem { x_t: &x, cond: &cond, t, target: &t1 }];
        let items2 = [TrainItem { x_t: &x, cond: &cond, t, target: &t2 }];
        let (l1, _) = backprop(&d, &items1, &cfg).unwrap();
        let (l2, _) = backprop(&d, &items2, &cfg).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let cfg = ScheduleConfig::default();
        let d = tiny_denoiser(1);
        assert!(matches!(backprop(&d, &[], &cfg), Err(Error::Usage(_))));
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let cfg = ScheduleConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..3u64 {
            let mut d = tiny_denoiser(seed);
            let x1 = random_patch(&mut rng);
            let x2 = random_patch(&mut rng);
            let t1 = random_patch(&mut rng);
            let t2 = random_patch(&mut rng);
            let c1 = Condition(vec![0.3, 0.8]);
            let c2 = Condition(vec![0.9, 0.1]);
            let items = [
                TrainItem { x_t: &x1, cond: &c1, t: 2.0, target: &t1 },
                TrainItem { x_t: &x2, cond: &c2, t: 19.0, target: &t2 },
            ];
            let (_, grads) = backprop(&d, &items, &cfg).unwrap();
            let analytic = grads.flatten();
            let h = 1e-5;
            let mut worst = 0.0f64;
            for (i, &expected) in analytic.iter().enumerate() {
                let orig = d.mlp().get_param(i);
                d.mlp_mut().set_param(i, orig + h);
                let (lp, _) = backprop(&d, &items, &cfg).unwrap();
                d.mlp_mut().set_param(i, orig - h);
                let (lm, _) = backprop(&d, &items, &cfg).unwrap();
                d.mlp_mut().set_param(i, orig);
                let numeric = (lp - lm) / (2.0 * h);
                worst = worst.max(relative_error(numeric, expected));
            }
            assert!(worst <= 1e-4, "gradient check failed: max rel err {worst}");
        }
    }

    #[test]
    fn raw_backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut d = tiny_denoiser(21);
        let x = random_patch(&mut rng);
        let target = random_patch(&mut rng);
        let cond = Condition(vec![0.5, 0.2]);
        let items = [TrainItem { x_t: &x, cond: &cond, t: 0.02, target: &target }];
        let (_, grads) = backprop_raw(&d, &items).unwrap();
        let analytic = grads.flatten();
        let h = 1e-5;
        for i in (0..d.param_count()).step_by(17) {
            let orig = d.mlp().get_param(i);
            d.mlp_mut().set_param(i, orig + h);
            let (lp, _) = backprop_raw(&d, &items).unwrap();
            d.mlp_mut().set_param(i, orig - h);
            let (lm, _) = backprop_raw(&d, &items).unwrap();
            d.mlp_mut().set_param(i, orig);
            let numeric = (lp - lm) / (2.0 * h);
            assert!(relative_error(numeric, analytic[i]) <= 1e-4);
        }
    }

    #[test]
    fn optimizer_zero_gradient_keeps_params() {
        let topo = Topology {
            input_dim: 2,
            hidden_width: 4,
            hidden_layers: 2,
            output_dim: 1,
            squash_output: false,
        };
        let mut mlp = MlpParams::init(topo, 1).unwrap();
        let before = mlp.flatten();
        let grads = Gradients::zeros_like(&mlp);
        let mut state = OptimizerState::new(&mlp, 1e-3);
        optimizer_step(&mut mlp, &grads, &mut state).unwrap();
        assert_eq!(state.step_count(), 1);
        assert_eq!(mlp.flatten(), before);
    }

    #[test]
    fn optimizer_moves_against_constant_gradient() {
        let topo = Topology {
            input_dim: 1,
            hidden_width: 4,
            hidden_layers: 2,
            output_dim: 1,
            squash_output: false,
        };
        let mut mlp = MlpParams::zeros(topo).unwrap();
        let mut grads = Gradients::zeros_like(&mlp);
        grads.weights[0][0] = 1.0;
        let mut state = OptimizerState::new(&mlp, 1e-2);
        let mut prev = mlp.get_param(0);
        for _ in 0..20 {
            optimizer_step(&mut mlp, &grads, &mut state).unwrap();
            let now = mlp.get_param(0);
            assert!(now < prev, "positive gradient must push the parameter down");
            prev = now;
        }
    }

    #[test]
    fn optimizer_rejects_non_finite_gradients() {
        let topo = Topology {
            input_dim: 1,
            hidden_width: 4,
            hidden_layers: 2,
            output_dim: 1,
            squash_output: false,
        };
        let mut mlp = MlpParams::init(topo, 2).unwrap();
        let before = mlp.flatten();
        let mut grads = Gradients::zeros_like(&mlp);
        grads.weights[0][0] = f64::NAN;
        let mut state = OptimizerState::new(&mlp, 1e-3);
        assert!(matches!(
            optimizer_step(&mut mlp, &grads, &mut state),
            Err(Error::Numeric(_))
        ));
        assert_eq!(mlp.flatten(), before);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn optimizer_minimizes_quadratic_bowl() {
        // loss = mean over two probes of ||target - out||^2 with a tiny
        // linear head degenerates to a quadratic in the parameters; the
        // optimizer should collapse it by orders of magnitude.
        let topo = Topology {
            input_dim: 2,
            hidden_width: 2,
            hidden_layers: 2,
            output_dim: 1,
            squash_output: false,
        };
        let mut mlp = MlpParams::init(topo, 3).unwrap();
        let inputs: [&[f64]; 2] = [&[1.0, 0.0], &[0.0, 1.0]];
        let targets: [&[f64]; 2] = [&[0.5], &[-0.5]];
        let batch: Vec<(&[f64], &[f64])> =
            inputs.iter().zip(targets.iter()).map(|(i, t)| (*i, *t)).collect();
        let (initial, _) = mse_backprop(&mlp, &batch).unwrap();
        let mut state = OptimizerState::new(&mlp, 1e-2);
        for _ in 0..200 {
            let (_, grads) = mse_backprop(&mlp, &batch).unwrap();
            optimizer_step(&mut mlp, &grads, &mut state).unwrap();
        }
        let (final_loss, _) = mse_backprop(&mlp, &batch).unwrap();
        assert!(final_loss < 1e-3 * initial, "loss {initial} -> {final_loss}");
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let d = tiny_denoiser(4);
        let mut x = patch_of(&[0.0; 9]);
        x.data_mut()[0] = f64::INFINITY;
        let cond = Condition(vec![0.5, 0.5]);
        assert!(matches!(d.forward_raw(&x, &cond, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let d = tiny_denoiser(4);
        let x = Patch::zeros(2, 2);
        let cond = Condition(vec![0.5, 0.5]);
        assert!(matches!(d.forward_raw(&x, &cond, 1.0), Err(Error::Dimension(_))));
        let x = Patch::zeros(3, 3);
        let cond = Condition(vec![0.5; 5]);
        assert!(matches!(d.forward_raw(&x, &cond, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn flatten_roundtrip() {
        let d = tiny_denoiser(17);
        let flat = d.mlp().flatten();
        let rebuilt = MlpParams::from_flat(d.mlp().topology().clone(), &flat).unwrap();
        assert_eq!(*d.mlp(), rebuilt);
    }

    #[test]
    fn forward_and_backward_are_bit_identical_across_calls() {
        let cfg = ScheduleConfig::default();
        let d = tiny_denoiser(23);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_patch(&mut rng);
        let target = random_patch(&mut rng);
        let cond = Condition(vec![0.7, 0.2]);
        let items = [TrainItem { x_t: &x, cond: &cond, t: 4.5, target: &target }];
        let (l1, g1) = backprop(&d, &items, &cfg).unwrap();
        let (l2, g2) = backprop(&d, &items, &cfg).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
