//! The regressed vector field `v(t, x[, c])`: a small fully connected network
//! with hand-written reverse-mode gradients and an Adam optimizer.
//!
//! Input layout is `[t, x, c]`. Parameters live in one flat `f64` vector;
//! each layer stores its weights (row-major, `out × in`) followed by biases.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp_stream::StreamSample;
use crate::points::Points;
use crate::rng::Rng;

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Selu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Selu => {
                if z > 0.0 {
                    SELU_LAMBDA * z
                } else {
                    SELU_LAMBDA * SELU_ALPHA * z.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Selu => {
                if a > 0.0 {
                    SELU_LAMBDA
                } else {
                    a + SELU_LAMBDA * SELU_ALPHA
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Selu => "selu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "selu" => Some(Activation::Selu),
            _ => None,
        }
    }
}

/// Network shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Dimension of `x` (and of the output).
    pub state_dim: usize,
    /// Dimension of the covariate `c`, 0 when unconditioned.
    #[serde(default)]
    pub covariate_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

impl Architecture {
    pub fn new(state_dim: usize, covariate_dim: usize, hidden: Vec<usize>) -> Self {
        Architecture {
            state_dim,
            covariate_dim,
            hidden,
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        1 + self.state_dim + self.covariate_dim
    }

    pub fn output_dim(&self) -> usize {
        self.state_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::config("state dimension must be at least 1"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be at least 1"));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.output_dim());
        let mut off = 0;
        dims.windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let shape = LayerShape {
                    n_in,
                    n_out,
                    w: off,
                    b: off + n_in * n_out,
                };
                off += n_in * n_out + n_out;
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.n_in * l.n_out + l.n_out).sum()
    }

    fn max_width(&self) -> usize {
        self.hidden
            .iter()
            .copied()
            .chain([self.input_dim(), self.output_dim()])
            .max()
            .unwrap_or(1)
    }
}

/// Network weights plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldModel {
    arch: Architecture,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Reusable row-major buffers for batched passes.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    /// `acts[0]` is the input block, `acts[k]` the output of layer `k - 1`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    fn fit(&mut self, arch: &Architecture, layers: &[LayerShape], n: usize) {
        self.acts.resize(layers.len() + 1, Vec::new());
        self.acts[0].resize(n * arch.input_dim(), 0.0);
        for (a, l) in self.acts[1..].iter_mut().zip(layers) {
            a.resize(n * l.n_out, 0.0);
        }
        let w = n * arch.max_width();
        self.delta.resize(w, 0.0);
        self.delta_prev.resize(w, 0.0);
    }
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)` on strided storage.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    debug_assert!(c.len() >= m * ldc);
    // SAFETY: callers pass slices covering the full strided extents checked
    // in debug builds above and in the shape bookkeeping of each layer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

impl VectorFieldModel {
    /// LeCun-normal weights, zero biases.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let mut params = vec![0.0; arch.param_count()];
        for l in &layers {
            let scale = (1.0 / l.n_in as f64).sqrt();
            for w in &mut params[l.w..l.w + l.n_in * l.n_out] {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        }
        Ok(VectorFieldModel { arch, layers, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::SizeMismatch {
                left: params.len(),
                right: arch.param_count(),
            });
        }
        let layers = arch.layers();
        Ok(VectorFieldModel { arch, layers, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.param_count();
        Self::from_params(arch, vec![0.0; n])
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn scratch(&self) -> Scratch {
        let mut s = Scratch::default();
        s.fit(&self.arch, &self.layers, 1);
        s
    }

    fn check_input(&self, x: &[f64], c: Option<&[f64]>) -> Result<()> {
        if x.len() != self.arch.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.state_dim,
                got: x.len(),
            });
        }
        let got_c = c.map_or(0, |c| c.len());
        if got_c != self.arch.covariate_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.covariate_dim,
                got: got_c,
            });
        }
        Ok(())
    }

    /// Forward pass over the `n` input rows already in `s.acts[0]`.
    fn propagate(&self, s: &mut Scratch, n: usize) {
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let (head, tail) = s.acts.split_at_mut(k + 1);
            let input = &head[k][..n * l.n_in];
            let out = &mut tail[0][..n * l.n_out];
            let b = &self.params[l.b..l.b + l.n_out];
            for row in out.chunks_exact_mut(l.n_out) {
                row.copy_from_slice(b);
            }
            // out += input · Wᵀ, with W stored out×in row-major
            let w = &self.params[l.w..l.w + l.n_in * l.n_out];
            gemm(n, l.n_in, l.n_out, input, (l.n_in as isize, 1), w, (1, l.n_in as isize), 1.0, out, l.n_out);
            if k != last {
                let act = self.arch.activation;
                out.iter_mut().for_each(|z| *z = act.apply(*z));
            }
        }
    }

    /// `v(t, x[, c])`.
    pub fn forward(&self, t: f64, x: &[f64], c: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_input(x, c)?;
        let mut s = self.scratch();
        let inp = &mut s.acts[0];
        inp[0] = t;
        inp[1..1 + x.len()].copy_from_slice(x);
        if let Some(c) = c {
            inp[1 + x.len()..].copy_from_slice(c);
        }
        self.propagate(&mut s, 1);
        Ok(s.acts.last().unwrap().clone())
    }

    /// Evaluate the field for every row of `xs` (flat, row-major) at a common time.
    pub fn forward_batch(
        &self,
        t: f64,
        xs: &[f64],
        cs: Option<&Points>,
        out: &mut [f64],
        s: &mut Scratch,
    ) -> Result<()> {
        let d = self.arch.state_dim;
        if xs.len() % d != 0 || out.len() != xs.len() {
            return Err(Error::SizeMismatch { left: xs.len(), right: out.len() });
        }
        let n = xs.len() / d;
        let dc = cs.map_or(0, Points::dim);
        if dc != self.arch.covariate_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.covariate_dim,
                got: dc,
            });
        }
        if let Some(c) = cs {
            if c.len() != n {
                return Err(Error::SizeMismatch { left: n, right: c.len() });
            }
        }
        if n == 0 {
            return Ok(());
        }
        s.fit(&self.arch, &self.layers, n);
        let width = self.arch.input_dim();
        for (i, row) in s.acts[0].chunks_exact_mut(width).take(n).enumerate() {
            row[0] = t;
            row[1..1 + d].copy_from_slice(&xs[i * d..(i + 1) * d]);
            if let Some(c) = cs {
                row[1 + d..].copy_from_slice(c.row(i));
            }
        }
        self.propagate(s, n);
        out.copy_from_slice(&s.acts.last().unwrap()[..n * d]);
        Ok(())
    }

    /// Mean squared-error loss over rows and its exact gradient.
    ///
    /// `inputs` rows are `[t, x, c]`, `targets` rows are velocities. The
    /// gradient is written (not accumulated) into `grad`.
    pub fn loss_and_grad_into(
        &self,
        inputs: &Points,
        targets: &Points,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> Result<f64> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        if inputs.dim() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: inputs.dim(),
            });
        }
        if targets.dim() != self.arch.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.output_dim(),
                got: targets.dim(),
            });
        }
        if targets.len() != n {
            return Err(Error::SizeMismatch { left: n, right: targets.len() });
        }
        if grad.len() != self.params.len() {
            return Err(Error::SizeMismatch {
                left: grad.len(),
                right: self.params.len(),
            });
        }
        s.fit(&self.arch, &self.layers, n);
        s.acts[0][..inputs.as_slice().len()].copy_from_slice(inputs.as_slice());
        self.propagate(s, n);

        let last = self.layers.len() - 1;
        let scale = 2.0 / n as f64;
        let mut loss = 0.0;
        let out = &s.acts[last + 1][..n * self.arch.output_dim()];
        for ((dz, &y), &target) in s.delta.iter_mut().zip(out).zip(targets.as_slice()) {
            let r = y - target;
            loss += r * r;
            *dz = scale * r;
        }
        let loss = loss / n as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: 0 });
        }

        for k in (0..=last).rev() {
            let l = self.layers[k];
            let a_in = &s.acts[k][..n * l.n_in];
            let delta = &s.delta[..n * l.n_out];
            let (gw, gb) = grad[l.w..l.b + l.n_out].split_at_mut(l.n_in * l.n_out);
            // gW = δᵀ · A
            gemm(l.n_out, n, l.n_in, delta, (1, l.n_out as isize), a_in, (l.n_in as isize, 1), 0.0, gw, l.n_in);
            gb.fill(0.0);
            for row in delta.chunks_exact(l.n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if k == 0 {
                break;
            }
            // δ_prev = (δ · W) ⊙ σ'(A)
            let w = &self.params[l.w..l.w + l.n_in * l.n_out];
            let dp = &mut s.delta_prev[..n * l.n_in];
            gemm(n, l.n_out, l.n_in, delta, (l.n_out as isize, 1), w, (l.n_in as isize, 1), 0.0, dp, l.n_in);
            let act = self.arch.activation;
            for (v, a) in dp.iter_mut().zip(a_in) {
                *v *= act.grad_from_output(*a);
            }
            std::mem::swap(&mut s.delta, &mut s.delta_prev);
        }
        Ok(loss)
    }

    /// Loss `mean ‖v(t, s) - ṡ‖²` over the samples and its gradient.
    pub fn loss_and_grad(&self, batch: &[StreamSample]) -> Result<(f64, Vec<f64>)> {
        let (inputs, targets) = self.assemble(batch)?;
        let mut grad = vec![0.0; self.params.len()];
        let mut s = self.scratch();
        let loss = self.loss_and_grad_into(&inputs, &targets, &mut grad, &mut s)?;
        Ok((loss, grad))
    }

    /// Pack stream samples into `[t, s, c]` input rows and `ṡ` target rows.
    pub fn assemble(&self, batch: &[StreamSample]) -> Result<(Points, Points)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut inputs = Points::new(self.arch.input_dim());
        let mut targets = Points::new(self.arch.output_dim());
        let mut row = Vec::with_capacity(self.arch.input_dim());
        for smp in batch {
            self.check_input(&smp.s, smp.covariate.as_deref())?;
            if smp.sdot.len() != self.arch.state_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.arch.state_dim,
                    got: smp.sdot.len(),
                });
            }
            row.clear();
            row.push(smp.t);
            row.extend_from_slice(&smp.s);
            if let Some(c) = &smp.covariate {
                row.extend_from_slice(c);
            }
            inputs.push_row(&row)?;
            targets.push_row(&smp.sdot)?;
        }
        Ok((inputs, targets))
    }

    /// Serialize to the `.sfck` text format. Floats use 17 significant
    /// digits, which round-trips every `f64` exactly.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let a = &self.arch;
        let _ = writeln!(out, "sfck 1");
        let _ = writeln!(out, "state_dim {}", a.state_dim);
        let _ = writeln!(out, "covariate_dim {}", a.covariate_dim);
        let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "hidden {}", hidden.join(" "));
        let _ = writeln!(out, "activation {}", a.activation.name());
        let _ = writeln!(out, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{p:.16e}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            what: "checkpoint",
            msg,
        };
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| bad(format!("expected `{key}`, found `{line}`")))?;
            Ok(rest.trim().to_string())
        };
        let version = header("sfck")?;
        if version != "1" {
            return Err(bad(format!("unsupported version `{version}`")));
        }
        let num = |s: String, key: &str| -> Result<usize> {
            s.parse().map_err(|_| bad(format!("bad `{key}` value `{s}`")))
        };
        let state_dim = num(header("state_dim")?, "state_dim")?;
        let covariate_dim = num(header("covariate_dim")?, "covariate_dim")?;
        let hidden = header("hidden")?
            .split_whitespace()
            .map(|h| h.parse().map_err(|_| bad(format!("bad hidden width `{h}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let act = header("activation")?;
        let activation =
            Activation::parse(&act).ok_or_else(|| bad(format!("unknown activation `{act}`")))?;
        let count = num(header("params")?, "params")?;
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(format!("bad float `{l}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if params.len() != count {
            return Err(bad(format!("expected {count} parameters, found {}", params.len())));
        }
        let arch = Architecture {
            state_dim,
            covariate_dim,
            hidden,
            activation,
        };
        Self::from_params(arch, params)
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) {
    assert_eq!(params.len(), state.m.len(), "parameter length changed");
    assert_eq!(grad.len(), state.m.len(), "gradient length mismatch");
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample(t: f64, s: Vec<f64>, sdot: Vec<f64>) -> StreamSample {
        StreamSample {
            t,
            s,
            sdot,
            covariate: None,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = VectorFieldModel::zeros(Architecture::new(2, 1, vec![8, 8])).unwrap();
        let y = m.forward(0.3, &[1.0, -4.0], Some(&[2.0])).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_identity_layer() {
        // no hidden layers: output = W [t, x] + b with W = [0 | I]
        let arch = Architecture::new(2, 0, vec![]);
        let params = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let m = VectorFieldModel::from_params(arch, params).unwrap();
        assert_eq!(m.forward(0.7, &[3.5, -1.25], None).unwrap(), vec![3.5, -1.25]);
    }

    #[test]
    fn forward_deterministic() {
        let m = VectorFieldModel::init(Architecture::new(2, 0, vec![16, 16]), &mut rng::stream(1, 0))
            .unwrap();
        let a = m.forward(0.2, &[0.1, 0.2], None).unwrap();
        let b = m.forward(0.2, &[0.1, 0.2], None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch() {
        let m = VectorFieldModel::zeros(Architecture::new(2, 0, vec![4])).unwrap();
        assert!(matches!(m.forward(0.0, &[1.0], None), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            m.forward(0.0, &[1.0, 2.0], Some(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn perfect_predictions_zero_loss() {
        let m = VectorFieldModel::init(Architecture::new(2, 0, vec![8]), &mut rng::stream(2, 0))
            .unwrap();
        let batch: Vec<StreamSample> = [(0.1, [0.5, 0.2]), (0.9, [-1.0, 3.0])]
            .iter()
            .map(|&(t, x)| sample(t, x.to_vec(), m.forward(t, &x, None).unwrap()))
            .collect();
        let (loss, grad) = m.loss_and_grad(&batch).unwrap();
        assert!(loss.abs() < 1e-24);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn linear_model_closed_form_gradient() {
        // y = W [t, x] + b, one sample; dL/dW = 2 r inputᵀ, dL/db = 2 r
        let arch = Architecture::new(1, 0, vec![]);
        let params = vec![0.5, -1.0, 0.25];
        let m = VectorFieldModel::from_params(arch, params).unwrap();
        let (t, x, target) = (0.4, 2.0, 1.0);
        let y = 0.5 * t - 1.0 * x + 0.25;
        let r = y - target;
        let (loss, grad) = m.loss_and_grad(&[sample(t, vec![x], vec![target])]).unwrap();
        assert!((loss - r * r).abs() < 1e-14);
        let expect = [2.0 * r * t, 2.0 * r * x, 2.0 * r];
        for (g, e) in grad.iter().zip(expect) {
            assert!((g - e).abs() < 1e-13);
        }
    }

    fn fd_check(arch: Architecture, with_cov: bool, seed: u64) {
        let mut r = rng::stream(seed, 0);
        let m = VectorFieldModel::init(arch.clone(), &mut r).unwrap();
        let batch: Vec<StreamSample> = (0..6)
            .map(|_| StreamSample {
                t: r.gen::<f64>(),
                s: (0..arch.state_dim).map(|_| r.gen_range(-2.0..2.0)).collect(),
                sdot: (0..arch.state_dim).map(|_| r.gen_range(-2.0..2.0)).collect(),
                covariate: with_cov
                    .then(|| (0..arch.covariate_dim).map(|_| r.gen_range(-2.0..2.0)).collect()),
            })
            .collect();
        let (_, grad) = m.loss_and_grad(&batch).unwrap();
        let h = 1e-6;
        for _ in 0..50 {
            let k = r.gen_range(0..grad.len());
            let mut plus = m.clone();
            plus.params_mut()[k] += h;
            let mut minus = m.clone();
            minus.params_mut()[k] -= h;
            let fd = (plus.loss_and_grad(&batch).unwrap().0 - minus.loss_and_grad(&batch).unwrap().0)
                / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(rel <= 1e-5, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(Architecture::new(2, 0, vec![16, 16]), false, 3);
        let mut selu = Architecture::new(2, 0, vec![8, 8]);
        selu.activation = Activation::Selu;
        fd_check(selu, false, 4);
    }

    #[test]
    fn gradient_matches_finite_differences_with_covariate() {
        fd_check(Architecture::new(2, 2, vec![16, 16]), true, 5);
    }

    #[test]
    fn non_finite_loss_is_divergence() {
        let arch = Architecture::new(1, 0, vec![]);
        let m = VectorFieldModel::from_params(arch, vec![0.0, 1.0, 0.0]).unwrap();
        let err = m.loss_and_grad(&[sample(0.0, vec![f64::INFINITY], vec![0.0])]).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(AdamConfig::default(), 2);
        adam_step(&mut st, &mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, 1);
        let g = [2.0 * p[0]];
        adam_step(&mut st, &mut p, &g);
        assert!(p[0] < 1.0);
    }

    #[test]
    fn adam_converges_on_convex_quadratic() {
        let scales = [1.0, 4.0, 0.25];
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, 3);
        for _ in 0..10_000 {
            let g: Vec<f64> = p.iter().zip(scales).map(|(x, s)| 2.0 * s * x).collect();
            adam_step(&mut st, &mut p, &g);
        }
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let mut arch = Architecture::new(2, 2, vec![5, 3]);
        arch.activation = Activation::Selu;
        let m = VectorFieldModel::init(arch, &mut rng::stream(9, 0)).unwrap();
        let text = m.to_checkpoint();
        let back = VectorFieldModel::from_checkpoint(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint(), text);
        let x = [0.3, -0.7];
        let c = [1.0, 2.0];
        assert_eq!(
            m.forward(0.5, &x, Some(&c)).unwrap(),
            back.forward(0.5, &x, Some(&c)).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(VectorFieldModel::from_checkpoint("nope").is_err());
        let m = VectorFieldModel::zeros(Architecture::new(1, 0, vec![2])).unwrap();
        let mut text = m.to_checkpoint();
        text.push_str("1.0\n");
        assert!(VectorFieldModel::from_checkpoint(&text).is_err());
    }
}
