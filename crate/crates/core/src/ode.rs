//! Sample generation by integrating `dx/dt = v(t, x)`.
//!
//! Fixed-step Euler and RK4, plus Dormand–Prince 5(4) with PI step control
//! and 4th-order dense output. States are flat vectors, so a batch of rows is
//! integrated as one system.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::vector_field::VectorFieldModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegratorSpec {
    Euler {
        n_steps: usize,
    },
    Rk4 {
        n_steps: usize,
    },
    Dopri5 {
        rtol: f64,
        atol: f64,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
        #[serde(default)]
        initial_step: Option<f64>,
    },
}

fn default_max_steps() -> usize {
    100_000
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        IntegratorSpec::Rk4 { n_steps: 100 }
    }
}

impl IntegratorSpec {
    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        IntegratorSpec::Dopri5 {
            rtol,
            atol,
            max_steps: default_max_steps(),
            initial_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            IntegratorSpec::Euler { n_steps } | IntegratorSpec::Rk4 { n_steps } => {
                if n_steps == 0 {
                    return Err(Error::config("n_steps must be at least 1"));
                }
            }
            IntegratorSpec::Dopri5 {
                rtol,
                atol,
                max_steps,
                initial_step,
            } => {
                if !(rtol > 0.0 && atol > 0.0) {
                    return Err(Error::config("dopri5 tolerances must be positive"));
                }
                if max_steps == 0 {
                    return Err(Error::config("max_steps must be at least 1"));
                }
                if initial_step.is_some_and(|h| !(h > 0.0)) {
                    return Err(Error::config("initial_step must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Accepted steps, including both endpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Right-hand side `f(t, x) -> dx/dt`, written into the output slice.
pub type Rhs<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a;

/// Integrate from `t_span.0` to `t_span.1`, recording every accepted step.
pub fn integrate(f: &mut Rhs<'_>, x0: &[f64], t_span: (f64, f64), spec: &IntegratorSpec) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    solve(f, x0, t_span.0, &[t_span.1], spec, Some(&mut traj))?;
    Ok(traj)
}

/// Integrate from `t0` once, returning the state at every stop.
pub fn solve(
    f: &mut Rhs<'_>,
    x0: &[f64],
    t0: f64,
    stops: &[f64],
    spec: &IntegratorSpec,
    mut traj: Option<&mut Trajectory>,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    check_stops(t0, stops)?;
    if let Some(tr) = traj.as_deref_mut() {
        tr.times.push(t0);
        tr.states.push(x0.to_vec());
    }
    match *spec {
        IntegratorSpec::Euler { n_steps } => fixed(f, x0, t0, stops, n_steps, euler_step, traj),
        IntegratorSpec::Rk4 { n_steps } => fixed(f, x0, t0, stops, n_steps, rk4_step, traj),
        IntegratorSpec::Dopri5 {
            rtol,
            atol,
            max_steps,
            initial_step,
        } => Dopri5::new(rtol, atol, max_steps, initial_step, x0.len()).run(f, x0, t0, stops, traj),
    }
}

fn check_stops(t0: f64, stops: &[f64]) -> Result<()> {
    if stops.is_empty() {
        return Err(Error::Empty("stops"));
    }
    if !(0.0..=1.0).contains(&t0) {
        return Err(Error::Domain { t: t0 });
    }
    let mut prev = t0;
    for &t in stops {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain { t });
        }
        if t <= prev {
            return Err(Error::config(format!(
                "stops must be strictly increasing and after the start time {t0}"
            )));
        }
        prev = t;
    }
    Ok(())
}

type StepFn = fn(&mut Rhs<'_>, f64, f64, &mut [f64], &mut Work) -> Result<()>;

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// Uniform steps of nominal size `(t_last - t0) / n_steps`; each segment
/// between stops gets a whole number of equal steps ending on the stop.
fn fixed(
    f: &mut Rhs<'_>,
    x0: &[f64],
    t0: f64,
    stops: &[f64],
    n_steps: usize,
    step: StepFn,
    mut traj: Option<&mut Trajectory>,
) -> Result<Vec<Vec<f64>>> {
    let h_nominal = (stops[stops.len() - 1] - t0) / n_steps as f64;
    let mut x = x0.to_vec();
    let mut work = Work::new(x.len());
    let mut out = Vec::with_capacity(stops.len());
    let mut t = t0;
    for &stop in stops {
        let span = stop - t;
        let n = ((span / h_nominal) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let start = t;
        for i in 0..n {
            let ti = start + i as f64 * h;
            step(f, ti, h, &mut x, &mut work)?;
            t = if i + 1 == n { stop } else { start + (i + 1) as f64 * h };
            if let Some(tr) = traj.as_deref_mut() {
                tr.times.push(t);
                tr.states.push(x.clone());
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn euler_step(f: &mut Rhs<'_>, t: f64, h: f64, x: &mut [f64], w: &mut Work) -> Result<()> {
    f(t, x, &mut w.k[0])?;
    for (xi, ki) in x.iter_mut().zip(&w.k[0]) {
        *xi += h * ki;
    }
    Ok(())
}

fn rk4_step(f: &mut Rhs<'_>, t: f64, h: f64, x: &mut [f64], w: &mut Work) -> Result<()> {
    let Work { k, tmp } = w;
    let [k1, k2, k3, k4, ..] = k;
    f(t, x, k1)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, tmp, k2)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, tmp, k3)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + h * k3[i];
    }
    f(t + h, tmp, k4)?;
    for i in 0..x.len() {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// 5th minus 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

struct Dopri5 {
    rtol: f64,
    atol: f64,
    max_steps: usize,
    initial_step: Option<f64>,
    work: Work,
    y1: Vec<f64>,
    err: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl Dopri5 {
    fn new(rtol: f64, atol: f64, max_steps: usize, initial_step: Option<f64>, n: usize) -> Self {
        Dopri5 {
            rtol,
            atol,
            max_steps,
            initial_step,
            work: Work::new(n),
            y1: vec![0.0; n],
            err: vec![0.0; n],
            cont: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.atol + self.rtol * a.abs().max(b.abs())
    }

    fn rms(&self, v: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let s: f64 = v
            .iter()
            .zip(y0.iter().zip(y1))
            .map(|(e, (a, b))| (e / self.scale(*a, *b)).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    }

    fn initial_step(&mut self, f: &mut Rhs<'_>, t: f64, y: &[f64], span: f64) -> Result<f64> {
        if let Some(h) = self.initial_step {
            return Ok(h.min(span));
        }
        let f0 = &self.work.k[0];
        let d0 = self.rms(y, y, y);
        let d1 = self.rms(f0, y, y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let tmp: Vec<f64> = y.iter().zip(f0).map(|(yi, fi)| yi + h0 * fi).collect();
        let mut f1 = vec![0.0; y.len()];
        f(t + h0, &tmp, &mut f1)?;
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = self.rms(&diff, y, y) / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span))
    }

    fn run(
        mut self,
        f: &mut Rhs<'_>,
        x0: &[f64],
        t0: f64,
        stops: &[f64],
        mut traj: Option<&mut Trajectory>,
    ) -> Result<Vec<Vec<f64>>> {
        let n = x0.len();
        let t_end = stops[stops.len() - 1];
        let mut y = x0.to_vec();
        let mut t = t0;
        let mut out = Vec::with_capacity(stops.len());
        let mut next_stop = 0;

        f(t, &y, &mut self.work.k[0])?;
        let mut h = self.initial_step(f, t, &y, t_end - t0)?;
        let mut err_old: f64 = 1e-4;
        let mut rejected = false;
        let mut steps = 0;

        while next_stop < stops.len() {
            if steps >= self.max_steps {
                return Err(Error::Stiffness { t });
            }
            steps += 1;
            let last = t + h >= t_end - 1e-12 * t_end.abs().max(1.0);
            if last {
                h = t_end - t;
            }
            if !(h > 0.0) || t + h == t {
                return Err(Error::Stiffness { t });
            }

            // stages 2..7; stage 7 evaluates at the 5th-order solution (FSAL)
            for s in 1..7 {
                let (done, rest) = self.work.k.split_at_mut(s);
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in done.iter().enumerate() {
                        acc += A[s][j] * kj[i];
                    }
                    self.work.tmp[i] = y[i] + h * acc;
                }
                if s == 6 {
                    self.y1.copy_from_slice(&self.work.tmp);
                }
                f(t + C[s] * h, &self.work.tmp, &mut rest[0])?;
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in self.work.k.iter().enumerate() {
                    acc += E[j] * kj[i];
                }
                self.err[i] = h * acc;
            }
            let err = self.rms(&self.err, &y, &self.y1);
            if !err.is_finite() {
                h *= FAC_MIN;
                rejected = true;
                continue;
            }

            if err <= 1.0 {
                let fac = (SAFETY * err.max(1e-10).powf(-EXPO1) * err_old.powf(BETA)).clamp(FAC_MIN, FAC_MAX);
                let fac = if rejected { fac.min(1.0) } else { fac };
                err_old = err.max(1e-4);
                rejected = false;

                let k = &self.work.k;
                for i in 0..n {
                    let ydiff = self.y1[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    self.cont[0][i] = y[i];
                    self.cont[1][i] = ydiff;
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = ydiff - h * k[6][i] - bspl;
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        acc += D[j] * kj[i];
                    }
                    self.cont[4][i] = h * acc;
                }
                let t_old = t;
                t = if last { t_end } else { t + h };
                while next_stop < stops.len() && stops[next_stop] <= t {
                    let ts = stops[next_stop];
                    out.push(if ts == t { self.y1.clone() } else { self.dense(t_old, h, ts) });
                    next_stop += 1;
                }
                y.copy_from_slice(&self.y1);
                let (first, rest) = self.work.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                if let Some(tr) = traj.as_deref_mut() {
                    tr.times.push(t);
                    tr.states.push(y.clone());
                }
                h *= fac;
            } else {
                let fac = (SAFETY * err.powf(-EXPO1)).clamp(FAC_MIN, 1.0);
                h *= fac;
                rejected = true;
            }
        }
        Ok(out)
    }

    fn dense(&self, t_old: f64, h: f64, t: f64) -> Vec<f64> {
        let s = (t - t_old) / h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        (0..c[0].len())
            .map(|i| c[0][i] + (c[1][i] + (c[2][i] + (c[3][i] + c[4][i] * s1) * s) * s1) * s)
            .collect()
    }
}

/// Push `source` rows through the model from `t0`, snapshotting at each stop.
pub fn generate_from(
    model: &VectorFieldModel,
    source: &Points,
    covariates: Option<&Points>,
    t0: f64,
    stops: &[f64],
    spec: &IntegratorSpec,
) -> Result<Vec<Points>> {
    let d = model.arch().state_dim;
    if source.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: source.dim(),
        });
    }
    if let Some(c) = covariates {
        if c.len() != source.len() {
            return Err(Error::SizeMismatch {
                left: source.len(),
                right: c.len(),
            });
        }
    }
    let mut scratch = model.scratch();
    let mut rhs = |t: f64, x: &[f64], out: &mut [f64]| model.forward_batch(t, x, covariates, out, &mut scratch);
    let states = solve(&mut rhs, source.as_slice(), t0, stops, spec, None)?;
    states.into_iter().map(|s| Points::from_flat(d, s)).collect()
}

/// Push `source` rows from t = 0 through every stop.
pub fn generate(
    model: &VectorFieldModel,
    source: &Points,
    spec: &IntegratorSpec,
    stops: &[f64],
    covariates: Option<&Points>,
) -> Result<Vec<Points>> {
    generate_from(model, source, covariates, 0.0, stops, spec)
}

/// CSV `t,row,dim,value`.
pub fn write_samples_csv<W: Write>(stops: &[f64], batches: &[Points], mut w: W) -> io::Result<()> {
    writeln!(w, "t,row,dim,value")?;
    for (t, b) in stops.iter().zip(batches) {
        for (r, row) in b.rows().enumerate() {
            for (k, v) in row.iter().enumerate() {
                writeln!(w, "{t},{r},{k},{v:.17e}")?;
            }
        }
    }
    Ok(())
}

pub const BINARY_MAGIC: &[u8; 5] = b"SFLW1";

/// Binary column layout: magic, then `u32` stop count, rows, dims (little
/// endian), then per stop an `f64` time followed by the columns one after
/// another.
pub fn write_samples_binary<W: Write>(stops: &[f64], batches: &[Points], mut w: W) -> io::Result<()> {
    let rows = batches.first().map_or(0, Points::len);
    let dim = batches.first().map_or(0, Points::dim);
    if batches.len() != stops.len() || batches.iter().any(|b| b.len() != rows || b.dim() != dim) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "batches must share a shape"));
    }
    w.write_all(BINARY_MAGIC)?;
    for v in [stops.len(), rows, dim] {
        let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too large"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for (t, b) in stops.iter().zip(batches) {
        w.write_all(&t.to_le_bytes())?;
        for k in 0..dim {
            for r in 0..rows {
                w.write_all(&b.row(r)[k].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_samples_binary<R: Read>(mut r: R) -> Result<(Vec<f64>, Vec<Points>)> {
    let bad = |msg: &str| Error::Parse {
        what: "sample file",
        msg: msg.to_string(),
    };
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| bad(&e.to_string()))?;
    let body = buf.strip_prefix(BINARY_MAGIC.as_slice()).ok_or_else(|| bad("missing SFLW1 header"))?;
    if body.len() < 12 {
        return Err(bad("truncated header"));
    }
    let u = |i: usize| u32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n_stops, rows, dim) = (u(0), u(1), u(2));
    let per_stop = 8 * (1 + rows * dim);
    let data = &body[12..];
    if dim == 0 || data.len() != n_stops * per_stop {
        return Err(bad("payload length does not match header"));
    }
    let f = |off: usize| f64::from_le_bytes(data[off..off + 8].try_into().unwrap());
    let mut stops = Vec::with_capacity(n_stops);
    let mut out = Vec::with_capacity(n_stops);
    for s in 0..n_stops {
        let base = s * per_stop;
        stops.push(f(base));
        let mut p = Points::zeros(rows, dim);
        for k in 0..dim {
            for i in 0..rows {
                p.row_mut(i)[k] = f(base + 8 * (1 + k * rows + i));
            }
        }
        out.push(p);
    }
    Ok((stops, out))
}
