//! Guidance-and-control regression on a fixed-time, energy-optimal
//! three-axis double integrator.
//!
//! For `p̈ = u` with `p(τ) = v(τ) = 0` after time-to-go `τ`, the control that
//! minimizes `∫|u|²` is the state feedback `u = −6p/τ² − 4v/τ`. Networks see
//! the normalized state `(p, v, τ)` and regress that thrust.

use crate::error::{MemsimError, Result};
use crate::geodesy::parse_floats;
use crate::ndcore::{Tape, Tensor, Var};
use crate::nets::SirenSpec;
use crate::rng::{mix, StreamRng};
use crate::training::{BatchForward, TapeForward, Task};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub type State = [f64; 7];
pub type Thrust = [f64; 3];

pub const DATASET_HEADER: [&str; 10] = ["px", "py", "pz", "vx", "vy", "vz", "tau", "ux", "uy", "uz"];
pub const TRAJECTORY_HEADER: [&str; 12] = ["t", "px", "py", "pz", "vx", "vy", "vz", "ux", "uy", "uz", "theta", "phi"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    /// `(px, py, pz, vx, vy, vz, tau)`.
    pub state: State,
    pub action: Thrust,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateActionDataset {
    pub samples: Vec<Sample>,
    pub is_test: Vec<bool>,
}

impl StateActionDataset {
    /// Tags roughly one row in five as test, keyed on the row index.
    pub fn with_split(samples: Vec<Sample>, split_seed: u64) -> Self {
        let is_test = (0..samples.len()).map(|i| mix(split_seed, i as u64).is_multiple_of(5)).collect();
        StateActionDataset { samples, is_test }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().zip(&self.is_test).filter(|(_, t)| !**t).map(|(s, _)| s)
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().zip(&self.is_test).filter(|(_, t)| **t).map(|(s, _)| s)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(DATASET_HEADER)?;
        for s in &self.samples {
            w.write_record(s.state.iter().chain(&s.action).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses and validates a `px,py,pz,vx,vy,vz,tau,ux,uy,uz` file.
pub fn load_dataset<R: Read>(input: R, split_seed: u64) -> Result<StateActionDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != DATASET_HEADER {
        return Err(MemsimError::Parse {
            row: 1,
            detail: format!("expected header {}", DATASET_HEADER.join(",")),
        });
    }
    let mut samples = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| MemsimError::Parse { row, detail: e.to_string() })?;
        let v = parse_floats(&rec, 10, row)?;
        if v[6] <= 0.0 {
            return Err(MemsimError::Parse {
                row,
                detail: "tau must be > 0".into(),
            });
        }
        if v[7..].iter().any(|u| u.abs() > 1.0) {
            return Err(MemsimError::Parse {
                row,
                detail: "thrust components must lie in [-1, 1]".into(),
            });
        }
        samples.push(Sample {
            state: v[..7].try_into().expect("7 fields"),
            action: v[7..].try_into().expect("3 fields"),
        });
    }
    Ok(StateActionDataset::with_split(samples, split_seed))
}

/// Energy-optimal feedback `−6p/τ² − 4v/τ`, unclipped.
pub fn optimal_control(state: &State) -> Thrust {
    let tau = state[6];
    let mut u = [0.0; 3];
    for k in 0..3 {
        u[k] = -6.0 * state[k] / (tau * tau) - 4.0 * state[3 + k] / tau;
    }
    u
}

pub fn clip_thrust(u: Thrust) -> Thrust {
    u.map(|c| c.clamp(-1.0, 1.0))
}

/// Closed-form optimal trajectory from `(p0, v0)` with horizon `T`; the
/// control is affine in time, `u(s) = a + b·s`.
#[derive(Clone, Copy, Debug)]
pub struct OptimalArc {
    pub p0: [f64; 3],
    pub v0: [f64; 3],
    pub horizon: f64,
    a: [f64; 3],
    b: [f64; 3],
}

impl OptimalArc {
    pub fn new(p0: [f64; 3], v0: [f64; 3], horizon: f64) -> Self {
        let t = horizon;
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for k in 0..3 {
            a[k] = -6.0 * p0[k] / (t * t) - 4.0 * v0[k] / t;
            b[k] = 12.0 * p0[k] / (t * t * t) + 6.0 * v0[k] / (t * t);
        }
        OptimalArc { p0, v0, horizon, a, b }
    }

    pub fn control(&self, s: f64) -> Thrust {
        [0, 1, 2].map(|k| self.a[k] + self.b[k] * s)
    }

    /// State `(p, v, τ)` at elapsed time `s`.
    pub fn state(&self, s: f64) -> State {
        let mut x = [0.0; 7];
        for k in 0..3 {
            x[k] = self.p0[k] + self.v0[k] * s + self.a[k] * s * s / 2.0 + self.b[k] * s * s * s / 6.0;
            x[3 + k] = self.v0[k] + self.a[k] * s + self.b[k] * s * s / 2.0;
        }
        x[6] = self.horizon - s;
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnetSettings {
    pub n_samples: usize,
    /// Horizon range for sampled transfers.
    pub tf_range: [f64; 2],
    /// Position and velocity bound per axis.
    pub pos_bound: f64,
    pub vel_bound: f64,
    pub batch_size: usize,
    /// Controller sampling interval in closed-loop rollouts.
    pub dt: f64,
    pub split_seed: u64,
}

impl Default for GcnetSettings {
    fn default() -> Self {
        GcnetSettings {
            n_samples: 4000,
            tf_range: [1.5, 3.0],
            pos_bound: 0.5,
            vel_bound: 0.5,
            batch_size: 128,
            dt: 0.01,
            split_seed: 7,
        }
    }
}

impl GcnetSettings {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.tf_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(MemsimError::config("gcnet.tf_range", "need 0 < lo <= hi"));
        }
        if !(self.pos_bound > 0.0 && self.vel_bound > 0.0) {
            return Err(MemsimError::config("gcnet.pos_bound", "state bounds must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(MemsimError::config("gcnet.batch_size", "must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(MemsimError::config("gcnet.dt", "must be > 0"));
        }
        Ok(())
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer {
            pos: self.pos_bound,
            vel: self.vel_bound,
            tau_max: self.tf_range[1],
        }
    }
}

/// Maps states into `[-1, 1]⁷` for the network input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub pos: f64,
    pub vel: f64,
    pub tau_max: f64,
}

impl Normalizer {
    pub fn apply(&self, s: &State) -> State {
        [
            s[0] / self.pos,
            s[1] / self.pos,
            s[2] / self.pos,
            s[3] / self.vel,
            s[4] / self.vel,
            s[5] / self.vel,
            2.0 * s[6] / self.tau_max - 1.0,
        ]
    }

    pub fn batch<'a>(&self, states: impl Iterator<Item = &'a State>) -> Result<Tensor> {
        let data: Vec<f64> = states.flat_map(|s| self.apply(s)).collect();
        Tensor::matrix(data.len() / 7, 7, data)
    }
}

fn within(arc: &OptimalArc, settings: &GcnetSettings) -> bool {
    let ok_u = |u: Thrust| u.iter().all(|c| c.abs() <= 1.0);
    if !ok_u(arc.control(0.0)) || !ok_u(arc.control(arc.horizon)) {
        return false;
    }
    (0..=32).all(|i| {
        let x = arc.state(arc.horizon * i as f64 / 32.0);
        x[..3].iter().all(|p| p.abs() <= settings.pos_bound) && x[3..6].iter().all(|v| v.abs() <= settings.vel_bound)
    })
}

/// Samples states along optimal transfers that respect the thrust and
/// state bounds throughout, labelled with the optimal feedback.
pub fn synth_dataset(settings: &GcnetSettings, rng: &mut StreamRng) -> Result<StateActionDataset> {
    settings.validate()?;
    let [lo, hi] = settings.tf_range;
    let mut samples = Vec::with_capacity(settings.n_samples);
    while samples.len() < settings.n_samples {
        let p0 = [0; 3].map(|_| rng.gen_range(-settings.pos_bound..=settings.pos_bound));
        let v0 = [0; 3].map(|_| rng.gen_range(-settings.vel_bound..=settings.vel_bound));
        let horizon = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let arc = OptimalArc::new(p0, v0, horizon);
        if !within(&arc, settings) {
            continue;
        }
        let s = rng.gen_range(0.0..horizon);
        let state = arc.state(s);
        samples.push(Sample {
            state,
            action: clip_thrust(optimal_control(&state)),
        });
    }
    Ok(StateActionDataset::with_split(samples, settings.split_seed))
}

/// Initial conditions of admissible optimal transfers, for rollouts.
pub fn sample_initial_states(settings: &GcnetSettings, n: usize, rng: &mut StreamRng) -> Result<Vec<State>> {
    settings.validate()?;
    let [lo, hi] = settings.tf_range;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p0 = [0; 3].map(|_| rng.gen_range(-settings.pos_bound..=settings.pos_bound));
        let v0 = [0; 3].map(|_| rng.gen_range(-settings.vel_bound..=settings.vel_bound));
        let horizon = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let arc = OptimalArc::new(p0, v0, horizon);
        if within(&arc, settings) {
            out.push(arc.state(0.0));
        }
    }
    Ok(out)
}

/// Mean squared thrust error over all components.
pub fn gcnet_loss(pred: &Tensor, labels: &Tensor) -> Result<f64> {
    if pred.is_empty() {
        return Err(MemsimError::contract("empty batch"));
    }
    Ok(pred.sub(labels)?.map(|d| d * d).mean())
}

fn mse_on_tape(tape: &mut Tape, out: Var, labels: &Tensor) -> Result<Var> {
    let y = tape.constant(labels.clone());
    let d = tape.sub(out, y)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// Thrust direction: polar angle from +z and azimuth from +x.
pub fn thrust_angles(u: &Thrust) -> (f64, f64) {
    let theta = (u[0] * u[0] + u[1] * u[1]).sqrt().atan2(u[2]);
    let phi = u[1].atan2(u[0]);
    (theta, phi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub p: [f64; 3],
    pub v: [f64; 3],
    pub u: Thrust,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    /// Set when the state went non-finite and integration stopped early.
    pub diverged: bool,
}

impl Trajectory {
    /// `sqrt(|p|² + |v|²)` at the last point.
    pub fn terminal_error(&self) -> f64 {
        self.points.last().map_or(f64::INFINITY, |pt| {
            pt.p.iter().chain(&pt.v).map(|c| c * c).sum::<f64>().sqrt()
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAJECTORY_HEADER)?;
        for pt in &self.points {
            let (theta, phi) = thrust_angles(&pt.u);
            let vals = std::iter::once(pt.t)
                .chain(pt.p)
                .chain(pt.v)
                .chain(pt.u)
                .chain([theta, phi]);
            w.write_record(vals.map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-loop integration of `p̈ = u` from `x0` until time-to-go reaches 0.
///
/// The policy is sampled every `dt` and its thrust held over the step
/// (clipped to `[-1, 1]`); each step is advanced with classical RK4. The
/// last step is shortened to land exactly on `τ = 0`. Each point records
/// the state and the thrust applied from it; the final point repeats the
/// last thrust.
pub fn rollout(policy: &mut dyn FnMut(&State) -> Result<Thrust>, x0: &State, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(MemsimError::contract("rollout step must be > 0"));
    }
    if !(x0[6] > 0.0) {
        return Err(MemsimError::contract("initial time-to-go must be > 0"));
    }
    let horizon = x0[6];
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory::default();
    let mut y = [x0[0], x0[1], x0[2], x0[3], x0[4], x0[5]];
    let mut t = 0.0;
    let mut u = [0.0; 3];
    for i in 0..steps {
        let h = if i + 1 == steps { horizon - t } else { dt };
        let state = [y[0], y[1], y[2], y[3], y[4], y[5], horizon - t];
        u = clip_thrust(policy(&state)?);
        traj.points.push(TrajectoryPoint {
            t,
            p: [y[0], y[1], y[2]],
            v: [y[3], y[4], y[5]],
            u,
        });
        y = rk4_step(&y, &u, h);
        t = if i + 1 == steps { horizon } else { t + h };
        if y.iter().any(|c| !c.is_finite()) || u.iter().any(|c| !c.is_finite()) {
            traj.diverged = true;
            return Ok(traj);
        }
    }
    traj.points.push(TrajectoryPoint {
        t,
        p: [y[0], y[1], y[2]],
        v: [y[3], y[4], y[5]],
        u,
    });
    Ok(traj)
}

fn rk4_step(y: &[f64; 6], u: &Thrust, h: f64) -> [f64; 6] {
    let f = |s: &[f64; 6]| [s[3], s[4], s[5], u[0], u[1], u[2]];
    let add = |s: &[f64; 6], k: &[f64; 6], c: f64| std::array::from_fn::<f64, 6, _>(|i| s[i] + c * k[i]);
    let k1 = f(y);
    let k2 = f(&add(y, &k1, h / 2.0));
    let k3 = f(&add(y, &k2, h / 2.0));
    let k4 = f(&add(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Wraps a batch forward as a rollout policy on raw states.
pub fn network_policy<'a>(
    forward: &'a mut BatchForward<'a>,
    norm: Normalizer,
) -> impl FnMut(&State) -> Result<Thrust> + 'a {
    move |s: &State| {
        let x = Tensor::matrix(1, 7, norm.apply(s).to_vec())?;
        let y = forward(&x)?;
        let d = y.data();
        if d.len() != 3 {
            return Err(MemsimError::dim("network_policy", format!("output {:?}", y.shape())));
        }
        Ok([d[0], d[1], d[2]])
    }
}

pub struct GcnetTask {
    pub spec: SirenSpec,
    pub data: StateActionDataset,
    pub settings: GcnetSettings,
    train_x: Tensor,
    train_y: Tensor,
    test_x: Tensor,
    test_y: Tensor,
}

fn labels<'a>(samples: impl Iterator<Item = &'a Sample>) -> Result<Tensor> {
    let data: Vec<f64> = samples.flat_map(|s| s.action).collect();
    Tensor::matrix(data.len() / 3, 3, data)
}

impl GcnetTask {
    pub fn new(spec: SirenSpec, data: StateActionDataset, settings: GcnetSettings) -> Result<Self> {
        settings.validate()?;
        if spec.input_dim() != 7 || spec.output_dim() != 3 {
            return Err(MemsimError::config("network.layer_sizes", "gcnet needs 7 inputs and 3 outputs"));
        }
        let norm = settings.normalizer();
        let train_x = norm.batch(data.train().map(|s| &s.state))?;
        let test_x = norm.batch(data.test().map(|s| &s.state))?;
        if train_x.rows() == 0 || test_x.rows() == 0 {
            return Err(MemsimError::config("gcnet.n_samples", "need at least one train and one test sample"));
        }
        Ok(GcnetTask {
            train_y: labels(data.train())?,
            test_y: labels(data.test())?,
            spec,
            data,
            settings,
            train_x,
            test_x,
        })
    }

    pub fn normalizer(&self) -> Normalizer {
        self.settings.normalizer()
    }

    pub fn test_inputs(&self) -> &Tensor {
        &self.test_x
    }
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let data = idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
    Tensor::matrix(idx.len(), c, data).expect("consistent rows")
}

impl Task for GcnetTask {
    fn spec(&self) -> &SirenSpec {
        &self.spec
    }

    fn steps_per_epoch(&self) -> usize {
        self.train_x.rows().div_ceil(self.settings.batch_size)
    }

    fn step_loss(&self, tape: &mut Tape, forward: &mut TapeForward<'_>, rng: &mut StreamRng) -> Result<Var> {
        let n = self.train_x.rows();
        let b = self.settings.batch_size.min(n);
        let mut idx = sample(rng, n, b).into_vec();
        idx.sort_unstable();
        let x = tape.constant(gather(&self.train_x, &idx));
        let out = forward(tape, x)?;
        mse_on_tape(tape, out, &gather(&self.train_y, &idx))
    }

    fn test_loss(&self, forward: &mut BatchForward<'_>, _rng: &mut StreamRng) -> Result<f64> {
        let out = forward(&self.test_x)?;
        gcnet_loss(&out, &self.test_y)
    }
}
