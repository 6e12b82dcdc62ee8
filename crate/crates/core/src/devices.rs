//! Behavioral model of a single memristive device.
//!
//! Conductances are normalized so that the presets use `g_max = 1`. A device
//! is programmed once with multiplicative Gaussian programming error, decays
//! with a power law afterwards and adds fresh multiplicative read noise on
//! every read. Stuck devices return their stuck conductance for every
//! operation and carry no read noise.

use crate::error::{MemsimError, Result};
use crate::rng::StreamRng;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    pub name: String,
    pub g_min: f64,
    pub g_max: f64,
    /// σ of programming error as a fraction of the target conductance.
    pub prog_noise_frac: f64,
    /// σ of read noise as a fraction of the (drifted) stored conductance.
    pub read_noise_frac: f64,
    pub drift_nu_mean: f64,
    pub drift_nu_std: f64,
    /// Reference time of the drift power law, seconds.
    pub drift_t0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DevicePreset {
    Pcm,
    Rram,
    Ideal,
}

impl DevicePreset {
    pub fn model(self) -> DeviceModel {
        match self {
            DevicePreset::Pcm => DeviceModel::pcm(),
            DevicePreset::Rram => DeviceModel::rram(),
            DevicePreset::Ideal => DeviceModel::ideal(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DevicePreset::Pcm => "pcm",
            DevicePreset::Rram => "rram",
            DevicePreset::Ideal => "ideal",
        }
    }
}

impl std::str::FromStr for DevicePreset {
    type Err = MemsimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcm" => Ok(DevicePreset::Pcm),
            "rram" => Ok(DevicePreset::Rram),
            "ideal" => Ok(DevicePreset::Ideal),
            other => Err(MemsimError::config("device", format!("unknown device preset `{other}`"))),
        }
    }
}

impl DeviceModel {
    /// Phase-change memory: 2% read noise, strong drift.
    pub fn pcm() -> Self {
        DeviceModel {
            name: "pcm".into(),
            g_min: 0.0,
            g_max: 1.0,
            prog_noise_frac: 0.03,
            read_noise_frac: 0.02,
            drift_nu_mean: 0.06,
            drift_nu_std: 0.02,
            drift_t0: 20.0,
        }
    }

    /// Resistive RAM: 1% read noise, gentle drift.
    pub fn rram() -> Self {
        DeviceModel {
            name: "rram".into(),
            g_min: 0.0,
            g_max: 1.0,
            prog_noise_frac: 0.02,
            read_noise_frac: 0.01,
            drift_nu_mean: 0.005,
            drift_nu_std: 0.002,
            drift_t0: 20.0,
        }
    }

    /// Noise-free, drift-free device.
    pub fn ideal() -> Self {
        DeviceModel {
            name: "ideal".into(),
            g_min: 0.0,
            g_max: 1.0,
            prog_noise_frac: 0.0,
            read_noise_frac: 0.0,
            drift_nu_mean: 0.0,
            drift_nu_std: 0.0,
            drift_t0: 20.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(name.parse::<DevicePreset>()?.model())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| Err(MemsimError::config(format!("device.{field}"), msg));
        if !(self.g_min >= 0.0 && self.g_min.is_finite()) {
            return fail("g_min", "must be finite and >= 0");
        }
        if !(self.g_max > self.g_min && self.g_max.is_finite()) {
            return fail("g_max", "must be finite and > g_min");
        }
        for (field, v) in [
            ("prog_noise_frac", self.prog_noise_frac),
            ("read_noise_frac", self.read_noise_frac),
            ("drift_nu_std", self.drift_nu_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(field, "must be finite and >= 0");
            }
        }
        if !self.drift_nu_mean.is_finite() {
            return fail("drift_nu_mean", "must be finite");
        }
        if !(self.drift_t0 > 0.0 && self.drift_t0.is_finite()) {
            return fail("drift_t0", "must be > 0");
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.g_max - self.g_min
    }

    fn clip(&self, g: f64) -> f64 {
        g.clamp(self.g_min, self.g_max)
    }

    fn check_target(&self, g_target: f64) -> Result<()> {
        // Small tolerance for targets computed as g_min + |w|/scale.
        let tol = 1e-12 * self.g_max.max(1.0);
        if !(g_target >= self.g_min - tol && g_target <= self.g_max + tol) {
            return Err(MemsimError::contract(format!(
                "target conductance {g_target} outside [{}, {}]",
                self.g_min, self.g_max
            )));
        }
        Ok(())
    }

    fn sample_nu(&self, rng: &mut StreamRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.drift_nu_mean + self.drift_nu_std * z).max(0.0)
    }

    fn programmed_value(&self, g_target: f64, rng: &mut StreamRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.clip(g_target + self.prog_noise_frac * g_target * z)
    }

    /// Program a fresh (healthy) device.
    pub fn program(&self, g_target: f64, t: f64, rng: &mut StreamRng) -> Result<DeviceState> {
        self.check_target(g_target)?;
        let g_target = self.clip(g_target);
        let g_prog = self.programmed_value(g_target, rng);
        let nu = self.sample_nu(rng);
        Ok(DeviceState {
            g_prog,
            nu,
            stuck: None,
            t_prog: t,
        })
    }

    /// Re-program an existing device in place. Stuck devices keep their value.
    pub fn reprogram(&self, state: &mut DeviceState, g_target: f64, t: f64, rng: &mut StreamRng) -> Result<()> {
        self.check_target(g_target)?;
        let g_target = self.clip(g_target);
        let g_prog = self.programmed_value(g_target, rng);
        let nu = self.sample_nu(rng);
        state.t_prog = t;
        if state.stuck.is_none() {
            state.g_prog = g_prog;
            state.nu = nu;
        }
        Ok(())
    }

    /// Drifted conductance at absolute time `t` (no noise).
    pub fn drift(&self, state: &DeviceState, t: f64) -> Result<f64> {
        if t < state.t_prog {
            return Err(MemsimError::contract(format!(
                "time {t} precedes programming time {}",
                state.t_prog
            )));
        }
        Ok(self.drift_unchecked(state, t))
    }

    #[inline]
    pub(crate) fn drift_unchecked(&self, state: &DeviceState, t: f64) -> f64 {
        if let Some(g) = state.stuck {
            return g;
        }
        let dt = (t - state.t_prog).max(self.drift_t0);
        if state.nu == 0.0 || dt == self.drift_t0 {
            return state.g_prog;
        }
        self.clip(state.g_prog * (dt / self.drift_t0).powf(-state.nu))
    }

    /// One noisy read at time `t`.
    pub fn read(&self, state: &DeviceState, t: f64, rng: &mut StreamRng) -> Result<f64> {
        let g = self.drift(state, t)?;
        Ok(self.read_noise(state, g, 1, rng))
    }

    /// Adds read noise to a drifted value; `averaged` reads shrink σ by √n.
    #[inline]
    pub(crate) fn read_noise(&self, state: &DeviceState, drifted: f64, averaged: usize, rng: &mut StreamRng) -> f64 {
        if state.stuck.is_some() || self.read_noise_frac == 0.0 {
            return drifted;
        }
        let z: f64 = rng.sample(StandardNormal);
        let sigma = self.read_noise_frac * drifted / (averaged as f64).sqrt();
        self.clip(drifted + sigma * z)
    }

    pub fn sample_stuck_value(&self, rng: &mut StreamRng) -> f64 {
        rng.gen_range(self.g_min..=self.g_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviceState {
    pub g_prog: f64,
    /// Drift exponent, sampled once per programming.
    pub nu: f64,
    pub stuck: Option<f64>,
    pub t_prog: f64,
}

impl DeviceState {
    pub fn is_stuck(&self) -> bool {
        self.stuck.is_some()
    }

    /// Conductance the device holds right after programming.
    pub fn programmed(&self) -> f64 {
        self.stuck.unwrap_or(self.g_prog)
    }
}

/// Sticks exactly `round(ratio · N)` devices, chosen uniformly without
/// replacement, at a uniform value in `[g_min, g_max]`. Returns the chosen
/// indices in ascending order.
pub fn inject_faults(states: &mut [DeviceState], ratio: f64, model: &DeviceModel, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MemsimError::contract(format!("fault ratio {ratio} outside [0, 1]")));
    }
    let n = states.len();
    let count = ((ratio * n as f64).round() as usize).min(n);
    let mut chosen = sample(rng, n, count).into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        states[i].stuck = Some(model.sample_stuck_value(rng));
    }
    Ok(chosen)
}
