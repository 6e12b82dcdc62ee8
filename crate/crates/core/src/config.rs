//! TOML experiment configuration.
//!
//! Fields whose defaults depend on the task and scale are optional;
//! [`ExperimentConfig::normalized`] fills them from the preset so the result
//! is a complete config that reproduces the run on its own.

use crate::analysis::{DEFAULT_DRIFT_TIMES, DEFAULT_FAULT_RATIOS, DEFAULT_REPEATS, DEFAULT_SLICES};
use crate::crossbar::ConverterSpec;
use crate::devices::{DeviceModel, DevicePreset};
use crate::error::{MemsimError, Result};
use crate::exec::Exec;
use crate::gcnet::{synth_dataset, GcnetSettings, GcnetTask};
use crate::geodesy::{GeodesySettings, GeodesyTask, LossKind, MasconBody};
use crate::ndcore::AdamConfig;
use crate::nets::{FinalActivation, SirenSpec};
use crate::rng::{SeedTree, STREAM_DATA};
use crate::training::{Task, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    SweepSlices,
    SweepRepeats,
    SweepFaults,
    SweepDrift,
    Lipschitz,
    Rollout,
    ExportDensity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Gcnet,
    /// Three-mascon synthetic body.
    Geodesy,
    GeodesyEroslite,
}

impl TaskKind {
    pub fn is_geodesy(self) -> bool {
        matches!(self, TaskKind::Geodesy | TaskKind::GeodesyEroslite)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Analog,
    Digital,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub preset: DevicePreset,
    pub prog_noise_frac: Option<f64>,
    pub read_noise_frac: Option<f64>,
    pub drift_nu_mean: Option<f64>,
    pub drift_nu_std: Option<f64>,
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection {
            preset: DevicePreset::Pcm,
            prog_noise_frac: None,
            read_noise_frac: None,
            drift_nu_mean: None,
            drift_nu_std: None,
        }
    }
}

impl DeviceSection {
    pub fn model(&self) -> Result<DeviceModel> {
        let mut m = self.preset.model();
        if let Some(v) = self.prog_noise_frac {
            m.prog_noise_frac = v;
        }
        if let Some(v) = self.read_noise_frac {
            m.read_noise_frac = v;
        }
        if let Some(v) = self.drift_nu_mean {
            m.drift_nu_mean = v;
        }
        if let Some(v) = self.drift_nu_std {
            m.drift_nu_std = v;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossbarSection {
    pub slices: usize,
    pub repeats: usize,
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub input_clip: f64,
    pub output_clip: f64,
    pub periph_noise_std: f64,
    pub ir_drop_alpha: f64,
}

impl Default for CrossbarSection {
    fn default() -> Self {
        let c = ConverterSpec::default();
        CrossbarSection {
            slices: 1,
            repeats: 1,
            dac_bits: c.dac_bits,
            adc_bits: c.adc_bits,
            input_clip: c.input_clip,
            output_clip: c.output_clip,
            periph_noise_std: c.periph_noise_std,
            ir_drop_alpha: c.ir_drop_alpha,
        }
    }
}

impl CrossbarSection {
    pub fn converter(&self) -> Result<ConverterSpec> {
        let c = ConverterSpec {
            dac_bits: self.dac_bits,
            adc_bits: self.adc_bits,
            input_clip: self.input_clip,
            output_clip: self.output_clip,
            periph_noise_std: self.periph_noise_std,
            ir_drop_alpha: self.ir_drop_alpha,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Option<Vec<usize>>,
    pub omega0: Option<f64>,
    pub final_activation: Option<FinalActivation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub reprogram_every: Option<usize>,
    pub train_time: Option<f64>,
    pub eval_every: Option<usize>,
    pub converters: Option<bool>,
    /// Post-fault retraining budget as a fraction of `epochs`.
    pub retrain_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    pub ratio: f64,
    pub retrain: bool,
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection { ratio: 0.0, retrain: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Read-out time after programming, seconds.
    pub time: f64,
    /// Add a wall-clock column to loss histories.
    pub wall_ms: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub devices: Vec<DevicePreset>,
    pub slices: Vec<usize>,
    pub repeats: Vec<usize>,
    pub ratios: Vec<f64>,
    pub times: Vec<f64>,
    pub omegas: Vec<f64>,
    pub lipschitz_samples: usize,
    pub lipschitz_pairs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            devices: vec![DevicePreset::Pcm, DevicePreset::Rram],
            slices: DEFAULT_SLICES.to_vec(),
            repeats: DEFAULT_REPEATS.to_vec(),
            ratios: DEFAULT_FAULT_RATIOS.to_vec(),
            times: DEFAULT_DRIFT_TIMES.to_vec(),
            omegas: vec![0.01, 0.1, 1.0, 30.0],
            lipschitz_samples: 1000,
            lipschitz_pairs: 1500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesySection {
    pub n_quad: Option<usize>,
    pub n_quad_eval: Option<usize>,
    pub n_targets: Option<usize>,
    pub shell: Option<[f64; 2]>,
    pub loss: Option<LossKind>,
    /// Mascon CSV replacing the preset body.
    pub body_file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnetSection {
    pub n_samples: Option<usize>,
    pub tf_range: Option<[f64; 2]>,
    pub pos_bound: Option<f64>,
    pub vel_bound: Option<f64>,
    pub batch_size: Option<usize>,
    pub dt: Option<f64>,
    /// State-action CSV replacing the synthetic dataset.
    pub dataset: Option<PathBuf>,
    /// Number of closed-loop rollouts for the `rollout` experiment.
    pub rollouts: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub resolution: usize,
    pub threshold: f64,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            resolution: 32,
            threshold: 0.0,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_data_seed() -> u64 {
    1234
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub task: TaskKind,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seed for the task data (targets, synthetic dataset).
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub crossbar: CrossbarSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub faults: FaultSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub geodesy: GeodesySection,
    #[serde(default)]
    pub gcnet: GcnetSection,
    #[serde(default)]
    pub export: ExportSection,
}

struct Preset {
    hidden: Vec<usize>,
    omega0: f64,
    final_activation: FinalActivation,
    epochs: usize,
    lr: f64,
}

fn preset(task: TaskKind, scale: Scale) -> Preset {
    match (task, scale) {
        (TaskKind::Gcnet, Scale::Desk) => Preset {
            hidden: vec![64; 3],
            omega0: 1.0,
            final_activation: FinalActivation::Identity,
            epochs: 300,
            lr: 1e-3,
        },
        (TaskKind::Gcnet, Scale::Paper) => Preset {
            hidden: vec![128; 3],
            omega0: 1.0,
            final_activation: FinalActivation::Identity,
            epochs: 300,
            lr: 1e-3,
        },
        (_, Scale::Desk) => Preset {
            hidden: vec![64; 4],
            omega0: 30.0,
            final_activation: FinalActivation::Abs,
            epochs: 1000,
            lr: 3e-4,
        },
        (_, Scale::Paper) => Preset {
            hidden: vec![300; 4],
            omega0: 30.0,
            final_activation: FinalActivation::Abs,
            epochs: 10_000,
            lr: 1e-4,
        },
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors name the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| MemsimError::config("<root>", e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            MemsimError::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are resolved against the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.geodesy.body_file, &mut cfg.gcnet.dataset].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(MemsimError::config("seeds", "need at least one seed"));
        }
        self.device.model().map_err(|e| prefix(e, "device"))?;
        self.crossbar.converter().map_err(|e| match e {
            MemsimError::Config { path, detail } => MemsimError::Config {
                path: path.replace("converter.", "crossbar."),
                detail,
            },
            other => other,
        })?;
        if self.crossbar.slices == 0 {
            return Err(MemsimError::config("crossbar.slices", "must be >= 1"));
        }
        if self.crossbar.repeats == 0 {
            return Err(MemsimError::config("crossbar.repeats", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.faults.ratio) {
            return Err(MemsimError::config("faults.ratio", "must lie in [0, 1]"));
        }
        if !(self.eval.time >= 0.0 && self.eval.time.is_finite()) {
            return Err(MemsimError::config("eval.time", "must be >= 0"));
        }
        if let Some(h) = &self.network.hidden {
            if h.is_empty() || h.contains(&0) {
                return Err(MemsimError::config("network.hidden", "need at least one layer, all > 0"));
            }
        }
        if let Some(w) = self.network.omega0 {
            if !(w > 0.0 && w.is_finite()) {
                return Err(MemsimError::config("network.omega0", "must be > 0"));
            }
        }
        if let Some(f) = self.training.retrain_fraction {
            if !(0.0..=10.0).contains(&f) {
                return Err(MemsimError::config("training.retrain_fraction", "must lie in [0, 10]"));
            }
        }
        if self.sweep.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(MemsimError::config("sweep.ratios", "ratios must lie in [0, 1]"));
        }
        if self.sweep.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(MemsimError::config("sweep.times", "times must be >= 0"));
        }
        if self.sweep.slices.contains(&0) || self.sweep.repeats.contains(&0) {
            return Err(MemsimError::config("sweep", "slice and repeat counts must be >= 1"));
        }
        if self.sweep.omegas.iter().any(|w| !(*w > 0.0)) {
            return Err(MemsimError::config("sweep.omegas", "must be > 0"));
        }
        if self.export.resolution < 2 {
            return Err(MemsimError::config("export.resolution", "must be >= 2"));
        }
        self.train_config().validate()?;
        if self.task.is_geodesy() {
            let g = self.geodesy_settings();
            if g.n_quad == 0 || g.n_quad_eval == 0 {
                return Err(MemsimError::config("geodesy.n_quad", "must be >= 1"));
            }
        } else {
            self.gcnet_settings().validate()?;
        }
        Ok(())
    }

    /// Copy with every preset-dependent field filled in.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        let p = preset(self.task, self.scale);
        c.network.hidden.get_or_insert(p.hidden);
        c.network.omega0.get_or_insert(p.omega0);
        c.network.final_activation.get_or_insert(p.final_activation);
        let t = self.train_config();
        c.training = TrainingSection {
            epochs: Some(t.epochs),
            lr: Some(t.adam.lr),
            reprogram_every: Some(t.reprogram_every),
            train_time: Some(t.train_time),
            eval_every: Some(t.eval_every),
            converters: Some(t.converters),
            retrain_fraction: Some(self.training.retrain_fraction.unwrap_or(0.25)),
        };
        let g = self.geodesy_settings();
        c.geodesy = GeodesySection {
            n_quad: Some(g.n_quad),
            n_quad_eval: Some(g.n_quad_eval),
            n_targets: Some(g.n_targets),
            shell: Some(g.shell),
            loss: Some(g.loss),
            body_file: self.geodesy.body_file.clone(),
        };
        let s = self.gcnet_settings();
        c.gcnet = GcnetSection {
            n_samples: Some(s.n_samples),
            tf_range: Some(s.tf_range),
            pos_bound: Some(s.pos_bound),
            vel_bound: Some(s.vel_bound),
            batch_size: Some(s.batch_size),
            dt: Some(s.dt),
            dataset: self.gcnet.dataset.clone(),
            rollouts: Some(self.gcnet.rollouts.unwrap_or(5)),
        };
        c
    }

    pub fn exec(&self) -> Exec {
        if self.threads == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn device_model(&self) -> Result<DeviceModel> {
        self.device.model()
    }

    pub fn converter(&self) -> Result<ConverterSpec> {
        self.crossbar.converter()
    }

    /// SIREN spec, optionally with a different ω₀.
    pub fn siren_spec(&self, omega0: Option<f64>) -> Result<SirenSpec> {
        let p = preset(self.task, self.scale);
        let (input, output) = if self.task.is_geodesy() { (3, 1) } else { (7, 3) };
        let mut sizes = vec![input];
        sizes.extend(self.network.hidden.clone().unwrap_or(p.hidden));
        sizes.push(output);
        SirenSpec::new(
            sizes,
            omega0.or(self.network.omega0).unwrap_or(p.omega0),
            self.network.final_activation.unwrap_or(p.final_activation),
            self.seeds[0],
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let p = preset(self.task, self.scale);
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs.unwrap_or(p.epochs),
            adam: AdamConfig::with_lr(t.lr.unwrap_or(p.lr)),
            reprogram_every: t.reprogram_every.unwrap_or(1),
            train_time: t.train_time.unwrap_or(0.0),
            eval_every: t.eval_every.unwrap_or(0),
            converters: t.converters.unwrap_or(true),
        }
    }

    /// Post-fault retraining epochs.
    pub fn retrain_epochs(&self) -> usize {
        if !self.faults.retrain {
            return 0;
        }
        let frac = self.training.retrain_fraction.unwrap_or(0.25);
        ((self.train_config().epochs as f64 * frac).ceil() as usize).max(1)
    }

    pub fn geodesy_settings(&self) -> GeodesySettings {
        let d = GeodesySettings::default();
        let paper = self.scale == Scale::Paper;
        let g = &self.geodesy;
        GeodesySettings {
            n_quad: g.n_quad.unwrap_or(if paper { 30_000 } else { d.n_quad }),
            n_quad_eval: g.n_quad_eval.unwrap_or(d.n_quad_eval),
            n_targets: g.n_targets.unwrap_or(if paper { 1000 } else { d.n_targets }),
            shell: g.shell.unwrap_or(d.shell),
            loss: g.loss.unwrap_or(d.loss),
        }
    }

    pub fn gcnet_settings(&self) -> GcnetSettings {
        let d = GcnetSettings::default();
        let paper = self.scale == Scale::Paper;
        let g = &self.gcnet;
        GcnetSettings {
            n_samples: g.n_samples.unwrap_or(if paper { 20_000 } else { d.n_samples }),
            tf_range: g.tf_range.unwrap_or(d.tf_range),
            pos_bound: g.pos_bound.unwrap_or(d.pos_bound),
            vel_bound: g.vel_bound.unwrap_or(d.vel_bound),
            batch_size: g.batch_size.unwrap_or(if paper { 256 } else { d.batch_size }),
            dt: g.dt.unwrap_or(d.dt),
            split_seed: self.data_seed,
        }
    }

    pub fn body(&self) -> Result<MasconBody> {
        match (&self.geodesy.body_file, self.task) {
            (Some(path), _) => {
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("body");
                MasconBody::read_csv(std::fs::File::open(path)?, name)
            }
            (None, TaskKind::GeodesyEroslite) => Ok(MasconBody::eros_lite()),
            (None, _) => Ok(MasconBody::triple()),
        }
    }

    /// Builds the task, optionally for a network with a different ω₀.
    pub fn build_task(&self, omega0: Option<f64>) -> Result<AnyTask> {
        let spec = self.siren_spec(omega0)?;
        let data_seeds = SeedTree::new(self.data_seed);
        if self.task.is_geodesy() {
            let task = GeodesyTask::new(spec, self.body()?, self.geodesy_settings(), self.exec(), &mut data_seeds.stream(STREAM_DATA))?;
            Ok(AnyTask::Geodesy(Box::new(task)))
        } else {
            let settings = self.gcnet_settings();
            let data = match &self.gcnet.dataset {
                Some(path) => crate::gcnet::load_dataset(std::fs::File::open(path)?, settings.split_seed)?,
                None => synth_dataset(&settings, &mut data_seeds.stream(STREAM_DATA))?,
            };
            Ok(AnyTask::Gcnet(Box::new(GcnetTask::new(spec, data, settings)?)))
        }
    }
}

fn prefix(e: MemsimError, section: &str) -> MemsimError {
    match e {
        MemsimError::Config { path, detail } if !path.starts_with(section) => MemsimError::Config {
            path: format!("{section}.{path}"),
            detail,
        },
        other => other,
    }
}

/// A constructed task of either kind.
pub enum AnyTask {
    Gcnet(Box<GcnetTask>),
    Geodesy(Box<GeodesyTask>),
}

impl AnyTask {
    pub fn as_task(&self) -> &dyn Task {
        match self {
            AnyTask::Gcnet(t) => t.as_ref(),
            AnyTask::Geodesy(t) => t.as_ref(),
        }
    }

    pub fn into_task(self) -> Box<dyn Task> {
        match self {
            AnyTask::Gcnet(t) => t,
            AnyTask::Geodesy(t) => t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_and_presets() {
        let c = ExperimentConfig::from_toml_str("experiment = \"train\"\ntask = \"gcnet\"\n").unwrap();
        assert_eq!(c.seeds, vec![0]);
        let spec = c.siren_spec(None).unwrap();
        assert_eq!(spec.layer_sizes, vec![7, 64, 64, 64, 3]);
        assert_eq!(spec.omega0, 1.0);
        let g = ExperimentConfig::from_toml_str("experiment = \"train\"\ntask = \"geodesy-eroslite\"\nscale = \"paper\"\n").unwrap();
        let spec = g.siren_spec(None).unwrap();
        assert_eq!(spec.layer_sizes, vec![3, 300, 300, 300, 300, 1]);
        assert_eq!((spec.omega0, spec.final_activation), (30.0, FinalActivation::Abs));
        assert_eq!(g.geodesy_settings().n_quad, 30_000);
        assert_eq!(g.train_config().epochs, 10_000);
    }

    #[test]
    fn unknown_device_names_the_field() {
        let err = ExperimentConfig::from_toml_str("experiment = \"train\"\ntask = \"gcnet\"\n[device]\npreset = \"fram\"\n").unwrap_err();
        match err {
            MemsimError::Config { path, detail } => {
                assert_eq!(path, "device.preset");
                assert!(detail.contains("fram"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let base = "experiment = \"train\"\ntask = \"gcnet\"\n";
        let cases = [
            ("[crossbar]\nslices = 0\n", "crossbar.slices"),
            ("[crossbar]\nbogus = 1\n", "crossbar"),
            ("[crossbar]\nadc_bits = 0\n", "crossbar.adc_bits"),
            ("[faults]\nratio = 1.5\n", "faults.ratio"),
            ("[device]\npreset = \"pcm\"\nread_noise_frac = -0.1\n", "device.read_noise_frac"),
            ("seeds = []\n", "seeds"),
        ];
        for (extra, expected) in cases {
            match ExperimentConfig::from_toml_str(&format!("{base}{extra}")) {
                Err(MemsimError::Config { path, .. }) => assert!(path.starts_with(expected), "{path} vs {expected}"),
                other => panic!("{extra}: {other:?}"),
            }
        }
        assert!(ExperimentConfig::from_toml_str("task = \"gcnet\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("experiment = \"dance\"\ntask = \"gcnet\"\n").is_err());
    }

    #[test]
    fn normalized_round_trip() {
        let c = ExperimentConfig::from_toml_str("experiment = \"sweep-drift\"\ntask = \"geodesy\"\nseeds = [1, 2]\n[training]\nepochs = 3\n").unwrap();
        let n = c.normalized();
        assert_eq!(n.training.epochs, Some(3));
        assert_eq!(n.network.omega0, Some(30.0));
        let back = ExperimentConfig::from_toml_str(&n.to_toml_string()).unwrap();
        assert_eq!(back, n);
        assert_eq!(back.normalized(), n);
        assert_eq!(c.siren_spec(None).unwrap(), n.siren_spec(None).unwrap());
        assert_eq!(c.train_config(), n.train_config());
        assert_eq!(c.geodesy_settings(), n.geodesy_settings());
    }

    #[test]
    fn retrain_budget_defaults_to_a_quarter() {
        let c = ExperimentConfig::from_toml_str("experiment = \"sweep-faults\"\ntask = \"gcnet\"\n[training]\nepochs = 10\n").unwrap();
        assert_eq!(c.retrain_epochs(), 3);
    }
}
