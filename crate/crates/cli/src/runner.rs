//! Executes one configured experiment into an artifact directory.

use crate::artifacts::ArtifactDir;
use anyhow::{bail, Result};
use memsim::analysis::{
    omega_study, summarize, sweep_drift, sweep_faults, sweep_repeats, sweep_slices, write_raw_csv, write_summary_csv, Bench,
    OmegaStudy, RawRow,
};
use memsim::config::{AnyTask, DeviceSection, ExperimentConfig, ExperimentKind, Mode};
use memsim::devices::DeviceModel;
use memsim::gcnet::{clip_thrust, network_policy, optimal_control, rollout, sample_initial_states, State};
use memsim::geodesy::export_density_grid;
use memsim::ndcore::Tensor;
use memsim::nets::{forward_analog, forward_digital, init_siren, to_analog, AnalogNet, MlpWeights};
use memsim::rng::{SeedTree, StreamRng, STREAM_DATA, STREAM_EVAL, STREAM_FAULTS, STREAM_INIT, STREAM_PROGRAM, STREAM_READ};
use memsim::training::{eval_digital, eval_loss, hwa_train, retrain_after_faults, train_digital, LossHistory, Task, TrainConfig};

/// A trained network in either execution mode.
pub enum Trained {
    Digital(MlpWeights),
    Analog(Box<AnalogNet>),
}

impl Trained {
    pub fn label(&self) -> String {
        match self {
            Trained::Digital(_) => "digital".into(),
            Trained::Analog(net) => net.model.name.clone(),
        }
    }

    pub fn weights(&self) -> &MlpWeights {
        match self {
            Trained::Digital(w) => w,
            Trained::Analog(net) => &net.shadow,
        }
    }

    pub fn eval(&self, task: &dyn Task, t: f64, rng: &mut StreamRng) -> memsim::Result<f64> {
        match self {
            Trained::Digital(w) => eval_digital(w, task.spec(), task, rng),
            Trained::Analog(net) => eval_loss(net, task, t, rng),
        }
    }

    /// Batch forward pass; analog networks are read out at time `t`.
    pub fn forward<'a>(&'a self, task: &'a dyn Task, t: f64, rng: &'a mut StreamRng) -> impl FnMut(&Tensor) -> memsim::Result<Tensor> + 'a {
        move |x: &Tensor| match self {
            Trained::Digital(w) => forward_digital(w, task.spec(), x),
            Trained::Analog(net) => forward_analog(net, x, t, rng),
        }
    }
}

fn final_eval_stream(seed: u64) -> StreamRng {
    SeedTree::new(seed).child("final").stream(STREAM_EVAL)
}

/// Trains one network for `seed` in the configured mode.
pub fn train_one(cfg: &ExperimentConfig, task: &dyn Task, train: &TrainConfig, seed: u64) -> memsim::Result<(Trained, LossHistory)> {
    let seeds = SeedTree::new(seed);
    let spec = task.spec();
    let mut w = init_siren(spec, &mut seeds.stream(STREAM_INIT))?;
    match cfg.mode {
        Mode::Digital => {
            let h = train_digital(&mut w, task, train, &seeds)?;
            Ok((Trained::Digital(w), h))
        }
        Mode::Analog => {
            let mut net = to_analog(
                &w,
                spec,
                &cfg.device_model()?,
                cfg.crossbar.slices,
                &cfg.converter()?,
                cfg.crossbar.repeats,
                0.0,
                &mut seeds.stream(STREAM_PROGRAM),
            )?;
            let h = hwa_train(&mut net, task, train, &seeds)?;
            Ok((Trained::Analog(Box::new(net)), h))
        }
    }
}

fn sweep_devices(cfg: &ExperimentConfig) -> memsim::Result<Vec<DeviceModel>> {
    cfg.sweep
        .devices
        .iter()
        .map(|&preset| DeviceSection { preset, ..cfg.device.clone() }.model())
        .collect()
}

fn write_tables(dir: &mut ArtifactDir, stem: &str, rows: &[RawRow]) -> Result<()> {
    dir.write(&format!("{stem}_raw.csv"), |w| write_raw_csv(rows, w))?;
    let summary = summarize(rows);
    dir.write(&format!("{stem}.csv"), |w| write_summary_csv(&summary, w))?;
    Ok(())
}

/// Runs the experiment named by `cfg` (already normalized).
pub fn execute(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<()> {
    let any = cfg.build_task(None)?;
    let task = any.as_task();
    let exec = cfg.exec();
    match cfg.experiment {
        ExperimentKind::Train => run_train(cfg, task, dir),
        ExperimentKind::SweepSlices | ExperimentKind::SweepRepeats | ExperimentKind::SweepFaults | ExperimentKind::SweepDrift => {
            let bench = Bench {
                task,
                train: cfg.train_config(),
                converter: cfg.converter()?,
                slices: cfg.crossbar.slices,
                repeats: cfg.crossbar.repeats,
                eval_time: cfg.eval.time,
                retrain_epochs: cfg.retrain_epochs(),
                exec,
            };
            let devices = sweep_devices(cfg)?;
            let s = &cfg.sweep;
            let (stem, rows) = match cfg.experiment {
                ExperimentKind::SweepSlices => ("sweep_slices", sweep_slices(&bench, &devices, &s.slices, &cfg.seeds)?),
                ExperimentKind::SweepRepeats => ("sweep_repeats", sweep_repeats(&bench, &devices, &s.repeats, &cfg.seeds)?),
                ExperimentKind::SweepFaults => ("sweep_faults", sweep_faults(&bench, &devices, &s.ratios, &cfg.seeds)?),
                _ => ("sweep_drift", sweep_drift(&bench, &devices, &s.times, &cfg.seeds)?),
            };
            write_tables(dir, stem, &rows)
        }
        ExperimentKind::Lipschitz => {
            let factory = |omega: f64| cfg.build_task(Some(omega)).map(AnyTask::into_task);
            let study = OmegaStudy {
                task_for: &factory,
                train: cfg.train_config(),
                model: cfg.device_model()?,
                converter: cfg.converter()?,
                slices: cfg.crossbar.slices,
                repeats: cfg.crossbar.repeats,
                hwa: cfg.mode == Mode::Analog,
                times: cfg.sweep.times.clone(),
                lipschitz_samples: cfg.sweep.lipschitz_samples,
                lipschitz_pairs: cfg.sweep.lipschitz_pairs,
                exec,
            };
            let rows = omega_study(&study, &cfg.sweep.omegas, &cfg.seeds)?;
            write_tables(dir, "lipschitz", &rows)
        }
        ExperimentKind::Rollout => match &any {
            AnyTask::Gcnet(_) => run_rollout(cfg, task, dir),
            AnyTask::Geodesy(_) => bail!("rollout needs the gcnet task"),
        },
        ExperimentKind::ExportDensity => match &any {
            AnyTask::Geodesy(g) => {
                dir.write("body.csv", |w| g.body.write_csv(w))?;
                run_export(cfg, task, dir)
            }
            AnyTask::Gcnet(_) => bail!("export-density needs a geodesy task"),
        },
    }
}

fn run_train(cfg: &ExperimentConfig, task: &dyn Task, dir: &mut ArtifactDir) -> Result<()> {
    let train = cfg.train_config();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("training seed {seed}");
        let (mut trained, history) = train_one(cfg, task, &train, seed)?;
        dir.write(&format!("loss_history_seed{seed}.csv"), |w| history.write_csv(w, cfg.eval.wall_ms))?;
        let label = trained.label();
        let mut push = |series: &str, value: f64| {
            rows.push(RawRow {
                device: label.clone(),
                series: series.into(),
                x: cfg.eval.time,
                seed,
                value,
            })
        };
        push("test_loss", trained.eval(task, cfg.eval.time, &mut final_eval_stream(seed))?);
        if let Trained::Analog(net) = &mut trained {
            if cfg.faults.ratio > 0.0 {
                let fs = SeedTree::new(seed).child("faults");
                if cfg.faults.retrain {
                    let retrain = TrainConfig { epochs: cfg.retrain_epochs(), ..train.clone() };
                    let o = retrain_after_faults(net, cfg.faults.ratio, task, &retrain, &fs, cfg.eval.time)?;
                    push("unretrained", o.unretrained);
                    push("retrained", o.retrained);
                } else {
                    net.inject_faults(cfg.faults.ratio, &mut fs.stream(STREAM_FAULTS))?;
                    push("unretrained", eval_loss(net, task, cfg.eval.time, &mut final_eval_stream(seed))?);
                }
            }
            for (l, tile) in net.tiles.iter().enumerate() {
                dir.write(&format!("tile_seed{seed}_layer{l}.csv"), |w| tile.write_snapshot_csv(w))?;
            }
        }
        dir.write(&format!("checkpoint_seed{seed}.csv"), |w| trained.weights().write_csv(w))?;
    }
    write_tables(dir, "train", &rows)
}

fn run_rollout(cfg: &ExperimentConfig, task: &dyn Task, dir: &mut ArtifactDir) -> Result<()> {
    let settings = cfg.gcnet_settings();
    let norm = settings.normalizer();
    let n = cfg.gcnet.rollouts.unwrap_or(5);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let (trained, _) = train_one(cfg, task, &cfg.train_config(), seed)?;
        let label = trained.label();
        let x0s = sample_initial_states(&settings, n, &mut SeedTree::new(seed).child("rollout").stream(STREAM_DATA))?;
        let mut read = SeedTree::new(seed).child("rollout").stream(STREAM_READ);
        let mut forward = trained.forward(task, cfg.eval.time, &mut read);
        let mut policy = network_policy(&mut forward, norm);
        for (i, x0) in x0s.iter().enumerate() {
            let traj = rollout(&mut policy, x0, settings.dt)?;
            let mut optimal = |s: &State| Ok(clip_thrust(optimal_control(s)));
            let reference = rollout(&mut optimal, x0, settings.dt)?;
            dir.write(&format!("trajectory_seed{seed}_{i}.csv"), |w| traj.write_csv(w))?;
            if traj.diverged {
                log::warn!("seed {seed} rollout {i} diverged");
            }
            for (series, value) in [
                ("terminal_error_network", traj.terminal_error()),
                ("terminal_error_optimal", reference.terminal_error()),
                ("diverged", f64::from(u8::from(traj.diverged))),
            ] {
                rows.push(RawRow {
                    device: label.clone(),
                    series: series.into(),
                    x: i as f64,
                    seed,
                    value,
                });
            }
        }
    }
    write_tables(dir, "rollout", &rows)
}

fn run_export(cfg: &ExperimentConfig, task: &dyn Task, dir: &mut ArtifactDir) -> Result<()> {
    for &seed in &cfg.seeds {
        let (trained, history) = train_one(cfg, task, &cfg.train_config(), seed)?;
        dir.write(&format!("loss_history_seed{seed}.csv"), |w| history.write_csv(w, cfg.eval.wall_ms))?;
        let mut read = SeedTree::new(seed).child("export").stream(STREAM_READ);
        let mut forward = trained.forward(task, cfg.eval.time, &mut read);
        dir.write(&format!("density_seed{seed}.csv"), |w| {
            export_density_grid(&mut forward, cfg.export.resolution, cfg.export.threshold, w).map(|_| ())
        })?;
    }
    Ok(())
}
