//! Digital and hardware-aware training loops.
//!
//! Hardware-aware training runs the forward pass on weights sampled from the
//! crossbar tiles and the backward pass as if that forward were exact. The
//! resulting gradients update the digital shadow weights, which are written
//! back onto the tiles every `reprogram_every` steps.

use crate::crossbar::ConverterSpec;
use crate::error::{MemsimError, Result};
use crate::ndcore::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::nets::{forward_analog, forward_digital, forward_tape, leaves, AnalogNet, Layer, MlpWeights, SirenSpec, TapeConverters};
use crate::rng::{SeedTree, StreamRng, STREAM_DATA, STREAM_EVAL, STREAM_FAULTS, STREAM_PROGRAM, STREAM_READ};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// Builds the network output for a batch on a tape.
pub type TapeForward<'a> = dyn FnMut(&mut Tape, Var) -> Result<Var> + 'a;

/// Evaluates the network on a batch outside any tape.
pub type BatchForward<'a> = dyn FnMut(&Tensor) -> Result<Tensor> + 'a;

/// A regression problem the training loops can optimize.
pub trait Task: Send + Sync {
    fn spec(&self) -> &SirenSpec;

    fn steps_per_epoch(&self) -> usize;

    /// Records the loss of one optimizer step. `rng` is private to
    /// `(epoch, step)` and drives batch selection or quadrature.
    fn step_loss(&self, tape: &mut Tape, forward: &mut TapeForward<'_>, rng: &mut StreamRng) -> Result<Var>;

    /// Mean loss over the held-out split.
    fn test_loss(&self, forward: &mut BatchForward<'_>, rng: &mut StreamRng) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Reprogram the tiles every this many optimizer steps.
    pub reprogram_every: usize,
    /// Device time during training, seconds.
    pub train_time: f64,
    /// Record the held-out loss every this many epochs (0 = last epoch only).
    pub eval_every: usize,
    /// Apply DAC/ADC, IR-drop and peripheral noise in the training forward.
    pub converters: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            adam: AdamConfig::default(),
            reprogram_every: 1,
            train_time: 0.0,
            eval_every: 0,
            converters: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MemsimError::config("training.epochs", "must be >= 1"));
        }
        if self.reprogram_every == 0 {
            return Err(MemsimError::config("training.reprogram_every", "must be >= 1"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(MemsimError::config("training.adam.lr", "must be > 0"));
        }
        if !(self.train_time >= 0.0 && self.train_time.is_finite()) {
            return Err(MemsimError::config("training.train_time", "must be >= 0"));
        }
        Ok(())
    }

    fn records_test(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.eval_every > 0 && (epoch + 1).is_multiple_of(self.eval_every))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl LossHistory {
    pub fn final_test_loss(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_loss)
    }

    /// `epoch,train_loss,test_loss[,wall_ms]`. Wall time is optional because
    /// it makes otherwise deterministic files differ between runs.
    pub fn write_csv<W: Write>(&self, out: W, with_wall_ms: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch", "train_loss", "test_loss"];
        if with_wall_ms {
            header.push("wall_ms");
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                format!("{:e}", r.train_loss),
                r.test_loss.map(|v| format!("{v:e}")).unwrap_or_default(),
            ];
            if with_wall_ms {
                row.push(format!("{:.3}", r.wall_ms));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn step_rng(seeds: &SeedTree, epoch: usize, step: usize) -> StreamRng {
    seeds.child(STREAM_DATA).indexed(epoch as u64).indexed(step as u64).stream(STREAM_DATA)
}

fn eval_rng(seeds: &SeedTree) -> StreamRng {
    seeds.stream(STREAM_EVAL)
}

fn diverged(epoch: usize, e: MemsimError) -> MemsimError {
    match e {
        MemsimError::NonFinite { op } => MemsimError::Divergence {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Shared optimizer loop. `weights_for_step` yields the weights the forward
/// pass sees; `after_update` runs after each Adam step on the shadow copy.
#[allow(clippy::too_many_arguments)]
fn optimize(
    shadow: &mut MlpWeights,
    task: &dyn Task,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    converters: Option<&ConverterSpec>,
    mut weights_for_step: impl FnMut(&MlpWeights) -> Result<(MlpWeights, Vec<f64>)>,
    mut after_update: impl FnMut(&MlpWeights, usize) -> Result<()>,
    mut evaluate: impl FnMut(&MlpWeights, &mut StreamRng) -> Result<f64>,
) -> Result<LossHistory> {
    cfg.validate()?;
    shadow.check(task.spec())?;
    let spec = task.spec().clone();
    let mut state = AdamState::new(shadow.params());
    let mut history = LossHistory::default();
    let mut periph_rng = seeds.child("periph").stream(STREAM_READ);
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        let steps = task.steps_per_epoch();
        for step in 0..steps {
            let (used, ranges) = weights_for_step(shadow)?;
            let mut tape = Tape::new();
            let vars = leaves(&mut tape, &used);
            let mut rng = step_rng(seeds, epoch, step);
            let loss = {
                let mut forward = |tape: &mut Tape, x: Var| {
                    let conv = converters.map(|c| TapeConverters {
                        spec: c,
                        weight_ranges: &ranges,
                        rng: &mut periph_rng,
                    });
                    forward_tape(tape, &vars, &spec, x, conv)
                };
                task.step_loss(&mut tape, &mut forward, &mut rng).map_err(|e| diverged(epoch, e))?
            };
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(MemsimError::Divergence {
                    epoch,
                    detail: format!("loss {value}"),
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars
                .iter()
                .zip(&used.layers)
                .flat_map(|(v, l)| [grads.get_or_zeros(v.w, l.w.shape()), grads.get_or_zeros(v.b, l.b.shape())])
                .collect();
            adam_step(&mut shadow.params_mut(), &g, &mut state, &cfg.adam)?;
            global_step += 1;
            after_update(shadow, global_step)?;
            history.step_losses.push(value);
            total += value;
        }
        let test_loss = if cfg.records_test(epoch) {
            Some(evaluate(shadow, &mut eval_rng(seeds))?)
        } else {
            None
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss: total / steps as f64,
            test_loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        log::debug!("epoch {epoch}: train {:.6e}", total / steps as f64);
    }
    Ok(history)
}

/// Plain digital training of `w` in place.
pub fn train_digital(w: &mut MlpWeights, task: &dyn Task, cfg: &TrainConfig, seeds: &SeedTree) -> Result<LossHistory> {
    let spec = task.spec().clone();
    optimize(
        w,
        task,
        cfg,
        seeds,
        None,
        |s| Ok((s.clone(), Vec::new())),
        |_, _| Ok(()),
        |s, rng| eval_digital(s, &spec, task, rng),
    )
}

/// Hardware-aware training of an analog network.
///
/// Each step draws one effective weight set from the tiles (the distribution
/// a `repeats`-averaged read produces at `cfg.train_time`), runs the forward
/// on it and applies the exact gradient of that forward to the shadow
/// weights.
pub fn hwa_train(net: &mut AnalogNet, task: &dyn Task, cfg: &TrainConfig, seeds: &SeedTree) -> Result<LossHistory> {
    if net.spec != *task.spec() {
        return Err(MemsimError::contract("network and task disagree on the SIREN spec"));
    }
    cfg.validate()?;
    let mut read_rng = seeds.stream(STREAM_READ);
    let mut program_rng = seeds.stream(STREAM_PROGRAM);
    let t = cfg.train_time.max(net.t_prog());
    let converter = net.converter.clone();
    let mut shadow = net.shadow.clone();
    let net_cell = std::cell::RefCell::new(&mut *net);
    let history = optimize(
        &mut shadow,
        task,
        cfg,
        seeds,
        cfg.converters.then_some(&converter),
        |s| {
            let n = net_cell.borrow();
            let eff = n.effective_weights(t, &mut read_rng)?;
            Ok((with_biases(eff, s), n.weight_ranges()))
        },
        |s, step| {
            let mut n = net_cell.borrow_mut();
            n.shadow = s.clone();
            if step % cfg.reprogram_every == 0 {
                n.reprogram(t, &mut program_rng)?;
            }
            Ok(())
        },
        |s, rng| {
            let mut n = net_cell.borrow_mut();
            n.shadow = s.clone();
            eval_loss(&n, task, t, rng)
        },
    )?;
    net.shadow = shadow;
    Ok(history)
}

fn with_biases(eff: MlpWeights, shadow: &MlpWeights) -> MlpWeights {
    MlpWeights {
        layers: eff
            .layers
            .into_iter()
            .zip(&shadow.layers)
            .map(|(l, s)| Layer { w: l.w, b: s.b.clone() })
            .collect(),
    }
}

fn split_rng(rng: &mut StreamRng) -> (StreamRng, StreamRng) {
    (StreamRng::seed_from_u64(rng.gen()), StreamRng::seed_from_u64(rng.gen()))
}

/// Held-out loss of the analog network read out at time `t`.
pub fn eval_loss(net: &AnalogNet, task: &dyn Task, t: f64, rng: &mut StreamRng) -> Result<f64> {
    let (mut task_rng, mut read_rng) = split_rng(rng);
    let mut forward = |x: &Tensor| forward_analog(net, x, t, &mut read_rng);
    task.test_loss(&mut forward, &mut task_rng)
}

/// Held-out loss of digital weights. Draws from `rng` exactly like
/// [`eval_loss`], so both see the same task randomness.
pub fn eval_digital(w: &MlpWeights, spec: &SirenSpec, task: &dyn Task, rng: &mut StreamRng) -> Result<f64> {
    let (mut task_rng, _) = split_rng(rng);
    let mut forward = |x: &Tensor| forward_digital(w, spec, x);
    task.test_loss(&mut forward, &mut task_rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FaultOutcome {
    pub before: f64,
    pub unretrained: f64,
    pub retrained: f64,
    pub stuck_devices: usize,
}

/// Sticks `ratio` of every tile's devices, then retrains with `cfg`.
/// All losses are read out at `t_eval` with the same evaluation draws.
pub fn retrain_after_faults(
    net: &mut AnalogNet,
    ratio: f64,
    task: &dyn Task,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    t_eval: f64,
) -> Result<FaultOutcome> {
    let eval_seeds = seeds.child(STREAM_EVAL);
    let before = eval_loss(net, task, t_eval, &mut eval_seeds.stream(STREAM_EVAL))?;
    let stuck_devices = net.inject_faults(ratio, &mut seeds.stream(STREAM_FAULTS))?;
    let unretrained = eval_loss(net, task, t_eval, &mut eval_seeds.stream(STREAM_EVAL))?;
    hwa_train(net, task, cfg, &seeds.child("retrain"))?;
    let retrained = eval_loss(net, task, t_eval, &mut eval_seeds.stream(STREAM_EVAL))?;
    Ok(FaultOutcome {
        before,
        unretrained,
        retrained,
        stuck_devices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::DeviceModel;
    use crate::nets::{init_siren, to_analog, FinalActivation};
    use crate::rng::STREAM_INIT;

    /// Fit `y = sin(2x₀) · x₁` on a fixed sample.
    struct Toy {
        spec: SirenSpec,
        x: Tensor,
        y: Tensor,
    }

    impl Toy {
        fn new(n: usize) -> Self {
            let mut r = StreamRng::seed_from_u64(77);
            let xs: Vec<f64> = (0..2 * n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let ys = xs.chunks(2).map(|p| (2.0 * p[0]).sin() * p[1]).collect();
            Toy {
                spec: SirenSpec::new(vec![2, 16, 16, 1], 1.0, FinalActivation::Identity, 0).unwrap(),
                x: Tensor::matrix(n, 2, xs).unwrap(),
                y: Tensor::matrix(n, 1, ys).unwrap(),
            }
        }
    }

    impl Task for Toy {
        fn spec(&self) -> &SirenSpec {
            &self.spec
        }
        fn steps_per_epoch(&self) -> usize {
            2
        }
        fn step_loss(&self, tape: &mut Tape, forward: &mut TapeForward<'_>, _rng: &mut StreamRng) -> Result<Var> {
            let x = tape.constant(self.x.clone());
            let out = forward(tape, x)?;
            let y = tape.constant(self.y.clone());
            let d = tape.sub(out, y)?;
            let sq = tape.square(d)?;
            tape.mean(sq)
        }
        fn test_loss(&self, forward: &mut BatchForward<'_>, _rng: &mut StreamRng) -> Result<f64> {
            let out = forward(&self.x)?;
            Ok(out.sub(&self.y)?.map(|v| v * v).mean())
        }
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            adam: AdamConfig::with_lr(1e-2),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn digital_training_reduces_loss() {
        let task = Toy::new(64);
        let seeds = SeedTree::new(1);
        let mut w = init_siren(&task.spec, &mut seeds.stream(STREAM_INIT)).unwrap();
        let h = train_digital(&mut w, &task, &cfg(100), &seeds).unwrap();
        assert_eq!(h.records.len(), 100);
        assert!(h.records[99].train_loss < 0.2 * h.records[0].train_loss);
        assert!(h.final_test_loss().is_some());
    }

    #[test]
    fn degenerate_hwa_matches_digital() {
        let task = Toy::new(32);
        let seeds = SeedTree::new(2);
        let w0 = init_siren(&task.spec, &mut seeds.stream(STREAM_INIT)).unwrap();
        let mut w = w0.clone();
        let hd = train_digital(&mut w, &task, &cfg(25), &seeds).unwrap();
        let mut net = to_analog(&w0, &task.spec, &DeviceModel::ideal(), 1, &ConverterSpec::ideal(), 1, 0.0, &mut seeds.stream(STREAM_PROGRAM)).unwrap();
        let ha = hwa_train(&mut net, &task, &cfg(25), &seeds).unwrap();
        assert_eq!(hd.step_losses.len(), 50);
        for (a, d) in ha.step_losses.iter().zip(&hd.step_losses) {
            assert!((a - d).abs() <= 1e-6 * d.abs().max(1e-12), "{a} vs {d}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let task = Toy::new(16);
        let run = || {
            let seeds = SeedTree::new(3);
            let w = init_siren(&task.spec, &mut seeds.stream(STREAM_INIT)).unwrap();
            let mut net = to_analog(&w, &task.spec, &DeviceModel::pcm(), 2, &ConverterSpec::default(), 4, 0.0, &mut seeds.stream(STREAM_PROGRAM)).unwrap();
            hwa_train(&mut net, &task, &cfg(5), &seeds).unwrap();
            net.shadow
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_history_csv_shape() {
        let h = LossHistory {
            records: vec![
                EpochRecord { epoch: 0, train_loss: 1.0, test_loss: None, wall_ms: 1.0 },
                EpochRecord { epoch: 1, train_loss: 0.5, test_loss: Some(0.25), wall_ms: 1.0 },
            ],
            step_losses: vec![],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,train_loss,test_loss\n0,1e0,\n1,5e-1,2.5e-1\n");
    }

    #[test]
    fn zero_fault_ratio_keeps_loss() {
        let task = Toy::new(16);
        let seeds = SeedTree::new(4);
        let w = init_siren(&task.spec, &mut seeds.stream(STREAM_INIT)).unwrap();
        let mut net = to_analog(&w, &task.spec, &DeviceModel::rram(), 1, &ConverterSpec::default(), 4, 0.0, &mut seeds.stream(STREAM_PROGRAM)).unwrap();
        hwa_train(&mut net, &task, &cfg(20), &seeds).unwrap();
        let out = retrain_after_faults(&mut net, 0.0, &task, &cfg(5), &seeds, 0.0).unwrap();
        assert_eq!(out.stuck_devices, 0);
        assert_eq!(out.before, out.unretrained);
        assert!(out.retrained <= 1.5 * out.before, "{out:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let task = Toy::new(4);
        let mut w = MlpWeights::zeros(&task.spec);
        assert!(train_digital(&mut w, &task, &cfg(0), &SeedTree::new(0)).is_err());
    }
}
