//! Experiment sweeps over the mitigation and degradation axes, noise-law
//! probes and Lipschitz estimates, with long-format CSV output.
//!
//! Every sweep job derives its randomness from `(seed, device, point)` so the
//! parallel and sequential strategies produce identical rows.

use crate::crossbar::{analog_mvm_batch, ConverterSpec, CrossbarTile};
use crate::devices::DeviceModel;
use crate::error::{MemsimError, Result};
use crate::exec::Exec;
use crate::ndcore::{Tape, Tensor};
use crate::nets::{forward_digital, forward_tape, init_siren, leaves, to_analog, AnalogNet, MlpWeights, SirenSpec};
use crate::rng::{SeedTree, StreamRng, STREAM_EVAL, STREAM_INIT, STREAM_PROGRAM};
use crate::training::{eval_digital, eval_loss, hwa_train, retrain_after_faults, train_digital, LossHistory, Task, TrainConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::io::Write;

pub const DEFAULT_SLICES: [usize; 5] = [1, 2, 4, 8, 16];
pub const DEFAULT_REPEATS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];
pub const DEFAULT_FAULT_RATIOS: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10];
pub const DEFAULT_DRIFT_TIMES: [f64; 6] = [0.0, 1.0, 60.0, 3600.0, 86400.0, 172800.0];

/// One measurement of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub device: String,
    pub series: String,
    pub x: f64,
    pub seed: u64,
    pub value: f64,
}

/// Statistics over seeds for one `(device, series, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub device: String,
    pub series: String,
    pub x: f64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Groups rows by `(device, series, x)` in order of first appearance.
pub fn summarize(rows: &[RawRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.device.clone(), r.series.clone(), r.x.to_bits());
        groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Vec::new()
        });
        groups.get_mut(&key).expect("inserted").push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &groups[&key];
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                device: key.0,
                series: key.1,
                x: f64::from_bits(key.2),
                n,
                mean,
                std,
                median: median(v),
            }
        })
        .collect()
}

pub fn write_raw_csv<W: Write>(rows: &[RawRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device", "series", "x", "seed", "value"])?;
    for r in rows {
        w.write_record([r.device.clone(), r.series.clone(), format!("{:e}", r.x), r.seed.to_string(), format!("{:e}", r.value)])?;
    }
    w.flush()?;
    Ok(())
}

/// `device,series,x,n,mean,std,median`.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device", "series", "x", "n", "mean", "std", "median"])?;
    for r in rows {
        w.write_record([
            r.device.clone(),
            r.series.clone(),
            format!("{:e}", r.x),
            r.n.to_string(),
            format!("{:e}", r.mean),
            format!("{:e}", r.std),
            format!("{:e}", r.median),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median of `series` at `x` for `device`, if present.
pub fn median_at(rows: &[SummaryRow], device: &str, series: &str, x: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.device == device && r.series == series && r.x == x)
        .map(|r| r.median)
}

/// Everything a sweep needs besides the swept axis.
pub struct Bench<'a> {
    pub task: &'a dyn Task,
    pub train: TrainConfig,
    pub converter: ConverterSpec,
    pub slices: usize,
    pub repeats: usize,
    /// Read-out time for the reported test losses, seconds.
    pub eval_time: f64,
    /// Epoch budget for post-fault retraining.
    pub retrain_epochs: usize,
    pub exec: Exec,
}

/// Seed tree for one job; the device name and point keep jobs independent.
fn job_seeds(seed: u64, device: &str, point: &str) -> SeedTree {
    SeedTree::new(seed).child(device).child(point)
}

fn eval_stream(seed: u64) -> StreamRng {
    SeedTree::new(seed).child("final").stream(STREAM_EVAL)
}

/// Initial weights depend on the master seed only, so every sweep point of
/// one seed starts from the same network.
pub fn initial_weights(spec: &SirenSpec, seed: u64) -> Result<MlpWeights> {
    init_siren(spec, &mut SeedTree::new(seed).stream(STREAM_INIT))
}

/// Hardware-aware training of a fresh network.
pub fn train_analog(
    bench: &Bench<'_>,
    model: &DeviceModel,
    slices: usize,
    repeats: usize,
    seeds: &SeedTree,
    seed: u64,
) -> Result<(AnalogNet, LossHistory)> {
    let spec = bench.task.spec();
    let w0 = initial_weights(spec, seed)?;
    let mut net = to_analog(&w0, spec, model, slices, &bench.converter, repeats, 0.0, &mut seeds.stream(STREAM_PROGRAM))?;
    let history = hwa_train(&mut net, bench.task, &bench.train, seeds)?;
    Ok((net, history))
}

/// Digital reference loss per seed.
pub fn digital_baseline(bench: &Bench<'_>, seeds: &[u64]) -> Result<Vec<RawRow>> {
    let spec = bench.task.spec().clone();
    let values = bench.exec.try_map(seeds.len(), |i| {
        let seed = seeds[i];
        let mut w = initial_weights(&spec, seed)?;
        train_digital(&mut w, bench.task, &bench.train, &job_seeds(seed, "digital", "baseline"))?;
        eval_digital(&w, &spec, bench.task, &mut eval_stream(seed))
    })?;
    Ok(seeds
        .iter()
        .zip(values)
        .map(|(&seed, value)| RawRow {
            device: "digital".into(),
            series: "test_loss".into(),
            x: 0.0,
            seed,
            value,
        })
        .collect())
}

/// Trains and evaluates one analog network per `(device, point, seed)`.
/// `points` are `(slices, repeats, x)`.
pub fn sweep_grid(
    bench: &Bench<'_>,
    devices: &[DeviceModel],
    points: &[(usize, usize, f64)],
    series: &str,
    seeds: &[u64],
) -> Result<Vec<RawRow>> {
    let jobs: Vec<(usize, usize, usize)> = (0..devices.len())
        .flat_map(|d| (0..points.len()).flat_map(move |p| (0..seeds.len()).map(move |s| (d, p, s))))
        .collect();
    let results = bench.exec.try_map(jobs.len(), |j| {
        let (d, p, s) = jobs[j];
        let (slices, repeats, _) = points[p];
        let model = &devices[d];
        let seed = seeds[s];
        let js = job_seeds(seed, &model.name, &format!("k{slices}n{repeats}"));
        let (net, history) = train_analog(bench, model, slices, repeats, &js, seed)?;
        let test = eval_loss(&net, bench.task, bench.eval_time, &mut eval_stream(seed))?;
        let train = history.records.last().map_or(f64::NAN, |r| r.train_loss);
        Ok::<_, MemsimError>((test, train))
    })?;
    let mut rows = Vec::with_capacity(2 * jobs.len());
    for (&(d, p, s), (test, train)) in jobs.iter().zip(results) {
        for (name, value) in [(series.to_string(), test), (format!("{series}_train"), train)] {
            rows.push(RawRow {
                device: devices[d].name.clone(),
                series: name,
                x: points[p].2,
                seed: seeds[s],
                value,
            });
        }
    }
    Ok(rows)
}

/// Loss against the number of slices at the bench's repeat count.
pub fn sweep_slices(bench: &Bench<'_>, devices: &[DeviceModel], slices: &[usize], seeds: &[u64]) -> Result<Vec<RawRow>> {
    let points: Vec<_> = slices.iter().map(|&k| (k, bench.repeats, k as f64)).collect();
    sweep_grid(bench, devices, &points, "slices", seeds)
}

/// Loss against the number of repeats at the bench's slice count.
pub fn sweep_repeats(bench: &Bench<'_>, devices: &[DeviceModel], repeats: &[usize], seeds: &[u64]) -> Result<Vec<RawRow>> {
    let points: Vec<_> = repeats.iter().map(|&n| (bench.slices, n, n as f64)).collect();
    sweep_grid(bench, devices, &points, "repeats", seeds)
}

/// Trains one network per `(device, seed)`, then for each ratio injects
/// faults into a copy and retrains it (`retrain_epochs` epochs; 0 skips).
/// Series: `fault_free`, `unretrained`, `retrained`.
pub fn sweep_faults(bench: &Bench<'_>, devices: &[DeviceModel], ratios: &[f64], seeds: &[u64]) -> Result<Vec<RawRow>> {
    let jobs: Vec<(usize, usize)> = (0..devices.len()).flat_map(|d| (0..seeds.len()).map(move |s| (d, s))).collect();
    let results = bench.exec.try_map(jobs.len(), |j| {
        let (d, s) = jobs[j];
        let model = &devices[d];
        let seed = seeds[s];
        let js = job_seeds(seed, &model.name, "faults");
        let (net, _) = train_analog(bench, model, bench.slices, bench.repeats, &js, seed)?;
        let retrain = TrainConfig {
            epochs: bench.retrain_epochs.max(1),
            ..bench.train.clone()
        };
        let mut out = Vec::new();
        for (r, &ratio) in ratios.iter().enumerate() {
            let mut copy = net.clone();
            let fs = js.child("ratio").indexed(r as u64);
            let o = if bench.retrain_epochs == 0 {
                let before = eval_loss(&copy, bench.task, bench.eval_time, &mut eval_stream(seed))?;
                copy.inject_faults(ratio, &mut fs.stream(crate::rng::STREAM_FAULTS))?;
                let after = eval_loss(&copy, bench.task, bench.eval_time, &mut eval_stream(seed))?;
                [before, after, f64::NAN]
            } else {
                let o = retrain_after_faults(&mut copy, ratio, bench.task, &retrain, &fs, bench.eval_time)?;
                [o.before, o.unretrained, o.retrained]
            };
            out.push(o);
        }
        Ok::<_, MemsimError>(out)
    })?;
    let mut rows = Vec::new();
    for (&(d, s), per_ratio) in jobs.iter().zip(results) {
        for (&ratio, vals) in ratios.iter().zip(per_ratio) {
            for (name, value) in ["fault_free", "unretrained", "retrained"].iter().zip(vals) {
                if value.is_nan() {
                    continue;
                }
                rows.push(RawRow {
                    device: devices[d].name.clone(),
                    series: (*name).into(),
                    x: ratio,
                    seed: seeds[s],
                    value,
                });
            }
        }
    }
    Ok(rows)
}

/// Loss of frozen trained networks read out at each time. Every time point
/// uses the same evaluation draws.
pub fn sweep_drift(bench: &Bench<'_>, devices: &[DeviceModel], times: &[f64], seeds: &[u64]) -> Result<Vec<RawRow>> {
    let nets = train_per_device(bench, devices, seeds, "drift")?;
    drift_rows(bench.task, &nets, devices, times, seeds, bench.exec)
}

/// One trained network per `(device, seed)`, device-major.
pub fn train_per_device(bench: &Bench<'_>, devices: &[DeviceModel], seeds: &[u64], scope: &str) -> Result<Vec<AnalogNet>> {
    let jobs: Vec<(usize, usize)> = (0..devices.len()).flat_map(|d| (0..seeds.len()).map(move |s| (d, s))).collect();
    bench.exec.try_map(jobs.len(), |j| {
        let (d, s) = jobs[j];
        let model = &devices[d];
        let js = job_seeds(seeds[s], &model.name, scope);
        Ok(train_analog(bench, model, bench.slices, bench.repeats, &js, seeds[s])?.0)
    })
}

/// Drift rows for already trained networks laid out as
/// [`train_per_device`] returns them.
pub fn drift_rows(
    task: &dyn Task,
    nets: &[AnalogNet],
    devices: &[DeviceModel],
    times: &[f64],
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<RawRow>> {
    if nets.len() != devices.len() * seeds.len() {
        return Err(MemsimError::contract("one network per (device, seed) expected"));
    }
    let values = exec.try_map(nets.len() * times.len(), |j| {
        let (n, t) = (j / times.len(), j % times.len());
        let seed = seeds[n % seeds.len()];
        eval_loss(&nets[n], task, times[t], &mut eval_stream(seed))
    })?;
    let mut rows = Vec::with_capacity(values.len());
    for (j, value) in values.into_iter().enumerate() {
        let (n, t) = (j / times.len(), j % times.len());
        rows.push(RawRow {
            device: devices[n / seeds.len()].name.clone(),
            series: "drift".into(),
            x: times[t],
            seed: seeds[n % seeds.len()],
            value,
        });
    }
    Ok(rows)
}

/// Result of [`noise_scaling_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFit {
    pub repeats: Vec<usize>,
    /// Standard deviation of the MVM output error at each repeat count.
    pub stds: Vec<f64>,
    /// Least-squares slope of `ln std` against `ln N`; `None` when some
    /// standard deviation is zero.
    pub slope: Option<f64>,
}

/// Measures how averaging `N` analog evaluations shrinks the output error.
/// Each trial programs a fresh tile with `weights` (so programming error
/// varies between trials) and evaluates `x` with `N` repeats.
#[allow(clippy::too_many_arguments)]
pub fn noise_scaling_probe(
    weights: &Tensor,
    x: &Tensor,
    model: &DeviceModel,
    converter: &ConverterSpec,
    slices: usize,
    repeats_list: &[usize],
    trials: usize,
    seeds: &SeedTree,
    exec: Exec,
) -> Result<NoiseFit> {
    if trials < 2 || repeats_list.is_empty() {
        return Err(MemsimError::contract("need >= 2 trials and at least one repeat count"));
    }
    let exact = x.matmul(weights)?;
    let stds = exec.try_map(repeats_list.len(), |ri| {
        let n = repeats_list[ri];
        let errs = (0..trials)
            .map(|trial| {
                let ts = seeds.indexed(n as u64).indexed(trial as u64);
                let tile = CrossbarTile::map_weights(weights, model, slices, 0.0, &mut ts.stream(STREAM_PROGRAM))?;
                let y = analog_mvm_batch(&tile, x, converter, 0.0, n, &mut ts.stream(crate::rng::STREAM_READ))?;
                y.sub(&exact)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, MemsimError>(pooled_std(&errs))
    })?;
    let slope = if stds.iter().all(|&s| s > 0.0) && repeats_list.len() > 1 {
        let xs: Vec<f64> = repeats_list.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = stds.iter().map(|s| s.ln()).collect();
        Some(ls_slope(&xs, &ys))
    } else {
        None
    };
    Ok(NoiseFit {
        repeats: repeats_list.to_vec(),
        stds,
        slope,
    })
}

/// Per-element sample std over trials, pooled as a root-mean variance.
fn pooled_std(samples: &[Tensor]) -> f64 {
    let n = samples.len() as f64;
    let len = samples[0].len();
    let mut var = 0.0;
    for k in 0..len {
        let mean = samples.iter().map(|s| s.data()[k]).sum::<f64>() / n;
        var += samples.iter().map(|s| (s.data()[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    }
    (var / len as f64).sqrt()
}

pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Standard deviation of decoded-minus-target weights for each slice count.
pub fn slicing_probe(weights: &Tensor, model: &DeviceModel, slices_list: &[usize], seeds: &SeedTree, exec: Exec) -> Result<Vec<f64>> {
    exec.try_map(slices_list.len(), |i| {
        let k = slices_list[i];
        let tile = CrossbarTile::map_weights(weights, model, k, 0.0, &mut seeds.indexed(k as u64).stream(STREAM_PROGRAM))?;
        let err = tile.programmed_weights().sub(weights)?;
        let n = err.len() as f64;
        let mean = err.mean();
        Ok(err.data().iter().map(|e| (e - mean).powi(2)).sum::<f64>().sqrt() / (n - 1.0).sqrt())
    })
}

/// Uniform samples in `[lo, hi]^d`.
fn box_samples(n: usize, d: usize, bounds: [f64; 2], rng: &mut StreamRng) -> Vec<f64> {
    (0..n * d).map(|_| rng.gen_range(bounds[0]..=bounds[1])).collect()
}

/// Mean spectral norm of the input Jacobian over `n_samples` uniform points
/// of the box. The largest singular value is computed exactly.
pub fn lipschitz_grad(w: &MlpWeights, spec: &SirenSpec, n_samples: usize, bounds: [f64; 2], rng: &mut StreamRng, exec: Exec) -> Result<f64> {
    if n_samples == 0 {
        return Err(MemsimError::contract("need at least one sample"));
    }
    let d = spec.input_dim();
    let m = spec.output_dim();
    let xs = box_samples(n_samples, d, bounds, rng);
    let chunk = 256;
    let norms = exec.map_chunks(n_samples, chunk, |range| -> Result<Vec<f64>> {
        let b = range.len();
        let x = Tensor::matrix(b, d, xs[range.start * d..range.end * d].to_vec())?;
        let mut jac = vec![0.0; b * m * d];
        for j in 0..m {
            let mut tape = Tape::new();
            let vars = leaves(&mut tape, w);
            let xv = tape.leaf(x.clone());
            let out = forward_tape(&mut tape, &vars, spec, xv, None)?;
            let mut mask = Tensor::zeros(&[b, m]);
            for i in 0..b {
                mask.data_mut()[i * m + j] = 1.0;
            }
            let mv = tape.constant(mask);
            let sel = tape.mul(out, mv)?;
            let total = tape.sum(sel)?;
            let grads = tape.backward(total)?;
            let g = grads.get_or_zeros(xv, &[b, d]);
            for i in 0..b {
                jac[(i * m + j) * d..(i * m + j + 1) * d].copy_from_slice(g.row(i));
            }
        }
        Ok((0..b).map(|i| spectral_norm(&jac[i * m * d..(i + 1) * m * d], m, d)).collect())
    });
    let all: Vec<f64> = norms.into_iter().collect::<Result<Vec<_>>>()?.concat();
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

/// Largest singular value of a row-major `m × d` matrix.
pub fn spectral_norm(a: &[f64], m: usize, d: usize) -> f64 {
    let mat = DMatrix::from_row_slice(m, d, a);
    mat.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Maximum of `‖f(x) − f(x′)‖ / ‖x − x′‖` over random pairs. With `radius`
/// set, `x′` is drawn within that distance of `x`; otherwise both points are
/// independent uniform draws from the box.
pub fn lipschitz_pairs(
    w: &MlpWeights,
    spec: &SirenSpec,
    n_pairs: usize,
    bounds: [f64; 2],
    radius: Option<f64>,
    rng: &mut StreamRng,
) -> Result<f64> {
    let d = spec.input_dim();
    let mut a = Vec::with_capacity(n_pairs * d);
    let mut b = Vec::with_capacity(n_pairs * d);
    let mut dists = Vec::with_capacity(n_pairs);
    while dists.len() < n_pairs {
        let x = box_samples(1, d, bounds, rng);
        let y = match radius {
            None => box_samples(1, d, bounds, rng),
            Some(r) => {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let l = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = r * rng.gen::<f64>() / l;
                x.iter().zip(&dir).map(|(xi, di)| xi + s * di).collect()
            }
        };
        let dist = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        if dist < 1e-12 {
            continue;
        }
        a.extend(x);
        b.extend(y);
        dists.push(dist);
    }
    let fa = forward_digital(w, spec, &Tensor::matrix(n_pairs, d, a)?)?;
    let fb = forward_digital(w, spec, &Tensor::matrix(n_pairs, d, b)?)?;
    Ok((0..n_pairs)
        .map(|i| {
            let diff = fa.row(i).iter().zip(fb.row(i)).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            diff / dists[i]
        })
        .fold(0.0, f64::max))
}

/// Task factory for a given ω₀.
pub type TaskFactory<'a> = dyn Fn(f64) -> Result<Box<dyn Task>> + Sync + 'a;

/// Settings of the ω₀ sensitivity study.
pub struct OmegaStudy<'a> {
    pub task_for: &'a TaskFactory<'a>,
    pub train: TrainConfig,
    pub model: DeviceModel,
    pub converter: ConverterSpec,
    pub slices: usize,
    pub repeats: usize,
    /// Train hardware-aware on `model`; otherwise train digitally and map.
    pub hwa: bool,
    /// Read-out times of the drift losses, seconds.
    pub times: Vec<f64>,
    pub lipschitz_samples: usize,
    pub lipschitz_pairs: usize,
    pub exec: Exec,
}

/// Series name of the drift loss at read-out time `t`.
pub fn drift_series(t: f64) -> String {
    format!("loss_t{t}")
}

/// Trains one network per `(ω₀, seed)` and reports both Lipschitz
/// estimates over the normalized input box `[-1, 1]^d` plus the loss of the
/// programmed network at each read-out time. Rows use `x = ω₀`.
pub fn omega_study(study: &OmegaStudy<'_>, omegas: &[f64], seeds: &[u64]) -> Result<Vec<RawRow>> {
    let jobs: Vec<(usize, usize)> = (0..omegas.len()).flat_map(|o| (0..seeds.len()).map(move |s| (o, s))).collect();
    let results = study.exec.try_map(jobs.len(), |j| {
        let (o, s) = jobs[j];
        let (omega, seed) = (omegas[o], seeds[s]);
        let task = (study.task_for)(omega)?;
        let spec = task.spec().clone();
        let js = job_seeds(seed, "omega", &format!("{omega}"));
        let w0 = initial_weights(&spec, seed)?;
        let (w, net) = if study.hwa {
            let mut net = to_analog(&w0, &spec, &study.model, study.slices, &study.converter, study.repeats, 0.0, &mut js.stream(STREAM_PROGRAM))?;
            hwa_train(&mut net, task.as_ref(), &study.train, &js)?;
            (net.shadow.clone(), net)
        } else {
            let mut w = w0;
            train_digital(&mut w, task.as_ref(), &study.train, &js)?;
            let net = to_analog(&w, &spec, &study.model, study.slices, &study.converter, study.repeats, 0.0, &mut js.stream(STREAM_PROGRAM))?;
            (w, net)
        };
        let lip = js.child("lipschitz");
        let grad = lipschitz_grad(&w, &spec, study.lipschitz_samples, [-1.0, 1.0], &mut lip.stream("grad"), Exec::Sequential)?;
        let pairs = lipschitz_pairs(&w, &spec, study.lipschitz_pairs, [-1.0, 1.0], None, &mut lip.stream("pairs"))?;
        let mut values = vec![("lipschitz_grad".to_string(), grad), ("lipschitz_pairs".to_string(), pairs)];
        for &t in &study.times {
            values.push((drift_series(t), eval_loss(&net, task.as_ref(), t, &mut eval_stream(seed))?));
        }
        Ok::<_, MemsimError>(values)
    })?;
    let mut rows = Vec::new();
    for (&(o, s), values) in jobs.iter().zip(results) {
        for (series, value) in values {
            rows.push(RawRow {
                device: study.model.name.clone(),
                series,
                x: omegas[o],
                seed: seeds[s],
                value,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{FinalActivation, Layer};
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    #[test]
    fn summary_statistics() {
        let rows: Vec<RawRow> = [3.0, 1.0, 2.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| RawRow {
                device: "pcm".into(),
                series: "s".into(),
                x: if i < 3 { 1.0 } else { 2.0 },
                seed: i as u64,
                value: v,
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].n, s[0].mean, s[0].median, s[0].std), (3, 2.0, 2.0, 1.0));
        assert_eq!((s[1].n, s[1].median, s[1].std), (1, 10.0, 0.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        let mut buf = Vec::new();
        write_summary_csv(&s[1..], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "device,series,x,n,mean,std,median\npcm,s,2e0,1,1e1,0e0,1e1\n");
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| (3.0 * v.powf(-0.5)).ln()).collect();
        assert!((ls_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    fn linear_net(w: Vec<f64>, d: usize, m: usize) -> (MlpWeights, SirenSpec) {
        let spec = SirenSpec::new(vec![d, m], 1.0, FinalActivation::Identity, 0).unwrap();
        let weights = MlpWeights {
            layers: vec![Layer {
                w: Tensor::matrix(d, m, w).unwrap(),
                b: Tensor::zeros(&[m]),
            }],
        };
        (weights, spec)
    }

    #[test]
    fn lipschitz_of_sine_and_linear_maps() {
        let spec = SirenSpec::new(vec![1, 1], 1.0, FinalActivation::Sine, 0).unwrap();
        let w = MlpWeights {
            layers: vec![Layer {
                w: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                b: Tensor::zeros(&[1]),
            }],
        };
        let pi = std::f64::consts::PI;
        let est = lipschitz_grad(&w, &spec, 20_000, [-pi, pi], &mut rng(1), Exec::Sequential).unwrap();
        assert!((est - 2.0 / pi).abs() < 0.01, "{est}");

        // f(x) = x·W with W = [[3, 0], [0, 4], [0, 0]] has spectral norm 4.
        let (w, spec) = linear_net(vec![3.0, 0.0, 0.0, 4.0, 0.0, 0.0], 3, 2);
        let est = lipschitz_grad(&w, &spec, 300, [-1.0, 1.0], &mut rng(2), Exec::Parallel).unwrap();
        assert!((est - 4.0).abs() < 1e-12);

        let (w, spec) = linear_net(vec![2.0], 1, 1);
        let est = lipschitz_pairs(&w, &spec, 1500, [-1.0, 1.0], None, &mut rng(3)).unwrap();
        assert!((est - 2.0).abs() < 1e-12);
        let (w, spec) = linear_net(vec![0.0, 0.0], 2, 1);
        assert_eq!(lipschitz_pairs(&w, &spec, 100, [-1.0, 1.0], Some(0.1), &mut rng(4)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_matches_hand_value() {
        // [[1, 1], [0, 0]] has singular values √2 and 0.
        assert!((spectral_norm(&[1.0, 1.0, 0.0, 0.0], 2, 2) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn noiseless_probe_is_degenerate() {
        let w = Tensor::matrix(4, 2, vec![0.5, -0.5, 0.25, 0.0, -1.0, 0.75, 0.1, 0.2]).unwrap();
        let x = Tensor::matrix(1, 4, vec![0.3, -0.2, 0.9, 0.5]).unwrap();
        let fit = noise_scaling_probe(&w, &x, &DeviceModel::ideal(), &ConverterSpec::ideal(), 1, &[1, 4], 3, &SeedTree::new(1), Exec::Sequential).unwrap();
        assert_eq!(fit.slope, None);
    }

    #[test]
    fn probes_are_deterministic_across_strategies() {
        let mut r = rng(5);
        let w = Tensor::matrix(8, 4, (0..32).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = Tensor::matrix(2, 8, (0..16).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let run = |e| noise_scaling_probe(&w, &x, &DeviceModel::pcm(), &ConverterSpec::default(), 1, &[1, 2, 4], 10, &SeedTree::new(2), e).unwrap();
        assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
        let s = |e| slicing_probe(&w, &DeviceModel::pcm(), &[1, 2], &SeedTree::new(3), e).unwrap();
        assert_eq!(s(Exec::Sequential), s(Exec::Parallel));
    }
}
