//! Crossbar tiles: differential weight encoding, equal-significance bit
//! slicing, converters and repeated (temporally averaged) analog MVMs.
//!
//! Weights map to conductance pairs `(g⁺, g⁻)` with
//! `w = w_scale · (g⁺ − g⁻)`; one device of each pair sits at `g_min`.
//! Every slice is programmed with the same targets and decoded weights are
//! the mean over slices. Converter ranges for the output are expressed
//! relative to the tile's full weight range `w_scale · (g_max − g_min)`,
//! i.e. relative to `max |W|` at programming time.

use crate::devices::{inject_faults, DeviceModel, DeviceState};
use crate::error::{MemsimError, Result};
use crate::ndcore::{gemm, Tensor};
use crate::rng::StreamRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterSpec {
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub input_clip: f64,
    /// ADC clip, in units of the tile's weight range.
    pub output_clip: f64,
    /// Additive output noise σ, in units of the tile's weight range.
    pub periph_noise_std: f64,
    /// First-order IR-drop compression strength; 0 disables it.
    pub ir_drop_alpha: f64,
}

impl Default for ConverterSpec {
    fn default() -> Self {
        ConverterSpec {
            dac_bits: 7,
            adc_bits: 9,
            input_clip: 1.0,
            output_clip: 10.0,
            periph_noise_std: 0.0,
            ir_drop_alpha: 0.0,
        }
    }
}

impl ConverterSpec {
    /// 31-bit converters with generous clips: the degenerate digital limit.
    pub fn ideal() -> Self {
        ConverterSpec {
            dac_bits: 31,
            adc_bits: 31,
            input_clip: 1.0,
            output_clip: 100.0,
            periph_noise_std: 0.0,
            ir_drop_alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=52).contains(&self.dac_bits) {
            return Err(MemsimError::config("converter.dac_bits", "must be in 1..=52"));
        }
        if !(1..=52).contains(&self.adc_bits) {
            return Err(MemsimError::config("converter.adc_bits", "must be in 1..=52"));
        }
        if !(self.input_clip > 0.0 && self.input_clip.is_finite()) {
            return Err(MemsimError::config("converter.input_clip", "must be > 0"));
        }
        if !(self.output_clip > 0.0 && self.output_clip.is_finite()) {
            return Err(MemsimError::config("converter.output_clip", "must be > 0"));
        }
        if !(self.periph_noise_std >= 0.0 && self.periph_noise_std.is_finite()) {
            return Err(MemsimError::config("converter.periph_noise_std", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.ir_drop_alpha) {
            return Err(MemsimError::config("converter.ir_drop_alpha", "must be in [0, 1)"));
        }
        Ok(())
    }

    /// Worst-case DAC error for inputs inside the clip range.
    pub fn dac_error_bound(&self) -> f64 {
        self.input_clip / 2f64.powi(self.dac_bits as i32 - 1)
    }

    /// One ADC step for a tile with the given weight range.
    pub fn adc_lsb(&self, weight_range: f64) -> f64 {
        quantizer_step(self.adc_bits, self.output_clip * weight_range)
    }
}

fn half_levels(bits: u32) -> f64 {
    (2f64.powi(bits as i32 - 1) - 1.0).max(1.0)
}

fn quantizer_step(bits: u32, clip: f64) -> f64 {
    clip / half_levels(bits)
}

/// Clip to `[-clip, clip]` and round onto a uniform grid that contains 0
/// (`2^bits − 1` levels, mid-tread).
#[inline]
pub fn quantize(x: f64, bits: u32, clip: f64) -> f64 {
    let step = quantizer_step(bits, clip);
    let q = (x.clamp(-clip, clip) / step).round() * step;
    q.clamp(-clip, clip)
}

pub fn dac_quantize(x: &[f64], spec: &ConverterSpec) -> Vec<f64> {
    x.iter().map(|&v| quantize(v, spec.dac_bits, spec.input_clip)).collect()
}

pub fn adc_quantize(y: &[f64], spec: &ConverterSpec, full_scale: f64) -> Vec<f64> {
    y.iter().map(|&v| quantize(v, spec.adc_bits, full_scale)).collect()
}

/// `y · (1 − alpha·|y|/output_clip)`, with the ratio capped at 1 so the map
/// never flips sign.
pub fn ir_drop_attenuate(y: &[f64], alpha: f64, output_clip: f64) -> Vec<f64> {
    y.iter().map(|&v| ir_drop_one(v, alpha, output_clip)).collect()
}

#[inline]
fn ir_drop_one(v: f64, alpha: f64, output_clip: f64) -> f64 {
    if alpha == 0.0 {
        return v;
    }
    v * (1.0 - alpha * (v.abs() / output_clip).min(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossbarTile {
    rows: usize,
    cols: usize,
    slices: usize,
    /// Indexed `[slice][row][col]`.
    g_plus: Vec<DeviceState>,
    g_minus: Vec<DeviceState>,
    w_scale: f64,
    model: DeviceModel,
    t_prog: f64,
}

/// Differential targets for one weight.
#[inline]
fn targets(w: f64, w_scale: f64, model: &DeviceModel) -> (f64, f64) {
    let gp = model.g_min + w.max(0.0) / w_scale;
    let gm = model.g_min + (-w).max(0.0) / w_scale;
    (gp.min(model.g_max), gm.min(model.g_max))
}

fn scale_for(w: &Tensor, model: &DeviceModel) -> f64 {
    let max = w.max_abs();
    if max == 0.0 {
        1.0
    } else {
        max / model.range()
    }
}

impl CrossbarTile {
    pub fn map_weights(w: &Tensor, model: &DeviceModel, slices: usize, t: f64, rng: &mut StreamRng) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(MemsimError::dim("map_weights", format!("expected matrix, got {:?}", w.shape())));
        }
        if !w.all_finite() {
            return Err(MemsimError::contract("weights must be finite"));
        }
        if slices == 0 {
            return Err(MemsimError::contract("slices must be >= 1"));
        }
        let (rows, cols) = (w.rows(), w.cols());
        let w_scale = scale_for(w, model);
        let n = slices * rows * cols;
        let mut g_plus = Vec::with_capacity(n);
        let mut g_minus = Vec::with_capacity(n);
        for _ in 0..slices {
            for &wij in w.data() {
                let (tp, tm) = targets(wij, w_scale, model);
                g_plus.push(model.program(tp, t, rng)?);
                g_minus.push(model.program(tm, t, rng)?);
            }
        }
        Ok(CrossbarTile {
            rows,
            cols,
            slices,
            g_plus,
            g_minus,
            w_scale,
            model: model.clone(),
            t_prog: t,
        })
    }

    /// Refresh every device from `w`; stuck devices stay stuck.
    pub fn reprogram(&mut self, w: &Tensor, t: f64, rng: &mut StreamRng) -> Result<()> {
        if w.shape() != [self.rows, self.cols] {
            return Err(MemsimError::dim(
                "reprogram",
                format!("tile is {}x{}, weights {:?}", self.rows, self.cols, w.shape()),
            ));
        }
        if !w.all_finite() {
            return Err(MemsimError::contract("weights must be finite"));
        }
        self.w_scale = scale_for(w, &self.model);
        let per_slice = self.rows * self.cols;
        for s in 0..self.slices {
            for (k, &wij) in w.data().iter().enumerate() {
                let (tp, tm) = targets(wij, self.w_scale, &self.model);
                let idx = s * per_slice + k;
                self.model.reprogram(&mut self.g_plus[idx], tp, t, rng)?;
                self.model.reprogram(&mut self.g_minus[idx], tm, t, rng)?;
            }
        }
        self.t_prog = t;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn w_scale(&self) -> f64 {
        self.w_scale
    }

    pub fn t_prog(&self) -> f64 {
        self.t_prog
    }

    pub fn model(&self) -> &DeviceModel {
        &self.model
    }

    pub fn devices(&self) -> (&[DeviceState], &[DeviceState]) {
        (&self.g_plus, &self.g_minus)
    }

    /// Weight magnitude represented by a full-range conductance difference.
    pub fn weight_range(&self) -> f64 {
        self.w_scale * self.model.range()
    }

    fn decode(&self, plus: impl Fn(usize) -> f64, minus: impl Fn(usize) -> f64) -> Tensor {
        let per_slice = self.rows * self.cols;
        let k = self.slices as f64;
        let mut out = vec![0.0; per_slice];
        for s in 0..self.slices {
            let base = s * per_slice;
            for (i, o) in out.iter_mut().enumerate() {
                *o += plus(base + i) - minus(base + i);
            }
        }
        let f = self.w_scale / k;
        out.iter_mut().for_each(|o| *o *= f);
        Tensor::matrix(self.rows, self.cols, out).expect("tile shape")
    }

    /// Weights stored right after programming (no drift, no read noise).
    pub fn programmed_weights(&self) -> Tensor {
        self.decode(|i| self.g_plus[i].programmed(), |i| self.g_minus[i].programmed())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < self.t_prog {
            return Err(MemsimError::contract(format!(
                "evaluation time {t} precedes programming time {}",
                self.t_prog
            )));
        }
        Ok(())
    }

    /// Noise-free drifted conductances of both device arrays at time `t`.
    pub fn drifted(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_time(t)?;
        let m = &self.model;
        let p = self.g_plus.iter().map(|s| m.drift_unchecked(s, t)).collect();
        let n = self.g_minus.iter().map(|s| m.drift_unchecked(s, t)).collect();
        Ok((p, n))
    }

    /// Weights after drift to time `t`, without read noise.
    pub fn drifted_weights(&self, t: f64) -> Result<Tensor> {
        let (p, n) = self.drifted(t)?;
        Ok(self.decode(|i| p[i], |i| n[i]))
    }

    fn noisy_decode(&self, drifted: &(Vec<f64>, Vec<f64>), averaged: usize, rng: &mut StreamRng) -> Tensor {
        let m = &self.model;
        let total = self.g_plus.len();
        let mut gp = Vec::with_capacity(total);
        let mut gm = Vec::with_capacity(total);
        for i in 0..total {
            gp.push(m.read_noise(&self.g_plus[i], drifted.0[i], averaged, rng));
            gm.push(m.read_noise(&self.g_minus[i], drifted.1[i], averaged, rng));
        }
        self.decode(|i| gp[i], |i| gm[i])
    }

    /// One fresh read of every device, decoded to weights.
    pub fn read_weights(&self, t: f64, rng: &mut StreamRng) -> Result<Tensor> {
        let drifted = self.drifted(t)?;
        Ok(self.noisy_decode(&drifted, 1, rng))
    }

    /// Weights seen by an `repeats`-fold averaged evaluation at time `t`.
    ///
    /// The average of `repeats` independent reads of a device is drawn as a
    /// single Gaussian with σ shrunk by `√repeats` (then clipped).
    pub fn effective_weights(&self, t: f64, repeats: usize, rng: &mut StreamRng) -> Result<Tensor> {
        if repeats == 0 {
            return Err(MemsimError::contract("repeats must be >= 1"));
        }
        let drifted = self.drifted(t)?;
        Ok(self.noisy_decode(&drifted, repeats, rng))
    }

    /// Stick `round(ratio · N)` of the tile's `N = 2·K·rows·cols` devices.
    pub fn inject_faults(&mut self, ratio: f64, rng: &mut StreamRng) -> Result<usize> {
        let n = self.g_plus.len();
        let mut all: Vec<DeviceState> = self.g_plus.iter().chain(&self.g_minus).copied().collect();
        let chosen = inject_faults(&mut all, ratio, &self.model, rng)?;
        self.g_plus.copy_from_slice(&all[..n]);
        self.g_minus.copy_from_slice(&all[n..]);
        Ok(chosen.len())
    }

    pub fn stuck_count(&self) -> usize {
        self.g_plus.iter().chain(&self.g_minus).filter(|s| s.is_stuck()).count()
    }

    /// Per-weight count of stuck devices, over both polarities and all slices.
    pub fn stuck_mask(&self) -> Vec<usize> {
        let per_slice = self.rows * self.cols;
        let mut mask = vec![0; per_slice];
        for s in 0..self.slices {
            for (i, m) in mask.iter_mut().enumerate() {
                let idx = s * per_slice + i;
                *m += usize::from(self.g_plus[idx].is_stuck()) + usize::from(self.g_minus[idx].is_stuck());
            }
        }
        mask
    }

    /// Audit dump: `row,col,weight,stuck_plus,stuck_minus` with the weight
    /// decoded from programmed conductances.
    pub fn write_snapshot_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "weight", "stuck_plus", "stuck_minus"])?;
        let weights = self.programmed_weights();
        let per_slice = self.rows * self.cols;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = i * self.cols + j;
                let sp = (0..self.slices).filter(|s| self.g_plus[s * per_slice + k].is_stuck()).count();
                let sm = (0..self.slices).filter(|s| self.g_minus[s * per_slice + k].is_stuck()).count();
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    format!("{:e}", weights.data()[k]),
                    sp.to_string(),
                    sm.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Analog MVM of a batch of input rows (`B × rows` → `B × cols`).
///
/// Each of the `repeats` evaluations takes a fresh read of every device
/// (shared by the whole batch, as one array read serves a pipelined batch),
/// adds peripheral noise, applies IR-drop and digitizes with the ADC. The
/// digitized results are averaged.
pub fn analog_mvm_batch(
    tile: &CrossbarTile,
    x: &Tensor,
    spec: &ConverterSpec,
    t: f64,
    repeats: usize,
    rng: &mut StreamRng,
) -> Result<Tensor> {
    if x.shape().len() != 2 || x.cols() != tile.rows {
        return Err(MemsimError::dim(
            "analog_mvm",
            format!("input {:?} for a tile with {} rows", x.shape(), tile.rows),
        ));
    }
    if repeats == 0 {
        return Err(MemsimError::contract("repeats must be >= 1"));
    }
    let drifted = tile.drifted(t)?;
    let batch = x.rows();
    let xq = Tensor::matrix(batch, tile.rows, dac_quantize(x.data(), spec))?;
    let range = tile.weight_range();
    let full_scale = spec.output_clip * range;
    let periph = spec.periph_noise_std * range;
    let mut acc = vec![0.0; batch * tile.cols];
    let mut y = vec![0.0; batch * tile.cols];
    for _ in 0..repeats {
        let w = tile.noisy_decode(&drifted, 1, rng);
        gemm(batch, tile.rows, tile.cols, xq.data(), false, w.data(), false, &mut y);
        for (a, &v) in acc.iter_mut().zip(&y) {
            let mut v = v;
            if periph > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v += periph * z;
            }
            v = ir_drop_one(v, spec.ir_drop_alpha, full_scale);
            *a += quantize(v, spec.adc_bits, full_scale);
        }
    }
    let inv = 1.0 / repeats as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Tensor::matrix(batch, tile.cols, acc)
}

/// Single-vector analog MVM.
pub fn analog_mvm(
    tile: &CrossbarTile,
    x: &[f64],
    spec: &ConverterSpec,
    t: f64,
    repeats: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let xin = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(analog_mvm_batch(tile, &xin, spec, t, repeats, rng)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, r: &mut StreamRng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weight_maps_to_g_min() {
        let tile = CrossbarTile::map_weights(&Tensor::zeros(&[1, 1]), &DeviceModel::pcm(), 1, 0.0, &mut rng(1)).unwrap();
        let (p, m) = tile.devices();
        assert_eq!(p[0].g_prog, 0.0);
        assert_eq!(m[0].g_prog, 0.0);
        assert_eq!(tile.w_scale(), 1.0);
        let y = analog_mvm(&tile, &[0.7], &ConverterSpec::default(), 0.0, 4, &mut rng(2)).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn symmetric_weights_decode_exactly() {
        let w = Tensor::matrix(2, 1, vec![0.5, -0.5]).unwrap();
        let tile = CrossbarTile::map_weights(&w, &DeviceModel::ideal(), 3, 0.0, &mut rng(1)).unwrap();
        assert_eq!(tile.programmed_weights().data(), &[0.5, -0.5]);
    }

    #[test]
    fn differential_pair_exclusivity() {
        let mut r = rng(3);
        let w = random_matrix(8, 5, &mut r);
        let m = DeviceModel::ideal();
        let mut tile = CrossbarTile::map_weights(&w, &m, 2, 0.0, &mut r).unwrap();
        let check = |tile: &CrossbarTile| {
            let (p, n) = tile.devices();
            for (a, b) in p.iter().zip(n) {
                assert_eq!(a.g_prog.min(b.g_prog), m.g_min);
            }
        };
        check(&tile);
        let w2 = random_matrix(8, 5, &mut r);
        tile.reprogram(&w2, 1.0, &mut r).unwrap();
        check(&tile);
    }

    #[test]
    fn degenerate_limit_matches_digital() {
        let mut r = rng(4);
        let w = random_matrix(16, 7, &mut r);
        let tile = CrossbarTile::map_weights(&w, &DeviceModel::ideal(), 1, 0.0, &mut r).unwrap();
        let x: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = analog_mvm(&tile, &x, &ConverterSpec::ideal(), 0.0, 1, &mut r).unwrap();
        let xt = Tensor::matrix(1, 16, x).unwrap();
        let exact = xt.matmul(&w).unwrap();
        let err = y.iter().zip(exact.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-6 * exact.max_abs(), "max error {err}");
    }

    #[test]
    fn dac_grid_properties() {
        let spec = ConverterSpec::default();
        assert_eq!(dac_quantize(&[0.0], &spec), vec![0.0]);
        assert_eq!(dac_quantize(&[5.0, -5.0], &spec), vec![1.0, -1.0]);
        let mut r = rng(5);
        let bound = spec.dac_error_bound();
        for _ in 0..100_000 {
            let x: f64 = r.gen_range(-1.0..1.0);
            let q = quantize(x, spec.dac_bits, spec.input_clip);
            assert!((q - x).abs() <= bound);
        }
    }

    #[test]
    fn ir_drop_cases() {
        assert_eq!(ir_drop_attenuate(&[0.3, -2.0], 0.0, 10.0), vec![0.3, -2.0]);
        let y = ir_drop_attenuate(&[10.0], 0.1, 10.0);
        assert!((y[0] - 9.0).abs() < 1e-12);
        let mut r = rng(6);
        for _ in 0..1000 {
            let v: f64 = r.gen_range(-30.0..30.0);
            let a: f64 = r.gen_range(0.0..0.99);
            let o = ir_drop_attenuate(&[v], a, 10.0)[0];
            assert!(o.abs() <= v.abs());
            assert!(o * v >= 0.0);
        }
    }

    #[test]
    fn reprogram_identical_when_noiseless() {
        let mut r = rng(7);
        let w = random_matrix(4, 4, &mut r);
        let mut m = DeviceModel::pcm();
        m.prog_noise_frac = 0.0;
        let mut tile = CrossbarTile::map_weights(&w, &m, 2, 0.0, &mut r).unwrap();
        let before = tile.clone();
        tile.reprogram(&w, 50.0, &mut r).unwrap();
        assert_eq!(tile.t_prog(), 50.0);
        assert_eq!(tile.programmed_weights(), before.programmed_weights());
        assert_eq!(tile.w_scale(), before.w_scale());
    }

    #[test]
    fn refresh_removes_drift_error() {
        let mut r = rng(8);
        let w = random_matrix(32, 32, &mut r);
        let m = DeviceModel::pcm();
        let mut tile = CrossbarTile::map_weights(&w, &m, 1, 0.0, &mut r).unwrap();
        let rms = |a: &Tensor| (a.sub(&w).unwrap().map(|x| x * x).mean()).sqrt();
        let drifted = rms(&tile.drifted_weights(86_400.0).unwrap());
        let prog_only = rms(&tile.programmed_weights());
        tile.reprogram(&w, 86_400.0, &mut r).unwrap();
        let refreshed = rms(&tile.drifted_weights(86_400.0).unwrap());
        assert!(drifted > 5.0 * prog_only, "drift {drifted} vs prog {prog_only}");
        // After refresh only programming error remains: same order as before.
        assert!(refreshed < 1.5 * prog_only && refreshed > 0.5 * prog_only);
    }

    #[test]
    fn stuck_error_concentrates_on_stuck_weights() {
        let mut r = rng(9);
        let w = random_matrix(32, 32, &mut r);
        let m = DeviceModel::rram();
        let mut tile = CrossbarTile::map_weights(&w, &m, 1, 0.0, &mut r).unwrap();
        tile.inject_faults(0.10, &mut r).unwrap();
        tile.reprogram(&w, 0.0, &mut r).unwrap();
        let err = tile.programmed_weights().sub(&w).unwrap();
        let mask = tile.stuck_mask();
        let (mut stuck, mut ns, mut healthy, mut nh) = (0.0, 0, 0.0, 0);
        for (e, &k) in err.data().iter().zip(&mask) {
            if k > 0 {
                stuck += e * e;
                ns += 1;
            } else {
                healthy += e * e;
                nh += 1;
            }
        }
        let (stuck, healthy) = ((stuck / ns as f64).sqrt(), (healthy / nh as f64).sqrt());
        assert!(stuck > 5.0 * healthy, "stuck {stuck} healthy {healthy}");
        assert_eq!(tile.stuck_count(), (0.1f64 * 2.0 * 1024.0).round() as usize);
    }

    #[test]
    fn slicing_halves_error_at_four_slices() {
        let mut r = rng(10);
        let w = random_matrix(100, 100, &mut r);
        let m = DeviceModel::pcm();
        let sigma = |k: usize, r: &mut StreamRng| {
            let tile = CrossbarTile::map_weights(&w, &m, k, 0.0, r).unwrap();
            let e = tile.programmed_weights().sub(&w).unwrap();
            (e.map(|x| x * x).mean()).sqrt()
        };
        let ratio = sigma(4, &mut r) / sigma(1, &mut r);
        assert!((ratio / 0.5 - 1.0).abs() < 0.25, "ratio {ratio}");
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let mut r = rng(11);
        let spec = ConverterSpec::default();
        for _ in 0..50 {
            let w = random_matrix(6, 5, &mut r);
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let argmax = |w: &Tensor, r: &mut StreamRng| {
                let tile = CrossbarTile::map_weights(w, &DeviceModel::ideal(), 1, 0.0, r).unwrap();
                let y = analog_mvm(&tile, &x, &spec, 0.0, 1, r).unwrap();
                y.iter()
                    .enumerate()
                    .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0
            };
            assert_eq!(argmax(&w, &mut r), argmax(&w.scale(7.5), &mut r));
        }
    }

    #[test]
    fn dimension_and_time_errors() {
        let mut r = rng(12);
        let tile = CrossbarTile::map_weights(&Tensor::zeros(&[3, 2]), &DeviceModel::pcm(), 1, 10.0, &mut r).unwrap();
        let spec = ConverterSpec::default();
        assert!(analog_mvm(&tile, &[0.0; 2], &spec, 10.0, 1, &mut r).is_err());
        assert!(analog_mvm(&tile, &[0.0; 3], &spec, 5.0, 1, &mut r).is_err());
        let mut t2 = tile.clone();
        assert!(t2.reprogram(&Tensor::zeros(&[2, 3]), 11.0, &mut r).is_err());
        let bad = Tensor::matrix(1, 1, vec![f64::NAN]).unwrap();
        assert!(CrossbarTile::map_weights(&bad, &DeviceModel::pcm(), 1, 0.0, &mut r).is_err());
    }

    #[test]
    fn snapshot_has_one_row_per_weight() {
        let mut r = rng(13);
        let tile = CrossbarTile::map_weights(&random_matrix(3, 2, &mut r), &DeviceModel::pcm(), 2, 0.0, &mut r).unwrap();
        let mut buf = Vec::new();
        tile.write_snapshot_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("row,col,weight,stuck_plus,stuck_minus"));
    }
}
