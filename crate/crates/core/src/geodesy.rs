//! Gravity inversion: learn a density field whose integrated attraction
//! matches accelerations sampled around a mascon body.
//!
//! Units are normalized: the body lives inside `[-0.8, 0.8]³`, the network
//! density is integrated over `[-1, 1]³` and the gravitational constant is 1.

use crate::error::{MemsimError, Result};
use crate::exec::Exec;
use crate::ndcore::{Tape, Tensor, Var};
use crate::nets::SirenSpec;
use crate::rng::StreamRng;
use crate::training::{BatchForward, TapeForward, Task};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub type Vec3 = [f64; 3];

/// Mascons and quadrature points closer than this to a target are skipped.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Volume of the integration cube `[-1, 1]³`.
pub const CUBE_VOLUME: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MasconBody {
    pub name: String,
    pub points: Vec<Vec3>,
    pub mu: Vec<f64>,
}

impl MasconBody {
    pub fn new(name: impl Into<String>, points: Vec<Vec3>, mu: Vec<f64>) -> Result<Self> {
        let body = MasconBody {
            name: name.into(),
            points,
            mu,
        };
        body.validate()?;
        Ok(body)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.mu.len() {
            return Err(MemsimError::contract(format!(
                "body `{}` needs >= 1 mascon and one mu per point",
                self.name
            )));
        }
        if self.points.iter().flatten().any(|c| !(c.abs() < 0.8)) {
            return Err(MemsimError::contract(format!(
                "body `{}` has a mascon outside (-0.8, 0.8)^3",
                self.name
            )));
        }
        if !self.mu.iter().all(|m| m.is_finite()) || !(self.total_mu() > 0.0) {
            return Err(MemsimError::contract(format!("body `{}` needs finite mu with positive total", self.name)));
        }
        Ok(())
    }

    pub fn total_mu(&self) -> f64 {
        self.mu.iter().sum()
    }

    pub fn centroid(&self) -> Vec3 {
        let total = self.total_mu();
        let mut c = [0.0; 3];
        for (p, m) in self.points.iter().zip(&self.mu) {
            for k in 0..3 {
                c[k] += m * p[k] / total;
            }
        }
        c
    }

    /// Radius of the smallest origin-centred sphere holding every mascon.
    pub fn circumscribing_radius(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Unit-mass point at the origin.
    pub fn single() -> Self {
        MasconBody::new("single", vec![[0.0; 3]], vec![1.0]).expect("valid")
    }

    /// Two equal masses on the x axis, symmetric about the origin.
    pub fn pair() -> Self {
        MasconBody::new("pair", vec![[-0.4, 0.0, 0.0], [0.4, 0.0, 0.0]], vec![0.5, 0.5]).expect("valid")
    }

    /// Three unequal masses, no symmetry.
    pub fn triple() -> Self {
        MasconBody::new(
            "triple",
            vec![[-0.5, 0.1, 0.0], [0.3, -0.2, 0.1], [0.1, 0.4, -0.3]],
            vec![0.5, 0.3, 0.2],
        )
        .expect("valid")
    }

    /// Bean-shaped body: equal mascons on a lattice filling the union of two
    /// overlapping ellipsoids. About 500 points, total mass 1.
    pub fn eros_lite() -> Self {
        let lobes = [
            ([-0.3, -0.02, 0.0], [0.45, 0.34, 0.3]),
            ([0.32, 0.05, 0.02], [0.4, 0.3, 0.26]),
        ];
        let h = 0.085;
        let n = (1.6 / h) as i32;
        let mut points = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let p = [
                        -0.8 + (i as f64 + 0.5) * h,
                        -0.8 + (j as f64 + 0.5) * h,
                        -0.8 + (k as f64 + 0.5) * h,
                    ];
                    let inside = lobes.iter().any(|(c, ax)| {
                        (0..3).map(|d| ((p[d] - c[d]) / ax[d]).powi(2)).sum::<f64>() <= 1.0
                    });
                    if inside {
                        points.push(p);
                    }
                }
            }
        }
        let m = 1.0 / points.len() as f64;
        let mu = vec![m; points.len()];
        MasconBody::new("eros-lite", points, mu).expect("valid")
    }

    /// `x,y,z,mu` with a header line.
    pub fn read_csv<R: Read>(input: R, name: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "z", "mu"] {
            return Err(MemsimError::Parse {
                row: 1,
                detail: format!("expected header x,y,z,mu, got {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut points = Vec::new();
        let mut mu = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let row = n + 2;
            let rec = rec.map_err(|e| MemsimError::Parse { row, detail: e.to_string() })?;
            let vals = parse_floats(&rec, 4, row)?;
            points.push([vals[0], vals[1], vals[2]]);
            mu.push(vals[3]);
        }
        MasconBody::new(name, points, mu)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "z", "mu"])?;
        for (p, m) in self.points.iter().zip(&self.mu) {
            w.write_record([p[0].to_string(), p[1].to_string(), p[2].to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn parse_floats(rec: &csv::StringRecord, n: usize, row: usize) -> Result<Vec<f64>> {
    if rec.len() != n {
        return Err(MemsimError::Parse {
            row,
            detail: format!("expected {n} fields, found {}", rec.len()),
        });
    }
    rec.iter()
        .enumerate()
        .map(|(i, f)| {
            f.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MemsimError::Parse {
                    row,
                    detail: format!("field {} is not a finite number: `{f}`", i + 1),
                })
        })
        .collect()
}

fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Newtonian attraction of the body at `r`: `Σ μₖ (pₖ − r)/|pₖ − r|³`.
pub fn mascon_acceleration(body: &MasconBody, r: &Vec3) -> Result<Vec3> {
    let mut a = [0.0; 3];
    for (p, m) in body.points.iter().zip(&body.mu) {
        let d = [p[0] - r[0], p[1] - r[1], p[2] - r[2]];
        let dist = norm(&d);
        if dist < MIN_DISTANCE {
            return Err(MemsimError::contract(format!("target {r:?} coincides with a mascon")));
        }
        let s = m / (dist * dist * dist);
        for k in 0..3 {
            a[k] += s * d[k];
        }
    }
    Ok(a)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GravityTarget {
    pub r: Vec3,
    pub a: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeodesyDataset {
    pub train: Vec<GravityTarget>,
    pub test: Vec<GravityTarget>,
}

/// Positions uniform in the spherical shell `shell[0] ≤ |r| ≤ shell[1]`,
/// labelled with the body's exact acceleration. The first 80% train.
pub fn sample_targets(body: &MasconBody, n: usize, shell: [f64; 2], rng: &mut StreamRng) -> Result<GeodesyDataset> {
    let [r_in, r_out] = shell;
    if !(r_in > body.circumscribing_radius() && r_out >= r_in && r_out.is_finite()) {
        return Err(MemsimError::config(
            "geodesy.shell",
            format!(
                "shell [{r_in}, {r_out}] must enclose the body (radius {:.3})",
                body.circumscribing_radius()
            ),
        ));
    }
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let dir = loop {
            let v: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let l = norm(&v);
            if l > 1e-12 {
                break [v[0] / l, v[1] / l, v[2] / l];
            }
        };
        let u: f64 = rng.gen();
        let radius = (r_in.powi(3) + u * (r_out.powi(3) - r_in.powi(3))).cbrt();
        let r = [dir[0] * radius, dir[1] * radius, dir[2] * radius];
        targets.push(GravityTarget {
            r,
            a: mascon_acceleration(body, &r)?,
        });
    }
    let n_train = (0.8 * n as f64).round() as usize;
    let test = targets.split_off(n_train);
    Ok(GeodesyDataset { train: targets, test })
}

/// `index`-th element of the van der Corput sequence in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while index > 0 {
        x += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    x
}

/// Equal-weight quadrature over `[-1, 1]³`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    /// `N × 3`.
    pub points: Tensor,
    pub weight: f64,
}

impl QuadratureRule {
    /// Halton points (bases 2, 3, 5) under a uniform random toroidal shift,
    /// which keeps the low discrepancy and makes the estimator unbiased.
    pub fn halton(n: usize, rng: &mut StreamRng) -> Result<Self> {
        if n == 0 {
            return Err(MemsimError::config("geodesy.n_quad", "must be >= 1"));
        }
        let shift: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let bases = [2, 3, 5];
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            for d in 0..3 {
                let u = (radical_inverse(i as u64 + 1, bases[d]) + shift[d]).fract();
                data.push(2.0 * u - 1.0);
            }
        }
        Ok(QuadratureRule {
            points: Tensor::matrix(n, 3, data)?,
            weight: CUBE_VOLUME / n as f64,
        })
    }

    /// Plain pseudo-random points, for variance comparisons.
    pub fn monte_carlo(n: usize, rng: &mut StreamRng) -> Result<Self> {
        if n == 0 {
            return Err(MemsimError::config("geodesy.n_quad", "must be >= 1"));
        }
        let data = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Ok(QuadratureRule {
            points: Tensor::matrix(n, 3, data)?,
            weight: CUBE_VOLUME / n as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `3T × N` matrix mapping densities at the points to the stacked
    /// accelerations at `targets`. Points within [`MIN_DISTANCE`] of a target
    /// contribute nothing.
    pub fn kernel(&self, targets: &[Vec3], exec: Exec) -> Result<Tensor> {
        let n = self.len();
        let pts = self.points.data();
        let w = self.weight;
        let rows = exec.map(targets.len(), |j| {
            let r = targets[j];
            let mut block = vec![0.0; 3 * n];
            for i in 0..n {
                let d = [pts[3 * i] - r[0], pts[3 * i + 1] - r[1], pts[3 * i + 2] - r[2]];
                let dist = norm(&d);
                if dist < MIN_DISTANCE {
                    continue;
                }
                let s = w / (dist * dist * dist);
                for k in 0..3 {
                    block[k * n + i] = s * d[k];
                }
            }
            block
        });
        Tensor::matrix(3 * targets.len(), n, rows.concat())
    }
}

/// Quadrature estimate of the attraction of the density `forward` at each
/// target.
pub fn network_acceleration(
    forward: &mut BatchForward<'_>,
    targets: &[Vec3],
    rule: &QuadratureRule,
    exec: Exec,
) -> Result<Vec<Vec3>> {
    let rho = forward(&rule.points)?;
    if rho.shape() != [rule.len(), 1] {
        return Err(MemsimError::dim("network_acceleration", format!("density output {:?}", rho.shape())));
    }
    let a = rule.kernel(targets, exec)?.matmul(&rho)?;
    Ok(a.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean absolute component error at the L1-optimal scale.
    #[default]
    L1,
    /// Mean squared component error at the least-squares scale.
    L2,
}

/// Scale minimizing the loss of `κ·pred` against `truth`. For L1 this is
/// the weighted median of `truth/pred` with weights `|pred|`. `None` when
/// every prediction is zero.
pub fn optimal_scale(pred: &[f64], truth: &[f64], kind: LossKind) -> Option<f64> {
    match kind {
        LossKind::L2 => {
            let pp: f64 = pred.iter().map(|p| p * p).sum();
            (pp > 0.0).then(|| pred.iter().zip(truth).map(|(p, t)| p * t).sum::<f64>() / pp)
        }
        LossKind::L1 => l1_pivot(pred, truth).map(|(i, _)| truth[i] / pred[i]),
    }
}

/// Index of the component fixing the L1 scale (weighted median of
/// `truth/pred` with weights `|pred|`) and the scale itself.
fn l1_pivot(pred: &[f64], truth: &[f64]) -> Option<(usize, f64)> {
    let mut ratios: Vec<(f64, f64, usize)> = pred
        .iter()
        .zip(truth)
        .enumerate()
        .filter(|(_, (p, _))| **p != 0.0)
        .map(|(i, (p, t))| (t / p, p.abs(), i))
        .collect();
    ratios.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = 0.5 * ratios.iter().map(|r| r.1).sum::<f64>();
    let mut acc = 0.0;
    for &(ratio, weight, i) in &ratios {
        acc += weight;
        if acc >= half {
            return Some((i, ratio));
        }
    }
    ratios.last().map(|r| (r.2, r.0))
}

/// Scale-invariant loss and the scale it used.
pub fn geodesy_loss_values(pred: &[f64], truth: &[f64], kind: LossKind) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(MemsimError::dim("geodesy_loss", format!("{} predictions, {} labels", pred.len(), truth.len())));
    }
    let kappa = optimal_scale(pred, truth, kind).unwrap_or_else(|| {
        log::warn!("all predicted accelerations are zero; loss left unscaled");
        1.0
    });
    let n = pred.len() as f64;
    let loss = match kind {
        LossKind::L1 => pred.iter().zip(truth).map(|(p, t)| (kappa * p - t).abs()).sum::<f64>() / n,
        LossKind::L2 => pred.iter().zip(truth).map(|(p, t)| (kappa * p - t).powi(2)).sum::<f64>() / n,
    };
    Ok((loss, kappa))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Taped version of [`geodesy_loss_values`]. The L2 scale is held
/// constant since its own derivative vanishes at the optimum. The L1 scale
/// is `truth/pred` at a pivot component, so moving the pivot prediction
/// rescales every residual; that term is added as a zero-valued linear
/// correction on the pivot.
pub fn geodesy_loss(tape: &mut Tape, pred: Var, truth: &Tensor, kind: LossKind) -> Result<Var> {
    let p = tape.value(pred).clone();
    let (_, kappa) = geodesy_loss_values(p.data(), truth.data(), kind)?;
    let pivot = match kind {
        LossKind::L1 => l1_pivot(p.data(), truth.data()).map(|(i, _)| i),
        LossKind::L2 => None,
    };
    let mut target = truth.clone();
    if let Some(i) = pivot {
        // Exact zero residual, so the pivot's own term has zero slope.
        target.data_mut()[i] = p.data()[i] * kappa;
    }
    let scaled = tape.scale(pred, kappa)?;
    let t = tape.constant(target);
    let diff = tape.sub(scaled, t)?;
    let err = match kind {
        LossKind::L1 => tape.abs(diff)?,
        LossKind::L2 => tape.square(diff)?,
    };
    let loss = tape.mean(err)?;
    let Some(i) = pivot else {
        return Ok(loss);
    };
    let n = p.len() as f64;
    let signed: f64 = p
        .data()
        .iter()
        .zip(truth.data())
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, (pj, tj))| pj * sign(kappa * pj - tj))
        .sum();
    let coeff = -signed * kappa / (p.data()[i] * n);
    let mut mask = Tensor::zeros(p.shape());
    mask.data_mut()[i] = coeff;
    let mask = tape.constant(mask);
    let lin = tape.mul(pred, mask)?;
    let lin = tape.sum(lin)?;
    let offset = tape.constant(Tensor::scalar(coeff * p.data()[i]));
    let correction = tape.sub(lin, offset)?;
    tape.add(loss, correction)
}

/// Density values on an `M³` grid over `[-1, 1]³` as `(x, y, z, ρ)`.
pub fn density_grid(forward: &mut BatchForward<'_>, resolution: usize) -> Result<Vec<[f64; 4]>> {
    if resolution < 2 {
        return Err(MemsimError::config("export.resolution", "must be >= 2"));
    }
    let step = 2.0 / (resolution - 1) as f64;
    let coord = |i: usize| -1.0 + i as f64 * step;
    let mut pts = Vec::with_capacity(3 * resolution.pow(3));
    for i in 0..resolution {
        for j in 0..resolution {
            for k in 0..resolution {
                pts.extend([coord(i), coord(j), coord(k)]);
            }
        }
    }
    let x = Tensor::matrix(resolution.pow(3), 3, pts)?;
    let rho = forward(&x)?;
    Ok(x.data()
        .chunks(3)
        .zip(rho.data())
        .map(|(p, &r)| [p[0], p[1], p[2], r])
        .collect())
}

/// Writes grid points with `ρ ≥ threshold` as `x,y,z,rho`; returns the
/// number of rows.
pub fn export_density_grid<W: Write>(
    forward: &mut BatchForward<'_>,
    resolution: usize,
    threshold: f64,
    out: W,
) -> Result<usize> {
    let grid = density_grid(forward, resolution)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "z", "rho"])?;
    let mut rows = 0;
    for p in grid.iter().filter(|p| p[3] >= threshold) {
        w.write_record(p.iter().map(|v| format!("{v:e}")))?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

/// Density-weighted centroid of grid samples.
pub fn grid_centroid(grid: &[[f64; 4]]) -> Option<Vec3> {
    let total: f64 = grid.iter().map(|p| p[3]).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut c = [0.0; 3];
    for p in grid {
        for k in 0..3 {
            c[k] += p[3] * p[k] / total;
        }
    }
    Some(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesySettings {
    /// Quadrature points per training step.
    pub n_quad: usize,
    /// Quadrature points for held-out evaluation.
    pub n_quad_eval: usize,
    pub n_targets: usize,
    pub shell: [f64; 2],
    pub loss: LossKind,
}

impl Default for GeodesySettings {
    fn default() -> Self {
        GeodesySettings {
            n_quad: 3000,
            n_quad_eval: 30_000,
            n_targets: 100,
            shell: [1.75, 2.5],
            loss: LossKind::L1,
        }
    }
}

/// Whole-batch geodesy regression: one step per epoch over all training
/// targets with freshly shifted quadrature points.
pub struct GeodesyTask {
    pub spec: SirenSpec,
    pub body: MasconBody,
    pub data: GeodesyDataset,
    pub settings: GeodesySettings,
    pub exec: Exec,
    train_r: Vec<Vec3>,
    train_a: Tensor,
    test_r: Vec<Vec3>,
    test_a: Tensor,
}

fn stacked(targets: &[GravityTarget]) -> (Vec<Vec3>, Tensor) {
    let r = targets.iter().map(|t| t.r).collect();
    let a = targets.iter().flat_map(|t| t.a).collect::<Vec<_>>();
    let n = a.len();
    (r, Tensor::matrix(n, 1, a).expect("3 per target"))
}

impl GeodesyTask {
    pub fn new(spec: SirenSpec, body: MasconBody, settings: GeodesySettings, exec: Exec, rng: &mut StreamRng) -> Result<Self> {
        if spec.input_dim() != 3 || spec.output_dim() != 1 {
            return Err(MemsimError::config("network.layer_sizes", "geodesy needs 3 inputs and 1 output"));
        }
        if settings.n_quad == 0 {
            return Err(MemsimError::config("geodesy.n_quad", "must be >= 1"));
        }
        if settings.n_quad_eval == 0 {
            return Err(MemsimError::config("geodesy.n_quad_eval", "must be >= 1"));
        }
        let data = sample_targets(&body, settings.n_targets, settings.shell, rng)?;
        if data.train.is_empty() || data.test.is_empty() {
            return Err(MemsimError::config("geodesy.n_targets", "need at least one train and one test target"));
        }
        let (train_r, train_a) = stacked(&data.train);
        let (test_r, test_a) = stacked(&data.test);
        Ok(GeodesyTask {
            spec,
            body,
            data,
            settings,
            exec,
            train_r,
            train_a,
            test_r,
            test_a,
        })
    }
}

impl Task for GeodesyTask {
    fn spec(&self) -> &SirenSpec {
        &self.spec
    }

    fn steps_per_epoch(&self) -> usize {
        1
    }

    fn step_loss(&self, tape: &mut Tape, forward: &mut TapeForward<'_>, rng: &mut StreamRng) -> Result<Var> {
        let rule = QuadratureRule::halton(self.settings.n_quad, rng)?;
        let kernel = tape.constant(rule.kernel(&self.train_r, self.exec)?);
        let x = tape.constant(rule.points);
        let rho = forward(tape, x)?;
        let a = tape.matmul(kernel, rho)?;
        geodesy_loss(tape, a, &self.train_a, self.settings.loss)
    }

    fn test_loss(&self, forward: &mut BatchForward<'_>, rng: &mut StreamRng) -> Result<f64> {
        let rule = QuadratureRule::halton(self.settings.n_quad_eval, rng)?;
        let a = network_acceleration(forward, &self.test_r, &rule, self.exec)?;
        let flat: Vec<f64> = a.into_iter().flatten().collect();
        Ok(geodesy_loss_values(&flat, self.test_a.data(), self.settings.loss)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn point_mass_field() {
        let b = MasconBody::single();
        assert!(close(&mascon_acceleration(&b, &[1.0, 0.0, 0.0]).unwrap(), &[-1.0, 0.0, 0.0], 1e-15));
        assert!(close(&mascon_acceleration(&b, &[2.0, 0.0, 0.0]).unwrap(), &[-0.25, 0.0, 0.0], 1e-15));
        assert!(mascon_acceleration(&b, &[0.0; 3]).is_err());
    }

    #[test]
    fn symmetric_pair_pulls_along_bisector() {
        let a = mascon_acceleration(&MasconBody::pair(), &[0.0, 1.3, 0.0]).unwrap();
        assert!(a[0].abs() < 1e-15 && a[2].abs() < 1e-15 && a[1] < 0.0);
    }

    #[test]
    fn eros_lite_shape() {
        let b = MasconBody::eros_lite();
        assert!((400..=600).contains(&b.points.len()), "{}", b.points.len());
        assert!((b.total_mu() - 1.0).abs() < 1e-12);
        assert!(b.circumscribing_radius() < 1.75);
    }

    #[test]
    fn body_validation_and_csv() {
        assert!(MasconBody::new("x", vec![], vec![]).is_err());
        assert!(MasconBody::new("x", vec![[0.9, 0.0, 0.0]], vec![1.0]).is_err());
        assert!(MasconBody::new("x", vec![[0.0; 3]], vec![-1.0]).is_err());
        let b = MasconBody::triple();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        assert_eq!(MasconBody::read_csv(buf.as_slice(), "triple").unwrap(), b);
        let bad = "x,y,z,mu\n0,0,0,1\n0,0,zz,1\n";
        match MasconBody::read_csv(bad.as_bytes(), "b") {
            Err(MemsimError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn targets_in_shell_with_exact_labels() {
        let b = MasconBody::triple();
        let d = sample_targets(&b, 50, [1.75, 2.5], &mut rng(1)).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (40, 10));
        for t in d.train.iter().chain(&d.test) {
            let r = norm(&t.r);
            assert!((1.75..=2.5 + 1e-12).contains(&r));
            assert_eq!(t.a, mascon_acceleration(&b, &t.r).unwrap());
        }
        assert_eq!(sample_targets(&b, 0, [1.75, 2.5], &mut rng(1)).unwrap(), GeodesyDataset::default());
        assert!(sample_targets(&b, 5, [0.2, 2.5], &mut rng(1)).is_err());
    }

    #[test]
    fn halton_points_fill_cube() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
        let q = QuadratureRule::halton(1000, &mut rng(2)).unwrap();
        assert!(q.points.data().iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(q.weight, 8.0 / 1000.0);
        // Every octant receives close to an eighth of the points.
        let mut counts = [0usize; 8];
        for p in q.points.data().chunks(3) {
            let o = usize::from(p[0] > 0.0) | usize::from(p[1] > 0.0) << 1 | usize::from(p[2] > 0.0) << 2;
            counts[o] += 1;
        }
        assert!(counts.iter().all(|&c| (115..=135).contains(&c)), "{counts:?}");
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let q = QuadratureRule::halton(100, &mut rng(3)).unwrap();
        let mut zero = |x: &Tensor| Ok(Tensor::zeros(&[x.rows(), 1]));
        let a = network_acceleration(&mut zero, &[[2.0, 0.0, 0.0]], &q, Exec::Sequential).unwrap();
        assert_eq!(a, vec![[0.0; 3]]);
    }

    /// Midpoint sum of a unit-density cube's attraction on an `m³` grid.
    fn cube_field_dense(r: &Vec3, m: usize) -> Vec3 {
        let h = 2.0 / m as f64;
        let mut a = [0.0; 3];
        for i in 0..m {
            let x = -1.0 + (i as f64 + 0.5) * h;
            for j in 0..m {
                let y = -1.0 + (j as f64 + 0.5) * h;
                for k in 0..m {
                    let z = -1.0 + (k as f64 + 0.5) * h;
                    let d = [x - r[0], y - r[1], z - r[2]];
                    let s = h * h * h / norm(&d).powi(3);
                    a[0] += s * d[0];
                    a[1] += s * d[1];
                    a[2] += s * d[2];
                }
            }
        }
        a
    }

    #[test]
    fn uniform_cube_matches_dense_grid() {
        let targets = [[2.0, 0.3, -0.4], [-1.2, 1.5, 0.7]];
        let q = QuadratureRule::halton(30_000, &mut rng(4)).unwrap();
        let c = 0.7;
        let mut constant = |x: &Tensor| Ok(Tensor::full(&[x.rows(), 1], c));
        let est = network_acceleration(&mut constant, &targets, &q, Exec::Parallel).unwrap();
        for (t, e) in targets.iter().zip(&est) {
            let exact = cube_field_dense(t, 200);
            let rel = (0..3).map(|k| (e[k] - c * exact[k]).powi(2)).sum::<f64>().sqrt() / (c * norm(&exact));
            assert!(rel < 0.02, "relative error {rel}");
        }
    }

    #[test]
    fn scale_fitting() {
        let truth = [1.0, -2.0, 0.5, 3.0];
        let (l, k) = geodesy_loss_values(&truth, &truth, LossKind::L1).unwrap();
        assert_eq!((l, k), (0.0, 1.0));
        let doubled: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
        for kind in [LossKind::L1, LossKind::L2] {
            let (l, k) = geodesy_loss_values(&doubled, &truth, kind).unwrap();
            assert_eq!((l, k), (0.0, 0.5));
        }
        let (l, k) = geodesy_loss_values(&[0.0; 4], &truth, LossKind::L1).unwrap();
        assert_eq!((l, k), (1.625, 1.0));
    }

    /// Brute-force L1 minimization over a fine scale grid.
    #[test]
    fn weighted_median_minimizes_l1() {
        let mut r = rng(5);
        for _ in 0..20 {
            let pred: Vec<f64> = (0..15).map(|_| r.gen_range(-1.0..1.0)).collect();
            let truth: Vec<f64> = pred.iter().map(|p| 1.7 * p + r.gen_range(-0.3..0.3)).collect();
            let (best, _) = geodesy_loss_values(&pred, &truth, LossKind::L1).unwrap();
            let grid_min = (0..40_000)
                .map(|i| -2.0 + i as f64 * 1e-4 * 1.5)
                .map(|k| pred.iter().zip(&truth).map(|(p, t)| (k * p - t).abs()).sum::<f64>() / 15.0)
                .fold(f64::INFINITY, f64::min);
            assert!(best <= grid_min + 1e-12);
        }
    }

    #[test]
    fn taped_loss_gradient_matches_finite_difference() {
        let mut r = rng(6);
        let p: Vec<f64> = (0..9).map(|_| r.gen_range(-1.0..1.0)).collect();
        let truth = Tensor::matrix(9, 1, p.iter().map(|v| 0.8 * v + r.gen_range(-0.2..0.2)).collect()).unwrap();
        for kind in [LossKind::L2, LossKind::L1] {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::matrix(9, 1, p.clone()).unwrap());
            let loss = geodesy_loss(&mut tape, x, &truth, kind).unwrap();
            let g = tape.backward(loss).unwrap().get(x).unwrap().clone();
            let h = 1e-6;
            for i in 0..9 {
                let eval = |d: f64| {
                    let mut q = p.clone();
                    q[i] += d;
                    geodesy_loss_values(&q, truth.data(), kind).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - g.data()[i]).abs() < 1e-5, "{kind:?} {i}: {fd} vs {}", g.data()[i]);
            }
        }
    }

    #[test]
    fn density_export() {
        let mut zero = |x: &Tensor| Ok(Tensor::zeros(&[x.rows(), 1]));
        let mut buf = Vec::new();
        assert_eq!(export_density_grid(&mut zero, 4, 0.1, &mut buf).unwrap(), 0);
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y,z,rho\n");
        let mut one = |x: &Tensor| Ok(Tensor::full(&[x.rows(), 1], 1.0));
        assert_eq!(export_density_grid(&mut one, 2, 0.0, Vec::new()).unwrap(), 8);
        assert!(density_grid(&mut one, 1).is_err());
        let grid = density_grid(&mut one, 3).unwrap();
        assert!(close(&grid_centroid(&grid).unwrap(), &[0.0; 3], 1e-15));
    }
}
