//! SIREN multilayer perceptrons.
//!
//! Every hidden layer computes `sin(ω₀ · (h·W + b))`; the last layer applies
//! the configured final activation to its affine output. The same shadow
//! weights drive a digital forward, a taped forward used for training and an
//! analog forward through one crossbar tile per layer.

use crate::crossbar::{analog_mvm_batch, quantize, ConverterSpec, CrossbarTile};
use crate::devices::DeviceModel;
use crate::error::{MemsimError, Result};
use crate::ndcore::{Tape, Tensor, Var};
use crate::rng::StreamRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    Sine,
    Abs,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirenSpec {
    /// Input size, hidden sizes, output size.
    pub layer_sizes: Vec<usize>,
    pub omega0: f64,
    pub final_activation: FinalActivation,
    pub seed: u64,
}

impl SirenSpec {
    pub fn new(layer_sizes: Vec<usize>, omega0: f64, final_activation: FinalActivation, seed: u64) -> Result<Self> {
        let spec = SirenSpec {
            layer_sizes,
            omega0,
            final_activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(MemsimError::config(
                "layer_sizes",
                "need at least an input and an output size, all > 0",
            ));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(MemsimError::config("omega0", "must be > 0"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    fn activate(&self, z: &Tensor, last: bool) -> Tensor {
        let w0 = self.omega0;
        match (last, self.final_activation) {
            (false, _) | (true, FinalActivation::Sine) => z.map(|v| (w0 * v).sin()),
            (true, FinalActivation::Abs) => z.map(f64::abs),
            (true, FinalActivation::Identity) => z.clone(),
        }
    }

    fn activate_tape(&self, tape: &mut Tape, z: Var, last: bool) -> Result<Var> {
        match (last, self.final_activation) {
            (false, _) | (true, FinalActivation::Sine) => {
                let s = tape.scale(z, self.omega0)?;
                tape.sin(s)
            }
            (true, FinalActivation::Abs) => tape.abs(z),
            (true, FinalActivation::Identity) => Ok(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<Layer>,
}

impl MlpWeights {
    pub fn zeros(spec: &SirenSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|p| Layer {
                w: Tensor::zeros(&[p[0], p[1]]),
                b: Tensor::zeros(&[p[1]]),
            })
            .collect();
        MlpWeights { layers }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn check(&self, spec: &SirenSpec) -> Result<()> {
        if self.layers.len() != spec.num_layers() {
            return Err(MemsimError::dim(
                "MlpWeights",
                format!("{} layers for a spec with {}", self.layers.len(), spec.num_layers()),
            ));
        }
        for (k, (l, p)) in self.layers.iter().zip(spec.layer_sizes.windows(2)).enumerate() {
            if l.w.shape() != [p[0], p[1]] || l.b.shape() != [p[1]] {
                return Err(MemsimError::dim(
                    "MlpWeights",
                    format!("layer {k}: w {:?}, b {:?}, expected {}x{}", l.w.shape(), l.b.shape(), p[0], p[1]),
                ));
            }
            if !l.w.all_finite() || !l.b.all_finite() {
                return Err(MemsimError::NonFinite { op: "MlpWeights" });
            }
        }
        Ok(())
    }

    /// Layer-tagged CSV checkpoint: `layer,param,row,col,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "param", "row", "col", "value"])?;
        for (k, l) in self.layers.iter().enumerate() {
            let cols = l.w.cols();
            for (i, v) in l.w.data().iter().enumerate() {
                w.write_record([k.to_string(), "w".into(), (i / cols).to_string(), (i % cols).to_string(), v.to_string()])?;
            }
            for (j, v) in l.b.data().iter().enumerate() {
                w.write_record([k.to_string(), "b".into(), "0".into(), j.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, spec: &SirenSpec) -> Result<Self> {
        let mut weights = MlpWeights::zeros(spec);
        let mut seen = vec![false; weights.num_params()];
        let offsets: Vec<usize> = weights
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.w.len() + l.b.len();
                Some(o)
            })
            .collect();
        let mut rdr = csv::Reader::from_reader(input);
        for (n, rec) in rdr.records().enumerate() {
            let row = n + 2;
            let rec = rec.map_err(|e| MemsimError::Parse { row, detail: e.to_string() })?;
            let bad = |d: &str| MemsimError::Parse { row, detail: d.to_string() };
            if rec.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let layer: usize = rec[0].parse().map_err(|_| bad("bad layer index"))?;
            let r: usize = rec[2].parse().map_err(|_| bad("bad row"))?;
            let c: usize = rec[3].parse().map_err(|_| bad("bad col"))?;
            let v: f64 = rec[4].parse().map_err(|_| bad("bad value"))?;
            let l = weights.layers.get_mut(layer).ok_or_else(|| bad("layer out of range"))?;
            let (slot, flat) = match &rec[1] {
                "w" if r < l.w.rows() && c < l.w.cols() => (r * l.w.cols() + c, true),
                "b" if r == 0 && c < l.b.len() => (c, false),
                _ => return Err(bad("parameter index out of range")),
            };
            let global = offsets[layer] + if flat { slot } else { l.w.len() + slot };
            if flat {
                l.w.data_mut()[slot] = v;
            } else {
                l.b.data_mut()[slot] = v;
            }
            seen[global] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(MemsimError::Parse {
                row: 0,
                detail: format!("checkpoint is missing parameter #{missing}"),
            });
        }
        weights.check(spec)?;
        Ok(weights)
    }
}

/// First layer `U(−1/n, 1/n)`, later layers `U(−√(6/n)/ω₀, √(6/n)/ω₀)`,
/// `n` being the layer's fan-in. Biases start at zero.
pub fn init_siren(spec: &SirenSpec, rng: &mut StreamRng) -> Result<MlpWeights> {
    spec.validate()?;
    let mut weights = MlpWeights::zeros(spec);
    for (k, layer) in weights.layers.iter_mut().enumerate() {
        let bound = init_bound(spec, k);
        layer
            .w
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bound..=bound));
    }
    Ok(weights)
}

pub fn init_bound(spec: &SirenSpec, layer: usize) -> f64 {
    let n = spec.layer_sizes[layer] as f64;
    if layer == 0 {
        1.0 / n
    } else {
        (6.0 / n).sqrt() / spec.omega0
    }
}

fn check_input(spec: &SirenSpec, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != spec.input_dim() {
        return Err(MemsimError::dim(
            "forward",
            format!("input {:?}, network expects {} features", x.shape(), spec.input_dim()),
        ));
    }
    Ok(())
}

pub fn forward_digital(w: &MlpWeights, spec: &SirenSpec, x: &Tensor) -> Result<Tensor> {
    check_input(spec, x)?;
    let n = w.layers.len();
    let mut h = x.clone();
    for (k, l) in w.layers.iter().enumerate() {
        let z = h.matmul(&l.w)?.add_row(&l.b)?;
        h = spec.activate(&z, k + 1 == n);
    }
    h.ensure_finite("forward_digital")
}

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w: Var,
    pub b: Var,
}

/// Converter behavior applied inside a taped forward. Quantization, IR-drop
/// and peripheral noise alter the forward value only; gradients pass
/// straight through.
pub struct TapeConverters<'a> {
    pub spec: &'a ConverterSpec,
    /// Per-layer weight range (ADC full scale divided by `output_clip`).
    pub weight_ranges: &'a [f64],
    pub rng: &'a mut StreamRng,
}

pub fn forward_tape(
    tape: &mut Tape,
    layers: &[LayerVars],
    spec: &SirenSpec,
    x: Var,
    mut conv: Option<TapeConverters<'_>>,
) -> Result<Var> {
    check_input(spec, tape.value(x))?;
    let n = layers.len();
    let mut h = x;
    for (k, lv) in layers.iter().enumerate() {
        if let Some(c) = conv.as_ref() {
            let q = tape.value(h).map(|v| quantize(v, c.spec.dac_bits, c.spec.input_clip));
            h = tape.straight_through(h, q)?;
        }
        let mut z = tape.matmul(h, lv.w)?;
        if let Some(c) = conv.as_mut() {
            let range = c.weight_ranges[k];
            let full = c.spec.output_clip * range;
            let periph = c.spec.periph_noise_std * range;
            let alpha = c.spec.ir_drop_alpha;
            let bits = c.spec.adc_bits;
            let mut out = tape.value(z).clone();
            for v in out.data_mut() {
                if periph > 0.0 {
                    let e: f64 = c.rng.sample(StandardNormal);
                    *v += periph * e;
                }
                if alpha > 0.0 {
                    *v *= 1.0 - alpha * (v.abs() / full).min(1.0);
                }
                *v = quantize(*v, bits, full);
            }
            z = tape.straight_through(z, out)?;
        }
        let zb = tape.add_row(z, lv.b)?;
        h = spec.activate_tape(tape, zb, k + 1 == n)?;
    }
    Ok(h)
}

/// Registers `weights` as tape leaves.
pub fn leaves(tape: &mut Tape, weights: &MlpWeights) -> Vec<LayerVars> {
    weights
        .layers
        .iter()
        .map(|l| LayerVars {
            w: tape.leaf(l.w.clone()),
            b: tape.leaf(l.b.clone()),
        })
        .collect()
}

/// A network whose weight matrices live on crossbar tiles.
#[derive(Clone, Debug)]
pub struct AnalogNet {
    pub spec: SirenSpec,
    /// Digital copy that training updates.
    pub shadow: MlpWeights,
    pub tiles: Vec<CrossbarTile>,
    pub converter: ConverterSpec,
    pub repeats: usize,
    pub slices: usize,
    pub model: DeviceModel,
    /// Default evaluation time, seconds.
    pub eval_time: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn to_analog(
    w: &MlpWeights,
    spec: &SirenSpec,
    model: &DeviceModel,
    slices: usize,
    converter: &ConverterSpec,
    repeats: usize,
    t: f64,
    rng: &mut StreamRng,
) -> Result<AnalogNet> {
    w.check(spec)?;
    if repeats == 0 {
        return Err(MemsimError::contract("repeats must be >= 1"));
    }
    let tiles = w
        .layers
        .iter()
        .map(|l| CrossbarTile::map_weights(&l.w, model, slices, t, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalogNet {
        spec: spec.clone(),
        shadow: w.clone(),
        tiles,
        converter: converter.clone(),
        repeats,
        slices,
        model: model.clone(),
        eval_time: t,
    })
}

impl AnalogNet {
    /// Rewrite every tile from the shadow weights.
    pub fn reprogram(&mut self, t: f64, rng: &mut StreamRng) -> Result<()> {
        for (tile, l) in self.tiles.iter_mut().zip(&self.shadow.layers) {
            tile.reprogram(&l.w, t, rng)?;
        }
        Ok(())
    }

    pub fn t_prog(&self) -> f64 {
        self.tiles.first().map_or(0.0, CrossbarTile::t_prog)
    }

    pub fn weight_ranges(&self) -> Vec<f64> {
        self.tiles.iter().map(CrossbarTile::weight_range).collect()
    }

    /// Programmed weights decoded from the tiles (biases from the shadow).
    pub fn decoded_weights(&self) -> MlpWeights {
        self.with_matrices(self.tiles.iter().map(CrossbarTile::programmed_weights).collect())
    }

    /// One draw of the weights a `repeats`-averaged evaluation sees at `t`.
    pub fn effective_weights(&self, t: f64, rng: &mut StreamRng) -> Result<MlpWeights> {
        let ws = self
            .tiles
            .iter()
            .map(|tile| tile.effective_weights(t, self.repeats, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.with_matrices(ws))
    }

    fn with_matrices(&self, ws: Vec<Tensor>) -> MlpWeights {
        MlpWeights {
            layers: ws
                .into_iter()
                .zip(&self.shadow.layers)
                .map(|(w, l)| Layer { w, b: l.b.clone() })
                .collect(),
        }
    }

    /// Stick a fraction of the devices on every tile.
    pub fn inject_faults(&mut self, ratio: f64, rng: &mut StreamRng) -> Result<usize> {
        let mut total = 0;
        for tile in &mut self.tiles {
            total += tile.inject_faults(ratio, rng)?;
        }
        Ok(total)
    }

    pub fn stuck_count(&self) -> usize {
        self.tiles.iter().map(CrossbarTile::stuck_count).sum()
    }
}

/// Layer-by-layer analog inference: temporally averaged MVM per layer,
/// digital bias and activation.
pub fn forward_analog(net: &AnalogNet, x: &Tensor, t: f64, rng: &mut StreamRng) -> Result<Tensor> {
    check_input(&net.spec, x)?;
    let n = net.tiles.len();
    let mut h = x.clone();
    for (k, (tile, l)) in net.tiles.iter().zip(&net.shadow.layers).enumerate() {
        let z = analog_mvm_batch(tile, &h, &net.converter, t, net.repeats, rng)?.add_row(&l.b)?;
        h = net.spec.activate(&z, k + 1 == n);
    }
    h.ensure_finite("forward_analog")
}
