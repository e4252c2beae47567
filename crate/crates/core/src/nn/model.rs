//! The three-layer (partially) equivariant MLP and its checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::SamplingPlan;
use crate::groups::{Group, GroupElement, GroupKind};
use crate::kernelproj::{equivariance_error, init_preliminary_cjj, Mode, PRELIMINARY_NOISE};
use crate::likelihood::{
    consecutive_pairs, normalise, normalise_var, KlPair, LikelihoodParams, NormVars, NormalizedLikelihood,
};
use crate::reps::{irreps_up_to, FieldType, IrrepId};

use super::layers::{add_trivial_bias, trivial_columns, FourierElu, Gate, IidNorm, LinearOp};
use super::tape::{Mat, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Gated,
    FourierElu,
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Gated => "gated",
            Nonlinearity::FourierElu => "fourier_elu",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gated" => Ok(Nonlinearity::Gated),
            "fourier_elu" | "fourierelu" | "fourier" => Ok(Nonlinearity::FourierElu),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub group: Group,
    /// Highest irrep frequency of each hidden layer.
    pub hidden_freqs: Vec<u32>,
    /// Copies of every hidden irrep (gated) or of the whole Fourier channel.
    pub multiplicity: usize,
    pub outputs: usize,
    /// One per linear layer.
    pub modes: Vec<Mode>,
    pub nonlinearity: Nonlinearity,
    /// Bandlimit of every density.
    pub bandlimit: u32,
    /// One per linear layer; equal ids share a density.
    pub layer_ids: Vec<String>,
    /// `None` means consecutive pairs of distinct densities.
    pub kl_pairs: Option<Vec<KlPair>>,
    pub alpha_align: f64,
    pub alpha_kl: f64,
    pub preliminary_noise: bool,
    /// Samples per coset of the Fourier nonlinearity plan.
    pub fourier_samples: Option<usize>,
}

impl ModelConfig {
    /// Vector-input MLP with hidden irreps up to 4 then 3, eight copies each,
    /// and densities of bandlimit 4.
    pub fn vectors(group: Group, mode: Mode, nonlinearity: Nonlinearity, outputs: usize) -> Self {
        Self {
            group,
            hidden_freqs: vec![4, 3],
            multiplicity: 8,
            outputs,
            modes: vec![mode; 3],
            nonlinearity,
            bandlimit: 4,
            layer_ids: (0..3).map(|i| format!("l{i}")).collect(),
            kl_pairs: None,
            alpha_align: 5.0,
            alpha_kl: 25.0,
            preliminary_noise: false,
            fourier_samples: None,
        }
    }

    /// All layers use one density.
    pub fn shared(mut self, id: &str) -> Self {
        self.layer_ids = vec![id.to_owned(); self.n_layers()];
        self
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_freqs.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_layers();
        if self.modes.len() != n || self.layer_ids.len() != n {
            return Err(Error::Config(format!(
                "expected {n} modes and layer ids, got {} and {}",
                self.modes.len(),
                self.layer_ids.len()
            )));
        }
        if self.outputs == 0 || self.multiplicity == 0 {
            return Err(Error::Config("outputs and multiplicity must be positive".into()));
        }
        if !(self.alpha_align.is_finite() && self.alpha_kl.is_finite()) {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        vector_field(self.group)?;
        Ok(())
    }

    /// Distinct ids of probabilistic layers, in layer order.
    pub fn trained_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (id, mode) in self.layer_ids.iter().zip(&self.modes) {
            if *mode == Mode::Probabilistic && !out.contains(id) {
                out.push(id.clone());
            }
        }
        out
    }

    pub fn resolved_kl_pairs(&self) -> Vec<KlPair> {
        match &self.kl_pairs {
            Some(p) => p.clone(),
            None => consecutive_pairs(&self.trained_ids()),
        }
    }
}

/// Field type of a planar vector: the irrep whose matrices are the group's
/// action on ℝ².
pub fn vector_field(group: Group) -> Result<FieldType> {
    let id = match group.kind() {
        GroupKind::O2 => IrrepId::new(1, 1),
        GroupKind::SO2 => IrrepId::new(0, 1),
        GroupKind::Dihedral(n) if n >= 3 => IrrepId::new(1, 1),
        GroupKind::Cyclic(n) if n >= 3 => IrrepId::new(0, 1),
        _ => {
            return Err(Error::Config(format!(
                "vectors are not an irreducible field of {group}; use C_N or D_N with N ≥ 3, SO(2) or O(2)"
            )))
        }
    };
    FieldType::new(group, vec![id])
}

#[derive(Clone, Debug)]
pub enum Activation {
    None,
    Gated(Gate),
    Fourier(FourierElu),
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub op: LinearOp,
    pub layer_id: String,
    pub norm: Option<IidNorm>,
    pub activation: Activation,
    /// Field type after the activation.
    pub output: FieldType,
}

impl Layer {
    pub fn field_in(&self) -> &FieldType {
        &self.op.layout.field_in
    }

    /// Output type of the linear map, gates included.
    pub fn field_out(&self) -> &FieldType {
        &self.op.layout.field_out
    }
}

/// Trainable values of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub running_ms: Vec<f64>,
    /// Column-major `c^{0j′}` per [`LinearOp::preliminary_irreps`].
    pub cjj: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub layers: Vec<Layer>,
    pub state: Vec<LayerState>,
    /// One per distinct layer id.
    pub likelihoods: Vec<LikelihoodParams>,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    /// Aligned with [`Model::params_mut`].
    pub params: Vec<Var>,
    /// Normalised densities of the probabilistic layers.
    pub norms: Vec<(String, NormVars)>,
    /// Batch mean squared field norms per layer.
    pub batch_ms: Vec<Vec<f64>>,
    pub layer_inputs: Vec<Var>,
}

fn hidden_field(group: Group, freq: u32, multiplicity: usize) -> Result<FieldType> {
    let runs: Vec<(IrrepId, usize)> = irreps_up_to(&group, freq).iter().map(|i| (i.id, multiplicity)).collect();
    FieldType::from_multiplicities(group, &runs)
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let group = config.group;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut state = Vec::new();
        let mut current = vector_field(group)?;
        for (i, (&mode, id)) in config.modes.iter().zip(&config.layer_ids).enumerate() {
            let last = i == config.hidden_freqs.len();
            let (field_out, activation, output) = if last {
                let f = FieldType::trivial(group, config.outputs);
                (f.clone(), Activation::None, f)
            } else {
                let freq = config.hidden_freqs[i];
                match config.nonlinearity {
                    Nonlinearity::Gated => {
                        let hidden = hidden_field(group, freq, config.multiplicity)?;
                        let gate = Gate::new(hidden.clone());
                        (gate.input_field(), Activation::Gated(gate), hidden)
                    }
                    Nonlinearity::FourierElu => {
                        let plan = match config.fourier_samples {
                            Some(n) => SamplingPlan::grid(group, freq, n)?,
                            None => SamplingPlan::default_for(group, freq),
                        };
                        let act = FourierElu::new(plan, config.multiplicity)?;
                        let f = act.field.clone();
                        (f.clone(), Activation::Fourier(act), f)
                    }
                }
            };
            let op = LinearOp::new(&current, &field_out, mode, config.bandlimit)?;
            let norm = (!last).then(|| IidNorm::new(field_out.clone()));
            let n_fields = norm.as_ref().map_or(0, IidNorm::n_fields);
            let mut cjj = Vec::new();
            for j in op.preliminary_irreps() {
                let noise = config.preliminary_noise.then_some((PRELIMINARY_NOISE, &mut rng));
                let c = init_preliminary_cjj(group, IrrepId::TRIVIAL, j, noise)?;
                cjj.push(c.as_slice().to_vec());
            }
            state.push(LayerState {
                weights: op.init_weights(&mut rng),
                bias: vec![0.0; trivial_columns(&field_out).len()],
                log_scale: vec![0.0; n_fields],
                running_ms: vec![1.0; n_fields],
                cjj,
            });
            layers.push(Layer {
                op,
                layer_id: id.clone(),
                norm,
                activation,
                output: output.clone(),
            });
            current = output;
        }
        let mut likelihoods: Vec<LikelihoodParams> = Vec::new();
        for id in &config.layer_ids {
            if !likelihoods.iter().any(|l| &l.layer_id == id) {
                likelihoods.push(LikelihoodParams::init_uniform(group, config.bandlimit, id.clone()));
            }
        }
        Ok(Self {
            config,
            seed,
            layers,
            state,
            likelihoods,
        })
    }

    pub fn group(&self) -> Group {
        self.config.group
    }

    pub fn input_field(&self) -> FieldType {
        self.layers[0].field_in().clone()
    }

    pub fn likelihood(&self, id: &str) -> Result<&LikelihoodParams> {
        self.likelihoods
            .iter()
            .find(|l| l.layer_id == id)
            .ok_or_else(|| Error::UnknownLayer(id.to_owned()))
    }

    pub fn normalized(&self, id: &str) -> Result<NormalizedLikelihood> {
        Ok(normalise(self.likelihood(id)?))
    }

    /// Density of layer `i`.
    pub fn layer_likelihood(&self, i: usize) -> Result<NormalizedLikelihood> {
        self.normalized(&self.layers[i].layer_id)
    }

    /// Every trainable slice, in the order of [`Forward::params`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let trained = self.config.trained_ids();
        let mut out: Vec<&mut [f64]> = Vec::new();
        for s in &mut self.state {
            out.push(&mut s.weights[..]);
            if !s.bias.is_empty() {
                out.push(&mut s.bias[..]);
            }
            if !s.log_scale.is_empty() {
                out.push(&mut s.log_scale[..]);
            }
            for c in &mut s.cjj {
                out.push(&mut c[..]);
            }
        }
        for l in &mut self.likelihoods {
            if trained.contains(&l.layer_id) {
                out.push(&mut l.logits.values[..]);
            }
        }
        out
    }

    pub fn n_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    /// Forward pass on a `B × 2` batch. `train` selects batch statistics for
    /// the normalisation; otherwise the running ones are used.
    pub fn forward(&self, tape: &mut Tape, x: &Mat, train: bool) -> Result<Forward> {
        let d_in = self.input_field().dim();
        if x.ncols() != d_in {
            return Err(Error::Shape {
                expected: format!("B x {d_in}"),
                got: format!("{} x {}", x.nrows(), x.ncols()),
            });
        }
        let mut params = Vec::new();
        let mut layer_params = Vec::new();
        for s in &self.state {
            let w = tape.param(Mat::from_column_slice(s.weights.len(), 1, &s.weights));
            params.push(w);
            let b = (!s.bias.is_empty()).then(|| tape.param(Mat::from_row_slice(1, s.bias.len(), &s.bias)));
            params.extend(b);
            let ls = (!s.log_scale.is_empty())
                .then(|| tape.param(Mat::from_row_slice(1, s.log_scale.len(), &s.log_scale)));
            params.extend(ls);
            let mut cs = Vec::new();
            for c in &s.cjj {
                let d = (c.len() as f64).sqrt().round() as usize;
                let v = tape.param(Mat::from_column_slice(d, d, c));
                params.push(v);
                cs.push(v);
            }
            layer_params.push((w, b, ls, cs));
        }
        let mut norms: Vec<(String, NormVars)> = Vec::new();
        for id in self.config.trained_ids() {
            let p = self.likelihood(&id)?;
            let logits = tape.param(Mat::from_column_slice(p.logits.len(), 1, &p.logits.values));
            params.push(logits);
            norms.push((id, normalise_var(tape, logits, &p.plan)));
        }

        let mut h = tape.constant(x.clone());
        let mut batch_ms = Vec::new();
        let mut layer_inputs = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(h);
            let (w, b, ls, cs) = &layer_params[i];
            let coeffs = norms.iter().find(|(id, _)| *id == layer.layer_id).map(|(_, n)| n.coeffs);
            let coeffs = if layer.op.mode() == Mode::Probabilistic { coeffs } else { None };
            let m = layer.op.matrix_var(tape, *w, coeffs, cs)?;
            let mt = tape.transpose(m);
            let mut y = tape.matmul(h, mt);
            if let Some(b) = b {
                y = add_trivial_bias(tape, y, *b, layer.field_out());
            }
            let mut ms = Vec::new();
            if let (Some(norm), Some(ls)) = (&layer.norm, ls) {
                let running = (!train).then(|| &self.state[i].running_ms[..]);
                let (out, stats) = norm.apply(tape, y, *ls, running);
                y = out;
                ms = stats;
            }
            batch_ms.push(ms);
            h = match &layer.activation {
                Activation::None => y,
                Activation::Gated(g) => g.apply_combined(tape, y)?,
                Activation::Fourier(f) => f.apply(tape, y),
            };
        }
        Ok(Forward {
            output: h,
            params,
            norms,
            batch_ms,
            layer_inputs,
        })
    }

    /// Outputs in evaluation mode.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, false)?;
        Ok(tape.value(f.output).clone())
    }

    /// Input features of every linear layer in evaluation mode.
    pub fn layer_inputs(&self, x: &Mat) -> Result<Vec<Mat>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, false)?;
        Ok(f.layer_inputs.iter().map(|v| tape.value(*v).clone()).collect())
    }

    /// Current `d_out × d_in` matrix of linear layer `i`.
    pub fn layer_matrix(&self, i: usize) -> Result<Mat> {
        let layer = &self.layers[i];
        let s = &self.state[i];
        let coeffs = if layer.op.mode() == Mode::Probabilistic {
            Some(self.layer_likelihood(i)?.coeffs.values)
        } else {
            None
        };
        let cjj: Vec<Mat> = s
            .cjj
            .iter()
            .map(|c| {
                let d = (c.len() as f64).sqrt().round() as usize;
                Mat::from_column_slice(d, d, c)
            })
            .collect();
        layer.op.matrix(&s.weights, coeffs.as_deref(), &cjj)
    }

    /// `ε(h)` of each linear layer on its actual inputs, for every `h`.
    pub fn equivariance_errors(&self, x: &Mat, elements: &[GroupElement]) -> Result<Vec<Vec<f64>>> {
        let inputs = self.layer_inputs(x)?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let m = self.layer_matrix(i)?;
            let f = |b: &Mat| b * m.transpose();
            out.push(
                elements
                    .iter()
                    .map(|h| equivariance_error(f, layer.field_in(), layer.field_out(), &inputs[i], h).0)
                    .collect(),
            );
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layers = self
            .layers
            .iter()
            .zip(&self.state)
            .map(|(l, s)| CheckpointLayer {
                field_in: l.field_in().irreps.clone(),
                field_out: l.field_out().irreps.clone(),
                mode: l.op.mode(),
                layer_id: l.layer_id.clone(),
                logits: self
                    .likelihood(&l.layer_id)
                    .map(|p| p.logits.values.clone())
                    .unwrap_or_default(),
                state: s.clone(),
            })
            .collect();
        Checkpoint {
            group: self.config.group,
            bandlimit: self.config.bandlimit,
            nonlinearity: self.config.nonlinearity,
            seed: self.seed,
            layers,
            config: self.config.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(ck.config.clone(), ck.seed)?;
        if ck.layers.len() != model.layers.len() {
            return Err(Error::Shape {
                expected: format!("{} layers", model.layers.len()),
                got: ck.layers.len().to_string(),
            });
        }
        for (i, cl) in ck.layers.iter().enumerate() {
            let fresh = &model.state[i];
            let ok = cl.state.weights.len() == fresh.weights.len()
                && cl.state.bias.len() == fresh.bias.len()
                && cl.state.log_scale.len() == fresh.log_scale.len()
                && cl.state.running_ms.len() == fresh.running_ms.len()
                && cl.state.cjj.len() == fresh.cjj.len();
            if !ok || cl.field_in != model.layers[i].field_in().irreps {
                return Err(Error::Shape {
                    expected: format!("layer {i} as built from the config"),
                    got: "a different layout".into(),
                });
            }
            model.state[i] = cl.state.clone();
            let p = model
                .likelihoods
                .iter_mut()
                .find(|p| p.layer_id == cl.layer_id)
                .ok_or_else(|| Error::UnknownLayer(cl.layer_id.clone()))?;
            if cl.logits.len() != p.logits.len() {
                return Err(Error::Shape {
                    expected: p.logits.len().to_string(),
                    got: cl.logits.len().to_string(),
                });
            }
            p.logits.values = cl.logits.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub field_in: Vec<IrrepId>,
    pub field_out: Vec<IrrepId>,
    pub mode: Mode,
    pub layer_id: String,
    pub logits: Vec<f64>,
    #[serde(flatten)]
    pub state: LayerState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub group: Group,
    pub bandlimit: u32,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    pub layers: Vec<CheckpointLayer>,
    pub config: ModelConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn batch(n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn max_invariance_gap(model: &Model, x: &Mat) -> f64 {
        let mut tape = Tape::new();
        let base = model.forward(&mut tape, x, true).unwrap();
        let base = tape.value(base.output).clone();
        let field = model.input_field();
        let mut worst: f64 = 0.0;
        for h in model.group().sample_grid(8) {
            let moved = x * field.matrix(&h).transpose();
            let mut t = Tape::new();
            let f = model.forward(&mut t, &moved, true).unwrap();
            worst = worst.max((t.value(f.output) - &base).amax());
        }
        worst
    }

    #[test]
    fn equivariant_model_is_invariant() {
        for nl in [Nonlinearity::Gated] {
            for g in [Group::o2(), Group::dihedral(6), Group::so2()] {
                let model = Model::new(ModelConfig::vectors(g, Mode::Equivariant, nl, 1), 3).unwrap();
                assert!(max_invariance_gap(&model, &batch(16, 0)) <= 1e-8);
            }
        }
    }

    #[test]
    fn probabilistic_model_is_invariant_at_init() {
        let model = Model::new(ModelConfig::vectors(Group::o2(), Mode::Probabilistic, Nonlinearity::Gated, 1), 4)
            .unwrap();
        assert!(max_invariance_gap(&model, &batch(16, 1)) <= 1e-8);
    }

    #[test]
    fn unsupported_input_groups_are_rejected() {
        for g in [Group::cyclic(2), Group::dihedral(1)] {
            let cfg = ModelConfig::vectors(g, Mode::Equivariant, Nonlinearity::Gated, 1);
            assert!(matches!(Model::new(cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn parameter_order_matches_forward() {
        for mode in [Mode::Equivariant, Mode::Probabilistic, Mode::Preliminary] {
            let mut cfg = ModelConfig::vectors(Group::dihedral(4), mode, Nonlinearity::FourierElu, 2);
            cfg.multiplicity = 2;
            let mut model = Model::new(cfg, 5).unwrap();
            let mut tape = Tape::new();
            let f = model.forward(&mut tape, &batch(4, 2), true).unwrap();
            let shapes: Vec<usize> = f.params.iter().map(|p| tape.value(*p).len()).collect();
            let slices: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
            assert_eq!(shapes, slices, "{mode}");
            assert_eq!(tape.value(f.output).shape(), (4, 2));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = ModelConfig::vectors(Group::o2(), Mode::Preliminary, Nonlinearity::Gated, 1);
        cfg.multiplicity = 2;
        cfg.preliminary_noise = true;
        let mut model = Model::new(cfg, 9).unwrap();
        model.likelihoods[1].logits.values[3] = 0.7;
        let text = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let back = Model::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.state, model.state);
        assert_eq!(back.likelihoods[1].logits.values, model.likelihoods[1].logits.values);
        let x = batch(5, 3);
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn shared_ids_make_one_density() {
        let cfg = ModelConfig::vectors(Group::o2(), Mode::Probabilistic, Nonlinearity::Gated, 1).shared("s");
        assert_eq!(cfg.trained_ids(), vec!["s".to_string()]);
        assert!(cfg.resolved_kl_pairs().is_empty());
        let model = Model::new(cfg, 0).unwrap();
        assert_eq!(model.likelihoods.len(), 1);
    }
}
