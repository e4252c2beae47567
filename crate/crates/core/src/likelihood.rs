//! The learnable density `λ` over the group.
//!
//! Logits `λ̂′` are Fourier coefficients; the density is the max-shifted
//! softmax of their samples on a plan, re-projected to the same bandlimit.
//! Every quantity is built on the tape so the same code serves training and
//! plain evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{ift_matrix, FourierCoeffs, SamplingPlan};
use crate::groups::{Group, GroupElement};
use crate::nn::tape::{Mat, Tape, Var};

/// Extra near-identity samples used by the alignment loss on continuous groups.
pub const NEAR_IDENTITY_SAMPLES: usize = 100;

#[derive(Clone, Debug)]
pub struct LikelihoodParams {
    pub layer_id: String,
    pub logits: FourierCoeffs,
    pub plan: Arc<SamplingPlan>,
}

impl LikelihoodParams {
    /// All-zero logits, i.e. the uniform density.
    pub fn init_uniform(group: Group, bandlimit: u32, layer_id: impl Into<String>) -> Self {
        Self {
            layer_id: layer_id.into(),
            logits: FourierCoeffs::zeros(group, bandlimit),
            plan: SamplingPlan::default_for(group, bandlimit),
        }
    }

    pub fn with_logits(mut self, values: Vec<f64>) -> Result<Self> {
        self.logits = FourierCoeffs::from_flat(self.logits.group, self.logits.bandlimit, values)?;
        Ok(self)
    }

    pub fn group(&self) -> Group {
        self.logits.group
    }

    pub fn bandlimit(&self) -> u32 {
        self.logits.bandlimit
    }
}

/// Tape handles for one normalised density.
#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    /// `λ̂′`, `C × 1`
    pub logits: Var,
    /// `λ̂`, `C × 1`
    pub coeffs: Var,
    pub max_logit: Var,
    pub log_z: Var,
    /// `λ` on the plan, `N × 1`
    pub values: Var,
}

/// `λ = exp(λ′ − max λ′) / z` on the plan, followed by `λ̂ = FT(λ)`.
pub fn normalise_var(tape: &mut Tape, logits: Var, plan: &SamplingPlan) -> NormVars {
    let n = plan.len();
    let ift = tape.constant(plan.ift.clone());
    let ft = tape.constant(plan.ft.clone());
    let raw = tape.matmul(ift, logits);
    let max_logit = tape.max(raw);
    let mb = tape.broadcast(max_logit, n, 1);
    let shifted = tape.sub(raw, mb);
    let e = tape.exp(shifted);
    let z = tape.mean(e);
    let zb = tape.broadcast(z, n, 1);
    let values = tape.div(e, zb);
    let coeffs = tape.matmul(ft, values);
    let log_z = tape.log(z);
    NormVars {
        logits,
        coeffs,
        max_logit,
        log_z,
        values,
    }
}

#[derive(Clone, Debug)]
pub struct NormalizedLikelihood {
    pub layer_id: String,
    pub coeffs: FourierCoeffs,
    pub logits: FourierCoeffs,
    pub z: f64,
    pub max_logit: f64,
    pub sampled_values: Vec<f64>,
    pub plan: Arc<SamplingPlan>,
}

impl NormalizedLikelihood {
    fn from_tape(tape: &Tape, vars: &NormVars, params: &LikelihoodParams) -> Self {
        let group = params.group();
        let l = params.bandlimit();
        Self {
            layer_id: params.layer_id.clone(),
            coeffs: FourierCoeffs::from_flat(group, l, tape.value(vars.coeffs).as_slice().to_vec())
                .expect("plan matches bandlimit"),
            logits: params.logits.clone(),
            z: tape.scalar(vars.log_z).exp(),
            max_logit: tape.scalar(vars.max_logit),
            sampled_values: tape.value(vars.values).as_slice().to_vec(),
            plan: Arc::clone(&params.plan),
        }
    }

    pub fn evaluate(&self, g: &GroupElement) -> f64 {
        self.coeffs.evaluate(g)
    }

    pub fn group(&self) -> Group {
        self.coeffs.group
    }
}

pub fn normalise(params: &LikelihoodParams) -> NormalizedLikelihood {
    let mut tape = Tape::new();
    let logits = tape.constant(column(&params.logits.values));
    let vars = normalise_var(&mut tape, logits, &params.plan);
    NormalizedLikelihood::from_tape(&tape, &vars, params)
}

pub fn evaluate(norm: &NormalizedLikelihood, g: &GroupElement) -> f64 {
    norm.evaluate(g)
}

pub(crate) fn column(v: &[f64]) -> Mat {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Elements over which `max λ − λ(e)` is taken.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub elements: Vec<GroupElement>,
    /// Inverse transform restricted to `elements`, `M × C`.
    pub ift: DMatrix<f64>,
    pub identity: usize,
}

impl EvalSet {
    /// The plan grid, plus near-identity samples for continuous groups.
    pub fn new(plan: &SamplingPlan, seed: u64) -> Self {
        let mut elements = plan.elements.clone();
        elements.extend(
            plan.group
                .sample_near_identity(NEAR_IDENTITY_SAMPLES, seed),
        );
        Self::from_elements(plan.group, plan.bandlimit, elements)
    }

    pub fn grid_only(plan: &SamplingPlan) -> Self {
        Self::from_elements(plan.group, plan.bandlimit, plan.elements.clone())
    }

    fn from_elements(group: Group, bandlimit: u32, elements: Vec<GroupElement>) -> Self {
        let identity = elements
            .iter()
            .position(|g| g.is_identity(0.0))
            .expect("sample grids start at the identity");
        Self {
            ift: ift_matrix(&group, bandlimit, &elements),
            elements,
            identity,
        }
    }
}

/// `max_{h∈S} λ(h) − λ(e)` with `λ` evaluated from its coefficients.
pub fn alignment_var(tape: &mut Tape, coeffs: Var, eval: &EvalSet) -> Var {
    let m = tape.constant(eval.ift.clone());
    let vals = tape.matmul(m, coeffs);
    let top = tape.max(vals);
    let at_e = tape.gather(vals, &[eval.identity], 1, 1);
    tape.sub(top, at_e)
}

/// Alignment error over the plan grid and, for continuous groups, the
/// default near-identity samples.
pub fn alignment_error(norm: &NormalizedLikelihood) -> f64 {
    alignment_error_on(norm, &EvalSet::new(&norm.plan, 0))
}

pub fn alignment_error_on(norm: &NormalizedLikelihood, eval: &EvalSet) -> f64 {
    let vals = &eval.ift * column(&norm.coeffs.values);
    vals.max() - vals[eval.identity]
}

/// `KL(next ‖ ref)` in the Fourier domain; `reference = None` is the uniform
/// density. The reference side never receives gradient.
pub fn kl_var(tape: &mut Tape, next: &NormVars, reference: Option<&NormVars>) -> Var {
    let own = tape.dot(next.coeffs, next.logits);
    let t1 = tape.sub(own, next.max_logit);
    let mut kl = tape.sub(t1, next.log_z);
    if let Some(r) = reference {
        let r_logits = tape.detach(r.logits);
        let r_max = tape.detach(r.max_logit);
        let r_log_z = tape.detach(r.log_z);
        let cross = tape.dot(next.coeffs, r_logits);
        kl = tape.sub(kl, cross);
        kl = tape.add(kl, r_max);
        kl = tape.add(kl, r_log_z);
    }
    kl
}

pub fn kl_divergence(next: &NormalizedLikelihood, reference: &NormalizedLikelihood) -> Result<f64> {
    if !next.plan.same_as(&reference.plan) {
        return Err(Error::PlanMismatch);
    }
    Ok(next.coeffs.dot(&next.logits) - next.max_logit - next.z.ln()
        - next.coeffs.dot(&reference.logits)
        + reference.max_logit
        + reference.z.ln())
}

/// A KL term `KL(next ‖ reference)`; no reference means the uniform density.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KlPair {
    pub next: String,
    pub reference: Option<String>,
}

impl KlPair {
    pub fn new(next: impl Into<String>, reference: Option<&str>) -> Self {
        Self {
            next: next.into(),
            reference: reference.map(str::to_owned),
        }
    }
}

/// Pairs of consecutive layers.
pub fn consecutive_pairs(layer_ids: &[String]) -> Vec<KlPair> {
    layer_ids
        .windows(2)
        .map(|w| KlPair::new(w[1].clone(), Some(&w[0])))
        .collect()
}

/// Mean alignment error over distinct densities and mean KL over `pairs`.
/// Returns `(L_align, L_KL)` as tape scalars.
pub fn aggregate_losses_var(
    tape: &mut Tape,
    layers: &[(String, NormVars, &EvalSet)],
    pairs: &[KlPair],
) -> Result<(Var, Var)> {
    let mut by_id: HashMap<&str, (&NormVars, &EvalSet)> = HashMap::new();
    let mut order = Vec::new();
    for (id, vars, eval) in layers {
        if by_id.insert(id.as_str(), (vars, eval)).is_none() {
            order.push(id.as_str());
        }
    }
    let mut align = tape.scalar_const(0.0);
    for id in &order {
        let (vars, eval) = by_id[id];
        let a = alignment_var(tape, vars.coeffs, eval);
        align = tape.add(align, a);
    }
    if !order.is_empty() {
        align = tape.scale(align, 1.0 / order.len() as f64);
    }
    let mut kl = tape.scalar_const(0.0);
    for pair in pairs {
        let next = by_id
            .get(pair.next.as_str())
            .ok_or_else(|| Error::UnknownLayer(pair.next.clone()))?
            .0;
        let reference = match &pair.reference {
            Some(r) => Some(
                by_id
                    .get(r.as_str())
                    .ok_or_else(|| Error::UnknownLayer(r.clone()))?
                    .0,
            ),
            None => None,
        };
        let term = kl_var(tape, next, reference);
        kl = tape.add(kl, term);
    }
    if !pairs.is_empty() {
        kl = tape.scale(kl, 1.0 / pairs.len() as f64);
    }
    Ok((align, kl))
}

/// Plain-value form of [`aggregate_losses_var`].
pub fn aggregate_losses(layers: &[LikelihoodParams], pairs: &[KlPair]) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let evals: Vec<EvalSet> = layers.iter().map(|p| EvalSet::new(&p.plan, 0)).collect();
    let mut entries = Vec::new();
    for (p, eval) in layers.iter().zip(&evals) {
        let logits = tape.constant(column(&p.logits.values));
        let vars = normalise_var(&mut tape, logits, &p.plan);
        entries.push((p.layer_id.clone(), vars, eval));
    }
    let (a, k) = aggregate_losses_var(&mut tape, &entries, pairs)?;
    Ok((tape.scalar(a), tape.scalar(k)))
}

/// Points per coset of the optional dense curve in [`export_csv`].
pub const DENSE_CURVE_POINTS: usize = 256;

/// CSV with columns `layer_id,reflect,theta_radians,lambda`: one row per
/// plan element, then `dense` equispaced rows per coset for continuous
/// groups. Negative values are clamped to zero.
pub fn export_csv(norms: &[NormalizedLikelihood], dense: Option<usize>) -> String {
    let mut out = String::from("layer_id,reflect,theta_radians,lambda\n");
    for norm in norms {
        let mut rows: Vec<(GroupElement, f64)> = norm
            .plan
            .elements
            .iter()
            .zip(&norm.sampled_values)
            .map(|(g, v)| (*g, *v))
            .collect();
        if let Some(n) = dense.filter(|_| !norm.group().is_finite()) {
            rows.extend(
                norm.group()
                    .sample_grid(n)
                    .into_iter()
                    .map(|g| (g, norm.evaluate(&g))),
            );
        }
        for (g, v) in rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                norm.layer_id,
                u8::from(g.reflect),
                g.theta,
                v.max(0.0)
            );
        }
    }
    out
}
