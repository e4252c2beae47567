//! Named oracle checks behind `partial-steer verify`.
//!
//! Every check compares a library result with an independent computation
//! (brute-force group averages, direct sums, central differences) and
//! reports its worst residual against a fixed tolerance.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{coeff_len, ft, ift, FourierCoeffs, SamplingPlan};
use crate::groups::Group;
use crate::kernelproj::{
    equivariant_to_probabilistic, planar_basis, project_kernel, random_samples, KernelLayout, Mode,
};
use crate::likelihood::{alignment_var, kl_divergence, kl_var, normalise, normalise_var, EvalSet, LikelihoodParams};
use crate::nn::layers::{Gate, LinearOp};
use crate::nn::tape::{gradcheck, Mat, SparseMap, Tape};
use crate::reps::{decompose_tensor, irreps_up_to, kron, FieldType, IrrepId};

pub const STEERABILITY_TOL: f64 = 1e-9;
pub const BASIS_TOL: f64 = 1e-10;
pub const UNIFORM_TOL: f64 = 1e-10;
pub const CG_RECONSTRUCTION_TOL: f64 = 1e-8;
pub const CG_ORTHOGONALITY_TOL: f64 = 1e-10;
pub const SCHUR_TOL: f64 = 1e-8;
pub const ROUND_TRIP_TOL: f64 = 1e-10;
pub const KL_TOL: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Irreps with frequency up to this value are swept.
pub const MAX_FREQ: u32 = 4;
pub const STEER_SAMPLES: usize = 100;
pub const CG_PROBES: usize = 64;
pub const ROUND_TRIP_DRAWS: usize = 100;
pub const KL_PAIRS: usize = 100;
pub const GRADCHECK_CONFIGS: usize = 50;

/// Groups named in the CLI and configuration files.
pub fn named_groups() -> Vec<Group> {
    ["c1", "c2", "c4", "c8", "d1", "d4", "so2", "o2"]
        .iter()
        .map(|n| n.parse().expect("built-in group name"))
        .collect()
}

/// Groups swept by the kernel checks.
pub fn kernel_groups() -> Vec<Group> {
    vec![Group::cyclic(4), Group::dihedral(4), Group::so2(), Group::o2()]
}

/// Deliberate corruption used to show that the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Negates one coefficient of the first CG block of every decomposition.
    CgSignFlip,
}

impl FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg-sign-flip" => Ok(Self::CgSignFlip),
            other => Err(Error::Config(format!("unknown mutation `{other}` (expected cg-sign-flip)"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Substring matched against check names.
    pub filter: Option<String>,
    pub mutation: Option<Mutation>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} {}  worst {:.3e}  tol {:.0e}  {:.2}s{}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.value,
            self.tolerance,
            self.seconds,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!("  ({})", self.detail)
            }
        )
    }
}

type Runner = fn(&VerifyOptions) -> Result<(f64, String)>;

const CHECKS: &[(&str, f64, Runner)] = &[
    ("cg_reconstruction", CG_RECONSTRUCTION_TOL, cg_reconstruction),
    ("cg_orthogonality", CG_ORTHOGONALITY_TOL, cg_orthogonality),
    ("schur", SCHUR_TOL, schur),
    ("fourier_round_trip", ROUND_TRIP_TOL, fourier_round_trip),
    ("basis_steerability", BASIS_TOL, basis_steerability),
    ("steerability", STEERABILITY_TOL, steerability),
    ("uniform_reduction", UNIFORM_TOL, uniform_reduction),
    ("kl_oracle", KL_TOL, kl_oracle),
    ("gradcheck", GRADCHECK_TOL, gradient_checks),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check whose name contains the filter.
pub fn run(opts: &VerifyOptions) -> Vec<Check> {
    CHECKS
        .iter()
        .filter(|(name, _, _)| opts.filter.as_deref().is_none_or(|f| name.contains(f)))
        .map(|&(name, tolerance, runner)| {
            let start = Instant::now();
            let (value, detail, passed) = match runner(opts) {
                Ok((v, d)) => (v, d, v <= tolerance),
                Err(e) => (f64::NAN, e.to_string(), false),
            };
            Check {
                name,
                value,
                tolerance,
                passed,
                seconds: start.elapsed().as_secs_f64(),
                detail,
            }
        })
        .collect()
}

fn ids(group: &Group) -> Vec<IrrepId> {
    irreps_up_to(group, MAX_FREQ).into_iter().map(|i| i.id).collect()
}

fn rng_for(opts: &VerifyOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9).wrapping_add(salt))
}

fn track(worst: &mut f64, at: &mut String, value: f64, label: impl FnOnce() -> String) {
    if !worst.is_nan() && (value.is_nan() || value > *worst) {
        *worst = value;
        *at = label();
    }
}

fn cg_sweep(opts: &VerifyOptions, orth: bool) -> Result<(f64, String)> {
    let mut rng = rng_for(opts, 1);
    let (mut worst, mut at) = (0.0, String::new());
    for g in named_groups() {
        let probes: Vec<_> = (0..CG_PROBES).map(|_| g.random_element(&mut rng)).collect();
        for &a in &ids(&g) {
            for &b in &ids(&g) {
                let mut dec = (*decompose_tensor(&g, a, b)?).clone();
                if opts.mutation == Some(Mutation::CgSignFlip) {
                    dec.cg[0].coeffs[(0, 0)] *= -1.0;
                    let v = -dec.q[(0, 0)];
                    dec.q[(0, 0)] = v;
                }
                let r = if orth {
                    dec.orthogonality_error()
                } else {
                    dec.reconstruction_error(&probes)
                };
                track(&mut worst, &mut at, r, || format!("{g} {a}x{b}"));
            }
        }
    }
    Ok((worst, at))
}

fn cg_reconstruction(opts: &VerifyOptions) -> Result<(f64, String)> {
    cg_sweep(opts, false)
}

fn cg_orthogonality(opts: &VerifyOptions) -> Result<(f64, String)> {
    cg_sweep(opts, true)
}

/// Uniform average of `ψ_a ⊗ ψ_b` for non-isomorphic pairs, by enumeration
/// for finite groups and a dense grid for continuous ones.
fn schur(_: &VerifyOptions) -> Result<(f64, String)> {
    let (mut worst, mut at) = (0.0, String::new());
    for g in named_groups() {
        let grid = g.sample_grid(64);
        let irreps = irreps_up_to(&g, MAX_FREQ);
        for a in &irreps {
            for b in &irreps {
                if a.id == b.id {
                    continue;
                }
                let mut avg = DMatrix::zeros(a.dim * b.dim, a.dim * b.dim);
                for h in &grid {
                    avg += kron(&a.matrix(h), &b.matrix(h));
                }
                avg /= grid.len() as f64;
                track(&mut worst, &mut at, avg.norm(), || format!("{g} {}x{}", a.id, b.id));
            }
        }
    }
    Ok((worst, at))
}

fn fourier_round_trip(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = rng_for(opts, 2);
    let (mut worst, mut at) = (0.0, String::new());
    for g in named_groups() {
        for draw in 0..ROUND_TRIP_DRAWS {
            let l = rng.random_range(0..=MAX_FREQ);
            let n = coeff_len(&g, l);
            let c = FourierCoeffs::from_flat(g, l, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())?;
            let plan = SamplingPlan::default_for(g, l);
            let back = ft(&ift(&c, &plan.elements), &plan)?;
            let err = c
                .values
                .iter()
                .zip(&back.values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            track(&mut worst, &mut at, err, || format!("{g} L={l} draw {draw}"));
        }
    }
    Ok((worst, at))
}

fn basis_steerability(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = rng_for(opts, 3);
    let (mut worst, mut at) = (0.0, String::new());
    for g in named_groups() {
        let basis = planar_basis(g, 2 * MAX_FREQ, 3, 1.0)?;
        let samples = random_samples(&g, STEER_SAMPLES, 3.0, &mut rng);
        track(&mut worst, &mut at, basis.steerability_residual(&samples), || g.to_string());
    }
    Ok((worst, at))
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Visits every `(ψ_l, ψ_J)` pair of the kernel sweep with random
/// equivariant weights and shared `(h, x)` samples.
fn kernel_sweep<F>(opts: &VerifyOptions, salt: u64, mut visit: F) -> Result<(f64, String)>
where
    F: FnMut(&Group, &crate::kernelproj::SteerableBasis, IrrepId, IrrepId, &[f64], &[(crate::groups::GroupElement, [f64; 2])]) -> Result<f64>,
{
    let mut rng = rng_for(opts, salt);
    let (mut worst, mut at) = (0.0, String::new());
    for g in kernel_groups() {
        let basis = planar_basis(g, 2 * MAX_FREQ, 3, 1.0)?;
        let samples = random_samples(&g, STEER_SAMPLES, 2.5, &mut rng);
        for &a in &ids(&g) {
            for &b in &ids(&g) {
                let n = KernelLayout::new(&basis, a, b, Mode::Equivariant)?.n_weights;
                let w = random_weights(&mut rng, n);
                let r = visit(&g, &basis, a, b, &w, &samples)?;
                track(&mut worst, &mut at, r, || format!("{g} {a}->{b}"));
            }
        }
    }
    Ok((worst, at))
}

fn steerability(opts: &VerifyOptions) -> Result<(f64, String)> {
    kernel_sweep(opts, 4, |_, basis, a, b, w, samples| {
        let k = project_kernel(w, basis, None, None, a, b, Mode::Equivariant)?;
        Ok(k.steerability_residual(samples))
    })
}

fn uniform_reduction(opts: &VerifyOptions) -> Result<(f64, String)> {
    kernel_sweep(opts, 5, |g, basis, a, b, w, samples| {
        let uniform = LikelihoodParams::init_uniform(*g, MAX_FREQ, "u");
        let lambda = normalise(&uniform).coeffs;
        let k = project_kernel(w, basis, None, None, a, b, Mode::Equivariant)?;
        let pw = equivariant_to_probabilistic(basis, a, b, w)?;
        let kp = project_kernel(&pw, basis, Some(&lambda), None, a, b, Mode::Probabilistic)?;
        Ok(samples
            .iter()
            .map(|(_, x)| (k.evaluate(*x) - kp.evaluate(*x)).amax())
            .fold(0.0, f64::max))
    })
}

fn random_params(rng: &mut ChaCha8Rng, g: Group, l: u32, id: &str, scale: f64) -> Result<LikelihoodParams> {
    let n = coeff_len(&g, l);
    LikelihoodParams::init_uniform(g, l, id).with_logits((0..n).map(|_| (rng.random::<f64>() - 0.5) * scale).collect())
}

/// Fourier-domain KL against `Σ p log(p/q)` over the plan samples.
fn kl_oracle(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = rng_for(opts, 6);
    let (mut worst, mut at) = (0.0, String::new());
    for g in [Group::cyclic(8), Group::so2()] {
        for pair in 0..KL_PAIRS {
            let p = normalise(&random_params(&mut rng, g, MAX_FREQ, "p", 3.0)?);
            let q = normalise(&random_params(&mut rng, g, MAX_FREQ, "q", 3.0)?);
            let n = p.sampled_values.len() as f64;
            let direct: f64 = p
                .sampled_values
                .iter()
                .zip(&q.sampled_values)
                .map(|(a, b)| a / n * (a / b).ln())
                .sum();
            let err = (kl_divergence(&p, &q)? - direct).abs();
            track(&mut worst, &mut at, err, || format!("{g} pair {pair} ({} samples)", p.plan.len()));
        }
    }
    Ok((worst, at))
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Every tape primitive and the three composite losses, on random shapes
/// and values per configuration.
fn gradient_checks(opts: &VerifyOptions) -> Result<(f64, String)> {
    let mut rng = rng_for(opts, 7);
    let (mut worst, mut at) = (0.0, String::new());
    let groups = [Group::cyclic(8), Group::dihedral(4), Group::so2(), Group::o2()];
    for cfg in 0..GRADCHECK_CONFIGS {
        let (r, k, c) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(2..5));
        let a = rand_mat(&mut rng, r, k);
        let b = rand_mat(&mut rng, k, c);
        let row = rand_mat(&mut rng, 1, c);
        let pos = rand_mat(&mut rng, r, c).map(|v| v.abs() + 0.5);
        let mut sm = SparseMap::new(c, 1);
        for o in 0..c {
            sm.push(o, rng.random_range(0..r * c), rng.random::<f64>() - 0.5);
        }
        let sm = Rc::new(sm);
        let sel = Rc::new((0..c + 1).map(|_| rng.random_range(0..c)).collect::<Vec<_>>());
        let scat = Rc::new((0..c + 1).map(|_| rng.random_range(0..c + 2)).collect::<Vec<_>>());
        let primitives = gradcheck(
            |t, v| {
                let m = t.matmul(v[0], v[1]);
                let e = t.exp(m);
                let el = t.elu(m);
                let s = t.sigmoid(m);
                let sq = t.square(m);
                let lg = t.log(v[3]);
                let rt = t.sqrt(v[3]);
                let pw = t.powf(v[3], 1.5);
                let p1 = t.mul(e, el);
                let p2 = t.div(s, rt);
                let p3 = t.sub(p1, p2);
                let p4 = t.add(p3, sq);
                let p5 = t.add(p4, lg);
                let p6 = t.add(p5, pw);
                let p7 = t.scale(p6, 0.3);
                let p8 = t.add_scalar(p7, 1.0);
                let ar = t.add_row(p8, v[2]);
                let mr = t.mul_row(ar, v[2]);
                let tr = t.transpose(mr);
                let rs = t.reshape(tr, r * c, 1);
                let sp = t.sparse(rs, sm.clone());
                let sc = t.select_cols(mr, sel.clone());
                let sct = t.scatter_cols(sc, scat.clone(), c + 2);
                let mrw = t.mean_rows(sct);
                let ga = t.gather(mrw, &[0, 1, 1], 3, 1);
                let sa = t.scatter_add(ga, &[2, 0, 2], 4, 1);
                let cat = t.concat_cols(&[sa, sa]);
                let mx = t.max(sp);
                let bc = t.broadcast(mx, 4, 2);
                let dt = t.dot(cat, bc);
                let mn = t.mean(mr);
                let sm2 = t.sum(sp);
                let z = t.add(dt, mn);
                t.add(z, sm2)
            },
            &[a, b, row, pos],
            1e-5,
        );
        track(&mut worst, &mut at, primitives, || format!("primitives, config {cfg}"));

        let g = groups[cfg % groups.len()];
        let l = rng.random_range(1..=2);
        let plan = SamplingPlan::default_for(g, l);
        let eval = EvalSet::new(&plan, cfg as u64);
        let n = coeff_len(&g, l);
        let la = Mat::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        let lb = Mat::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        let align = gradcheck(
            |t, v| {
                let nv = normalise_var(t, v[0], &plan);
                alignment_var(t, nv.coeffs, &eval)
            },
            &[lb.clone()],
            1e-5,
        );
        track(&mut worst, &mut at, align, || format!("L_align {g}, config {cfg}"));
        let kl = gradcheck(
            |t, v| {
                let reference = t.constant(la.clone());
                let nr = normalise_var(t, reference, &plan);
                let nv = normalise_var(t, v[0], &plan);
                let k1 = kl_var(t, &nv, Some(&nr));
                let k2 = kl_var(t, &nv, None);
                t.add(k1, k2)
            },
            &[lb.clone()],
            1e-5,
        );
        track(&mut worst, &mut at, kl, || format!("L_KL {g}, config {cfg}"));

        let task = task_gradcheck(&mut rng, g, l, &plan)?;
        track(&mut worst, &mut at, task, || format!("L_task {g}, config {cfg}"));
    }
    Ok((worst, at))
}

/// Two probabilistic layers with a gate in between, under a squared error.
fn task_gradcheck(rng: &mut ChaCha8Rng, g: Group, l: u32, plan: &SamplingPlan) -> Result<f64> {
    let vector = if g.has_reflections() { IrrepId::new(1, 1) } else { IrrepId::new(0, 1) };
    let input = FieldType::new(g, vec![vector])?;
    let hidden = FieldType::new(g, vec![IrrepId::TRIVIAL, vector])?;
    let gate = Gate::new(hidden.clone());
    let out = FieldType::trivial(g, 1);
    let l1 = LinearOp::new(&input, &gate.input_field(), Mode::Probabilistic, l)?;
    let l2 = LinearOp::new(&hidden, &out, Mode::Probabilistic, l)?;
    let x = rand_mat(rng, 3, input.dim());
    let y = rand_mat(rng, 3, 1);
    let w1 = Mat::from_column_slice(l1.n_weights(), 1, &l1.init_weights(rng));
    let w2 = Mat::from_column_slice(l2.n_weights(), 1, &l2.init_weights(rng));
    let logits = Mat::from_fn(coeff_len(&g, l), 1, |_, _| rng.random::<f64>() - 0.5);
    let failure = std::cell::RefCell::new(None);
    let err = gradcheck(
        |t, v| {
            let nv = normalise_var(t, v[2], plan);
            let xs = t.constant(x.clone());
            let ys = t.constant(y.clone());
            let run = |t: &mut Tape| -> Result<_> {
                let m1 = l1.matrix_var(t, v[0], Some(nv.coeffs), &[])?;
                let m1t = t.transpose(m1);
                let h = t.matmul(xs, m1t);
                let h = gate.apply_combined(t, h)?;
                let m2 = l2.matrix_var(t, v[1], Some(nv.coeffs), &[])?;
                let m2t = t.transpose(m2);
                let o = t.matmul(h, m2t);
                let d = t.sub(o, ys);
                let sq = t.square(d);
                Ok(t.mean(sq))
            };
            match run(t) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e.to_string());
                    t.scalar_const(f64::NAN)
                }
            }
        },
        &[w1, w2, logits],
        1e-5,
    );
    match failure.into_inner() {
        Some(msg) => Err(Error::Config(msg)),
        None => Ok(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_selects_by_substring() {
        let opts = VerifyOptions {
            filter: Some("cg_".into()),
            ..Default::default()
        };
        let names: Vec<_> = run(&opts).iter().map(|c| c.name).collect();
        assert_eq!(names, vec!["cg_reconstruction", "cg_orthogonality"]);
    }

    #[test]
    fn sign_flip_fails_the_named_check() {
        let opts = VerifyOptions {
            filter: Some("cg_reconstruction".into()),
            mutation: Some(Mutation::CgSignFlip),
            seed: 0,
        };
        let checks = run(&opts);
        assert_eq!(checks.len(), 1);
        assert!(!checks[0].passed, "{}", checks[0]);
    }

    #[test]
    fn cheap_checks_pass() {
        for name in ["cg_", "schur", "fourier", "kl_oracle"] {
            let opts = VerifyOptions {
                filter: Some(name.into()),
                ..Default::default()
            };
            for c in run(&opts) {
                assert!(c.passed, "{c}");
            }
        }
    }
}
