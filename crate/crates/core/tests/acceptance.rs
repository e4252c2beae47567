//! Acceptance criteria, one test each. Every test writes a single
//! `criterion NN PASS|FAIL` line to stderr (uncaptured) before asserting.
//!
//! Oracles here are written independently of the library code they check:
//! brute-force group averages, direct sums over samples, central
//! differences and explicit representation matrices.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use partial_steer::fourier::{coeff_len, ft, ift, FourierCoeffs, SamplingPlan};
use partial_steer::groups::{Group, GroupElement};
use partial_steer::kernelproj::{
    equivariant_to_probabilistic, planar_basis, project_kernel, KernelLayout, Mode, ProjectedKernel,
};
use partial_steer::likelihood::{
    alignment_var, kl_divergence, kl_var, normalise, normalise_var, EvalSet, LikelihoodParams,
};
use partial_steer::nn::layers::{Gate, LinearOp};
use partial_steer::nn::tape::{Mat, Tape, Var};
use partial_steer::reps::{decompose_tensor, irreps_up_to, kron, FieldType, Irrep, IrrepId};
use partial_steer::tasks::{self, generate_vectors};

const STEER_TOL: f64 = 1e-9;
const STEER_BUDGET: Duration = Duration::from_secs(60);
const UNIFORM_TOL: f64 = 1e-10;
const CG_RECON_TOL: f64 = 1e-8;
const CG_ORTH_TOL: f64 = 1e-10;
const SCHUR_TOL: f64 = 1e-8;
const ROUND_TRIP_TOL: f64 = 1e-10;
const KL_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const PE_MLP_MAX_MSE: f64 = 0.15;
const E_MLP_MIN_MSE: f64 = 1.0;
const VECTORS_BUDGET: Duration = Duration::from_secs(30 * 60);
/// `λ(e)` may trail the grid maximum by float noise only.
const ARGMAX_TOL: f64 = 1e-9;
const MIN_GOOD_SEEDS: usize = 4;
const COSET_TOL: f64 = 1e-8;

const MAX_FREQ: u32 = 4;

fn report(id: u32, title: &str, passed: bool, detail: &str) {
    let line = format!(
        "criterion {id:02} {} {title}: {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn kernel_groups() -> Vec<Group> {
    vec![Group::cyclic(4), Group::dihedral(4), Group::so2(), Group::o2()]
}

fn named_groups() -> Vec<Group> {
    ["c1", "c2", "c4", "c8", "d1", "d4", "so2", "o2"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

/// Representation matrices written out from the definition: rotation by
/// `k·θ`, preceded by `diag(1, −1)` for reflected elements; one-dimensional
/// irreps are the sign characters.
fn rho(group: &Group, id: IrrepId, g: &GroupElement) -> DMatrix<f64> {
    let two_d = id.freq > 0 && group.rotation_order().is_none_or(|n| 2 * id.freq != n);
    if two_d {
        let (s, c) = (id.freq as f64 * g.theta).sin_cos();
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        if g.reflect {
            r * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
        } else {
            r
        }
    } else {
        let mut v = 1.0;
        if id.flip == 1 && g.reflect {
            v = -v;
        }
        if id.freq > 0 {
            v *= (id.freq as f64 * g.theta).cos().round();
        }
        DMatrix::from_element(1, 1, v)
    }
}

fn uniform_point(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    [r * phi.cos(), r * phi.sin()]
}

fn random_element(rng: &mut ChaCha8Rng, group: &Group) -> GroupElement {
    let reflect = group.has_reflections() && rng.random::<bool>();
    let theta = match group.rotation_order() {
        Some(n) => std::f64::consts::TAU * rng.random_range(0..n) as f64 / n as f64,
        None => std::f64::consts::TAU * rng.random::<f64>(),
    };
    GroupElement::new(theta, reflect)
}

fn act(g: &GroupElement, x: [f64; 2]) -> [f64; 2] {
    let y = if g.reflect { [x[0], -x[1]] } else { x };
    let (s, c) = g.theta.sin_cos();
    [c * y[0] - s * y[1], s * y[0] + c * y[1]]
}

/// Calls `visit` for every irrep pair with random equivariant weights.
fn sweep<F: FnMut(Group, &partial_steer::kernelproj::SteerableBasis, IrrepId, IrrepId, Vec<f64>)>(seed: u64, mut visit: F) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in kernel_groups() {
        let basis = planar_basis(g, 2 * MAX_FREQ, 3, 1.0).unwrap();
        let ids: Vec<IrrepId> = irreps_up_to(&g, MAX_FREQ).iter().map(|i| i.id).collect();
        for &a in &ids {
            for &b in &ids {
                let n = KernelLayout::new(&basis, a, b, Mode::Equivariant).unwrap().n_weights;
                let w = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                visit(g, &basis, a, b, w);
            }
        }
    }
}

fn relative_steer_residual(k: &ProjectedKernel, g: Group, a: IrrepId, b: IrrepId, rng: &mut ChaCha8Rng) -> f64 {
    let pts: Vec<(GroupElement, [f64; 2])> = (0..100)
        .map(|_| (random_element(rng, &g), uniform_point(rng, 2.5)))
        .collect();
    let scale = pts.iter().map(|(_, x)| k.evaluate(*x).amax()).fold(0.0, f64::max).max(1e-300);
    let mut worst: f64 = 0.0;
    for (h, x) in &pts {
        let lhs = k.evaluate(act(h, *x));
        let rhs = rho(&g, b, h) * k.evaluate(*x) * rho(&g, a, h).transpose();
        worst = worst.max((lhs - rhs).amax() / scale);
    }
    worst
}

#[test]
fn criterion_01_steerability() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    sweep(1, |g, basis, a, b, w| {
        let k = project_kernel(&w, basis, None, None, a, b, Mode::Equivariant).unwrap();
        worst = worst.max(relative_steer_residual(&k, g, a, b, &mut rng));
        pairs += 1;
    });
    let elapsed = start.elapsed();
    let ok = worst <= STEER_TOL && elapsed <= STEER_BUDGET;
    report(
        1,
        "equivariant kernels are steerable",
        ok,
        &format!("{pairs} irrep pairs, worst relative residual {worst:.2e} (tol {STEER_TOL:.0e}), {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

#[test]
fn criterion_02_uniform_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    sweep(2, |g, basis, a, b, w| {
        let lambda = normalise(&LikelihoodParams::init_uniform(g, MAX_FREQ, "u")).coeffs;
        let eq = project_kernel(&w, basis, None, None, a, b, Mode::Equivariant).unwrap();
        let pw = equivariant_to_probabilistic(basis, a, b, &w).unwrap();
        let pr = project_kernel(&pw, basis, Some(&lambda), None, a, b, Mode::Probabilistic).unwrap();
        for _ in 0..100 {
            let x = uniform_point(&mut rng, 2.5);
            worst = worst.max((eq.evaluate(x) - pr.evaluate(x)).amax());
        }
    });
    let ok = worst <= UNIFORM_TOL;
    report(2, "uniform density reproduces the equivariant kernel", ok, &format!("max abs difference {worst:.2e} (tol {UNIFORM_TOL:.0e})"));
    assert!(ok);
}

#[test]
fn criterion_03_clebsch_gordan() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut recon, mut orth) = (0.0f64, 0.0f64);
    let mut count = 0;
    for g in named_groups() {
        let irreps = irreps_up_to(&g, MAX_FREQ);
        let probes: Vec<_> = (0..64).map(|_| random_element(&mut rng, &g)).collect();
        for a in &irreps {
            for b in &irreps {
                let dec = decompose_tensor(&g, a.id, b.id).unwrap();
                count += 1;
                for h in &probes {
                    let target = kron(&rho(&g, a.id, h), &rho(&g, b.id, h));
                    let mut sum = DMatrix::zeros(target.nrows(), target.ncols());
                    for blk in &dec.cg {
                        sum += blk.coeffs.transpose() * rho(&g, blk.irrep, h) * &blk.coeffs;
                    }
                    recon = recon.max((sum - target).amax());
                }
                let n = dec.q.nrows();
                orth = orth.max((dec.q.transpose() * &dec.q - DMatrix::identity(n, n)).amax());
            }
        }
    }
    let ok = recon <= CG_RECON_TOL && orth <= CG_ORTH_TOL;
    report(
        3,
        "CG decompositions reconstruct the tensor product",
        ok,
        &format!("{count} decompositions, reconstruction {recon:.2e} (tol {CG_RECON_TOL:.0e}), orthogonality {orth:.2e} (tol {CG_ORTH_TOL:.0e})"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_schur() {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for g in named_groups() {
        // Enumeration for finite groups; 97 points per coset integrate every
        // trigonometric polynomial of degree ≤ 8 exactly.
        let grid: Vec<GroupElement> = match g.order() {
            Some(_) => g.sample_grid(1),
            None => {
                let cosets: &[bool] = if g.has_reflections() { &[false, true] } else { &[false] };
                cosets
                    .iter()
                    .flat_map(|&r| (0..97).map(move |k| GroupElement::new(std::f64::consts::TAU * k as f64 / 97.0, r)))
                    .collect()
            }
        };
        let ids: Vec<IrrepId> = irreps_up_to(&g, MAX_FREQ).iter().map(|i| i.id).collect();
        for &a in &ids {
            for &b in &ids {
                if a == b {
                    continue;
                }
                pairs += 1;
                let mut avg: Option<DMatrix<f64>> = None;
                for h in &grid {
                    let t = kron(&rho(&g, a, h), &rho(&g, b, h));
                    avg = Some(match avg {
                        Some(s) => s + t,
                        None => t,
                    });
                }
                worst = worst.max(avg.unwrap().norm() / grid.len() as f64);
            }
        }
    }
    let ok = worst <= SCHUR_TOL;
    report(4, "averages of non-isomorphic tensor products vanish", ok, &format!("{pairs} pairs, max norm {worst:.2e} (tol {SCHUR_TOL:.0e})"));
    assert!(ok);
}

#[test]
fn criterion_05_fourier_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for g in named_groups() {
        for _ in 0..100 {
            let l = rng.random_range(0..=MAX_FREQ);
            let n = coeff_len(&g, l);
            let c = FourierCoeffs::from_flat(g, l, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
            let plan = SamplingPlan::default_for(g, l);
            let back = ft(&ift(&c, &plan.elements), &plan).unwrap();
            for (x, y) in c.values.iter().zip(&back.values) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let ok = worst <= ROUND_TRIP_TOL;
    report(5, "ft(ift(c)) = c", ok, &format!("800 draws, max error {worst:.2e} (tol {ROUND_TRIP_TOL:.0e})"));
    assert!(ok);
}

#[test]
fn criterion_06_kl_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for g in [Group::cyclic(8), Group::so2()] {
        let plan = SamplingPlan::grid(g, MAX_FREQ, 64).unwrap();
        sizes.push(plan.len());
        for _ in 0..100 {
            let mut draw = || {
                let n = coeff_len(&g, MAX_FREQ);
                let mut p = LikelihoodParams::init_uniform(g, MAX_FREQ, "x")
                    .with_logits((0..n).map(|_| (rng.random::<f64>() - 0.5) * 3.0).collect())
                    .unwrap();
                p.plan = plan.clone();
                normalise(&p)
            };
            let (p, q) = (draw(), draw());
            // λ values are densities against a unit-mass Haar measure, so
            // sample probabilities are λ/N.
            let n = p.plan.len() as f64;
            let direct: f64 = p
                .plan
                .elements
                .iter()
                .map(|h| {
                    let (a, b) = (p.evaluate(h), q.evaluate(h));
                    a / n * (a / b).ln()
                })
                .sum();
            worst = worst.max((kl_divergence(&p, &q).unwrap() - direct).abs());
        }
    }
    let ok = worst <= KL_TOL && sizes == vec![8, 64];
    report(6, "Fourier-domain KL equals the direct sum", ok, &format!("plans of {sizes:?} samples, max error {worst:.2e} (tol {KL_TOL:.0e})"));
    assert!(ok);
}

/// Worst relative error of tape gradients against central differences.
fn fd_check(f: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Mat]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    let value = |xs: &[Mat]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        let o = f(&mut t, &vs);
        t.scalar(o)
    };
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.of(*v, &tape);
        for e in 0..inputs[k].len() {
            let mut hi = inputs.to_vec();
            hi[k][e] += step;
            let mut lo = inputs.to_vec();
            lo[k][e] -= step;
            let num = (value(&hi) - value(&lo)) / (2.0 * step);
            let err = (g[e] - num).abs() / g[e].abs().max(num.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

#[test]
fn criterion_07_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst: HashMap<&str, f64> = HashMap::new();
    let mut note = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    let groups = [Group::cyclic(8), Group::dihedral(4), Group::so2(), Group::o2()];
    for cfg in 0..50 {
        let (r, c) = (rng.random_range(2..5), rng.random_range(2..5));
        let a = rand_mat(&mut rng, r, c);
        let b = rand_mat(&mut rng, c, r);
        let row = rand_mat(&mut rng, 1, c);
        let pos = a.map(|v| v.abs() + 0.5);
        type Unary = fn(&mut Tape, Var) -> Var;
        let unary: [(&'static str, Unary); 7] = [
            ("exp", |t, v| t.exp(v)),
            ("elu", |t, v| t.elu(v)),
            ("sigmoid", |t, v| t.sigmoid(v)),
            ("square", |t, v| t.square(v)),
            ("transpose", |t, v| t.transpose(v)),
            ("scale", |t, v| t.scale(v, -1.7)),
            ("add_scalar", |t, v| t.add_scalar(v, 0.3)),
        ];
        let w = rand_mat(&mut rng, r, c);
        for (name, op) in unary {
            let w = if name == "transpose" { w.transpose() } else { w.clone() };
            note(name, fd_check(&|t, v| {
                let y = op(t, v[0]);
                let wc = t.constant(w.clone());
                t.dot(y, wc)
            }, &[a.clone()]));
        }
        let positive: [(&'static str, Unary); 3] = [
            ("log", |t, v| t.log(v)),
            ("sqrt", |t, v| t.sqrt(v)),
            ("powf", |t, v| t.powf(v, 1.7)),
        ];
        for (name, op) in positive {
            note(name, fd_check(&|t, v| {
                let y = op(t, v[0]);
                let wc = t.constant(w.clone());
                t.dot(y, wc)
            }, &[pos.clone()]));
        }
        note("add_sub_mul_div", fd_check(&|t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[0]);
            let m = t.mul(d, v[0]);
            let q = t.div(m, v[1]);
            t.sum(q)
        }, &[a.clone(), pos.clone()]));
        note("matmul", fd_check(&|t, v| {
            let m = t.matmul(v[0], v[1]);
            let s = t.square(m);
            t.mean(s)
        }, &[a.clone(), b.clone()]));
        note("rows", fd_check(&|t, v| {
            let x = t.add_row(v[0], v[1]);
            let y = t.mul_row(x, v[1]);
            let m = t.mean_rows(y);
            let s = t.square(m);
            t.sum(s)
        }, &[a.clone(), row.clone()]));
        let cols: Vec<usize> = (0..c + 1).map(|_| rng.random_range(0..c)).collect();
        let dst: Vec<usize> = (0..c + 1).map(|_| rng.random_range(0..c + 1)).collect();
        note("columns", fd_check(&|t, v| {
            let s = t.select_cols(v[0], std::rc::Rc::new(cols.clone()));
            let p = t.scatter_cols(s, std::rc::Rc::new(dst.clone()), c + 1);
            let q = t.concat_cols(&[p, v[0]]);
            let sq = t.square(q);
            t.sum(sq)
        }, &[a.clone()]));
        let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..r * c)).collect();
        note("indexing", fd_check(&|t, v| {
            let g = t.gather(v[0], &idx, 2, 2);
            let s = t.scatter_add(g, &[0, 3, 3, 1], 2, 2);
            let rs = t.reshape(s, 4, 1);
            let mx = t.max(rs);
            let bc = t.broadcast(mx, 2, 2);
            let p = t.mul(bc, s);
            t.sum(p)
        }, &[a.clone()]));

        let g = groups[cfg % groups.len()];
        let l = rng.random_range(1..=3);
        let plan = SamplingPlan::default_for(g, l);
        let eval = EvalSet::new(&plan, cfg as u64);
        let n = coeff_len(&g, l);
        let ref_logits = Mat::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        let logits = Mat::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        note("L_align", fd_check(&|t, v| {
            let nv = normalise_var(t, v[0], &plan);
            alignment_var(t, nv.coeffs, &eval)
        }, &[logits.clone()]));
        note("L_KL", fd_check(&|t, v| {
            let r = t.constant(ref_logits.clone());
            let nr = normalise_var(t, r, &plan);
            let nv = normalise_var(t, v[0], &plan);
            kl_var(t, &nv, Some(&nr))
        }, &[logits.clone()]));

        let vector = if g.has_reflections() { IrrepId::new(1, 1) } else { IrrepId::new(0, 1) };
        let input = FieldType::new(g, vec![vector]).unwrap();
        let hidden = FieldType::new(g, vec![IrrepId::TRIVIAL, vector, vector]).unwrap();
        let gate = Gate::new(hidden.clone());
        let l1 = LinearOp::new(&input, &gate.input_field(), Mode::Probabilistic, l).unwrap();
        let l2 = LinearOp::new(&hidden, &FieldType::trivial(g, 1), Mode::Probabilistic, l).unwrap();
        let x = rand_mat(&mut rng, 4, 2);
        let y = rand_mat(&mut rng, 4, 1);
        let w1 = Mat::from_column_slice(l1.n_weights(), 1, &l1.init_weights(&mut rng));
        let w2 = Mat::from_column_slice(l2.n_weights(), 1, &l2.init_weights(&mut rng));
        note("L_task", fd_check(&|t, v| {
            let nv = normalise_var(t, v[2], &plan);
            let xs = t.constant(x.clone());
            let m1 = l1.matrix_var(t, v[0], Some(nv.coeffs), &[]).unwrap();
            let m1t = t.transpose(m1);
            let h = t.matmul(xs, m1t);
            let h = gate.apply_combined(t, h).unwrap();
            let m2 = l2.matrix_var(t, v[1], Some(nv.coeffs), &[]).unwrap();
            let m2t = t.transpose(m2);
            let o = t.matmul(h, m2t);
            let ys = t.constant(y.clone());
            let d = t.sub(o, ys);
            let sq = t.square(d);
            t.mean(sq)
        }, &[w1, w2, logits.clone()]));
    }
    let (name, max) = worst
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (*k, *v))
        .unwrap();
    let ok = max <= GRAD_TOL;
    report(
        7,
        "tape gradients match central differences",
        ok,
        &format!("50 configurations, {} checks each, worst {max:.2e} in {name} (tol {GRAD_TOL:.0e})", worst.len()),
    );
    assert!(ok);
}

/// Numbers extracted from one trained seed.
#[derive(Clone, Debug)]
struct SeedSummary {
    seed: u64,
    mse: f64,
    /// Per layer: `max_grid λ − λ(e)`.
    gaps: Vec<f64>,
    /// Per layer: Spearman correlation of `λ(h)` and `ε(h)` over the grid.
    spearman: Vec<f64>,
    consecutive_kl: Option<f64>,
    /// Largest within-coset spread of any layer's `λ` on a dense grid.
    coset_spread: f64,
}

struct PresetRun {
    seeds: Vec<SeedSummary>,
    failures: Vec<String>,
    seconds: f64,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut c, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        c += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    c / (va * vb).sqrt()
}

fn train_preset(name: &str) -> PresetRun {
    let preset = tasks::preset(name).unwrap();
    let data = generate_vectors(preset.samples, preset.data_seed);
    let test = data.test_set(preset.task);
    let start = Instant::now();
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    for &seed in &preset.seeds {
        let run = tasks::run_seed(&preset, &data, seed);
        let Some(model) = run.model else {
            failures.push(format!("seed {seed}: {}", run.report.error.unwrap_or_default()));
            continue;
        };
        let mut gaps = Vec::new();
        let mut rho = Vec::new();
        let mut spread: f64 = 0.0;
        for i in 0..model.layers.len() {
            let norm = model.layer_likelihood(i).unwrap();
            let grid = &norm.plan.elements;
            let vals: Vec<f64> = grid.iter().map(|h| norm.evaluate(h)).collect();
            let e = grid.iter().position(|h| h.theta == 0.0 && !h.reflect).unwrap();
            let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            gaps.push(top - vals[e]);
            let eps = model.equivariance_errors(&test.x, grid).unwrap();
            rho.push(spearman(&vals, &eps[i]));
            let dense = norm.group().sample_grid(256);
            for coset in [false, true] {
                let v: Vec<f64> = dense.iter().filter(|h| h.reflect == coset).map(|h| norm.evaluate(h)).collect();
                if let (Some(lo), Some(hi)) = (
                    v.iter().cloned().reduce(f64::min),
                    v.iter().cloned().reduce(f64::max),
                ) {
                    spread = spread.max(hi - lo);
                }
            }
        }
        seeds.push(SeedSummary {
            seed,
            mse: run.report.mse.unwrap(),
            gaps,
            spearman: rho,
            consecutive_kl: run.report.consecutive_kl,
            coset_spread: spread,
        });
    }
    PresetRun {
        seeds,
        failures,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Each preset is trained once per test binary and shared across criteria.
fn preset_run(name: &str) -> Arc<PresetRun> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<PresetRun>>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
    cache
        .entry(name.to_owned())
        .or_insert_with(|| Arc::new(train_preset(name)))
        .clone()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[test]
fn criterion_08_vectors_angle() {
    let pe = preset_run("pescnn-gated-angle");
    let eq = preset_run("emlp-gated-angle");
    let pe_mse = mean(pe.seeds.iter().map(|s| s.mse));
    let eq_mse = mean(eq.seeds.iter().map(|s| s.mse));
    let seconds = pe.seconds + eq.seconds;
    let complete = pe.seeds.len() == 5 && eq.seeds.len() == 5;
    let ok = complete
        && pe_mse <= PE_MLP_MAX_MSE
        && eq_mse >= E_MLP_MIN_MSE
        && seconds <= VECTORS_BUDGET.as_secs_f64();
    report(
        8,
        "Vectors angle task, PE-MLP vs E-MLP",
        ok,
        &format!(
            "PE-MLP mean test MSE {pe_mse:.4} (need <= {PE_MLP_MAX_MSE}), E-MLP {eq_mse:.4} (need >= {E_MLP_MIN_MSE}), {:.0}s (budget {}s){}",
            seconds,
            VECTORS_BUDGET.as_secs(),
            if complete { String::new() } else { format!(", failed seeds: {:?} {:?}", pe.failures, eq.failures) }
        ),
    );
    assert!(ok);
}

fn aligned(s: &SeedSummary) -> bool {
    s.gaps.iter().all(|g| *g <= ARGMAX_TOL)
}

#[test]
fn criterion_09_alignment() {
    let with = preset_run("pescnn-gated-angle");
    let without = preset_run("pescnn-gated-angle-noalign");
    let good = with.seeds.iter().filter(|s| aligned(s)).count();
    let violated = without.seeds.iter().filter(|s| !aligned(s)).count();
    let ok = good >= MIN_GOOD_SEEDS && violated >= 1;
    let worst_gap = |r: &PresetRun| {
        r.seeds
            .iter()
            .map(|s| (s.seed, s.gaps.iter().cloned().fold(0.0, f64::max)))
            .collect::<Vec<_>>()
    };
    report(
        9,
        "alignment loss keeps the density peak at the identity",
        ok,
        &format!(
            "alpha_align=5: {good}/5 seeds peak at e (largest gaps {:?}); alpha_align=0: {violated}/5 seeds peak elsewhere",
            worst_gap(&with),
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_kl_ordering() {
    let with = preset_run("pescnn-gated-norm-kl");
    let without = preset_run("pescnn-gated-norm-nokl");
    let kl = |r: &PresetRun| mean(r.seeds.iter().filter_map(|s| s.consecutive_kl));
    let (a, b) = (kl(&with), kl(&without));
    let ok = with.seeds.len() == 5 && without.seeds.len() == 5 && a < b;
    report(
        10,
        "KL regularisation lowers consecutive-layer divergence",
        ok,
        &format!("mean KL with alpha_KL=25: {a:.3e}, with alpha_KL=0: {b:.3e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_11_bandlimit_zero() {
    let run = preset_run("pescnn-gated-angle-l0");
    let spread = run.seeds.iter().map(|s| s.coset_spread).fold(0.0, f64::max);
    let ok = run.seeds.len() == 5 && spread <= COSET_TOL;
    report(
        11,
        "bandlimit 0 gives a density constant on each coset",
        ok,
        &format!("max intra-coset variation {spread:.2e} over {} seeds (tol {COSET_TOL:.0e})", run.seeds.len()),
    );
    assert!(ok);
}

#[test]
fn criterion_12_error_likelihood_anticorrelation() {
    let run = preset_run("pescnn-gated-angle");
    let per_seed: Vec<f64> = run.seeds.iter().map(|s| mean(s.spearman.iter().cloned())).collect();
    let negative = per_seed.iter().filter(|r| **r < 0.0).count();
    let ok = negative >= MIN_GOOD_SEEDS;
    let shown: Vec<String> = per_seed.iter().map(|r| format!("{r:.3}")).collect();
    report(
        12,
        "equivariance error falls as likelihood rises",
        ok,
        &format!("layer-mean Spearman per seed [{}], {negative}/5 negative", shown.join(", ")),
    );
    assert!(ok);
}

#[test]
fn oracle_representation_matches_library() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for g in named_groups() {
        for irrep in irreps_up_to(&g, MAX_FREQ) {
            for _ in 0..10 {
                let h = random_element(&mut rng, &g);
                let lib = Irrep::new(g, irrep.id).unwrap().matrix(&h);
                assert!((lib - rho(&g, irrep.id, &h)).amax() < 1e-12, "{g} {}", irrep.id);
            }
        }
    }
}
