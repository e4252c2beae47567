//! Steerable bases and the (partially) equivariant kernel projection.
//!
//! A kernel block `K: ℝ² → ℝ^{d_J × d_l}` between irreps `ψ_l` and `ψ_J` is
//! expanded as `vec K(x) = Σ CG_sᵀ X Y_j(x)` where `CG_s` is a copy of `ψ_j′`
//! inside `ψ_l ⊗ ψ_J` and `X` is `d_j′ × d_j`:
//!
//! * equivariant: `j′ = j` and `X = Σ_r w_r c_r` over the endomorphism basis;
//! * probabilistic: `X = unvec(c^{jj′} W)` with `c^{jj′} Qᵀ = ∫ λ(h) (ψ_j ⊗ ψ_j′)(h) dh`;
//! * preliminary: as probabilistic, with every `c^{jj′}` a free matrix.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::FourierCoeffs;
use crate::groups::{Group, GroupElement, GroupKind};
use crate::likelihood::NormalizedLikelihood;
use crate::reps::{decompose_tensor, direct_sum, unvec, vec_of, FieldType, Irrep, IrrepId};

/// Noise scale for the zero blocks of preliminary-mode `c^{jj′}`.
pub const PRELIMINARY_NOISE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Equivariant,
    Probabilistic,
    Preliminary,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Equivariant => "equivariant",
            Mode::Probabilistic => "probabilistic",
            Mode::Preliminary => "preliminary",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariant" => Ok(Mode::Equivariant),
            "probabilistic" => Ok(Mode::Probabilistic),
            "preliminary" => Ok(Mode::Preliminary),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Angular factor of a basis element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Angular {
    Const,
    Cos(u32),
    Sin(u32),
    /// `[cos mφ, sin mφ]`, or `[cos mφ, −sin mφ]` when `conj` (aliased
    /// frequencies of finite groups).
    Pair { freq: u32, conj: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisElement {
    pub irrep: IrrepId,
    pub ring: usize,
    pub angular: Angular,
    pub radius: f64,
    /// Zero for the point basis.
    pub sigma: f64,
}

impl BasisElement {
    pub fn dim(&self) -> usize {
        match self.angular {
            Angular::Pair { .. } => 2,
            _ => 1,
        }
    }

    pub fn evaluate(&self, x: [f64; 2]) -> DVector<f64> {
        let r = x[0].hypot(x[1]);
        let radial = if self.sigma == 0.0 {
            1.0
        } else {
            (-(r - self.radius).powi(2) / (2.0 * self.sigma * self.sigma)).exp()
        };
        if self.angular == Angular::Const {
            return DVector::from_element(1, radial);
        }
        if r == 0.0 {
            return DVector::zeros(self.dim());
        }
        let phi = x[1].atan2(x[0]);
        match self.angular {
            Angular::Const => unreachable!(),
            Angular::Cos(m) => DVector::from_element(1, radial * (m as f64 * phi).cos()),
            Angular::Sin(m) => DVector::from_element(1, radial * (m as f64 * phi).sin()),
            Angular::Pair { freq, conj } => {
                let (s, c) = (freq as f64 * phi).sin_cos();
                let s = if conj { -s } else { s };
                DVector::from_vec(vec![radial * c, radial * s])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Point,
    Plane,
}

#[derive(Clone, Debug)]
pub struct SteerableBasis {
    pub group: Group,
    pub space: Space,
    pub elements: Vec<BasisElement>,
}

/// Irreps carried by the angular frequency `m` and their angular factors.
fn angular_parts(group: &Group, m: u32) -> Vec<(IrrepId, Angular)> {
    let pair = |flip, freq, conj| (IrrepId::new(flip, freq), Angular::Pair { freq: m, conj });
    match group.kind() {
        GroupKind::SO2 if m == 0 => vec![(IrrepId::TRIVIAL, Angular::Const)],
        GroupKind::SO2 => vec![pair(0, m, false)],
        GroupKind::O2 if m == 0 => vec![(IrrepId::TRIVIAL, Angular::Const)],
        GroupKind::O2 => vec![pair(1, m, false)],
        GroupKind::Cyclic(n) | GroupKind::Dihedral(n) => {
            let flip = u8::from(group.has_reflections());
            let r = m % n;
            if m == 0 {
                vec![(IrrepId::TRIVIAL, Angular::Const)]
            } else if r == 0 {
                vec![
                    (IrrepId::TRIVIAL, Angular::Cos(m)),
                    (IrrepId::new(flip, 0), Angular::Sin(m)),
                ]
            } else if 2 * r == n {
                vec![
                    (IrrepId::new(0, r), Angular::Cos(m)),
                    (IrrepId::new(flip, r), Angular::Sin(m)),
                ]
            } else if 2 * r < n {
                vec![pair(flip, r, false)]
            } else {
                vec![pair(flip, n - r, true)]
            }
        }
    }
}

impl SteerableBasis {
    /// Basis on the single point `x = 0`: the constant trivial function.
    pub fn point(group: Group) -> Self {
        Self {
            group,
            space: Space::Point,
            elements: vec![BasisElement {
                irrep: IrrepId::TRIVIAL,
                ring: 0,
                angular: Angular::Const,
                radius: 0.0,
                sigma: 0.0,
            }],
        }
    }

    /// Gaussian rings at radii `k · ring_width` (`σ = ring_width / 2`) times
    /// circular harmonics of angular frequency up to `max_freq`. Non-constant
    /// harmonics skip the ring at the origin.
    pub fn planar(group: Group, max_freq: u32, n_rings: usize, ring_width: f64) -> Result<Self> {
        if n_rings == 0 || ring_width <= 0.0 {
            return Err(Error::Config(
                "planar basis needs at least one ring of positive width".into(),
            ));
        }
        let mut elements = Vec::new();
        for m in 0..=max_freq {
            for (irrep, angular) in angular_parts(&group, m) {
                let first = usize::from(m > 0);
                for ring in first..n_rings {
                    elements.push(BasisElement {
                        irrep,
                        ring,
                        angular,
                        radius: ring as f64 * ring_width,
                        sigma: ring_width / 2.0,
                    });
                }
            }
        }
        Ok(Self {
            group,
            space: Space::Plane,
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Largest `|Y(g·x) − ψ_j(g) Y(x)|` over the given pairs.
    pub fn steerability_residual(&self, samples: &[(GroupElement, [f64; 2])]) -> f64 {
        let mut worst: f64 = 0.0;
        for e in &self.elements {
            let irrep = Irrep::new(self.group, e.irrep).expect("basis irreps are valid");
            for (g, x) in samples {
                let lhs = e.evaluate(g.act(*x));
                let rhs = irrep.matrix(g) * e.evaluate(*x);
                worst = worst.max((lhs - rhs).amax());
            }
        }
        worst
    }
}

pub fn point_basis(group: Group) -> SteerableBasis {
    SteerableBasis::point(group)
}

pub fn planar_basis(group: Group, max_freq: u32, n_rings: usize, ring_width: f64) -> Result<SteerableBasis> {
    SteerableBasis::planar(group, max_freq, n_rings, ring_width)
}

/// `c^{jj′} = Q · ⊕_blocks R_ψi(λ̂_i) / √d_i`, zero for blocks above the
/// bandlimit of `lambda`.
pub fn cjj_from_coeffs(lambda: &FourierCoeffs, j: IrrepId, j2: IrrepId) -> Result<DMatrix<f64>> {
    let group = lambda.group;
    let dec = decompose_tensor(&group, j, j2)?;
    let mut blocks = Vec::with_capacity(dec.cg.len());
    for b in &dec.cg {
        let irrep = Irrep::new(group, b.irrep)?;
        let block = match lambda.entry(b.irrep) {
            Some(coeff) => irrep.expand_columns(&coeff)? / (irrep.dim as f64).sqrt(),
            None => DMatrix::zeros(irrep.dim, irrep.dim),
        };
        blocks.push(block);
    }
    Ok(&dec.q * direct_sum(&blocks))
}

pub fn build_cjj(norm: &NormalizedLikelihood, j: IrrepId, j2: IrrepId) -> Result<DMatrix<f64>> {
    cjj_from_coeffs(&norm.coeffs, j, j2)
}

/// `c^{jj′}` of the uniform density.
pub fn uniform_cjj(group: Group, j: IrrepId, j2: IrrepId) -> Result<DMatrix<f64>> {
    cjj_from_coeffs(&FourierCoeffs::constant(group, 0, 1.0), j, j2)
}

/// Preliminary-mode initial value: the uniform `c^{jj′}`, with `ε·N(0,1)`
/// noise on its zero blocks when `noise` is set.
pub fn init_preliminary_cjj<R: Rng + ?Sized>(
    group: Group,
    j: IrrepId,
    j2: IrrepId,
    noise: Option<(f64, &mut R)>,
) -> Result<DMatrix<f64>> {
    let dec = decompose_tensor(&group, j, j2)?;
    let mut noise = noise;
    let mut blocks = Vec::new();
    for b in &dec.cg {
        let d = Irrep::new(group, b.irrep)?.dim;
        let block = if b.irrep.is_trivial() {
            DMatrix::identity(1, 1)
        } else if let Some((eps, rng)) = noise.as_mut() {
            DMatrix::from_fn(d, d, |_, _| *eps * rng.sample::<f64, _>(StandardNormal))
        } else {
            DMatrix::zeros(d, d)
        };
        blocks.push(block);
    }
    Ok(&dec.q * direct_sum(&blocks))
}

/// Free `c^{jj′}` matrices of preliminary mode, keyed by `(j, j′)`.
pub type CjjMap = BTreeMap<(IrrepId, IrrepId), DMatrix<f64>>;

/// One weight group of a kernel block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    /// Scalar weight on `CG_sᵀ c_r Y(x)`.
    Endo { element: usize, block: usize, endo: usize },
    /// `d_j · d_j′` weights feeding `c^{jj′}`.
    Pair { element: usize, block: usize },
}

/// Weight bookkeeping for one `(ψ_l, ψ_J)` kernel block.
#[derive(Clone, Debug)]
pub struct KernelLayout {
    pub group: Group,
    pub in_irrep: IrrepId,
    pub out_irrep: IrrepId,
    pub mode: Mode,
    /// `(term, offset, len)`
    pub terms: Vec<(Term, usize, usize)>,
    pub n_weights: usize,
}

impl KernelLayout {
    pub fn new(basis: &SteerableBasis, l: IrrepId, out: IrrepId, mode: Mode) -> Result<Self> {
        let group = basis.group;
        let dec = decompose_tensor(&group, l, out)?;
        let mut terms = Vec::new();
        let mut offset = 0;
        for (element, e) in basis.elements.iter().enumerate() {
            let irrep = Irrep::new(group, e.irrep)?;
            for (block, b) in dec.cg.iter().enumerate() {
                match mode {
                    Mode::Equivariant => {
                        if b.irrep != e.irrep {
                            continue;
                        }
                        for endo in 0..irrep.endo_multiplicity() {
                            terms.push((Term::Endo { element, block, endo }, offset, 1));
                            offset += 1;
                        }
                    }
                    Mode::Probabilistic | Mode::Preliminary => {
                        let len = irrep.dim * b.coeffs.nrows();
                        terms.push((Term::Pair { element, block }, offset, len));
                        offset += len;
                    }
                }
            }
        }
        Ok(Self {
            group,
            in_irrep: l,
            out_irrep: out,
            mode,
            terms,
            n_weights: offset,
        })
    }

    /// Every `(j, j′)` pair whose `c^{jj′}` this block uses.
    pub fn cjj_pairs(&self, basis: &SteerableBasis) -> Result<Vec<(IrrepId, IrrepId)>> {
        let dec = decompose_tensor(&self.group, self.in_irrep, self.out_irrep)?;
        let mut out = Vec::new();
        for (t, _, _) in &self.terms {
            if let Term::Pair { element, block } = t {
                let key = (basis.elements[*element].irrep, dec.cg[*block].irrep);
                if !out.contains(&key) {
                    out.push(key);
                }
            }
        }
        Ok(out)
    }
}

/// A kernel block as `vec K(x) = Σ A_t Y_t(x)`.
#[derive(Clone, Debug)]
pub struct ProjectedKernel {
    pub group: Group,
    pub in_irrep: IrrepId,
    pub out_irrep: IrrepId,
    pub parts: Vec<(BasisElement, DMatrix<f64>)>,
}

impl ProjectedKernel {
    pub fn shape(&self) -> (usize, usize) {
        let d = |id| Irrep::new(self.group, id).expect("valid").dim;
        (d(self.out_irrep), d(self.in_irrep))
    }

    /// `d_J × d_l` kernel value at `x`.
    pub fn evaluate(&self, x: [f64; 2]) -> DMatrix<f64> {
        let (rows, cols) = self.shape();
        let mut v = DVector::zeros(rows * cols);
        for (e, a) in &self.parts {
            v += a * e.evaluate(x);
        }
        unvec(v.as_slice(), rows, cols)
    }

    /// Largest `|K(h·x) − ψ_J(h) K(x) ψ_l(h)ᵀ|` relative to `max(1, |K(x)|)`.
    pub fn steerability_residual(&self, samples: &[(GroupElement, [f64; 2])]) -> f64 {
        let l = Irrep::new(self.group, self.in_irrep).expect("valid");
        let out = Irrep::new(self.group, self.out_irrep).expect("valid");
        let mut worst: f64 = 0.0;
        for (h, x) in samples {
            let k = self.evaluate(*x);
            let lhs = self.evaluate(h.act(*x));
            let rhs = out.matrix(h) * &k * l.matrix(h).transpose();
            worst = worst.max((lhs - rhs).amax() / k.amax().max(1.0));
        }
        worst
    }
}

/// Projects one `(ψ_l, ψ_J)` kernel block.
///
/// `lambda` is used only in probabilistic mode and `cjj` only in
/// preliminary mode.
pub fn project_kernel(
    weights: &[f64],
    basis: &SteerableBasis,
    lambda: Option<&FourierCoeffs>,
    cjj: Option<&CjjMap>,
    l: IrrepId,
    out: IrrepId,
    mode: Mode,
) -> Result<ProjectedKernel> {
    let layout = KernelLayout::new(basis, l, out, mode)?;
    project_with_layout(weights, basis, lambda, cjj, &layout)
}

fn project_with_layout(
    weights: &[f64],
    basis: &SteerableBasis,
    lambda: Option<&FourierCoeffs>,
    cjj: Option<&CjjMap>,
    layout: &KernelLayout,
) -> Result<ProjectedKernel> {
    if weights.len() != layout.n_weights {
        return Err(Error::Shape {
            expected: layout.n_weights.to_string(),
            got: weights.len().to_string(),
        });
    }
    let group = basis.group;
    let dec = decompose_tensor(&group, layout.in_irrep, layout.out_irrep)?;
    let mut local: CjjMap = BTreeMap::new();
    let mut parts: Vec<(BasisElement, DMatrix<f64>)> = Vec::new();
    for &(term, offset, len) in &layout.terms {
        let w = &weights[offset..offset + len];
        let (element, a) = match term {
            Term::Endo { element, block, endo } => {
                let irrep = Irrep::new(group, basis.elements[element].irrep)?;
                let cg = &dec.cg[block].coeffs;
                (element, cg.transpose() * &irrep.endomorphism_basis()[endo] * w[0])
            }
            Term::Pair { element, block } => {
                let j = basis.elements[element].irrep;
                let j2 = dec.cg[block].irrep;
                let c = match layout.mode {
                    Mode::Probabilistic => {
                        let lambda = lambda.ok_or_else(|| {
                            Error::Config("probabilistic projection needs a likelihood".into())
                        })?;
                        if !local.contains_key(&(j, j2)) {
                            local.insert((j, j2), cjj_from_coeffs(lambda, j, j2)?);
                        }
                        &local[&(j, j2)]
                    }
                    Mode::Preliminary => cjj
                        .and_then(|m| m.get(&(j, j2)))
                        .ok_or_else(|| Error::Config(format!("missing c matrix for ({j}, {j2})")))?,
                    Mode::Equivariant => unreachable!("pair terms are not equivariant"),
                };
                let d_j = Irrep::new(group, j)?.dim;
                let d_j2 = dec.cg[block].coeffs.nrows();
                let v = c * DVector::from_column_slice(w);
                let x = unvec(v.as_slice(), d_j2, d_j);
                (element, dec.cg[block].coeffs.transpose() * x)
            }
        };
        match parts.iter_mut().find(|(e, _)| *e == basis.elements[element]) {
            Some((_, acc)) => *acc += a,
            None => parts.push((basis.elements[element].clone(), a)),
        }
    }
    Ok(ProjectedKernel {
        group,
        in_irrep: layout.in_irrep,
        out_irrep: layout.out_irrep,
        parts,
    })
}

/// Probabilistic weights that reproduce the given equivariant weights under
/// the uniform density.
pub fn equivariant_to_probabilistic(
    basis: &SteerableBasis,
    l: IrrepId,
    out: IrrepId,
    eq_weights: &[f64],
) -> Result<Vec<f64>> {
    let group = basis.group;
    let eq = KernelLayout::new(basis, l, out, Mode::Equivariant)?;
    let prob = KernelLayout::new(basis, l, out, Mode::Probabilistic)?;
    if eq_weights.len() != eq.n_weights {
        return Err(Error::Shape {
            expected: eq.n_weights.to_string(),
            got: eq_weights.len().to_string(),
        });
    }
    let mut out_w = vec![0.0; prob.n_weights];
    for &(term, offset, len) in &prob.terms {
        let Term::Pair { element, block } = term else { unreachable!() };
        let e = &basis.elements[element];
        let dec = decompose_tensor(&group, l, out)?;
        if dec.cg[block].irrep != e.irrep {
            continue;
        }
        let irrep = Irrep::new(group, e.irrep)?;
        let mut x = DMatrix::zeros(irrep.dim, irrep.dim);
        for &(t, o, _) in &eq.terms {
            if let Term::Endo { element: el, block: bl, endo } = t {
                if el == element && bl == block {
                    x += &irrep.endomorphism_basis()[endo] * eq_weights[o];
                }
            }
        }
        let q = &decompose_tensor(&group, e.irrep, e.irrep)?.q;
        let w = q.transpose() * DVector::from_vec(vec_of(&x));
        out_w[offset..offset + len].copy_from_slice(w.as_slice());
    }
    Ok(out_w)
}

/// One `(out field, in field)` block of a linear map between field types.
#[derive(Clone, Debug)]
pub struct PairLayout {
    pub out_field: usize,
    pub in_field: usize,
    pub layout: KernelLayout,
    pub offset: usize,
}

/// Weight bookkeeping for a full linear map `ρ_in → ρ_out` over the point
/// basis. Blocks are ordered by output field, then input field.
#[derive(Clone, Debug)]
pub struct LinearLayout {
    pub group: Group,
    pub field_in: FieldType,
    pub field_out: FieldType,
    pub mode: Mode,
    pub pairs: Vec<PairLayout>,
    pub n_weights: usize,
}

impl LinearLayout {
    pub fn new(field_in: &FieldType, field_out: &FieldType, mode: Mode) -> Result<Self> {
        if field_in.group != field_out.group {
            return Err(Error::Config("field types over different groups".into()));
        }
        let group = field_in.group;
        let basis = SteerableBasis::point(group);
        let mut cache: BTreeMap<(IrrepId, IrrepId), KernelLayout> = BTreeMap::new();
        let mut pairs = Vec::new();
        let mut offset = 0;
        for (o, &jo) in field_out.irreps.iter().enumerate() {
            for (i, &ji) in field_in.irreps.iter().enumerate() {
                let layout = match cache.get(&(ji, jo)) {
                    Some(l) => l.clone(),
                    None => {
                        let l = KernelLayout::new(&basis, ji, jo, mode)?;
                        cache.insert((ji, jo), l.clone());
                        l
                    }
                };
                let n = layout.n_weights;
                pairs.push(PairLayout {
                    out_field: o,
                    in_field: i,
                    layout,
                    offset,
                });
                offset += n;
            }
        }
        Ok(Self {
            group,
            field_in: field_in.clone(),
            field_out: field_out.clone(),
            mode,
            pairs,
            n_weights: offset,
        })
    }

    /// Irreps `j′` whose `c^{0j′}` the map uses.
    pub fn used_irreps(&self) -> Result<Vec<IrrepId>> {
        let basis = SteerableBasis::point(self.group);
        let mut out: Vec<IrrepId> = Vec::new();
        for p in &self.pairs {
            for (_, j2) in p.layout.cjj_pairs(&basis)? {
                if !out.contains(&j2) {
                    out.push(j2);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Assembles the `d_out × d_in` matrix of a linear map over the point basis.
pub fn project_linear_map(
    weights: &[f64],
    lambda: Option<&FourierCoeffs>,
    cjj: Option<&CjjMap>,
    layout: &LinearLayout,
) -> Result<DMatrix<f64>> {
    if weights.len() != layout.n_weights {
        return Err(Error::Shape {
            expected: layout.n_weights.to_string(),
            got: weights.len().to_string(),
        });
    }
    let basis = SteerableBasis::point(layout.group);
    let (oin, oout) = (layout.field_in.offsets(), layout.field_out.offsets());
    let mut m = DMatrix::zeros(layout.field_out.dim(), layout.field_in.dim());
    for p in &layout.pairs {
        let w = &weights[p.offset..p.offset + p.layout.n_weights];
        let k = project_with_layout(w, &basis, lambda, cjj, &p.layout)?.evaluate([0.0, 0.0]);
        m.view_mut((oout[p.out_field], oin[p.in_field]), k.shape())
            .copy_from(&k);
    }
    Ok(m)
}

/// `ε(h) = mean_b ‖ρ_out(h) f(b) − f(ρ_in(h) b)‖ / ‖f(b)‖` over the rows of
/// `batch`. Rows with `f(b) = 0` are skipped and counted.
pub fn equivariance_error<F>(
    layer: F,
    field_in: &FieldType,
    field_out: &FieldType,
    batch: &DMatrix<f64>,
    h: &GroupElement,
) -> (f64, usize)
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let rin = field_in.matrix(h);
    let rout = field_out.matrix(h);
    let y = layer(batch);
    let y_of_moved = layer(&(batch * rin.transpose()));
    let moved_y = &y * rout.transpose();
    let mut total = 0.0;
    let mut counted = 0;
    let mut skipped = 0;
    for b in 0..batch.nrows() {
        let norm = y.row(b).norm();
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        total += (moved_y.row(b) - y_of_moved.row(b)).norm() / norm;
        counted += 1;
    }
    let eps = if counted == 0 { 0.0 } else { total / counted as f64 };
    (eps, skipped)
}

/// A regular `n × n` grid over `[-extent, extent]²`, row-major from the top left.
pub fn kernel_grid(size: usize, extent: f64) -> Vec<[f64; 2]> {
    let step = if size > 1 {
        2.0 * extent / (size - 1) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let x = -extent + c as f64 * step;
            let y = extent - r as f64 * step;
            out.push([if size > 1 { x } else { 0.0 }, if size > 1 { y } else { 0.0 }]);
        }
    }
    out
}

/// Random `(h, x)` pairs with `|x| ≤ radius`.
pub fn random_samples<R: Rng + ?Sized>(
    group: &Group,
    count: usize,
    radius: f64,
    rng: &mut R,
) -> Vec<(GroupElement, [f64; 2])> {
    (0..count)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            (group.random_element(rng), [r * phi.cos(), r * phi.sin()])
        })
        .collect()
}
