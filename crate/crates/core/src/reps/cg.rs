//! Numerical Clebsch-Gordan decomposition of `ψ_j ⊗ ψ_j'`.
//!
//! For every candidate irrep `ψ_i` the space of intertwiners `X` with
//! `ψ_i(g) X = X (ψ_j ⊗ ψ_j')(g)` is the fixed space of the group average of
//! `(ψ_j ⊗ ψ_j')(g) ⊗ ψ_i(g)`. The averages are exact: finite groups are
//! enumerated and continuous groups use enough equispaced samples to integrate
//! every trigonometric polynomial that occurs. Each copy of `ψ_i` is then
//! split off by Gram-Schmidt against its endomorphism orbit.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{irreps_up_to, kron, unvec, Irrep, IrrepId};
use crate::error::{Error, Result};
use crate::groups::{Group, GroupElement};

const VERIFY_TOL: f64 = 1e-8;
const VERIFY_SAMPLES: usize = 64;

/// One occurrence `CG_s^{i(jj')}` of irrep `i`, a `d_i × (d_j·d_j')` matrix.
#[derive(Clone, Debug)]
pub struct CgBlock {
    pub irrep: IrrepId,
    pub copy: usize,
    pub coeffs: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct CgDecomposition {
    pub group: Group,
    pub left: IrrepId,
    pub right: IrrepId,
    /// `(irrep, multiplicity)` in irrep order.
    pub blocks: Vec<(IrrepId, usize)>,
    /// Orthogonal change of basis whose columns are the stacked `CG_sᵀ`.
    pub q: DMatrix<f64>,
    pub cg: Vec<CgBlock>,
}

impl CgDecomposition {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn multiplicity(&self, id: IrrepId) -> usize {
        self.blocks
            .iter()
            .find(|(i, _)| *i == id)
            .map_or(0, |(_, m)| *m)
    }

    /// The copies of irrep `id`, in order.
    pub fn copies(&self, id: IrrepId) -> impl Iterator<Item = &CgBlock> {
        self.cg.iter().filter(move |b| b.irrep == id)
    }

    /// Column offset of every block inside `q`.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.cg
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.coeffs.nrows();
                o
            })
            .collect()
    }

    pub fn tensor_matrix(&self, g: &GroupElement) -> DMatrix<f64> {
        let l = Irrep::new(self.group, self.left).expect("valid");
        let r = Irrep::new(self.group, self.right).expect("valid");
        kron(&l.matrix(g), &r.matrix(g))
    }

    /// `Σ_{i,s} CG_sᵀ ψ_i(g) CG_s`.
    pub fn reconstruct(&self, g: &GroupElement) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for b in &self.cg {
            let psi = Irrep::new(self.group, b.irrep).expect("valid").matrix(g);
            out += b.coeffs.transpose() * psi * &b.coeffs;
        }
        out
    }

    pub fn reconstruction_error(&self, elements: &[GroupElement]) -> f64 {
        elements
            .iter()
            .map(|g| max_abs(&(self.tensor_matrix(g) - self.reconstruct(g))))
            .fold(0.0, f64::max)
    }

    pub fn orthogonality_error(&self) -> f64 {
        let n = self.dim();
        max_abs(&(self.q.transpose() * &self.q - DMatrix::identity(n, n)))
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

type CacheKey = (Group, IrrepId, IrrepId);

fn cache() -> &'static RwLock<HashMap<CacheKey, Arc<CgDecomposition>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<CgDecomposition>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Clebsch-Gordan decomposition of `ψ_j ⊗ ψ_j2`, memoised per `(group, j, j2)`.
///
/// Every fresh decomposition is checked on 64 random elements before it is
/// cached; a failure indicates a bug rather than bad input.
pub fn decompose_tensor(group: &Group, j: IrrepId, j2: IrrepId) -> Result<Arc<CgDecomposition>> {
    let key = (*group, j, j2);
    if let Some(hit) = cache().read().expect("cg cache poisoned").get(&key) {
        return Ok(Arc::clone(hit));
    }
    let dec = compute(group, j, j2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6_DEC0);
    let probes: Vec<_> = (0..VERIFY_SAMPLES)
        .map(|_| group.random_element(&mut rng))
        .collect();
    let residual = dec
        .reconstruction_error(&probes)
        .max(dec.orthogonality_error());
    if residual.is_nan() || residual > VERIFY_TOL {
        return Err(Error::CgVerification {
            left: j,
            right: j2,
            residual,
        });
    }
    let dec = Arc::new(dec);
    let mut guard = cache().write().expect("cg cache poisoned");
    Ok(Arc::clone(guard.entry(key).or_insert(dec)))
}

fn averaging_grid(group: &Group, j: IrrepId, j2: IrrepId) -> Vec<GroupElement> {
    if group.is_finite() {
        group.sample_grid(1)
    } else {
        group.sample_grid(8 * (j.freq + j2.freq + 1) as usize)
    }
}

fn compute(group: &Group, j: IrrepId, j2: IrrepId) -> Result<CgDecomposition> {
    let left = Irrep::new(*group, j)?;
    let right = Irrep::new(*group, j2)?;
    let dim = left.dim * right.dim;
    let grid = averaging_grid(group, j, j2);
    let tensors: Vec<_> = grid
        .iter()
        .map(|g| kron(&left.matrix(g), &right.matrix(g)))
        .collect();

    let mut blocks = Vec::new();
    let mut cg = Vec::new();
    for cand in irreps_up_to(group, j.freq + j2.freq) {
        let di = cand.dim;
        let size = dim * di;
        let mut avg = DMatrix::zeros(size, size);
        for (g, t) in grid.iter().zip(&tensors) {
            avg += kron(t, &cand.matrix(g));
        }
        avg /= grid.len() as f64;
        let avg = (&avg + avg.transpose()) * 0.5;
        let eig = avg.symmetric_eigen();
        let fixed: Vec<DMatrix<f64>> = (0..size)
            .filter(|&k| eig.eigenvalues[k] > 0.5)
            .map(|k| unvec(eig.eigenvectors.column(k).as_slice(), di, dim))
            .collect();
        if fixed.is_empty() {
            continue;
        }
        let copies = split_copies(&cand, fixed);
        blocks.push((cand.id, copies.len()));
        for (s, coeffs) in copies.into_iter().enumerate() {
            cg.push(CgBlock {
                irrep: cand.id,
                copy: s,
                coeffs,
            });
        }
    }

    let total: usize = cg.iter().map(|b| b.coeffs.nrows()).sum();
    if total != dim {
        return Err(Error::CgVerification {
            left: j,
            right: j2,
            residual: f64::INFINITY,
        });
    }
    let mut q = DMatrix::zeros(dim, dim);
    let mut col = 0;
    for b in &cg {
        let rows = b.coeffs.nrows();
        q.columns_mut(col, rows).copy_from(&b.coeffs.transpose());
        col += rows;
    }
    Ok(CgDecomposition {
        group: *group,
        left: j,
        right: j2,
        blocks,
        q,
        cg,
    })
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Splits the intertwiner space of one irrep into isometric copies with
/// mutually orthogonal ranges.
fn split_copies(irrep: &Irrep, mut space: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
    let mut copies = Vec::new();
    while let Some(first) = space.first().cloned() {
        // X Xᵀ = a·I for an intertwiner out of an irrep.
        let a = (&first * first.transpose()).trace() / irrep.dim as f64;
        let mut x = first / a.sqrt();
        canonical_sign(&mut x);

        let orbit: Vec<DMatrix<f64>> = irrep
            .endomorphism_basis()
            .iter()
            .map(|c| {
                let y = c * &x;
                let n = frob(&y, &y).sqrt();
                y / n
            })
            .collect();
        copies.push(x);

        let mut rest = Vec::new();
        for mut v in space.into_iter() {
            for o in orbit.iter().chain(rest.iter()) {
                let p = frob(o, &v);
                v -= o * p;
            }
            let n = frob(&v, &v).sqrt();
            if n > 1e-6 {
                rest.push(v / n);
            }
        }
        space = rest;
    }
    copies
}

fn canonical_sign(x: &mut DMatrix<f64>) {
    if let Some(&lead) = x.iter().find(|v| v.abs() > 1e-6) {
        if lead < 0.0 {
            *x *= -1.0;
        }
    }
}
