//! Fourier analysis on the supported groups.
//!
//! A real function on the group is stored as one `d_i × n_i` block per irrep
//! (the non-redundant columns), flattened column-major in `irreps_up_to`
//! order. The inverse transform is
//! `f(g) = Σ_i (√d_i / m_i) Tr(ψ_i(g)ᵀ R_ψi(f̂_i))`, i.e. `√d_i ⟨ψ̄_i(g), f̂_i⟩`,
//! which makes the coefficient map an isometry into L²(H) for the normalised
//! Haar measure.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{Group, GroupElement};
use crate::reps::{irreps_up_to, Irrep, IrrepId};

/// Placement of one irrep block inside the flat coefficient vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    pub id: IrrepId,
    pub offset: usize,
    pub dim: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.dim * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn layout(group: &Group, bandlimit: u32) -> Vec<Block> {
    let mut offset = 0;
    irreps_up_to(group, bandlimit)
        .into_iter()
        .map(|irrep| {
            let b = Block {
                id: irrep.id,
                offset,
                dim: irrep.dim,
                cols: irrep.n_cols(),
            };
            offset += b.len();
            b
        })
        .collect()
}

pub fn coeff_len(group: &Group, bandlimit: u32) -> usize {
    layout(group, bandlimit).iter().map(Block::len).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCoeffs {
    pub group: Group,
    pub bandlimit: u32,
    pub values: Vec<f64>,
}

impl FourierCoeffs {
    pub fn zeros(group: Group, bandlimit: u32) -> Self {
        Self {
            group,
            bandlimit,
            values: vec![0.0; coeff_len(&group, bandlimit)],
        }
    }

    pub fn from_flat(group: Group, bandlimit: u32, values: Vec<f64>) -> Result<Self> {
        let expected = coeff_len(&group, bandlimit);
        if values.len() != expected {
            return Err(Error::Shape {
                expected: expected.to_string(),
                got: values.len().to_string(),
            });
        }
        Ok(Self {
            group,
            bandlimit,
            values,
        })
    }

    /// The constant function `c`.
    pub fn constant(group: Group, bandlimit: u32, c: f64) -> Self {
        let mut out = Self::zeros(group, bandlimit);
        out.values[0] = c;
        out
    }

    pub fn layout(&self) -> Vec<Block> {
        layout(&self.group, self.bandlimit)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry(&self, id: IrrepId) -> Option<DMatrix<f64>> {
        self.layout().into_iter().find(|b| b.id == id).map(|b| {
            DMatrix::from_column_slice(b.dim, b.cols, &self.values[b.offset..b.offset + b.len()])
        })
    }

    pub fn set_entry(&mut self, id: IrrepId, m: &DMatrix<f64>) -> Result<()> {
        let b = self
            .layout()
            .into_iter()
            .find(|b| b.id == id)
            .ok_or(Error::InvalidIrrep {
                id,
                group: self.group,
            })?;
        if m.shape() != (b.dim, b.cols) {
            return Err(Error::Shape {
                expected: format!("{}x{}", b.dim, b.cols),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        self.values[b.offset..b.offset + b.len()].copy_from_slice(m.as_slice());
        Ok(())
    }

    pub fn evaluate(&self, g: &GroupElement) -> f64 {
        ift_row(&self.group, self.bandlimit, g)
            .iter()
            .zip(&self.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Drops every entry with `freq > bandlimit`.
    pub fn bandlimit(&self, bandlimit: u32) -> FourierCoeffs {
        if bandlimit >= self.bandlimit {
            return self.clone();
        }
        let mut values = Vec::new();
        for b in self.layout() {
            if b.id.freq <= bandlimit {
                values.extend_from_slice(&self.values[b.offset..b.offset + b.len()]);
            }
        }
        FourierCoeffs {
            group: self.group,
            bandlimit,
            values,
        }
    }

    pub fn dot(&self, other: &FourierCoeffs) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Row of the inverse-transform matrix at `g`.
pub fn ift_row(group: &Group, bandlimit: u32, g: &GroupElement) -> Vec<f64> {
    let mut row = Vec::with_capacity(coeff_len(group, bandlimit));
    for irrep in irreps_up_to(group, bandlimit) {
        row.extend(basis_block(&irrep, g).iter());
    }
    row
}

/// `√d · R⁻¹_ψ(ψ(g))`, the coefficient-space representative of `g`.
fn basis_block(irrep: &Irrep, g: &GroupElement) -> DMatrix<f64> {
    let reduced = irrep
        .reduce_columns(&irrep.matrix(g))
        .expect("square irrep matrix");
    reduced * (irrep.dim as f64).sqrt()
}

pub fn ift_matrix(group: &Group, bandlimit: u32, elements: &[GroupElement]) -> DMatrix<f64> {
    let c = coeff_len(group, bandlimit);
    let mut m = DMatrix::zeros(elements.len(), c);
    for (r, g) in elements.iter().enumerate() {
        for (k, v) in ift_row(group, bandlimit, g).into_iter().enumerate() {
            m[(r, k)] = v;
        }
    }
    m
}

pub fn ift(coeffs: &FourierCoeffs, elements: &[GroupElement]) -> Vec<f64> {
    elements.iter().map(|g| coeffs.evaluate(g)).collect()
}

pub fn ft(values: &[f64], plan: &SamplingPlan) -> Result<FourierCoeffs> {
    if values.len() != plan.elements.len() {
        return Err(Error::Shape {
            expected: plan.elements.len().to_string(),
            got: values.len().to_string(),
        });
    }
    let v = &plan.ft * DVector::from_column_slice(values);
    FourierCoeffs::from_flat(plan.group, plan.bandlimit, v.as_slice().to_vec())
}

/// Samples per coset used for normalising densities with bandlimit `L`.
pub fn default_samples_per_coset(group: &Group, bandlimit: u32) -> usize {
    if group.is_finite() {
        1
    } else {
        (4 * bandlimit as usize + 4).max(64)
    }
}

/// A sample set together with its transform matrices.
#[derive(Clone, Debug)]
pub struct SamplingPlan {
    pub group: Group,
    pub bandlimit: u32,
    pub elements: Vec<GroupElement>,
    /// `N × C`
    pub ift: DMatrix<f64>,
    /// `C × N`, the pseudo-inverse of `ift`.
    pub ft: DMatrix<f64>,
}

impl SamplingPlan {
    pub fn new(group: Group, bandlimit: u32, elements: Vec<GroupElement>) -> Result<Self> {
        let ift = ift_matrix(&group, bandlimit, &elements);
        let (n, c) = ift.shape();
        let rank_err = Error::RankDeficient {
            samples: n,
            coeffs: c,
        };
        if n < c {
            return Err(rank_err);
        }
        let svd = ift.clone().svd(true, true);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        if min <= 1e-8 * max {
            return Err(rank_err);
        }
        let ft = svd.pseudo_inverse(1e-12).map_err(|_| rank_err)?;
        Ok(Self {
            group,
            bandlimit,
            elements,
            ift,
            ft,
        })
    }

    /// Equispaced plan, cached per `(group, L, n_per_coset)`.
    pub fn grid(group: Group, bandlimit: u32, n_per_coset: usize) -> Result<Arc<Self>> {
        type Key = (Group, u32, usize);
        static CACHE: OnceLock<RwLock<HashMap<Key, Arc<SamplingPlan>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = (group, bandlimit, n_per_coset);
        if let Some(hit) = cache.read().expect("plan cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let plan = Arc::new(Self::new(group, bandlimit, group.sample_grid(n_per_coset))?);
        let mut guard = cache.write().expect("plan cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(plan)))
    }

    pub fn default_for(group: Group, bandlimit: u32) -> Arc<Self> {
        Self::grid(group, bandlimit, default_samples_per_coset(&group, bandlimit))
            .expect("default plans are exact quadratures")
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn coeff_len(&self) -> usize {
        self.ift.ncols()
    }

    pub fn same_as(&self, other: &SamplingPlan) -> bool {
        self.group == other.group
            && self.bandlimit == other.bandlimit
            && self.elements == other.elements
    }
}
