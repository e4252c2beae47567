use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{is_valid, Irrep, IrrepId};
use crate::error::{Error, Result};
use crate::groups::{Group, GroupElement};

/// Kronecker product with the block layout `[a_ij · B]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major vectorisation, so that `vec(ABC) = (Cᵀ ⊗ A) vec(B)`.
pub fn vec_of(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v)
}

/// Block-diagonal stacking.
pub fn direct_sum(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// A direct sum of irreps, one entry per field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldType {
    pub group: Group,
    pub irreps: Vec<IrrepId>,
}

impl FieldType {
    pub fn new(group: Group, irreps: Vec<IrrepId>) -> Result<Self> {
        if let Some(&id) = irreps.iter().find(|id| !is_valid(&group, **id)) {
            return Err(Error::InvalidIrrep { id, group });
        }
        Ok(Self { group, irreps })
    }

    /// Builds a field type from `(irrep, multiplicity)` runs.
    pub fn from_multiplicities(group: Group, runs: &[(IrrepId, usize)]) -> Result<Self> {
        let irreps = runs
            .iter()
            .flat_map(|&(id, m)| std::iter::repeat_n(id, m))
            .collect();
        Self::new(group, irreps)
    }

    pub fn trivial(group: Group, copies: usize) -> Self {
        Self {
            group,
            irreps: vec![IrrepId::TRIVIAL; copies],
        }
    }

    pub fn len(&self) -> usize {
        self.irreps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.irreps.is_empty()
    }

    pub fn irrep(&self, field: usize) -> Irrep {
        Irrep::new(self.group, self.irreps[field]).expect("validated at construction")
    }

    pub fn field_dims(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.irrep(i).dim).collect()
    }

    /// Start offset of every field in the flattened feature vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.field_dims()
            .into_iter()
            .map(|d| {
                let o = acc;
                acc += d;
                o
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.field_dims().iter().sum()
    }

    /// `ρ(g) = ⊕_i ψ_i(g)`.
    pub fn matrix(&self, g: &GroupElement) -> DMatrix<f64> {
        let blocks: Vec<_> = (0..self.len()).map(|i| self.irrep(i).matrix(g)).collect();
        direct_sum(&blocks)
    }

    pub fn concat(&self, other: &FieldType) -> FieldType {
        assert_eq!(self.group, other.group);
        let mut irreps = self.irreps.clone();
        irreps.extend_from_slice(&other.irreps);
        FieldType {
            group: self.group,
            irreps,
        }
    }
}
