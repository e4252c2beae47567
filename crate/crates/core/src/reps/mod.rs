//! Real irreducible representations of the subgroups of O(2).
//!
//! Irreps are indexed by a reflection frequency `flip ∈ {0, 1}` and a
//! rotation frequency `freq`. Two-dimensional irreps evaluate to
//! `R(freq·θ) · diag(1, −1)^reflect`, matching the action of
//! [`GroupElement::act`] on the plane.
//!
//! Real irreps of SO(2) and C_N have redundant columns: the second column of
//! `R(kθ)` is the first one rotated by 90°. The endomorphism basis records
//! this and [`expand_columns`] / [`reduce_columns`] move between the full
//! matrix and its `d × n` non-redundant part.

mod cg;
mod field;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use cg::{decompose_tensor, CgBlock, CgDecomposition};
pub use field::{direct_sum, kron, unvec, vec_of, FieldType};

use crate::error::{Error, Result};
use crate::groups::{Group, GroupElement, GroupKind};

/// Index of an irrep: reflection frequency and rotation frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IrrepId {
    pub flip: u8,
    pub freq: u32,
}

impl IrrepId {
    pub const TRIVIAL: IrrepId = IrrepId { flip: 0, freq: 0 };

    pub const fn new(flip: u8, freq: u32) -> Self {
        Self { flip, freq }
    }

    pub fn is_trivial(&self) -> bool {
        *self == Self::TRIVIAL
    }
}

impl fmt::Display for IrrepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.flip, self.freq)
    }
}

impl FromStr for IrrepId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse irrep `{s}`; expected `flip,freq`"));
        let (a, b) = s.trim().split_once(',').ok_or_else(bad)?;
        let flip: u8 = a.trim().parse().map_err(|_| bad())?;
        let freq: u32 = b.trim().parse().map_err(|_| bad())?;
        if flip > 1 {
            return Err(bad());
        }
        Ok(Self { flip, freq })
    }
}

/// Whether `id` names an irrep of `group`.
pub fn is_valid(group: &Group, id: IrrepId) -> bool {
    if id.flip > 1 {
        return false;
    }
    match group.kind() {
        GroupKind::SO2 => id.flip == 0,
        GroupKind::Cyclic(n) => id.flip == 0 && id.freq <= n / 2,
        GroupKind::O2 => id.flip == 1 || id.freq == 0,
        GroupKind::Dihedral(n) => {
            if 2 * id.freq == n {
                true
            } else if id.freq == 0 {
                true
            } else {
                id.flip == 1 && 2 * id.freq < n
            }
        }
    }
}

fn dimension(group: &Group, id: IrrepId) -> usize {
    if id.freq == 0 {
        return 1;
    }
    match group.rotation_order() {
        Some(n) if 2 * id.freq == n => 1,
        _ => 2,
    }
}

/// An irrep of a specific group, with its endomorphism basis.
#[derive(Clone, Debug)]
pub struct Irrep {
    pub group: Group,
    pub id: IrrepId,
    pub dim: usize,
    endo: Vec<DMatrix<f64>>,
}

impl Irrep {
    pub fn new(group: Group, id: IrrepId) -> Result<Self> {
        if !is_valid(&group, id) {
            return Err(Error::InvalidIrrep { id, group });
        }
        let dim = dimension(&group, id);
        let endo = if dim == 2 && !group.has_reflections() {
            vec![
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            ]
        } else {
            vec![DMatrix::identity(dim, dim)]
        };
        Ok(Self {
            group,
            id,
            dim,
            endo,
        })
    }

    /// Multiplicity `[0(ii)]` of the trivial irrep in `ψ ⊗ ψ`.
    pub fn endo_multiplicity(&self) -> usize {
        self.endo.len()
    }

    /// Number of non-redundant columns `d / [0(ii)]`.
    pub fn n_cols(&self) -> usize {
        self.dim / self.endo.len()
    }

    pub fn endomorphism_basis(&self) -> &[DMatrix<f64>] {
        &self.endo
    }

    pub fn matrix(&self, g: &GroupElement) -> DMatrix<f64> {
        if self.dim == 1 {
            return DMatrix::from_element(1, 1, self.scalar(g));
        }
        let k = self.id.freq as f64;
        let (s, c) = (k * g.theta).sin_cos();
        if g.reflect {
            DMatrix::from_row_slice(2, 2, &[c, s, s, -c])
        } else {
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        }
    }

    fn scalar(&self, g: &GroupElement) -> f64 {
        let sign = if self.id.flip == 1 && g.reflect { -1.0 } else { 1.0 };
        if self.id.freq == 0 {
            sign
        } else {
            // N-even one-dimensional irrep: cos(N/2 · θ) = ±1 on the grid.
            sign * (self.id.freq as f64 * g.theta).cos().round()
        }
    }

    /// Full `d × d` matrix from its non-redundant `d × n` columns.
    pub fn expand_columns(&self, reduced: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n_cols();
        if reduced.shape() != (self.dim, n) {
            return Err(shape_err((self.dim, n), reduced.shape()));
        }
        let mut full = DMatrix::zeros(self.dim, self.dim);
        for (r, c) in self.endo.iter().enumerate() {
            full.columns_mut(r * n, n).copy_from(&(c * reduced));
        }
        Ok(full)
    }

    /// Inverse of [`Irrep::expand_columns`] on its image; for other matrices
    /// it averages the components along each endomorphism-basis element.
    pub fn reduce_columns(&self, full: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if full.shape() != (self.dim, self.dim) {
            return Err(shape_err((self.dim, self.dim), full.shape()));
        }
        let n = self.n_cols();
        let m = self.endo.len();
        let mut out = DMatrix::zeros(self.dim, n);
        for (r, c) in self.endo.iter().enumerate() {
            out += c.transpose() * full.columns(r * n, n);
        }
        Ok(out / m as f64)
    }

    /// Non-redundant columns `ψ̄(g)`.
    pub fn reduced_matrix(&self, g: &GroupElement) -> DMatrix<f64> {
        self.matrix(g).columns(0, self.n_cols()).into_owned()
    }
}

fn shape_err(expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Shape {
        expected: format!("{}x{}", expected.0, expected.1),
        got: format!("{}x{}", got.0, got.1),
    }
}

/// Convenience wrapper around [`Irrep::matrix`].
pub fn irrep_matrix(group: &Group, id: IrrepId, g: &GroupElement) -> Result<DMatrix<f64>> {
    Ok(Irrep::new(*group, id)?.matrix(g))
}

/// Highest rotation frequency carried by an irrep of `group`, if bounded.
pub fn freq_cap(group: &Group) -> Option<u32> {
    group.rotation_order().map(|n| n / 2)
}

/// All irreps with `freq <= max_freq`, ordered by `flip` then `freq`.
pub fn irreps_up_to(group: &Group, max_freq: u32) -> Vec<Irrep> {
    let top = freq_cap(group).map_or(max_freq, |c| c.min(max_freq));
    (0..=1u8)
        .flat_map(|flip| (0..=top).map(move |freq| IrrepId::new(flip, freq)))
        .filter(|id| is_valid(group, *id))
        .map(|id| Irrep::new(*group, id).expect("validated above"))
        .collect()
}

/// Every irrep of a finite group; for continuous groups, those up to `max_freq`.
pub fn all_irreps(group: &Group, max_freq: u32) -> Vec<Irrep> {
    irreps_up_to(group, max_freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn groups() -> Vec<Group> {
        vec![
            Group::cyclic(1),
            Group::cyclic(2),
            Group::cyclic(4),
            Group::cyclic(5),
            Group::cyclic(8),
            Group::dihedral(1),
            Group::dihedral(2),
            Group::dihedral(4),
            Group::dihedral(5),
            Group::so2(),
            Group::o2(),
        ]
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    #[test]
    fn quarter_turn_matrix() {
        let m = irrep_matrix(&Group::so2(), IrrepId::new(0, 1), &GroupElement::rotation(PI / 2.0))
            .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(max_abs(&(m - expected)) < 1e-15);
    }

    #[test]
    fn reflection_irrep_sign() {
        let m = irrep_matrix(&Group::o2(), IrrepId::new(1, 0), &GroupElement::new(1.3, true))
            .unwrap();
        assert_eq!(m[(0, 0)], -1.0);
    }

    #[test]
    fn identity_maps_to_identity() {
        for g in groups() {
            for irrep in irreps_up_to(&g, 4) {
                let m = irrep.matrix(&GroupElement::identity());
                assert!(max_abs(&(m - DMatrix::identity(irrep.dim, irrep.dim))) < 1e-15);
            }
        }
    }

    #[test]
    fn enumerations() {
        let ids = |g: Group, k| -> Vec<IrrepId> { irreps_up_to(&g, k).iter().map(|i| i.id).collect() };
        assert_eq!(
            ids(Group::so2(), 2),
            vec![IrrepId::new(0, 0), IrrepId::new(0, 1), IrrepId::new(0, 2)]
        );
        assert_eq!(
            ids(Group::o2(), 1),
            vec![IrrepId::new(0, 0), IrrepId::new(1, 0), IrrepId::new(1, 1)]
        );
        let c4 = irreps_up_to(&Group::cyclic(4), 3);
        assert_eq!(c4.iter().map(|i| i.id.freq).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(c4[2].dim, 1);
        let d4 = ids(Group::dihedral(4), 4);
        assert_eq!(
            d4,
            vec![
                IrrepId::new(0, 0),
                IrrepId::new(0, 2),
                IrrepId::new(1, 0),
                IrrepId::new(1, 1),
                IrrepId::new(1, 2)
            ]
        );
        assert!(Irrep::new(Group::o2(), IrrepId::new(0, 1)).is_err());
        assert!(Irrep::new(Group::cyclic(4), IrrepId::new(0, 3)).is_err());
    }

    #[test]
    fn endomorphism_bases() {
        let so2 = Irrep::new(Group::so2(), IrrepId::new(0, 3)).unwrap();
        assert_eq!(so2.endo_multiplicity(), 2);
        assert_eq!(so2.n_cols(), 1);
        assert_eq!(so2.endomorphism_basis()[1], DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        for irrep in irreps_up_to(&Group::o2(), 3) {
            assert_eq!(irrep.endomorphism_basis(), &[DMatrix::identity(irrep.dim, irrep.dim)]);
        }
        let triv = Irrep::new(Group::so2(), IrrepId::TRIVIAL).unwrap();
        assert_eq!(triv.endomorphism_basis(), &[DMatrix::identity(1, 1)]);
        // every basis element commutes with the irrep
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in groups() {
            for irrep in irreps_up_to(&g, 4) {
                for _ in 0..10 {
                    let h = g.random_element(&mut rng);
                    let m = irrep.matrix(&h);
                    for c in irrep.endomorphism_basis() {
                        assert!(max_abs(&(c * &m - &m * c)) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn homomorphism_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in groups() {
            for irrep in irreps_up_to(&g, 6) {
                for _ in 0..100 {
                    let a = g.random_element(&mut rng);
                    let b = g.random_element(&mut rng);
                    let ab = g.compose(a, b).unwrap();
                    let lhs = irrep.matrix(&ab);
                    let rhs = irrep.matrix(&a) * irrep.matrix(&b);
                    assert!(max_abs(&(lhs - rhs)) <= 1e-12, "{g} {}", irrep.id);
                    let m = irrep.matrix(&a);
                    let eye = DMatrix::identity(irrep.dim, irrep.dim);
                    assert!(max_abs(&(m.transpose() * &m - eye)) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn column_expansion() {
        let irrep = Irrep::new(Group::so2(), IrrepId::new(0, 1)).unwrap();
        let t: f64 = 0.83;
        let col = DMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()]);
        let full = irrep.expand_columns(&col).unwrap();
        let rot = irrep.matrix(&GroupElement::rotation(t));
        assert!(max_abs(&(full - rot)) < 1e-15);

        let o2 = Irrep::new(Group::o2(), IrrepId::new(1, 2)).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(o2.expand_columns(&m).unwrap(), m);
        assert_eq!(o2.reduce_columns(&m).unwrap(), m);

        // a·I + b·J commutes with SO(2) irreps and survives the round trip
        let (a, b) = (0.3, -1.7);
        let comm = DMatrix::from_row_slice(2, 2, &[a, -b, b, a]);
        let back = irrep.expand_columns(&irrep.reduce_columns(&comm).unwrap()).unwrap();
        assert!(max_abs(&(back - comm)) < 1e-15);

        assert!(irrep.expand_columns(&DMatrix::zeros(2, 2)).is_err());
        assert!(irrep.reduce_columns(&DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn parse_irrep_id() {
        assert_eq!("1,3".parse::<IrrepId>().unwrap(), IrrepId::new(1, 3));
        assert!("2,0".parse::<IrrepId>().is_err());
        assert!("abc".parse::<IrrepId>().is_err());
    }
}
