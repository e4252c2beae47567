//! Compact subgroups of O(2) and their element algebra.
//!
//! An element is stored as a rotation angle plus a reflection flag. The flag
//! means "reflect about the x-axis, then rotate by `theta`", so the element
//! acts on the plane as `R(theta) * diag(1, -1)^reflect`. Composition follows
//! the semidirect-product law of `O(2) = C_2 ⋊ SO(2)`.
//!
//! The Haar measure is normalised to total mass one everywhere in this crate,
//! which turns every group integral into a mean over a sample grid.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-9;

/// Standard deviation (radians) of the extra samples drawn around the identity.
pub const NEAR_IDENTITY_STD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    Cyclic(u32),
    Dihedral(u32),
    SO2,
    O2,
}

/// A compact subgroup `H <= O(2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Group {
    kind: GroupKind,
}

impl Group {
    pub fn cyclic(n: u32) -> Self {
        assert!(n >= 1, "C_N needs N >= 1");
        Self {
            kind: GroupKind::Cyclic(n),
        }
    }

    pub fn dihedral(n: u32) -> Self {
        assert!(n >= 1, "D_N needs N >= 1");
        Self {
            kind: GroupKind::Dihedral(n),
        }
    }

    pub fn so2() -> Self {
        Self {
            kind: GroupKind::SO2,
        }
    }

    pub fn o2() -> Self {
        Self {
            kind: GroupKind::O2,
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    /// Number of elements, `None` for the continuous groups.
    pub fn order(&self) -> Option<usize> {
        match self.kind {
            GroupKind::Cyclic(n) => Some(n as usize),
            GroupKind::Dihedral(n) => Some(2 * n as usize),
            GroupKind::SO2 | GroupKind::O2 => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.order().is_some()
    }

    pub fn has_reflections(&self) -> bool {
        matches!(self.kind, GroupKind::Dihedral(_) | GroupKind::O2)
    }

    /// Rotation order `N` for the finite groups.
    pub fn rotation_order(&self) -> Option<u32> {
        match self.kind {
            GroupKind::Cyclic(n) | GroupKind::Dihedral(n) => Some(n),
            _ => None,
        }
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::identity()
    }

    /// Checks membership and snaps finite-group angles onto the exact grid value.
    pub fn validate(&self, g: GroupElement) -> Result<GroupElement> {
        if g.reflect && !self.has_reflections() {
            return Err(Error::NotInGroup {
                element: g,
                group: *self,
            });
        }
        match self.rotation_order() {
            None => Ok(GroupElement::new(g.theta, g.reflect)),
            Some(n) => {
                let steps = g.theta * n as f64 / TAU;
                let k = steps.round();
                if (steps - k).abs() > GRID_TOL * n as f64 {
                    return Err(Error::NotInGroup {
                        element: g,
                        group: *self,
                    });
                }
                Ok(self.grid_element(k as i64, g.reflect))
            }
        }
    }

    fn grid_element(&self, k: i64, reflect: bool) -> GroupElement {
        let n = self.rotation_order().expect("finite group") as i64;
        let k = k.rem_euclid(n);
        GroupElement {
            theta: TAU * k as f64 / n as f64,
            reflect,
        }
    }

    /// `g1 · g2` under `(θ1,f1)·(θ2,f2) = (θ1 + s(f1)θ2, f1 xor f2)`.
    pub fn compose(&self, g1: GroupElement, g2: GroupElement) -> Result<GroupElement> {
        let g1 = self.validate(g1)?;
        let g2 = self.validate(g2)?;
        let raw = g1.compose_raw(&g2);
        match self.rotation_order() {
            None => Ok(raw),
            Some(n) => {
                let k = (raw.theta * n as f64 / TAU).round() as i64;
                Ok(self.grid_element(k, raw.reflect))
            }
        }
    }

    pub fn inverse(&self, g: GroupElement) -> Result<GroupElement> {
        let g = self.validate(g)?;
        let inv = g.inverse();
        match self.rotation_order() {
            None => Ok(inv),
            Some(n) => {
                let k = (inv.theta * n as f64 / TAU).round() as i64;
                Ok(self.grid_element(k, inv.reflect))
            }
        }
    }

    /// Deterministic sampling grid, rotation coset first with ascending angle.
    ///
    /// Finite groups are enumerated exactly and ignore `n_per_coset`.
    pub fn sample_grid(&self, n_per_coset: usize) -> Vec<GroupElement> {
        let (n, reflections) = match self.kind {
            GroupKind::Cyclic(n) => (n as usize, false),
            GroupKind::Dihedral(n) => (n as usize, true),
            GroupKind::SO2 => (n_per_coset.max(1), false),
            GroupKind::O2 => (n_per_coset.max(1), true),
        };
        let cosets: &[bool] = if reflections { &[false, true] } else { &[false] };
        cosets
            .iter()
            .flat_map(|&reflect| {
                (0..n).map(move |k| GroupElement {
                    theta: TAU * k as f64 / n as f64,
                    reflect,
                })
            })
            .collect()
    }

    /// Extra rotations drawn from `N(0, 0.2)` around the identity.
    ///
    /// Finite groups return no samples.
    pub fn sample_near_identity(&self, count: usize, seed: u64) -> Vec<GroupElement> {
        if self.is_finite() || count == 0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, NEAR_IDENTITY_STD).expect("valid std");
        (0..count)
            .map(|_| GroupElement::new(normal.sample(&mut rng), false))
            .collect()
    }

    /// Draws an element from the normalised Haar measure.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        let reflect = self.has_reflections() && rng.random::<bool>();
        match self.rotation_order() {
            Some(n) => self.grid_element(rng.random_range(0..n as i64), reflect),
            None => GroupElement::new(rng.random::<f64>() * TAU, reflect),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GroupKind::Cyclic(n) => write!(f, "c{n}"),
            GroupKind::Dihedral(n) => write!(f, "d{n}"),
            GroupKind::SO2 => write!(f, "so2"),
            GroupKind::O2 => write!(f, "o2"),
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "so2" => return Ok(Self::so2()),
            "o2" => return Ok(Self::o2()),
            _ => {}
        }
        let parse_n = |rest: &str| rest.parse::<u32>().ok().filter(|&n| n >= 1);
        if let Some(n) = lower.strip_prefix('c').and_then(parse_n) {
            return Ok(Self::cyclic(n));
        }
        if let Some(n) = lower.strip_prefix('d').and_then(parse_n) {
            return Ok(Self::dihedral(n));
        }
        Err(Error::UnknownGroup(s.to_string()))
    }
}

impl TryFrom<String> for Group {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Group> for String {
    fn from(g: Group) -> String {
        g.to_string()
    }
}

/// A rotation angle in `[0, 2π)` plus an optional preceding reflection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub theta: f64,
    pub reflect: bool,
}

impl GroupElement {
    pub fn new(theta: f64, reflect: bool) -> Self {
        Self {
            theta: wrap_angle(theta),
            reflect,
        }
    }

    pub fn rotation(theta: f64) -> Self {
        Self::new(theta, false)
    }

    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            reflect: false,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        !self.reflect && angle_distance(self.theta, 0.0) <= tol
    }

    /// Composition without group-membership checks.
    pub fn compose_raw(&self, other: &GroupElement) -> GroupElement {
        let sign = if self.reflect { -1.0 } else { 1.0 };
        GroupElement::new(self.theta + sign * other.theta, self.reflect ^ other.reflect)
    }

    pub fn inverse(&self) -> GroupElement {
        if self.reflect {
            // (θ, true) is an involution: θ + (−θ) = 0.
            *self
        } else {
            GroupElement::new(-self.theta, false)
        }
    }

    /// Action on a point of the plane: `R(θ) · diag(1, −1)^reflect · x`.
    pub fn act(&self, x: [f64; 2]) -> [f64; 2] {
        let (px, py) = if self.reflect { (x[0], -x[1]) } else { (x[0], x[1]) };
        let (s, c) = self.theta.sin_cos();
        [c * px - s * py, s * px + c * py]
    }

    /// Signed angle in `(-π, π]`, convenient for plots centred on the identity.
    pub fn signed_theta(&self) -> f64 {
        if self.theta > PI {
            self.theta - TAU
        } else {
            self.theta
        }
    }
}

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Distance on the circle between two angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn same(a: GroupElement, b: GroupElement) -> bool {
        a.reflect == b.reflect && angle_distance(a.theta, b.theta) < 1e-12
    }

    #[test]
    fn rotation_addition() {
        let g = Group::so2();
        let a = GroupElement::rotation(PI / 2.0);
        assert!(same(g.compose(a, a).unwrap(), GroupElement::rotation(PI)));
    }

    #[test]
    fn reflection_negates_following_rotation() {
        let g = Group::o2();
        let theta = 0.7;
        let out = g
            .compose(GroupElement::new(0.0, true), GroupElement::rotation(theta))
            .unwrap();
        assert!(same(out, GroupElement::new(-theta, true)));
    }

    #[test]
    fn c4_inverse_pair() {
        let g = Group::cyclic(4);
        let out = g
            .compose(
                GroupElement::rotation(PI / 2.0),
                GroupElement::rotation(3.0 * PI / 2.0),
            )
            .unwrap();
        assert_eq!(out, GroupElement::identity());
    }

    #[test]
    fn off_grid_angle_rejected() {
        let g = Group::cyclic(4);
        let err = g.compose(GroupElement::rotation(0.3), GroupElement::identity());
        assert!(matches!(err, Err(Error::NotInGroup { .. })));
        let err = g.validate(GroupElement::new(0.0, true));
        assert!(matches!(err, Err(Error::NotInGroup { .. })));
    }

    #[test]
    fn inverse_of_reflection_is_itself() {
        let g = Group::o2();
        for &theta in &[0.0, 0.4, 2.0, 5.9] {
            let r = GroupElement::new(theta, true);
            assert!(same(g.inverse(r).unwrap(), r));
            // brute force: (θ,true)·(θ,true) = e
            assert!(g.compose(r, r).unwrap().is_identity(1e-12));
        }
        assert_eq!(g.inverse(GroupElement::identity()).unwrap(), GroupElement::identity());
        let r = GroupElement::rotation(1.0);
        assert!(same(g.inverse(r).unwrap(), GroupElement::rotation(TAU - 1.0)));
    }

    #[test]
    fn grids() {
        let c4 = Group::cyclic(4).sample_grid(17);
        assert_eq!(c4.len(), 4);
        for (k, e) in c4.iter().enumerate() {
            assert!((e.theta - k as f64 * PI / 2.0).abs() < 1e-15);
            assert!(!e.reflect);
        }
        let so2 = Group::so2().sample_grid(8);
        assert_eq!(so2.len(), 8);
        assert!((so2[3].theta - 3.0 * TAU / 8.0).abs() < 1e-15);

        let o2 = Group::o2().sample_grid(4);
        assert_eq!(o2.len(), 8);
        assert_eq!(o2.iter().filter(|e| e.reflect).count(), 4);
        assert!(o2[..4].iter().all(|e| !e.reflect));

        assert_eq!(Group::dihedral(4).sample_grid(1).len(), 8);
    }

    #[test]
    fn near_identity_samples() {
        assert!(Group::so2().sample_near_identity(0, 1).is_empty());
        assert!(Group::cyclic(4).sample_near_identity(100, 1).is_empty());
        let s = Group::so2().sample_near_identity(100, 7);
        assert_eq!(s.len(), 100);
        // 5 sigma
        assert!(s.iter().all(|e| !e.reflect && angle_distance(e.theta, 0.0) < 1.0));
        assert_eq!(s, Group::so2().sample_near_identity(100, 7));
    }

    #[test]
    fn group_names_round_trip() {
        for name in ["c1", "c2", "c4", "c8", "d1", "d4", "so2", "o2"] {
            let g: Group = name.parse().unwrap();
            assert_eq!(g.to_string(), name);
        }
        assert!("x3".parse::<Group>().is_err());
        assert!("c0".parse::<Group>().is_err());
        assert_eq!(Group::dihedral(3).order(), Some(6));
        assert_eq!(Group::o2().order(), None);
    }

    #[test]
    fn action_matches_composition() {
        let g = Group::o2();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = g.random_element(&mut rng);
            let b = g.random_element(&mut rng);
            let x = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let lhs = g.compose(a, b).unwrap().act(x);
            let rhs = a.act(b.act(x));
            assert!((lhs[0] - rhs[0]).abs() < 1e-12 && (lhs[1] - rhs[1]).abs() < 1e-12);
        }
    }
}
