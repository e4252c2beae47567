//! Differentiable layers: projected linear maps, gated and Fourier
//! nonlinearities, and the field-norm normalisation.

use std::rc::Rc;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fourier::{coeff_len, layout, FourierCoeffs, SamplingPlan};
use crate::groups::Group;
use crate::kernelproj::{cjj_from_coeffs, LinearLayout, Mode, Term};
use crate::reps::{decompose_tensor, Irrep, IrrepId, FieldType};

use super::tape::{Mat, SparseMap, Tape, Var};

/// Weights of one irrep `j′` in probabilistic or preliminary mode:
/// `M += place(vec(c^{0j′} · W))` with `W` gathered from the flat weights.
#[derive(Clone, Debug)]
struct IrrepPart {
    irrep: IrrepId,
    dim: usize,
    cols: usize,
    weight_idx: Vec<usize>,
    /// `λ̂ → vec c^{0j′}`; probabilistic mode only.
    coeff_map: Option<Rc<SparseMap>>,
    place: Rc<SparseMap>,
}

#[derive(Clone, Debug)]
enum LinearKind {
    Equivariant(Rc<SparseMap>),
    Partial(Vec<IrrepPart>),
}

/// A linear map between field types whose matrix is assembled on the tape
/// from flat weights and, depending on the mode, the density coefficients or
/// free `c^{0j′}` matrices.
#[derive(Clone, Debug)]
pub struct LinearOp {
    pub layout: LinearLayout,
    pub bandlimit: u32,
    kind: LinearKind,
}

impl LinearOp {
    /// `bandlimit` is that of the density; irreps above it are dropped in
    /// probabilistic mode.
    pub fn new(field_in: &FieldType, field_out: &FieldType, mode: Mode, bandlimit: u32) -> Result<Self> {
        let layout = LinearLayout::new(field_in, field_out, mode)?;
        let group = layout.group;
        let (oin, oout) = (field_in.offsets(), field_out.offsets());
        let d_out = field_out.dim();
        let d_in = field_in.dim();
        let flat = |row: usize, col: usize| col * d_out + row;
        let kind = match mode {
            Mode::Equivariant => {
                let mut map = SparseMap::new(d_out, d_in);
                for p in &layout.pairs {
                    let (jl, jo) = (field_in.irreps[p.in_field], field_out.irreps[p.out_field]);
                    let dec = decompose_tensor(&group, jl, jo)?;
                    let d_j = Irrep::new(group, jo)?.dim;
                    for &(term, off, _) in &p.layout.terms {
                        let Term::Endo { block, .. } = term else { unreachable!() };
                        // Point basis: j is trivial, so c_r = [1].
                        let cg = &dec.cg[block].coeffs;
                        for e in 0..cg.ncols() {
                            let v = cg[(0, e)];
                            if v != 0.0 {
                                let (row, col) = (e % d_j, e / d_j);
                                map.push(flat(oout[p.out_field] + row, oin[p.in_field] + col), p.offset + off, v);
                            }
                        }
                    }
                }
                LinearKind::Equivariant(Rc::new(map))
            }
            Mode::Probabilistic | Mode::Preliminary => {
                let mut parts: Vec<IrrepPart> = Vec::new();
                let mut places: Vec<SparseMap> = Vec::new();
                for p in &layout.pairs {
                    let (jl, jo) = (field_in.irreps[p.in_field], field_out.irreps[p.out_field]);
                    let dec = decompose_tensor(&group, jl, jo)?;
                    let d_j = Irrep::new(group, jo)?.dim;
                    for &(term, off, len) in &p.layout.terms {
                        let Term::Pair { block, .. } = term else { unreachable!() };
                        let irrep = dec.cg[block].irrep;
                        if mode == Mode::Probabilistic && irrep.freq > bandlimit {
                            continue;
                        }
                        let k = match parts.iter().position(|q| q.irrep == irrep) {
                            Some(k) => k,
                            None => {
                                parts.push(IrrepPart {
                                    irrep,
                                    dim: len,
                                    cols: 0,
                                    weight_idx: Vec::new(),
                                    coeff_map: None,
                                    place: Rc::new(SparseMap::default()),
                                });
                                places.push(SparseMap::new(d_out, d_in));
                                parts.len() - 1
                            }
                        };
                        let t = parts[k].cols;
                        parts[k].cols += 1;
                        parts[k].weight_idx.extend(p.offset + off..p.offset + off + len);
                        let cg = &dec.cg[block].coeffs;
                        for a in 0..len {
                            for e in 0..cg.ncols() {
                                let v = cg[(a, e)];
                                if v != 0.0 {
                                    let (row, col) = (e % d_j, e / d_j);
                                    places[k].push(
                                        flat(oout[p.out_field] + row, oin[p.in_field] + col),
                                        t * len + a,
                                        v,
                                    );
                                }
                            }
                        }
                    }
                }
                for (part, place) in parts.iter_mut().zip(places) {
                    part.place = Rc::new(place);
                    if mode == Mode::Probabilistic {
                        part.coeff_map = Some(Rc::new(coeff_map(group, bandlimit, part.irrep)?));
                    }
                }
                parts.sort_by_key(|p| p.irrep);
                LinearKind::Partial(parts)
            }
        };
        Ok(Self {
            layout,
            bandlimit,
            kind,
        })
    }

    pub fn mode(&self) -> Mode {
        self.layout.mode
    }

    pub fn n_weights(&self) -> usize {
        self.layout.n_weights
    }

    pub fn fan_in(&self) -> usize {
        self.layout.field_in.dim()
    }

    /// Irreps `j′` with a free `c^{0j′}` in preliminary mode, in parameter order.
    pub fn preliminary_irreps(&self) -> Vec<IrrepId> {
        match (&self.kind, self.mode()) {
            (LinearKind::Partial(parts), Mode::Preliminary) => parts.iter().map(|p| p.irrep).collect(),
            _ => Vec::new(),
        }
    }

    /// Entries drawn iid from `N(0, 1/fan_in)`.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let std = 1.0 / (self.fan_in().max(1) as f64).sqrt();
        (0..self.n_weights())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `d_out × d_in` matrix. `coeffs` is `λ̂` (`C × 1`) in probabilistic
    /// mode; `cjj` holds one matrix per [`LinearOp::preliminary_irreps`].
    pub fn matrix_var(&self, tape: &mut Tape, weights: Var, coeffs: Option<Var>, cjj: &[Var]) -> Result<Var> {
        let (d_out, d_in) = (self.layout.field_out.dim(), self.layout.field_in.dim());
        match &self.kind {
            LinearKind::Equivariant(map) => {
                let m = tape.sparse(weights, map.clone());
                Ok(m)
            }
            LinearKind::Partial(parts) => {
                let mut acc: Option<Var> = None;
                for (k, part) in parts.iter().enumerate() {
                    let c = match self.mode() {
                        Mode::Probabilistic => {
                            let coeffs = coeffs
                                .ok_or_else(|| Error::Config("probabilistic layer needs a likelihood".into()))?;
                            let map = part.coeff_map.clone().expect("built for probabilistic mode");
                            tape.sparse(coeffs, map)
                        }
                        _ => *cjj.get(k).ok_or_else(|| Error::Shape {
                            expected: format!("{} c matrices", parts.len()),
                            got: cjj.len().to_string(),
                        })?,
                    };
                    let w = tape.gather(weights, &part.weight_idx, part.dim, part.cols);
                    let v = tape.matmul(c, w);
                    let placed = tape.sparse(v, part.place.clone());
                    acc = Some(match acc {
                        Some(a) => tape.add(a, placed),
                        None => placed,
                    });
                }
                Ok(match acc {
                    Some(a) => a,
                    None => tape.constant(Mat::zeros(d_out, d_in)),
                })
            }
        }
    }

    /// Plain-value form of [`LinearOp::matrix_var`].
    pub fn matrix(&self, weights: &[f64], coeffs: Option<&[f64]>, cjj: &[DMatrix<f64>]) -> Result<Mat> {
        let mut tape = Tape::new();
        let w = tape.constant(Mat::from_column_slice(weights.len(), 1, weights));
        let c = coeffs.map(|c| tape.constant(Mat::from_column_slice(c.len(), 1, c)));
        let cv: Vec<Var> = cjj.iter().map(|m| tape.constant(m.clone())).collect();
        let m = self.matrix_var(&mut tape, w, c, &cv)?;
        Ok(tape.value(m).clone())
    }
}

/// Linear map `λ̂ ↦ vec c^{0j′}`, built column by column from unit coefficients.
fn coeff_map(group: Group, bandlimit: u32, irrep: IrrepId) -> Result<SparseMap> {
    let n = coeff_len(&group, bandlimit);
    let d = Irrep::new(group, irrep)?.dim;
    let mut map = SparseMap::new(d, d);
    for t in 0..n {
        let mut unit = vec![0.0; n];
        unit[t] = 1.0;
        let c = cjj_from_coeffs(&FourierCoeffs::from_flat(group, bandlimit, unit)?, IrrepId::TRIVIAL, irrep)?;
        for (k, v) in c.iter().enumerate() {
            if v.abs() > 1e-15 {
                map.push(k, t, *v);
            }
        }
    }
    Ok(map)
}

/// Columns belonging to trivial fields.
pub fn trivial_columns(field: &FieldType) -> Vec<usize> {
    let offs = field.offsets();
    field
        .irreps
        .iter()
        .enumerate()
        .filter(|(_, id)| id.is_trivial())
        .map(|(i, _)| offs[i])
        .collect()
}

/// `y + b` on the trivial columns of `field`; `bias` is `1 × n_trivial`.
pub fn add_trivial_bias(tape: &mut Tape, y: Var, bias: Var, field: &FieldType) -> Var {
    let cols = Rc::new(trivial_columns(field));
    if cols.is_empty() {
        return y;
    }
    let row = tape.scatter_cols(bias, cols, field.dim());
    tape.add_row(y, row)
}

/// Gated nonlinearity over a hidden field type. The linear layer before it
/// outputs `hidden ⊕ trivial^{n_gates}`: trivial fields go through ELU and
/// every other field is scaled by the sigmoid of its own gate.
#[derive(Clone, Debug)]
pub struct Gate {
    pub hidden: FieldType,
    pub n_gates: usize,
    trivial_cols: Rc<Vec<usize>>,
    gated_cols: Rc<Vec<usize>>,
    /// Gate column (within the gate block) for every gated column.
    gate_of_col: Rc<Vec<usize>>,
}

impl Gate {
    pub fn new(hidden: FieldType) -> Self {
        let offs = hidden.offsets();
        let mut trivial_cols = Vec::new();
        let mut gated_cols = Vec::new();
        let mut gate_of_col = Vec::new();
        let mut n_gates = 0;
        for (i, id) in hidden.irreps.iter().enumerate() {
            let d = hidden.irrep(i).dim;
            if id.is_trivial() {
                trivial_cols.push(offs[i]);
            } else {
                for c in 0..d {
                    gated_cols.push(offs[i] + c);
                    gate_of_col.push(n_gates);
                }
                n_gates += 1;
            }
        }
        Self {
            hidden,
            n_gates,
            trivial_cols: Rc::new(trivial_cols),
            gated_cols: Rc::new(gated_cols),
            gate_of_col: Rc::new(gate_of_col),
        }
    }

    /// Output type of the preceding linear layer.
    pub fn input_field(&self) -> FieldType {
        self.hidden.concat(&FieldType::trivial(self.hidden.group, self.n_gates))
    }

    /// `features` is `B × dim(hidden)`, `gates` is `B × n_gates`.
    pub fn apply(&self, tape: &mut Tape, features: Var, gates: Var) -> Result<Var> {
        let got = tape.value(gates).ncols();
        if got != self.n_gates {
            return Err(Error::GateCount {
                gates: got,
                fields: self.n_gates,
            });
        }
        let width = self.hidden.dim();
        let triv = tape.select_cols(features, self.trivial_cols.clone());
        let triv = tape.elu(triv);
        let mut out = tape.scatter_cols(triv, self.trivial_cols.clone(), width);
        if !self.gated_cols.is_empty() {
            let g = tape.select_cols(gates, self.gate_of_col.clone());
            let g = tape.sigmoid(g);
            let v = tape.select_cols(features, self.gated_cols.clone());
            let v = tape.mul(v, g);
            let v = tape.scatter_cols(v, self.gated_cols.clone(), width);
            out = tape.add(out, v);
        }
        Ok(out)
    }

    /// Splits the combined linear output and applies the gate.
    pub fn apply_combined(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let width = self.hidden.dim();
        let total = tape.value(y).ncols();
        if total != width + self.n_gates {
            return Err(Error::GateCount {
                gates: total.saturating_sub(width),
                fields: self.n_gates,
            });
        }
        let features = tape.select_cols(y, Rc::new((0..width).collect()));
        let gates = tape.select_cols(y, Rc::new((width..total).collect()));
        self.apply(tape, features, gates)
    }
}

/// Field type of one band-limited function on the group: every Fourier
/// block contributes one field per column.
pub fn fourier_channel(group: Group, max_freq: u32) -> Vec<IrrepId> {
    layout(&group, max_freq)
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.id, b.cols))
        .collect()
}

/// `f ↦ FT(ELU(IFT f))` applied to each channel of a field made of
/// [`fourier_channel`] copies.
#[derive(Clone, Debug)]
pub struct FourierElu {
    pub field: FieldType,
    pub channels: usize,
    pub plan: Arc<SamplingPlan>,
    coeffs: usize,
    perm: Rc<Vec<usize>>,
    inverse: Rc<Vec<usize>>,
}

impl FourierElu {
    pub fn new(plan: Arc<SamplingPlan>, channels: usize) -> Result<Self> {
        let group = plan.group;
        let channel = fourier_channel(group, plan.bandlimit);
        let irreps: Vec<IrrepId> = (0..channels).flat_map(|_| channel.iter().copied()).collect();
        let field = FieldType::new(group, irreps)?;
        let c = plan.coeff_len();
        // Coefficient-major order so that a column-major reshape stacks channels.
        let mut perm = vec![0; c * channels];
        let mut inverse = vec![0; c * channels];
        for ch in 0..channels {
            for k in 0..c {
                perm[k * channels + ch] = ch * c + k;
                inverse[ch * c + k] = k * channels + ch;
            }
        }
        Ok(Self {
            field,
            channels,
            plan,
            coeffs: c,
            perm: Rc::new(perm),
            inverse: Rc::new(inverse),
        })
    }

    pub fn apply(&self, tape: &mut Tape, y: Var) -> Var {
        self.apply_with(tape, y, |t, v| t.elu(v))
    }

    /// Same as [`FourierElu::apply`] with an arbitrary pointwise map.
    pub fn apply_with<F>(&self, tape: &mut Tape, y: Var, pointwise: F) -> Var
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let b = tape.value(y).nrows();
        let x = tape.select_cols(y, self.perm.clone());
        let x = tape.reshape(x, b * self.channels, self.coeffs);
        let ift_t = tape.constant(self.plan.ift.transpose());
        let ft_t = tape.constant(self.plan.ft.transpose());
        let s = tape.matmul(x, ift_t);
        let s = pointwise(tape, s);
        let back = tape.matmul(s, ft_t);
        let back = tape.reshape(back, b, self.coeffs * self.channels);
        tape.select_cols(back, self.inverse.clone())
    }
}

/// Divides every field by the root of its batch mean squared norm and
/// multiplies by a learnable positive scale `exp(s)`.
#[derive(Clone, Debug)]
pub struct IidNorm {
    pub field: FieldType,
    membership: Mat,
}

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

impl IidNorm {
    pub fn new(field: FieldType) -> Self {
        let offs = field.offsets();
        let mut membership = Mat::zeros(field.dim(), field.len());
        for (i, &o) in offs.iter().enumerate() {
            for c in 0..field.irrep(i).dim {
                membership[(o + c, i)] = 1.0;
            }
        }
        Self { field, membership }
    }

    pub fn n_fields(&self) -> usize {
        self.field.len()
    }

    /// Returns the normalised features and the batch mean squared field
    /// norms. With `running` set, those statistics are used instead of the
    /// batch ones.
    pub fn apply(&self, tape: &mut Tape, y: Var, log_scale: Var, running: Option<&[f64]>) -> (Var, Vec<f64>) {
        let p = tape.constant(self.membership.clone());
        let pt = tape.constant(self.membership.transpose());
        let sq = tape.square(y);
        let per_field = tape.matmul(sq, p);
        let ms = tape.mean_rows(per_field);
        let batch_ms = tape.value(ms).as_slice().to_vec();
        let ms = match running {
            Some(r) => tape.constant(Mat::from_row_slice(1, r.len(), r)),
            None => ms,
        };
        let shifted = tape.add_scalar(ms, NORM_EPS);
        let inv = tape.powf(shifted, -0.5);
        let scale = tape.exp(log_scale);
        let factor = tape.mul(inv, scale);
        let expanded = tape.matmul(factor, pt);
        (tape.mul_row(y, expanded), batch_ms)
    }
}
