//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a `DMatrix`; flat indices are column-major throughout.

use std::rc::Rc;

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant linear map on flattened values: `out[o] += v · in[i]`.
#[derive(Clone, Debug, Default)]
pub struct SparseMap {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, out: usize, input: usize, v: f64) {
        debug_assert!(out < self.rows * self.cols);
        self.entries.push((out, input, v));
    }

    pub fn apply(&self, input: &[f64]) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        let o = out.as_mut_slice();
        for &(r, c, v) in &self.entries {
            o[r] += v * input[c];
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Elu(Var),
    Sigmoid(Var),
    Square(Var),
    Powf(Var, f64),
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    Reshape(Var),
    Sparse(Var, Rc<SparseMap>),
    SelectCols(Var, Rc<Vec<usize>>),
    ScatterCols(Var, Rc<Vec<usize>>),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MeanRows(Var),
}

struct Node {
    value: Mat,
    op: Op,
    tracked: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if it did not influence the output.
    pub fn of(&self, v: Var, tape: &Tape) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| {
            let m = tape.value(v);
            Mat::zeros(m.nrows(), m.ncols())
        })
    }
}

fn check_same(a: &Mat, b: &Mat, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "scalar() on a non-scalar");
        m[0]
    }

    fn push(&mut self, value: Mat, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// A differentiable input.
    pub fn param(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Mat::from_element(1, 1, x))
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.constant(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        check_same(self.value(a), self.value(b), "add");
        let v = self.value(a) + self.value(b);
        let t = self.tracked(&[a, b]);
        self.push(v, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        check_same(self.value(a), self.value(b), "sub");
        let v = self.value(a) - self.value(b);
        let t = self.tracked(&[a, b]);
        self.push(v, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        check_same(self.value(a), self.value(b), "mul");
        let v = self.value(a).component_mul(self.value(b));
        let t = self.tracked(&[a, b]);
        self.push(v, Op::Mul(a, b), t)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        check_same(self.value(a), self.value(b), "div");
        let v = self.value(a).component_div(self.value(b));
        let t = self.tracked(&[a, b]);
        self.push(v, Op::Div(a, b), t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let t = self.tracked(&[a]);
        self.push(v, Op::Scale(a, s), t)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).add_scalar(s);
        let t = self.tracked(&[a]);
        self.push(v, Op::AddScalar(a), t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul: inner dimension mismatch"
        );
        let v = self.value(a) * self.value(b);
        let t = self.tracked(&[a, b]);
        self.push(v, Op::MatMul(a, b), t)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let t = self.tracked(&[a]);
        self.push(v, Op::Transpose(a), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let t = self.tracked(&[a]);
        self.push(v, Op::Exp(a), t)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let t = self.tracked(&[a]);
        self.push(v, Op::Log(a), t)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(elu);
        let t = self.tracked(&[a]);
        self.push(v, Op::Elu(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let t = self.tracked(&[a]);
        self.push(v, Op::Sigmoid(a), t)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let t = self.tracked(&[a]);
        self.push(v, Op::Square(a), t)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        let t = self.tracked(&[a]);
        self.push(v, Op::Powf(a, p), t)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.powf(a, 0.5)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_element(1, 1, self.value(a).sum());
        let t = self.tracked(&[a]);
        self.push(v, Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Mat::from_element(1, 1, self.value(a).mean());
        let t = self.tracked(&[a]);
        self.push(v, Op::Mean(a), t)
    }

    /// Largest entry; the gradient goes to the first maximiser.
    pub fn max(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (idx, best) = m
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                if x > bv {
                    (i, x)
                } else {
                    (bi, bv)
                }
            });
        let t = self.tracked(&[a]);
        self.push(Mat::from_element(1, 1, best), Op::Max(a, idx), t)
    }

    /// Column-major reinterpretation.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.len(), rows * cols, "reshape: size mismatch");
        let v = Mat::from_column_slice(rows, cols, m.as_slice());
        let t = self.tracked(&[a]);
        self.push(v, Op::Reshape(a), t)
    }

    pub fn sparse(&mut self, a: Var, map: Rc<SparseMap>) -> Var {
        let v = map.apply(self.value(a).as_slice());
        let t = self.tracked(&[a]);
        self.push(v, Op::Sparse(a, map), t)
    }

    /// `out[k] = a[idx[k]]` reshaped to `rows × cols`.
    pub fn gather(&mut self, a: Var, idx: &[usize], rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather: index count mismatch");
        let mut map = SparseMap::new(rows, cols);
        for (k, &i) in idx.iter().enumerate() {
            map.push(k, i, 1.0);
        }
        self.sparse(a, Rc::new(map))
    }

    /// `out[idx[k]] += a[k]` into a zero `rows × cols` matrix.
    pub fn scatter_add(&mut self, a: Var, idx: &[usize], rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), self.value(a).len(), "scatter_add: index count mismatch");
        let mut map = SparseMap::new(rows, cols);
        for (k, &i) in idx.iter().enumerate() {
            map.push(i, k, 1.0);
        }
        self.sparse(a, Rc::new(map))
    }

    pub fn select_cols(&mut self, a: Var, cols: Rc<Vec<usize>>) -> Var {
        let m = self.value(a);
        let v = m.select_columns(cols.iter());
        let t = self.tracked(&[a]);
        self.push(v, Op::SelectCols(a, cols), t)
    }

    /// Places column `k` of `a` at column `cols[k]` of a zero matrix with
    /// `width` columns, summing duplicates.
    pub fn scatter_cols(&mut self, a: Var, cols: Rc<Vec<usize>>, width: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.ncols(), cols.len(), "scatter_cols: column count mismatch");
        let mut v = Mat::zeros(m.nrows(), width);
        for (k, &c) in cols.iter().enumerate() {
            let mut dst = v.column_mut(c);
            dst += m.column(k);
        }
        let t = self.tracked(&[a]);
        self.push(v, Op::ScatterCols(a, cols), t)
    }

    /// Adds the `1 × D` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!((1, am.ncols()), bm.shape(), "add_row: shape mismatch");
        let mut v = am.clone();
        for mut r in v.row_iter_mut() {
            r += bm;
        }
        let t = self.tracked(&[a, b]);
        self.push(v, Op::AddRow(a, b), t)
    }

    /// Multiplies every row of `a` elementwise by the `1 × D` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!((1, am.ncols()), bm.shape(), "mul_row: shape mismatch");
        let mut v = am.clone();
        for mut r in v.row_iter_mut() {
            r.component_mul_assign(bm);
        }
        let t = self.tracked(&[a, b]);
        self.push(v, Op::MulRow(a, b), t)
    }

    /// Mean over rows, giving `1 × D`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = row_mat(self.value(a).row_mean().as_slice());
        let t = self.tracked(&[a]);
        self.push(v, Op::MeanRows(a), t)
    }

    /// `Σ a ⊙ b`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    /// Repeats a `1 × 1` value into a `rows × cols` matrix.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.value(a).len(), 1, "broadcast: expects a scalar");
        self.gather(a, &vec![0; rows * cols], rows, cols)
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let width: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut acc: Option<Var> = None;
        let mut start = 0;
        for &p in parts {
            let n = self.value(p).ncols();
            let placed = self.scatter_cols(p, Rc::new((start..start + n).collect()), width);
            start += n;
            acc = Some(match acc {
                Some(a) => self.add(a, placed),
                None => placed,
            });
        }
        acc.expect("concat_cols of nothing")
    }

    /// Gradients of the scalar `out` with respect to every tracked node.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).len(), 1, "backward from a non-scalar");
        self.backward_with(out, Mat::from_element(1, 1, 1.0))
    }

    pub fn backward_with(&self, out: Var, seed: Mat) -> Grads {
        let mut grads: Vec<Option<Mat>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => *e += d,
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                acc(*a, g.component_mul(val(*b)));
                acc(*b, g.component_mul(val(*a)));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g.component_div(bv));
                let db = -g.component_mul(&node.value).component_div(bv);
                acc(*b, db);
            }
            Op::Scale(a, s) => acc(*a, g * *s),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                acc(*a, g * val(*b).transpose());
                acc(*b, val(*a).transpose() * g);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Exp(a) => acc(*a, g.component_mul(&node.value)),
            Op::Log(a) => acc(*a, g.component_div(val(*a))),
            Op::Elu(a) => {
                let d = val(*a).map(|x| if x > 0.0 { 1.0 } else { x.exp() });
                acc(*a, g.component_mul(&d));
            }
            Op::Sigmoid(a) => {
                let d = node.value.map(|s| s * (1.0 - s));
                acc(*a, g.component_mul(&d));
            }
            Op::Square(a) => acc(*a, g.component_mul(val(*a)) * 2.0),
            Op::Powf(a, p) => {
                let d = val(*a).map(|x| p * x.powf(p - 1.0));
                acc(*a, g.component_mul(&d));
            }
            Op::Sum(a) => {
                let m = val(*a);
                acc(*a, Mat::from_element(m.nrows(), m.ncols(), g[0]));
            }
            Op::Mean(a) => {
                let m = val(*a);
                acc(*a, Mat::from_element(m.nrows(), m.ncols(), g[0] / m.len() as f64));
            }
            Op::Max(a, idx) => {
                let m = val(*a);
                let mut d = Mat::zeros(m.nrows(), m.ncols());
                d[*idx] = g[0];
                acc(*a, d);
            }
            Op::Reshape(a) => {
                let m = val(*a);
                acc(*a, Mat::from_column_slice(m.nrows(), m.ncols(), g.as_slice()));
            }
            Op::Sparse(a, map) => {
                let m = val(*a);
                let mut d = Mat::zeros(m.nrows(), m.ncols());
                let gs = g.as_slice();
                let ds = d.as_mut_slice();
                for &(o, i, v) in &map.entries {
                    ds[i] += v * gs[o];
                }
                acc(*a, d);
            }
            Op::SelectCols(a, cols) => {
                let m = val(*a);
                let mut d = Mat::zeros(m.nrows(), m.ncols());
                for (k, &c) in cols.iter().enumerate() {
                    let mut dst = d.column_mut(c);
                    dst += g.column(k);
                }
                acc(*a, d);
            }
            Op::ScatterCols(a, cols) => acc(*a, g.select_columns(cols.iter())),
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                acc(*b, row_mat(g.row_sum().as_slice()));
            }
            Op::MulRow(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                let mut da = g.clone();
                for mut r in da.row_iter_mut() {
                    r.component_mul_assign(bm);
                }
                acc(*a, da);
                acc(*b, row_mat(g.component_mul(am).row_sum().as_slice()));
            }
            Op::MeanRows(a) => {
                let m = val(*a);
                let n = m.nrows() as f64;
                let mut d = Mat::zeros(m.nrows(), m.ncols());
                for mut r in d.row_iter_mut() {
                    r.copy_from(&(g / n));
                }
                acc(*a, d);
            }
        }
    }
}

fn row_mat(v: &[f64]) -> Mat {
    Mat::from_row_slice(1, v.len(), v)
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Relative error used by every gradient check: `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error between tape gradients and central differences of
/// the scalar built by `f` from `inputs`.
pub fn gradcheck<F>(f: F, inputs: &[Mat], step: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    let eval = |xs: &[Mat]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        let o = f(&mut t, &vs);
        t.scalar(o)
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.of(*v, &tape);
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k][e] += step;
            let mut minus = inputs.to_vec();
            minus[k][e] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            worst = worst.max(relative_error(g[e], numeric));
        }
    }
    worst
}
