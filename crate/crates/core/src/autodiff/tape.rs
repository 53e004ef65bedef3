//! Scalar expression tape with reverse-mode and forward-over-reverse replay.
//!
//! An expression is recorded once through [`Tape::record`], which evaluates
//! it at the supplied inputs. The recorded op list can then be replayed at
//! new inputs without allocation: [`Tape::eval`] for values,
//! [`Tape::gradient`] for a reverse sweep, and [`Tape::hvp`] for a
//! Hessian-vector product (tangent sweep forward, second-order adjoint sweep
//! backward).

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Input(u32),
    Const(f64),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Powf(u32, f64),
    Pow(u32, u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Relu(u32),
}

impl Op {
    fn operands(&self) -> (Option<u32>, Option<u32>) {
        match *self {
            Op::Input(_) | Op::Const(_) => (None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Pow(a, b) => {
                (Some(a), Some(b))
            }
            Op::Neg(a) | Op::Powf(a, _) | Op::Exp(a) | Op::Ln(a) | Op::Sqrt(a) | Op::Relu(a) => {
                (Some(a), None)
            }
        }
    }
}

/// Local value and partials of one node: value, first partials with respect
/// to operands a and b, and second partials (aa, ab, bb).
#[derive(Debug, Clone, Copy, Default)]
struct Local {
    v: f64,
    pa: f64,
    pb: f64,
    paa: f64,
    pab: f64,
    pbb: f64,
}

fn local(op: Op, inputs: &[f64], vals: &[f64]) -> std::result::Result<Local, String> {
    let val = |i: u32| vals[i as usize];
    let mut l = Local::default();
    match op {
        Op::Input(k) => l.v = inputs[k as usize],
        Op::Const(c) => l.v = c,
        Op::Add(a, b) => {
            l.v = val(a) + val(b);
            l.pa = 1.0;
            l.pb = 1.0;
        }
        Op::Sub(a, b) => {
            l.v = val(a) - val(b);
            l.pa = 1.0;
            l.pb = -1.0;
        }
        Op::Mul(a, b) => {
            let (x, y) = (val(a), val(b));
            l.v = x * y;
            l.pa = y;
            l.pb = x;
            l.pab = 1.0;
        }
        Op::Div(a, b) => {
            let (x, y) = (val(a), val(b));
            if y == 0.0 {
                return Err("division by zero".into());
            }
            l.v = x / y;
            l.pa = 1.0 / y;
            l.pb = -x / (y * y);
            l.pab = -1.0 / (y * y);
            l.pbb = 2.0 * x / (y * y * y);
        }
        Op::Neg(_) => {
            l.v = -vals[op.operands().0.unwrap() as usize];
            l.pa = -1.0;
        }
        Op::Powf(a, c) => {
            let x = val(a);
            if x <= 0.0 && c.fract() != 0.0 {
                return Err(format!("non-integer power {c} of non-positive value {x}"));
            }
            l.v = x.powf(c);
            l.pa = c * x.powf(c - 1.0);
            l.paa = c * (c - 1.0) * x.powf(c - 2.0);
        }
        Op::Pow(a, b) => {
            let (x, y) = (val(a), val(b));
            if x <= 0.0 {
                return Err(format!("pow with non-positive base {x}"));
            }
            let lx = x.ln();
            l.v = x.powf(y);
            l.pa = y * x.powf(y - 1.0);
            l.pb = l.v * lx;
            l.paa = y * (y - 1.0) * x.powf(y - 2.0);
            l.pab = x.powf(y - 1.0) * (1.0 + y * lx);
            l.pbb = l.v * lx * lx;
        }
        Op::Exp(a) => {
            l.v = val(a).exp();
            l.pa = l.v;
            l.paa = l.v;
        }
        Op::Ln(a) => {
            let x = val(a);
            if x <= 0.0 {
                return Err(format!("log of non-positive value {x}"));
            }
            l.v = x.ln();
            l.pa = 1.0 / x;
            l.paa = -1.0 / (x * x);
        }
        Op::Sqrt(a) => {
            let x = val(a);
            if x <= 0.0 {
                return Err(format!("sqrt of non-positive value {x}"));
            }
            l.v = x.sqrt();
            l.pa = 0.5 / l.v;
            l.paa = -0.25 / (l.v * x);
        }
        Op::Relu(a) => {
            let x = val(a);
            // derivative at exactly zero is zero
            if x > 0.0 {
                l.v = x;
                l.pa = 1.0;
            }
        }
    }
    Ok(l)
}

/// Recording context handed to the closure passed to [`Tape::record`].
pub struct Recorder {
    ops: RefCell<Vec<Op>>,
    vals: RefCell<Vec<f64>>,
    inputs: Vec<f64>,
    error: RefCell<Option<String>>,
}

/// Handle to a recorded node. Arithmetic on handles records new nodes.
#[derive(Clone, Copy)]
pub struct Var<'r> {
    rec: &'r Recorder,
    idx: u32,
}

impl Recorder {
    fn push(&self, op: Op) -> u32 {
        let mut ops = self.ops.borrow_mut();
        let mut vals = self.vals.borrow_mut();
        let l = match local(op, &self.inputs, &vals) {
            Ok(l) => l,
            Err(msg) => {
                self.error.borrow_mut().get_or_insert(msg);
                Local {
                    v: f64::NAN,
                    ..Local::default()
                }
            }
        };
        ops.push(op);
        vals.push(l.v);
        (ops.len() - 1) as u32
    }

    pub fn constant(&self, c: f64) -> Var<'_> {
        Var {
            rec: self,
            idx: self.push(Op::Const(c)),
        }
    }

    fn var(&self, idx: u32) -> Var<'_> {
        Var { rec: self, idx }
    }

    /// Sum of a slice of nodes (zero for an empty slice).
    pub fn sum<'r>(&'r self, xs: &[Var<'r>]) -> Var<'r> {
        match xs.split_first() {
            None => self.constant(0.0),
            Some((first, rest)) => rest.iter().fold(*first, |acc, &x| acc + x),
        }
    }

    pub fn dot<'r>(&'r self, a: &[Var<'r>], b: &[Var<'r>]) -> Var<'r> {
        assert_eq!(a.len(), b.len(), "dot of mismatched lengths");
        let terms: Vec<Var<'r>> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
        self.sum(&terms)
    }

    /// Row-major matrix (`rows x x.len()`) times vector.
    pub fn matvec<'r>(&'r self, m: &[Var<'r>], rows: usize, x: &[Var<'r>]) -> Vec<Var<'r>> {
        let cols = x.len();
        assert_eq!(m.len(), rows * cols, "matvec shape mismatch");
        (0..rows).map(|r| self.dot(&m[r * cols..(r + 1) * cols], x)).collect()
    }

    pub fn outer<'r>(&'r self, a: &[Var<'r>], b: &[Var<'r>]) -> Vec<Var<'r>> {
        a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
    }

    /// Trace of a row-major 3x3 matrix.
    pub fn trace3<'r>(&'r self, m: &[Var<'r>; 9]) -> Var<'r> {
        m[0] + m[4] + m[8]
    }

    /// Determinant of a row-major 3x3 matrix by cofactor expansion.
    pub fn det3<'r>(&'r self, m: &[Var<'r>; 9]) -> Var<'r> {
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// `A^T B` for row-major 3x3 matrices.
    pub fn transpose_mul3<'r>(&'r self, a: &[Var<'r>; 9], b: &[Var<'r>; 9]) -> [Var<'r>; 9] {
        std::array::from_fn(|k| {
            let (i, j) = (k / 3, k % 3);
            a[i] * b[j] + a[3 + i] * b[3 + j] + a[6 + i] * b[6 + j]
        })
    }
}

impl<'r> Var<'r> {
    pub fn value(&self) -> f64 {
        self.rec.vals.borrow()[self.idx as usize]
    }

    fn unary(self, op: Op) -> Var<'r> {
        self.rec.var(self.rec.push(op))
    }

    pub fn ln(self) -> Var<'r> {
        self.unary(Op::Ln(self.idx))
    }

    pub fn exp(self) -> Var<'r> {
        self.unary(Op::Exp(self.idx))
    }

    pub fn sqrt(self) -> Var<'r> {
        self.unary(Op::Sqrt(self.idx))
    }

    pub fn powf(self, c: f64) -> Var<'r> {
        self.unary(Op::Powf(self.idx, c))
    }

    pub fn pow(self, e: Var<'r>) -> Var<'r> {
        self.unary(Op::Pow(self.idx, e.idx))
    }

    pub fn relu(self) -> Var<'r> {
        self.unary(Op::Relu(self.idx))
    }
}

macro_rules! binary {
    ($trait:ident, $method:ident, $op:ident) => {
        impl<'r> $trait for Var<'r> {
            type Output = Var<'r>;
            fn $method(self, rhs: Var<'r>) -> Var<'r> {
                self.rec.var(self.rec.push(Op::$op(self.idx, rhs.idx)))
            }
        }
        impl<'r> $trait<f64> for Var<'r> {
            type Output = Var<'r>;
            fn $method(self, rhs: f64) -> Var<'r> {
                let c = self.rec.constant(rhs);
                self.$method(c)
            }
        }
        impl<'r> $trait<Var<'r>> for f64 {
            type Output = Var<'r>;
            fn $method(self, rhs: Var<'r>) -> Var<'r> {
                let c = rhs.rec.constant(self);
                c.$method(rhs)
            }
        }
    };
}

binary!(Add, add, Add);
binary!(Sub, sub, Sub);
binary!(Mul, mul, Mul);
binary!(Div, div, Div);

impl<'r> Neg for Var<'r> {
    type Output = Var<'r>;
    fn neg(self) -> Var<'r> {
        self.unary(Op::Neg(self.idx))
    }
}

/// Operation kinds of the compiled replay program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Powf,
    Pow,
    Exp,
    Ln,
    Sqrt,
    Relu,
}

/// A recorded expression graph in topological order.
///
/// Besides the op list the tape keeps a struct-of-arrays copy used for
/// replay. Nodes without a second operand point it at their first one with
/// a zero partial, so every sweep runs without branching on arity.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    recorded: Vec<f64>,
    n_inputs: usize,
    outputs: Vec<u32>,
    kind: Vec<Kind>,
    a: Vec<u32>,
    b: Vec<u32>,
    /// Constant value, fixed exponent, or input slot, depending on the kind.
    c: Vec<f64>,
}

/// Reusable buffers for replaying a tape.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    vals: Vec<f64>,
    pa: Vec<f64>,
    pb: Vec<f64>,
    paa: Vec<f64>,
    pab: Vec<f64>,
    pbb: Vec<f64>,
    dots: Vec<f64>,
    adj: Vec<f64>,
    adj_dot: Vec<f64>,
}

impl Workspace {
    fn fit(&mut self, n: usize, second: bool) {
        for v in [&mut self.vals, &mut self.pa, &mut self.pb, &mut self.adj] {
            v.resize(n, 0.0);
        }
        if second {
            for v in [&mut self.paa, &mut self.pab, &mut self.pbb, &mut self.dots, &mut self.adj_dot] {
                v.resize(n, 0.0);
            }
        }
    }
}

impl Tape {
    /// Records a scalar expression of `inputs.len()` variables.
    pub fn record<F>(inputs: &[f64], f: F) -> Result<Tape>
    where
        F: for<'r> FnOnce(&'r Recorder, &[Var<'r>]) -> Var<'r>,
    {
        Self::record_many(inputs, |rec, xs| vec![f(rec, xs)])
    }

    /// Records an expression with any number of outputs.
    pub fn record_many<F>(inputs: &[f64], f: F) -> Result<Tape>
    where
        F: for<'r> FnOnce(&'r Recorder, &[Var<'r>]) -> Vec<Var<'r>>,
    {
        let rec = Recorder {
            ops: RefCell::new(Vec::new()),
            vals: RefCell::new(Vec::new()),
            inputs: inputs.to_vec(),
            error: RefCell::new(None),
        };
        let outputs: Vec<u32> = {
            let xs: Vec<Var> = (0..inputs.len())
                .map(|k| rec.var(rec.push(Op::Input(k as u32))))
                .collect();
            f(&rec, &xs).iter().map(|v| v.idx).collect()
        };
        if let Some(msg) = rec.error.into_inner() {
            return Err(Error::Domain(msg));
        }
        Ok(Tape::compile(rec.ops.into_inner(), rec.vals.into_inner(), inputs.len(), outputs))
    }

    fn compile(ops: Vec<Op>, recorded: Vec<f64>, n_inputs: usize, outputs: Vec<u32>) -> Tape {
        let n = ops.len();
        let mut kind = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for op in &ops {
            let (k, x, y, v) = match *op {
                Op::Input(i) => (Kind::Input, 0, 0, i as f64),
                Op::Const(v) => (Kind::Const, 0, 0, v),
                Op::Add(x, y) => (Kind::Add, x, y, 0.0),
                Op::Sub(x, y) => (Kind::Sub, x, y, 0.0),
                Op::Mul(x, y) => (Kind::Mul, x, y, 0.0),
                Op::Div(x, y) => (Kind::Div, x, y, 0.0),
                Op::Pow(x, y) => (Kind::Pow, x, y, 0.0),
                Op::Neg(x) => (Kind::Neg, x, x, 0.0),
                Op::Powf(x, e) => (Kind::Powf, x, x, e),
                Op::Exp(x) => (Kind::Exp, x, x, 0.0),
                Op::Ln(x) => (Kind::Ln, x, x, 0.0),
                Op::Sqrt(x) => (Kind::Sqrt, x, x, 0.0),
                Op::Relu(x) => (Kind::Relu, x, x, 0.0),
            };
            kind.push(k);
            a.push(x);
            b.push(y);
            c.push(v);
        }
        Tape {
            ops,
            recorded,
            n_inputs,
            outputs,
            kind,
            a,
            b,
            c,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn input_count(&self) -> usize {
        self.n_inputs
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Output values at the recording point.
    pub fn values(&self) -> Vec<f64> {
        self.outputs.iter().map(|&o| self.recorded[o as usize]).collect()
    }

    pub fn value(&self) -> f64 {
        self.recorded[self.outputs[0] as usize]
    }

    /// Every operand precedes its consumer.
    pub fn is_topologically_ordered(&self) -> bool {
        self.ops.iter().enumerate().all(|(i, op)| {
            let (a, b) = op.operands();
            a.is_none_or(|a| (a as usize) < i) && b.is_none_or(|b| (b as usize) < i)
        })
    }

    fn root(&self) -> Result<usize> {
        if self.outputs.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, tape has {} outputs",
                self.outputs.len()
            )));
        }
        Ok(self.outputs[0] as usize)
    }

    /// Gradient of the scalar root at the recording point.
    pub fn backward(&self) -> Result<Vec<f64>> {
        let inputs: Vec<f64> = self
            .ops
            .iter()
            .zip(&self.recorded)
            .filter_map(|(op, v)| matches!(op, Op::Input(_)).then_some(*v))
            .collect();
        let mut ws = Workspace::default();
        let mut grad = vec![0.0; self.n_inputs];
        self.gradient(&inputs, &mut ws, &mut grad)?;
        Ok(grad)
    }

    /// Values and local partials of every node. Second partials are only
    /// filled when `SECOND` is set.
    fn forward<const SECOND: bool>(&self, inputs: &[f64], ws: &mut Workspace) -> Result<()> {
        assert_eq!(inputs.len(), self.n_inputs, "tape input length mismatch");
        let n = self.kind.len();
        ws.fit(n, SECOND);
        let vals = &mut ws.vals[..n];
        let (pa, pb) = (&mut ws.pa[..n], &mut ws.pb[..n]);
        let mut ok = true;
        for i in 0..n {
            let (x, y) = (vals[self.a[i] as usize], vals[self.b[i] as usize]);
            let (v, da, db, daa, dab, dbb) = match self.kind[i] {
                Kind::Input => (inputs[self.c[i] as usize], 0.0, 0.0, 0.0, 0.0, 0.0),
                Kind::Const => (self.c[i], 0.0, 0.0, 0.0, 0.0, 0.0),
                Kind::Add => (x + y, 1.0, 1.0, 0.0, 0.0, 0.0),
                Kind::Sub => (x - y, 1.0, -1.0, 0.0, 0.0, 0.0),
                Kind::Mul => (x * y, y, x, 0.0, 1.0, 0.0),
                Kind::Div => {
                    ok &= y != 0.0;
                    let r = 1.0 / y;
                    let q = x * r;
                    (q, r, -q * r, 0.0, -r * r, 2.0 * q * r * r)
                }
                Kind::Neg => (-x, -1.0, 0.0, 0.0, 0.0, 0.0),
                Kind::Powf => {
                    let e = self.c[i];
                    if x > 0.0 {
                        let v = x.powf(e);
                        let r = 1.0 / x;
                        (v, e * v * r, 0.0, e * (e - 1.0) * v * r * r, 0.0, 0.0)
                    } else {
                        ok &= e.fract() == 0.0;
                        (x.powf(e), e * x.powf(e - 1.0), 0.0, e * (e - 1.0) * x.powf(e - 2.0), 0.0, 0.0)
                    }
                }
                Kind::Pow => {
                    ok &= x > 0.0;
                    let lx = x.ln();
                    let v = x.powf(y);
                    let r = 1.0 / x;
                    (v, y * v * r, v * lx, y * (y - 1.0) * v * r * r, v * r * (1.0 + y * lx), v * lx * lx)
                }
                Kind::Exp => {
                    let v = x.exp();
                    (v, v, 0.0, v, 0.0, 0.0)
                }
                Kind::Ln => {
                    ok &= x > 0.0;
                    let r = 1.0 / x;
                    (x.ln(), r, 0.0, -r * r, 0.0, 0.0)
                }
                Kind::Sqrt => {
                    ok &= x > 0.0;
                    let v = x.sqrt();
                    (v, 0.5 / v, 0.0, -0.25 / (v * x), 0.0, 0.0)
                }
                // derivative at exactly zero is zero
                Kind::Relu => {
                    if x > 0.0 {
                        (x, 1.0, 0.0, 0.0, 0.0, 0.0)
                    } else {
                        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
                    }
                }
            };
            vals[i] = v;
            pa[i] = da;
            pb[i] = db;
            if SECOND {
                ws.paa[i] = daa;
                ws.pab[i] = dab;
                ws.pbb[i] = dbb;
            }
        }
        if ok {
            Ok(())
        } else {
            Err(self.domain_error(inputs))
        }
    }

    /// Describes the first node whose operation is undefined at `inputs`.
    fn domain_error(&self, inputs: &[f64]) -> Error {
        let mut vals = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            match local(*op, inputs, &vals) {
                Ok(l) => vals.push(l.v),
                Err(msg) => return Error::Domain(msg),
            }
        }
        Error::Domain("undefined operation".into())
    }

    /// Output values at new inputs.
    pub fn eval(&self, inputs: &[f64], ws: &mut Workspace) -> Result<Vec<f64>> {
        self.forward::<false>(inputs, ws)?;
        Ok(self.outputs.iter().map(|&o| ws.vals[o as usize]).collect())
    }

    /// Value and gradient of the scalar root at new inputs.
    pub fn gradient(&self, inputs: &[f64], ws: &mut Workspace, grad: &mut [f64]) -> Result<f64> {
        let root = self.root()?;
        self.forward::<false>(inputs, ws)?;
        let adj = &mut ws.adj[..=root];
        adj.fill(0.0);
        adj[root] = 1.0;
        for i in (self.n_inputs..=root).rev() {
            let g = adj[i];
            adj[self.a[i] as usize] += ws.pa[i] * g;
            adj[self.b[i] as usize] += ws.pb[i] * g;
        }
        grad.copy_from_slice(&adj[..self.n_inputs]);
        Ok(ws.vals[root])
    }

    /// Value, gradient, and Hessian-vector product `H * direction` of the
    /// scalar root at new inputs.
    pub fn hvp(
        &self,
        inputs: &[f64],
        direction: &[f64],
        ws: &mut Workspace,
        grad: &mut [f64],
        hv: &mut [f64],
    ) -> Result<f64> {
        let root = self.root()?;
        assert_eq!(direction.len(), self.n_inputs, "direction length mismatch");
        self.forward::<true>(inputs, ws)?;
        let dots = &mut ws.dots[..=root];
        dots[..self.n_inputs].copy_from_slice(direction);
        for i in self.n_inputs..=root {
            dots[i] = ws.pa[i] * dots[self.a[i] as usize] + ws.pb[i] * dots[self.b[i] as usize];
        }
        let adj = &mut ws.adj[..=root];
        let adj_dot = &mut ws.adj_dot[..=root];
        adj.fill(0.0);
        adj_dot.fill(0.0);
        adj[root] = 1.0;
        for i in (self.n_inputs..=root).rev() {
            let (g, gd) = (adj[i], adj_dot[i]);
            let (a, b) = (self.a[i] as usize, self.b[i] as usize);
            let (da, db) = (dots[a], dots[b]);
            let (pa, pb) = (ws.pa[i], ws.pb[i]);
            adj[a] += pa * g;
            adj[b] += pb * g;
            adj_dot[a] += pa * gd + (ws.paa[i] * da + ws.pab[i] * db) * g;
            adj_dot[b] += pb * gd + (ws.pab[i] * da + ws.pbb[i] * db) * g;
        }
        grad.copy_from_slice(&adj[..self.n_inputs]);
        hv.copy_from_slice(&adj_dot[..self.n_inputs]);
        Ok(ws.vals[root])
    }
}
