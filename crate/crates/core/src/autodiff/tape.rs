//! Append-only expression tape and the `Var` handle.
//!
//! Every operation appends one node holding its value and the local partial
//! derivative with respect to each parent. Parents always precede children,
//! so a single reverse sweep over the node list accumulates adjoints.
//!
//! Domain violations raised through the operator overloads are *sticky*: the
//! tape records the first error, substitutes a zero constant so evaluation can
//! continue, and refuses to run `backward` until the error is inspected. The
//! checked entry points (`lift`, `apply`) return the error directly instead.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use super::AdError;

/// Node kinds recorded on the tape. `Leaf` nodes are differentiation inputs,
/// `Const` nodes never receive adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
    Sqrt,
    Abs,
    Pow,
    Powf,
    Min,
    Max,
    Atan2,
    Clamp,
    Norm,
    Sum,
    Dot,
}

/// Elementary operations accepted by [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
    Sqrt,
    Abs,
    Pow,
    Min,
    Max,
    Atan2,
    Norm,
}

impl ElementaryOp {
    pub fn name(self) -> &'static str {
        match self {
            ElementaryOp::Add => "add",
            ElementaryOp::Sub => "sub",
            ElementaryOp::Mul => "mul",
            ElementaryOp::Div => "div",
            ElementaryOp::Neg => "neg",
            ElementaryOp::Sin => "sin",
            ElementaryOp::Cos => "cos",
            ElementaryOp::Exp => "exp",
            ElementaryOp::Ln => "ln",
            ElementaryOp::Tanh => "tanh",
            ElementaryOp::Sqrt => "sqrt",
            ElementaryOp::Abs => "abs",
            ElementaryOp::Pow => "pow",
            ElementaryOp::Min => "min",
            ElementaryOp::Max => "max",
            ElementaryOp::Atan2 => "atan2",
            ElementaryOp::Norm => "norm",
        }
    }

    fn arity(self) -> Option<usize> {
        match self {
            ElementaryOp::Add
            | ElementaryOp::Sub
            | ElementaryOp::Mul
            | ElementaryOp::Div
            | ElementaryOp::Pow
            | ElementaryOp::Min
            | ElementaryOp::Max
            | ElementaryOp::Atan2 => Some(2),
            ElementaryOp::Norm => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: NodeKind,
    edge_start: u32,
    edge_len: u32,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    edges: Vec<(u32, f64)>,
    error: Option<AdError>,
}

/// Reverse-mode tape. Single writer; build with `&Tape`, read gradients
/// after [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`]. Carries its primal value so reads never
/// touch the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value)
    }
}

/// Adjoints produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
    leaves: Vec<u32>,
}

impl Gradients {
    /// d(output)/d(var). Zero for nodes the output does not depend on.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(*v)).collect()
    }

    /// Gradient with respect to every leaf recorded before the output,
    /// keyed by leaf id.
    pub fn leaf_map(&self) -> BTreeMap<usize, f64> {
        self.leaves
            .iter()
            .map(|&i| (i as usize, self.adjoints.get(i as usize).copied().unwrap_or(0.0)))
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(nodes * 2),
                error: None,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes; requires that no `Var` borrows the tape.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.edges.clear();
        inner.error = None;
    }

    /// First domain error recorded by an unchecked operation, if any.
    pub fn status(&self) -> Result<(), AdError> {
        match &self.inner.borrow().error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    /// Create a differentiable leaf.
    pub fn lift(&self, x: f64) -> Result<Var<'_>, AdError> {
        if !x.is_finite() {
            return Err(AdError::NonFinite { value: x });
        }
        Ok(self.push(NodeKind::Leaf, x, &[]))
    }

    /// Create a leaf, recording a sticky error for non-finite input.
    pub fn var(&self, x: f64) -> Var<'_> {
        if !x.is_finite() {
            return self.fail(AdError::NonFinite { value: x });
        }
        self.push(NodeKind::Leaf, x, &[])
    }

    pub fn vars(&self, xs: &[f64]) -> Vec<Var<'_>> {
        xs.iter().map(|&x| self.var(x)).collect()
    }

    /// A constant: never receives adjoint.
    pub fn constant(&self, x: f64) -> Var<'_> {
        if !x.is_finite() {
            return self.fail(AdError::NonFinite { value: x });
        }
        self.push(NodeKind::Const, x, &[])
    }

    fn push(&self, kind: NodeKind, value: f64, edges: &[(u32, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len() as u32;
        let edge_start = inner.edges.len() as u32;
        inner.edges.extend_from_slice(edges);
        inner.nodes.push(Node {
            kind,
            edge_start,
            edge_len: edges.len() as u32,
        });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    fn fail(&self, err: AdError) -> Var<'_> {
        {
            let mut inner = self.inner.borrow_mut();
            if inner.error.is_none() {
                inner.error = Some(err);
            }
        }
        self.push(NodeKind::Const, 0.0, &[])
    }

    /// Push a computed node, checking the result is finite.
    fn emit(&self, kind: NodeKind, op: &'static str, value: f64, edges: &[(u32, f64)]) -> Var<'_> {
        if !value.is_finite() || edges.iter().any(|(_, w)| !w.is_finite()) {
            return self.fail(AdError::NonFiniteResult { op });
        }
        self.push(kind, value, edges)
    }

    fn check_owner(&self, v: &Var<'_>) {
        debug_assert!(
            std::ptr::eq(self, v.tape),
            "variable does not belong to this tape"
        );
    }

    /// Checked evaluation of an elementary op: arity and domain errors are
    /// returned rather than recorded.
    pub fn apply<'t>(&'t self, op: ElementaryOp, args: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        if let Some(n) = op.arity() {
            if args.len() != n {
                return Err(AdError::Arity {
                    op: op.name(),
                    expected: n,
                    got: args.len(),
                });
            }
        } else if args.is_empty() {
            return Err(AdError::Arity {
                op: op.name(),
                expected: 1,
                got: 0,
            });
        }
        for a in args {
            if !std::ptr::eq(self, a.tape) {
                return Err(AdError::ForeignVar);
            }
        }
        let dom = |arg: usize, value: f64, reason: &'static str| AdError::Domain {
            op: op.name(),
            arg,
            value,
            reason,
        };
        match op {
            ElementaryOp::Div if args[1].value == 0.0 => {
                return Err(dom(1, 0.0, "denominator must be nonzero"))
            }
            ElementaryOp::Sqrt if args[0].value < 0.0 => {
                return Err(dom(0, args[0].value, "argument must be >= 0"))
            }
            ElementaryOp::Ln if args[0].value <= 0.0 => {
                return Err(dom(0, args[0].value, "argument must be > 0"))
            }
            ElementaryOp::Pow if args[0].value < 0.0 => {
                return Err(dom(0, args[0].value, "base must be >= 0"))
            }
            ElementaryOp::Pow if args[0].value == 0.0 && args[1].value < 1.0 => {
                return Err(dom(1, args[1].value, "zero base needs exponent >= 1"))
            }
            ElementaryOp::Atan2 if args[0].value == 0.0 && args[1].value == 0.0 => {
                return Err(dom(0, 0.0, "atan2(0, 0) is undefined"))
            }
            _ => {}
        }
        let out = match op {
            ElementaryOp::Add => args[0] + args[1],
            ElementaryOp::Sub => args[0] - args[1],
            ElementaryOp::Mul => args[0] * args[1],
            ElementaryOp::Div => args[0] / args[1],
            ElementaryOp::Neg => -args[0],
            ElementaryOp::Sin => args[0].sin(),
            ElementaryOp::Cos => args[0].cos(),
            ElementaryOp::Exp => args[0].exp(),
            ElementaryOp::Ln => args[0].ln(),
            ElementaryOp::Tanh => args[0].tanh(),
            ElementaryOp::Sqrt => args[0].sqrt(),
            ElementaryOp::Abs => args[0].abs(),
            ElementaryOp::Pow => args[0].pow(args[1]),
            ElementaryOp::Min => args[0].min(args[1]),
            ElementaryOp::Max => args[0].max(args[1]),
            ElementaryOp::Atan2 => args[0].atan2(args[1]),
            ElementaryOp::Norm => self.norm(args),
        };
        self.status()?;
        Ok(out)
    }

    /// Sum of an arbitrary number of terms as one node.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        let mut value = 0.0;
        let mut edges = Vec::with_capacity(xs.len());
        for x in xs {
            self.check_owner(x);
            value += x.value;
            edges.push((x.idx, 1.0));
        }
        self.emit(NodeKind::Sum, "sum", value, &edges)
    }

    /// Inner product of two equal-length lists as one node.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let mut value = 0.0;
        let mut edges = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            value += x.value * y.value;
            edges.push((x.idx, y.value));
            edges.push((y.idx, x.value));
        }
        self.emit(NodeKind::Dot, "dot", value, &edges)
    }

    /// Inner product of tape values with constant coefficients.
    pub fn dot_const<'t>(&'t self, a: &[Var<'t>], c: &[f64]) -> Var<'t> {
        assert_eq!(a.len(), c.len(), "dot_const: length mismatch");
        let mut value = 0.0;
        let mut edges = Vec::with_capacity(a.len());
        for (x, &w) in a.iter().zip(c) {
            value += x.value * w;
            edges.push((x.idx, w));
        }
        self.emit(NodeKind::Dot, "dot", value, &edges)
    }

    /// Euclidean norm. The subgradient at the origin is taken to be zero.
    pub fn norm<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        let value = xs.iter().map(|x| x.value * x.value).sum::<f64>().sqrt();
        let edges: Vec<(u32, f64)> = xs
            .iter()
            .map(|x| (x.idx, if value > 0.0 { x.value / value } else { 0.0 }))
            .collect();
        self.emit(NodeKind::Norm, "norm", value, &edges)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AdError> {
        self.check_owner(&output);
        self.status()?;
        let inner = self.inner.borrow();
        let n = output.idx as usize + 1;
        let mut adj = vec![0.0; n];
        adj[n - 1] = 1.0;
        let mut leaves = Vec::new();
        for i in (0..n).rev() {
            let node = &inner.nodes[i];
            if node.kind == NodeKind::Leaf {
                leaves.push(i as u32);
                continue;
            }
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let start = node.edge_start as usize;
            for &(p, w) in &inner.edges[start..start + node.edge_len as usize] {
                debug_assert!((p as usize) < i, "tape order violated");
                adj[p as usize] += a * w;
            }
        }
        leaves.reverse();
        Ok(Gradients {
            adjoints: adj,
            leaves,
        })
    }

    /// Kind of the node behind `v` (diagnostics and tests).
    pub fn kind(&self, v: Var<'_>) -> NodeKind {
        self.inner.borrow().nodes[v.idx as usize].kind
    }

    /// Local partials recorded for `v`, as (parent id, partial).
    pub fn local_partials(&self, v: Var<'_>) -> Vec<(usize, f64)> {
        let inner = self.inner.borrow();
        let node = inner.nodes[v.idx as usize];
        let start = node.edge_start as usize;
        inner.edges[start..start + node.edge_len as usize]
            .iter()
            .map(|&(p, w)| (p as usize, w))
            .collect()
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn id(&self) -> usize {
        self.idx as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Constant on the same tape.
    #[inline]
    pub fn cst(&self, c: f64) -> Var<'t> {
        self.tape.constant(c)
    }

    #[inline]
    fn unary(self, kind: NodeKind, op: &'static str, value: f64, d: f64) -> Var<'t> {
        self.tape.emit(kind, op, value, &[(self.idx, d)])
    }

    #[inline]
    fn binary(self, other: Var<'t>, kind: NodeKind, op: &'static str, value: f64, da: f64, db: f64) -> Var<'t> {
        self.tape.check_owner(&other);
        self.tape
            .emit(kind, op, value, &[(self.idx, da), (other.idx, db)])
    }

    pub fn sin(self) -> Var<'t> {
        let (s, c) = self.value.sin_cos();
        self.unary(NodeKind::Sin, "sin", s, c)
    }

    pub fn cos(self) -> Var<'t> {
        let (s, c) = self.value.sin_cos();
        self.unary(NodeKind::Cos, "cos", c, -s)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(NodeKind::Exp, "exp", e, e)
    }

    pub fn ln(self) -> Var<'t> {
        if self.value <= 0.0 {
            return self.tape.fail(AdError::Domain {
                op: "ln",
                arg: 0,
                value: self.value,
                reason: "argument must be > 0",
            });
        }
        self.unary(NodeKind::Ln, "ln", self.value.ln(), 1.0 / self.value)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(NodeKind::Tanh, "tanh", t, 1.0 - t * t)
    }

    /// Square root; the partial at zero is taken as zero.
    pub fn sqrt(self) -> Var<'t> {
        if self.value < 0.0 {
            return self.tape.fail(AdError::Domain {
                op: "sqrt",
                arg: 0,
                value: self.value,
                reason: "argument must be >= 0",
            });
        }
        let s = self.value.sqrt();
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(NodeKind::Sqrt, "sqrt", s, d)
    }

    /// |x| with subgradient +1 at zero.
    pub fn abs(self) -> Var<'t> {
        let d = if self.value >= 0.0 { 1.0 } else { -1.0 };
        self.unary(NodeKind::Abs, "abs", self.value.abs(), d)
    }

    /// x^p for a constant exponent.
    pub fn powf(self, p: f64) -> Var<'t> {
        if self.value < 0.0 && p.fract() != 0.0 {
            return self.tape.fail(AdError::Domain {
                op: "powf",
                arg: 0,
                value: self.value,
                reason: "negative base needs an integer exponent",
            });
        }
        let v = self.value.powf(p);
        let d = if p == 0.0 { 0.0 } else { p * self.value.powf(p - 1.0) };
        self.unary(NodeKind::Powf, "powf", v, d)
    }

    /// x^y with both operands on the tape; base must be non-negative.
    pub fn pow(self, y: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value, y.value);
        if a < 0.0 || (a == 0.0 && b < 1.0) {
            return self.tape.fail(AdError::Domain {
                op: "pow",
                arg: 0,
                value: a,
                reason: "base must be > 0 (or 0 with exponent >= 1)",
            });
        }
        let v = a.powf(b);
        let da = if b == 0.0 { 0.0 } else { b * a.powf(b - 1.0) };
        let db = if a > 0.0 { v * a.ln() } else { 0.0 };
        self.binary(y, NodeKind::Pow, "pow", v, da, db)
    }

    /// Minimum; ties send the gradient to `self`.
    pub fn min(self, o: Var<'t>) -> Var<'t> {
        if self.value <= o.value {
            self.binary(o, NodeKind::Min, "min", self.value, 1.0, 0.0)
        } else {
            self.binary(o, NodeKind::Min, "min", o.value, 0.0, 1.0)
        }
    }

    /// Maximum; ties send the gradient to `self`.
    pub fn max(self, o: Var<'t>) -> Var<'t> {
        if self.value >= o.value {
            self.binary(o, NodeKind::Max, "max", self.value, 1.0, 0.0)
        } else {
            self.binary(o, NodeKind::Max, "max", o.value, 0.0, 1.0)
        }
    }

    /// Four-quadrant arctangent of `self / x`.
    pub fn atan2(self, x: Var<'t>) -> Var<'t> {
        let (y, xv) = (self.value, x.value);
        let r2 = y * y + xv * xv;
        if r2 == 0.0 {
            return self.tape.fail(AdError::Domain {
                op: "atan2",
                arg: 0,
                value: 0.0,
                reason: "atan2(0, 0) is undefined",
            });
        }
        self.binary(x, NodeKind::Atan2, "atan2", y.atan2(xv), xv / r2, -y / r2)
    }

    /// Clamp into `[lo, hi]`; partial 1 inside (boundaries included), 0 outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value;
        if v < lo {
            self.unary(NodeKind::Clamp, "clamp", lo, 0.0)
        } else if v > hi {
            self.unary(NodeKind::Clamp, "clamp", hi, 0.0)
        } else {
            self.unary(NodeKind::Clamp, "clamp", v, 1.0)
        }
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $kind:expr, $name:expr, |$a:ident, $b:ident| $v:expr, $da:expr, $db:expr) => {
        impl<'t> std::ops::$tr<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            #[inline]
            fn $m(self, o: Var<'t>) -> Var<'t> {
                let ($a, $b) = (self.value, o.value);
                self.binary(o, $kind, $name, $v, $da, $db)
            }
        }
    };
}

binop!(Add, add, NodeKind::Add, "add", |a, b| a + b, 1.0, 1.0);
binop!(Sub, sub, NodeKind::Sub, "sub", |a, b| a - b, 1.0, -1.0);
binop!(Mul, mul, NodeKind::Mul, "mul", |a, b| a * b, b, a);

impl<'t> std::ops::Div<Var<'t>> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        if o.value == 0.0 {
            return self.tape.fail(AdError::Domain {
                op: "div",
                arg: 1,
                value: 0.0,
                reason: "denominator must be nonzero",
            });
        }
        let inv = 1.0 / o.value;
        self.binary(o, NodeKind::Div, "div", self.value * inv, inv, -self.value * inv * inv)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(NodeKind::Neg, "neg", -self.value, -1.0)
    }
}

impl<'t> std::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(NodeKind::Add, "add", self.value + c, 1.0)
    }
}

impl<'t> std::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(NodeKind::Sub, "sub", self.value - c, 1.0)
    }
}

impl<'t> std::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(NodeKind::Mul, "mul", self.value * c, c)
    }
}

impl<'t> std::ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        if c == 0.0 {
            return self.tape.fail(AdError::Domain {
                op: "div",
                arg: 1,
                value: 0.0,
                reason: "denominator must be nonzero",
            });
        }
        self.unary(NodeKind::Div, "div", self.value / c, 1.0 / c)
    }
}

impl<'t> std::ops::Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> std::ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(NodeKind::Sub, "sub", self - v.value, -1.0)
    }
}

impl<'t> std::ops::Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> std::ops::Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        if v.value == 0.0 {
            return v.tape.fail(AdError::Domain {
                op: "div",
                arg: 1,
                value: 0.0,
                reason: "denominator must be nonzero",
            });
        }
        let inv = 1.0 / v.value;
        v.unary(NodeKind::Div, "div", self * inv, -self * inv * inv)
    }
}

impl<'t> std::ops::AddAssign for Var<'t> {
    fn add_assign(&mut self, o: Var<'t>) {
        *self = *self + o;
    }
}

impl<'t> std::ops::SubAssign for Var<'t> {
    fn sub_assign(&mut self, o: Var<'t>) {
        *self = *self - o;
    }
}

impl<'t> std::ops::MulAssign<f64> for Var<'t> {
    fn mul_assign(&mut self, c: f64) {
        *self = *self * c;
    }
}
