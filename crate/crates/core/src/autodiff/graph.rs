use super::kernels::{col2im, im2col, ConvGeom};
use super::{ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_channels: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        in_channels: usize,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Maximum(Var, Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    MaxAxis {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    ComplexAbs(Var, Var),
    QualityGate(Var),
    TanhRatio(Var, Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Lower and upper limits of the quality gate.
pub const GATE_LO: f64 = 1.04;
pub const GATE_HI: f64 = 4.64;

/// Radius below which `tanh(r)/r` and its derivative use a series expansion.
const TANH_RATIO_SERIES: f64 = 0.05;

/// Recorded forward computation.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one loss with respect to every node that needed one.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

/// Parameter gradients extracted from [`Grads`], in graph order.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<T> {
    entries: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> ParamGrads<T> {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn tanh_ratio(r: f64) -> (f64, f64) {
    // f(r) = tanh(r)/r and f'(r)
    if r < TANH_RATIO_SERIES {
        let r2 = r * r;
        let f = 1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0 - 17.0 * r2 * r2 * r2 / 315.0;
        let df = r * (-2.0 / 3.0 + 8.0 * r2 / 15.0 - 102.0 * r2 * r2 / 315.0);
        (f, df)
    } else {
        let t = r.tanh();
        let f = t / r;
        let df = ((1.0 - t * t) * r - t) / (r * r);
        (f, df)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("input", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        self.input(shape, data, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param(id),
            t.requires_grad,
        )
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, op, ng))
    }

    fn map_op(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.any_grad(&[a]);
        self.push(self.shape(a).to_vec(), value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("elementwise_max", a, b, |x, y| if y > x { y } else { x }, Op::Maximum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.map_op(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.map_op(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_op(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_op(a, T::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x * x, Op::Square(a))
    }

    /// `1.04 + 3.6 * sigmoid(x)`, kept strictly inside (1.04, 4.64) after
    /// rounding.
    pub fn quality_gate(&mut self, a: Var) -> Var {
        let lo = T::of(GATE_LO).next_up();
        let hi = T::of(GATE_HI).next_down();
        let span = T::of(GATE_HI - GATE_LO);
        let base = T::of(GATE_LO);
        self.map_op(
            a,
            |x| (base + span * sigmoid(x)).max(lo).min(hi),
            Op::QualityGate(a),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|x| x.f64()).sum();
        let ng = self.any_grad(&[a]);
        self.push(vec![1], vec![T::of(s)], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::domain("mean", "empty tensor"));
        }
        let s: f64 = self.value(a).iter().map(|x| x.f64()).sum();
        let ng = self.any_grad(&[a]);
        Ok(self.push(vec![1], vec![T::of(s / n as f64)], Op::Mean(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), &shape));
        }
        let value = self.value(a).to_vec();
        let ng = self.any_grad(&[a]);
        Ok(self.push(shape, value, Op::Reshape(a), ng))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::shape(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// Same-padded strided convolution: `x [Ci, H, W]`, `w [Co, Ci, kh, kw]`,
    /// optional bias `[Co]`, output `[Co, ceil(H/sh), ceil(W/sw)]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let co = sw[0];
        self.check_bias("conv2d", b, co)?;
        let geom = ConvGeom::same(sx[0], (sx[1], sx[2]), (sw[2], sw[3]), stride);
        let cols = im2col(self.value(x), &geom);
        let p = geom.positions();
        let mut out = vec![T::zero(); co * p];
        T::gemm(co, geom.patch(), p, self.value(w), false, &cols, false, &mut out, false);
        if let Some(b) = b {
            for (row, &bv) in out.chunks_mut(p).zip(self.value(b)) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        let ng = self.any_grad(&[x, w]) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(
            vec![co, geom.out_h, geom.out_w],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels: co,
            },
            ng,
        ))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`]:
    /// `x [Ci, H, W]`, `w [Ci, Co, kh, kw]`, output `[Co, H*sh, W*sw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("transposed_conv2d", &sx, &sw));
        }
        let (ci, co) = (sw[0], sw[1]);
        self.check_bias("transposed_conv2d", b, co)?;
        let (oh, ow) = (sx[1] * stride.0, sx[2] * stride.1);
        let geom = ConvGeom::same(co, (oh, ow), (sw[2], sw[3]), stride);
        debug_assert_eq!((geom.out_h, geom.out_w), (sx[1], sx[2]));
        let p = geom.positions();
        let mut cols = vec![T::zero(); geom.patch() * p];
        T::gemm(geom.patch(), ci, p, self.value(w), true, self.value(x), false, &mut cols, false);
        let mut out = vec![T::zero(); co * oh * ow];
        col2im(&cols, &geom, &mut out);
        if let Some(b) = b {
            for (plane, &bv) in out.chunks_mut(oh * ow).zip(self.value(b)) {
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        let ng = self.any_grad(&[x, w]) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(
            vec![co, oh, ow],
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                in_channels: ci,
            },
            ng,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::domain("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().enumerate().all(|(i, &d)| i == axis || d == base[i]);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                value.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = self.any_grad(parts);
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::domain(
                "slice",
                format!("range {start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let n = end - start;
        let mut value = Vec::with_capacity(outer * n * inner);
        let src = self.value(x);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            value.extend_from_slice(&src[base..base + n * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        let ng = self.any_grad(&[x]);
        Ok(self.push(out_shape, value, Op::Slice { x, axis, start }, ng))
    }

    fn reduce_shape(&self, op: &'static str, x: Var, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape(x);
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::domain(op, format!("bad axis {axis} for {shape:?}")));
        }
        let mut out: Vec<usize> = shape.to_vec();
        out.remove(axis);
        if out.is_empty() {
            out.push(1);
        }
        Ok(out)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out_shape = self.reduce_shape("mean_axis", x, axis)?;
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        let src = self.value(x);
        let mut value = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|l| src[(o * len + l) * inner + i].f64()).sum();
                value.push(T::of(s / len as f64));
            }
        }
        let ng = self.any_grad(&[x]);
        Ok(self.push(out_shape, value, Op::MeanAxis { x, axis }, ng))
    }

    /// Maximum along `axis`; ties resolve to the first index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out_shape = self.reduce_shape("max_axis", x, axis)?;
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        let src = self.value(x);
        let mut value = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for l in 1..len {
                    if src[(o * len + l) * inner + i] > src[(o * len + best) * inner + i] {
                        best = l;
                    }
                }
                argmax.push(best);
                value.push(src[(o * len + best) * inner + i]);
            }
        }
        let ng = self.any_grad(&[x]);
        Ok(self.push(out_shape, value, Op::MaxAxis { x, axis, argmax }, ng))
    }

    /// Maximum over the frame axis (axis 1) of a `[channels, frames, ...]` tensor.
    pub fn reduce_max_over_frames(&mut self, x: Var) -> Result<Var> {
        self.max_axis(x, 1)
    }

    /// `sqrt(re^2 + im^2)`, with zero gradient at the origin.
    pub fn complex_abs(&mut self, re: Var, im: Var) -> Result<Var> {
        self.zip_op("complex_abs", re, im, |a, b| a.hypot(b), Op::ComplexAbs(re, im))
    }

    /// `tanh(|z|)/|z|` per element (1 at the origin), shrunk by a few ulps so
    /// that `z * tanh(|z|)/|z|` never rounds above unit magnitude.
    pub fn tanh_ratio(&mut self, re: Var, im: Var) -> Result<Var> {
        let shrink = 1.0 - 8.0 * T::epsilon().f64();
        self.zip_op(
            "tanh_ratio",
            re,
            im,
            move |a, b| T::of(shrink * tanh_ratio(a.f64().hypot(b.f64())).0),
            Op::TanhRatio(re, im),
        )
    }

    /// Branch taken by every non-differentiable element (relu sign, max
    /// winner, gate clamp, modulus at the origin). Two evaluations with equal
    /// signatures lie in the same smooth region.
    pub fn branch_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => sig.extend(self.value(*a).iter().map(|&x| u32::from(x > T::zero()))),
                Op::Maximum(a, b) => sig.extend(
                    self.value(*a).iter().zip(self.value(*b)).map(|(&x, &y)| u32::from(y > x)),
                ),
                Op::MaxAxis { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u32)),
                Op::QualityGate(_) => {
                    let (lo, hi) = (T::of(GATE_LO).next_up(), T::of(GATE_HI).next_down());
                    sig.extend(node.value.iter().map(|&q| u32::from(q <= lo) | (u32::from(q >= hi) << 1)));
                }
                Op::ComplexAbs(a, b) => sig.extend(
                    self.value(*a)
                        .iter()
                        .zip(self.value(*b))
                        .map(|(&x, &y)| u32::from(x == T::zero() && y == T::zero())),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Grads<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::domain(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.pullback(node, &gy, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(gy);
            }
        }
        Ok(Grads { grads })
    }

    pub fn param_grads(&self, grads: &Grads<T>) -> ParamGrads<T> {
        let entries = self
            .nodes
            .iter()
            .zip(&grads.grads)
            .filter_map(|(n, g)| match (&n.op, g) {
                (Op::Param(id), Some(g)) => Some((*id, g.clone())),
                _ => None,
            })
            .collect();
        ParamGrads { entries }
    }

    /// Backpropagates `loss` and adds the parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&self.param_grads(&grads));
        Ok(())
    }

    fn pullback(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].needs_grad {
                let len = nodes[v.0].value.len();
                let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(g);
            }
        };
        let val = |v: Var| nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g - d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(gy).zip(vb) {
                        *g = *g + d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gy).zip(va) {
                        *g = *g + d * x;
                    }
                });
            }
            Op::Maximum(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if va[i] >= vb[i] {
                            g[i] = g[i] + gy[i];
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        if vb[i] > va[i] {
                            g[i] = g[i] + gy[i];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| {
                g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g + d * *c)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |g| add_into(g, gy)),
            Op::Sigmoid(a) => acc(*a, &mut |g| {
                for ((g, &d), &y) in g.iter_mut().zip(gy).zip(&node.value) {
                    *g = *g + d * y * (T::one() - y);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |g| {
                for ((g, &d), &y) in g.iter_mut().zip(gy).zip(&node.value) {
                    *g = *g + d * (T::one() - y * y);
                }
            }),
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gy).zip(va) {
                        if x > T::zero() {
                            *g = *g + d;
                        }
                    }
                })
            }
            Op::Square(a) => {
                let va = val(*a);
                let two = T::of(2.0);
                acc(*a, &mut |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gy).zip(va) {
                        *g = *g + two * d * x;
                    }
                })
            }
            Op::QualityGate(a) => {
                let va = val(*a);
                let span = T::of(GATE_HI - GATE_LO);
                acc(*a, &mut |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gy).zip(va) {
                        let s = sigmoid(x);
                        *g = *g + d * span * s * (T::one() - s);
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|g| *g = *g + gy[0])),
            Op::Mean(a) => {
                let n = T::of(val(*a).len() as f64);
                acc(*a, &mut |g| g.iter_mut().for_each(|g| *g = *g + gy[0] / n))
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| T::gemm(m, n, k, gy, false, vb, true, g, true));
                acc(*b, &mut |g| T::gemm(k, m, n, va, true, gy, false, g, true));
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels,
            } => {
                let p = geom.positions();
                let co = *out_channels;
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for (gb, row) in g.iter_mut().zip(gy.chunks(p)) {
                            let s: f64 = row.iter().map(|v| v.f64()).sum();
                            *gb = *gb + T::of(s);
                        }
                    });
                }
                if nodes[w.0].needs_grad {
                    let cols = im2col(val(*x), geom);
                    acc(*w, &mut |g| T::gemm(co, p, geom.patch(), gy, false, &cols, true, g, true));
                }
                let vw = val(*w);
                acc(*x, &mut |g| {
                    let mut dcols = vec![T::zero(); geom.patch() * p];
                    T::gemm(geom.patch(), co, p, vw, true, gy, false, &mut dcols, false);
                    col2im(&dcols, geom, g);
                });
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                in_channels,
            } => {
                let plane = geom.h * geom.w;
                let ci = *in_channels;
                let p = geom.positions();
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for (gb, pl) in g.iter_mut().zip(gy.chunks(plane)) {
                            let s: f64 = pl.iter().map(|v| v.f64()).sum();
                            *gb = *gb + T::of(s);
                        }
                    });
                }
                let dcols = im2col(gy, geom);
                let (vx, vw) = (val(*x), val(*w));
                acc(*w, &mut |g| T::gemm(ci, p, geom.patch(), vx, false, &dcols, true, g, true));
                acc(*x, &mut |g| T::gemm(ci, geom.patch(), p, vw, false, &dcols, false, g, true));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].shape[*axis];
                    acc(p, &mut |g| {
                        for o in 0..outer {
                            let src = &gy[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut g[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = split_axis(&nodes[x.0].shape, *axis);
                let n = node.shape[*axis];
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let base = (o * len + start) * inner;
                        add_into(&mut g[base..base + n * inner], &gy[o * n * inner..(o + 1) * n * inner]);
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = split_axis(&nodes[x.0].shape, *axis);
                let inv = T::of(1.0 / len as f64);
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                let gi = &mut g[(o * len + l) * inner + i];
                                *gi = *gi + gy[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis { x, axis, argmax } => {
                let (outer, len, inner) = split_axis(&nodes[x.0].shape, *axis);
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let j = o * inner + i;
                            let gi = &mut g[(o * len + argmax[j]) * inner + i];
                            *gi = *gi + gy[j];
                        }
                    }
                });
            }
            Op::ComplexAbs(re, im) => {
                let (vr, vi) = (val(*re), val(*im));
                let r = &node.value;
                for (v, comp) in [(*re, vr), (*im, vi)] {
                    acc(v, &mut |g| {
                        for i in 0..g.len() {
                            if r[i] > T::zero() {
                                g[i] = g[i] + gy[i] * comp[i] / r[i];
                            }
                        }
                    });
                }
            }
            Op::TanhRatio(re, im) => {
                let (vr, vi) = (val(*re), val(*im));
                let shrink = 1.0 - 8.0 * T::epsilon().f64();
                // d f / d re = f'(r) * re / r; the series form of f'(r)/r is
                // used near the origin.
                let dfr: Vec<f64> = vr
                    .iter()
                    .zip(vi)
                    .map(|(a, b)| {
                        let r = a.f64().hypot(b.f64());
                        let (_, df) = tanh_ratio(r);
                        let over_r = if r < TANH_RATIO_SERIES {
                            let r2 = r * r;
                            -2.0 / 3.0 + 8.0 * r2 / 15.0 - 102.0 * r2 * r2 / 315.0
                        } else {
                            df / r
                        };
                        shrink * over_r
                    })
                    .collect();
                for (v, comp) in [(*re, vr), (*im, vi)] {
                    acc(v, &mut |g| {
                        for i in 0..g.len() {
                            g[i] = g[i] + gy[i] * T::of(dfr[i] * comp[i].f64());
                        }
                    });
                }
            }
        }
    }
}

fn add_into<T: Real>(g: &mut [T], d: &[T]) {
    g.iter_mut().zip(d).for_each(|(g, &d)| *g = *g + d);
}
