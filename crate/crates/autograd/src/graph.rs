//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] for the lifetime of the graph, so the
//! store can only be updated once the graph is dropped.

use std::borrow::Cow;
use std::collections::HashMap;

use indexmap::IndexMap;
use ndarray::{concatenate, ArrayD, ArrayView4, Axis, Ix1, Ix4, IxDyn, Zip};

use crate::conv::{conv2d_backward, conv2d_forward};
use crate::element::Element;
use crate::error::{AutogradError, Result};
use crate::params::ParamStore;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, pad: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Clamp { x: Var, lo: T, hi: T },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

struct Node<'s, T: Element> {
    value: Cow<'s, ArrayD<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<String>,
}

pub struct Graph<'s, T: Element> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<'s, T>>,
    param_vars: HashMap<String, Var>,
}

/// Gradients of a scalar with respect to every parameter that took part
/// in the forward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    grads: IndexMap<String, ArrayD<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

fn same_shape<T>(op: &str, a: &ArrayD<T>, b: &ArrayD<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutogradError::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn as4<T>(a: &ArrayD<T>) -> Result<ArrayView4<'_, T>> {
    a.view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| AutogradError::Shape(format!("expected a rank-4 tensor, got {:?}", a.shape())))
}

fn accumulate<T: Element>(slot: &mut Option<ArrayD<T>>, delta: ArrayD<T>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

impl<'s, T: Element> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf borrowed from the store. Repeated lookups of the same
    /// name return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| AutogradError::MissingParam(name.to_string()))?;
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(name.to_string()),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    pub fn value4(&self, v: Var) -> Result<ArrayView4<'_, T>> {
        as4(self.value(v))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar value of a rank-0 (or single element) node.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let a = self.value(v);
        if a.len() != 1 {
            return Err(AutogradError::NotScalar(a.shape().to_vec()));
        }
        Ok(*a.iter().next().expect("one element"))
    }

    /// Same-padded when `pad = (k - 1) / 2`; stride 1.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let bias = match b {
            Some(b) => Some(
                self.value(b)
                    .view()
                    .into_dimensionality::<Ix1>()
                    .map_err(|_| AutogradError::Shape("conv2d bias must be rank 1".into()))?,
            ),
            None => None,
        };
        let out = conv2d_forward(as4(self.value(x))?, as4(self.value(w))?, bias, pad)?;
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out.into_dyn(), Op::Conv2d { x, w, b, pad }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).mapv(|v| v * factor);
        let rg = self.needs(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.needs(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.abs());
        let rg = self.needs(a);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).mapv(|v| v.max(lo).min(hi));
        let rg = self.needs(a);
        self.push(out, Op::Clamp { x: a, lo, hi }, rg)
    }

    /// Concatenation along the channel axis (axis 1).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutogradError::Shape("concat of zero tensors".into()));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).map_err(|e| AutogradError::Shape(format!("concat: {e}")))?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        let rg = self.needs(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.len().max(1)).expect("length fits");
        let out = ArrayD::from_elem(IxDyn(&[]), v.sum() / n);
        let rg = self.needs(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Mean absolute difference, the L1 loss.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean(d))
    }

    /// Backpropagates from a scalar node and collects parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutogradError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<ArrayD<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(ArrayD::from_elem(lv.raw_dim(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { x, w, b, pad } => {
                    let need_dx = self.needs(*x);
                    let cg = conv2d_backward(as4(self.value(*x))?, as4(self.value(*w))?, as4(&g)?, *pad, need_dx)?;
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads[x.0], dx.into_dyn());
                    }
                    if self.needs(*w) {
                        accumulate(&mut grads[w.0], cg.dw.into_dyn());
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            accumulate(&mut grads[b.0], cg.db.into_dyn());
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.mapv(|v| -v));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], &g * self.value(*a));
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads[a.0], g.mapv(|v| v * f));
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(node.value.as_ref()).for_each(|d, &y| {
                        *d = *d * y * (T::one() - y);
                    });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Abs(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        *d = if x > T::zero() {
                            *d
                        } else if x < T::zero() {
                            -*d
                        } else {
                            T::zero()
                        };
                    });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Clamp { x, lo, hi } => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v < *lo || v > *hi {
                            *d = T::zero();
                        }
                    });
                    accumulate(&mut grads[x.0], d);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).shape()[1];
                        if self.needs(*p) {
                            let piece = g.slice_axis(Axis(1), (offset..offset + c).into()).to_owned();
                            accumulate(&mut grads[p.0], piece);
                        }
                        offset += c;
                    }
                }
                Op::Sum(a) => {
                    let s = *g.iter().next().expect("scalar grad");
                    accumulate(&mut grads[a.0], ArrayD::from_elem(self.value(*a).raw_dim(), s));
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let n = T::from_usize(v.len().max(1)).expect("length fits");
                    let s = *g.iter().next().expect("scalar grad") / n;
                    accumulate(&mut grads[a.0], ArrayD::from_elem(v.raw_dim(), s));
                }
            }
        }

        let mut out = IndexMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Some(name) = &node.param {
                let g = grads[i].take().unwrap_or_else(|| ArrayD::zeros(node.value.raw_dim()));
                out.insert(name.clone(), g);
            }
        }
        Ok(Gradients { grads: out })
    }
}
