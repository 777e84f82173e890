//! Differentiable operations.
//!
//! Feature maps use the `[N, C, T, V]` layout (batch, channels, frames,
//! joints). Every kernel writes each output element from exactly one task
//! and accumulates in a fixed order.

use rayon::prelude::*;

use super::params::ParamId;
use super::tape::{Node, Tape, Var};
use super::tensor::{Real, Tensor};
use super::{BN_EPS, BN_MOMENTUM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update running statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

pub(crate) enum Op<F> {
    Leaf {
        param: Option<ParamId>,
        requires_grad: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Sum(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Relu(Var),
    Pointwise {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Aggregate {
        z: Var,
        a: Var,
    },
    TemporalConv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Subsample {
        x: Var,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    GlobalAvgPool(Var),
    MeanDim1(Var),
    SoftmaxCe {
        logits: Var,
        probs: Vec<F>,
        labels: Vec<usize>,
    },
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

/// Splits `[N, C, rest...]` into `(N, C, prod(rest))`.
fn ncs(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return shape_err(format!("expected at least [N, C], got {shape:?}"));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn nctv(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[n, c, t, v] => Ok((n, c, t, v)),
        _ => shape_err(format!("{what}: expected [N, C, T, V], got {shape:?}")),
    }
}

fn permute_index_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    // out flat index -> in flat index
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push((0..rank).map(|i| idx[i] * in_strides[perm[i]]).sum());
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < out_shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    map
}

impl<F: Real> Op<F> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::GlobalAvgPool(x)
            | Op::MeanDim1(x)
            | Op::Permute { x, .. }
            | Op::MaxPool { x, .. }
            | Op::Subsample { x, .. }
            | Op::Slice { x, .. } => vec![*x],
            Op::Pointwise { x, w, b } | Op::TemporalConv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Aggregate { z, a } => vec![*z, *a],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat(xs) => xs.clone(),
            Op::SoftmaxCe { logits, .. } => vec![*logits],
        }
    }

    /// Vector-Jacobian products for every input, given the output gradient.
    pub(crate) fn backward(
        &self,
        nodes: &[Node<F>],
        out: &Tensor<F>,
        g: &Tensor<F>,
    ) -> Vec<(Var, Tensor<F>)> {
        let val = |v: &Var| &nodes[v.0].value;
        let wants = |v: &Var| nodes[v.0].needs_grad;
        let gd = g.data();
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let ga = gd.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                let gb = gd.iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                vec![
                    (*a, Tensor::new(av.shape(), ga).unwrap()),
                    (*b, Tensor::new(bv.shape(), gb).unwrap()),
                ]
            }
            Op::Scale(x, s) => {
                let gx = gd.iter().map(|&g| g * *s).collect();
                vec![(*x, Tensor::new(val(x).shape(), gx).unwrap())]
            }
            Op::Sum(x) => {
                let shape = val(x).shape();
                vec![(*x, Tensor::full(shape, g.item()))]
            }
            Op::Reshape(x) => vec![(*x, g.clone().reshape(val(x).shape()).unwrap())],
            Op::Permute { x, perm } => {
                let xs = val(x).shape();
                let map = permute_index_map(xs, perm);
                let mut gx = vec![F::zero(); gd.len()];
                for (o, &i) in map.iter().enumerate() {
                    gx[i] = gd[o];
                }
                vec![(*x, Tensor::new(xs, gx).unwrap())]
            }
            Op::Relu(x) => {
                let gx = gd
                    .iter()
                    .zip(val(x).data())
                    .map(|(&g, &x)| if x > F::zero() { g } else { F::zero() })
                    .collect();
                vec![(*x, Tensor::new(val(x).shape(), gx).unwrap())]
            }
            Op::Pointwise { x, w, b } => {
                let (xv, wv) = (val(x), val(w));
                let (n, cin, s) = ncs(xv.shape()).unwrap();
                let cout = wv.shape()[0];
                let (xd, wd) = (xv.data(), wv.data());
                let mut res = Vec::new();
                if wants(x) {
                    let mut gx = vec![F::zero(); xd.len()];
                    gx.par_chunks_mut(s).enumerate().for_each(|(r, row)| {
                        let (ni, ci) = (r / cin, r % cin);
                        for co in 0..cout {
                            let wvv = wd[co * cin + ci];
                            let grow = &gd[(ni * cout + co) * s..][..s];
                            for (a, &b) in row.iter_mut().zip(grow) {
                                *a += wvv * b;
                            }
                        }
                    });
                    res.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
                }
                if wants(w) {
                    let mut gw = vec![F::zero(); wd.len()];
                    gw.par_chunks_mut(cin).enumerate().for_each(|(co, row)| {
                        for (ci, slot) in row.iter_mut().enumerate() {
                            let mut acc = F::zero();
                            for ni in 0..n {
                                let grow = &gd[(ni * cout + co) * s..][..s];
                                let xrow = &xd[(ni * cin + ci) * s..][..s];
                                acc += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<F>();
                            }
                            *slot = acc;
                        }
                    });
                    res.push((*w, Tensor::new(wv.shape(), gw).unwrap()));
                }
                if let Some(b) = b {
                    if wants(b) {
                        res.push((
                            *b,
                            Tensor::new(val(b).shape(), channel_sums(gd, n, cout, s)).unwrap(),
                        ));
                    }
                }
                res
            }
            Op::Aggregate { z, a } => {
                let (zv, av) = (val(z), val(a));
                let zs = zv.shape();
                let (n, k, c, t, v) = (zs[0], zs[1], zs[2], zs[3], zs[4]);
                let (zd, ad) = (zv.data(), av.data());
                let tv = t * v;
                let mut res = Vec::new();
                if wants(z) {
                    let mut gz = vec![F::zero(); zd.len()];
                    gz.par_chunks_mut(tv).enumerate().for_each(|(r, plane)| {
                        let ni = r / (k * c);
                        let ki = (r / c) % k;
                        let ci = r % c;
                        let gplane = &gd[(ni * c + ci) * tv..][..tv];
                        let ak = &ad[ki * v * v..][..v * v];
                        for ti in 0..t {
                            let grow = &gplane[ti * v..][..v];
                            for wi in 0..v {
                                let arow = &ak[wi * v..][..v];
                                plane[ti * v + wi] =
                                    grow.iter().zip(arow).map(|(&a, &b)| a * b).sum();
                            }
                        }
                    });
                    res.push((*z, Tensor::new(zs, gz).unwrap()));
                }
                if wants(a) {
                    let mut ga = vec![F::zero(); ad.len()];
                    ga.par_chunks_mut(v).enumerate().for_each(|(r, row)| {
                        let (ki, wi) = (r / v, r % v);
                        for ni in 0..n {
                            for ci in 0..c {
                                let zplane = &zd[((ni * k + ki) * c + ci) * tv..][..tv];
                                let gplane = &gd[(ni * c + ci) * tv..][..tv];
                                for ti in 0..t {
                                    let zval = zplane[ti * v + wi];
                                    if zval == F::zero() {
                                        continue;
                                    }
                                    for (a, &b) in row.iter_mut().zip(&gplane[ti * v..][..v]) {
                                        *a += zval * b;
                                    }
                                }
                            }
                        }
                    });
                    res.push((*a, Tensor::new(av.shape(), ga).unwrap()));
                }
                res
            }
            Op::TemporalConv {
                x,
                w,
                b,
                stride,
                dilation,
                padding,
            } => {
                let (xv, wv) = (val(x), val(w));
                let (n, cin, t, v) = nctv(xv.shape(), "temporal_conv").unwrap();
                let (cout, kt) = (wv.shape()[0], wv.shape()[2]);
                let to_len = out.shape()[2];
                let (xd, wd) = (xv.data(), wv.data());
                let (s, d, p) = (*stride, *dilation, *padding);
                let src = |to: usize, j: usize| -> Option<usize> {
                    let ti = (to * s + j * d) as isize - p as isize;
                    (ti >= 0 && (ti as usize) < t).then_some(ti as usize)
                };
                let mut res = Vec::new();
                if wants(x) {
                    let mut gx = vec![F::zero(); xd.len()];
                    gx.par_chunks_mut(t * v).enumerate().for_each(|(r, plane)| {
                        let (ni, ci) = (r / cin, r % cin);
                        for co in 0..cout {
                            let gplane = &gd[(ni * cout + co) * to_len * v..][..to_len * v];
                            for j in 0..kt {
                                let wvv = wd[(co * cin + ci) * kt + j];
                                for to in 0..to_len {
                                    if let Some(ti) = src(to, j) {
                                        let dst = &mut plane[ti * v..][..v];
                                        for (a, &b) in dst.iter_mut().zip(&gplane[to * v..][..v]) {
                                            *a += wvv * b;
                                        }
                                    }
                                }
                            }
                        }
                    });
                    res.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
                }
                if wants(w) {
                    let mut gw = vec![F::zero(); wd.len()];
                    gw.par_chunks_mut(cin * kt)
                        .enumerate()
                        .for_each(|(co, block)| {
                            for ci in 0..cin {
                                for j in 0..kt {
                                    let mut acc = F::zero();
                                    for ni in 0..n {
                                        let gplane =
                                            &gd[(ni * cout + co) * to_len * v..][..to_len * v];
                                        let xplane = &xd[(ni * cin + ci) * t * v..][..t * v];
                                        for to in 0..to_len {
                                            if let Some(ti) = src(to, j) {
                                                acc += gplane[to * v..][..v]
                                                    .iter()
                                                    .zip(&xplane[ti * v..][..v])
                                                    .map(|(&a, &b)| a * b)
                                                    .sum::<F>();
                                            }
                                        }
                                    }
                                    block[ci * kt + j] = acc;
                                }
                            }
                        });
                    res.push((*w, Tensor::new(wv.shape(), gw).unwrap()));
                }
                if let Some(b) = b {
                    if wants(b) {
                        res.push((
                            *b,
                            Tensor::new(val(b).shape(), channel_sums(gd, n, cout, to_len * v))
                                .unwrap(),
                        ));
                    }
                }
                res
            }
            Op::MaxPool { x, argmax } => {
                let xv = val(x);
                let (n, c, t, v) = nctv(xv.shape(), "max_pool").unwrap();
                let plane_out = gd.len() / (n * c);
                let mut gx = vec![F::zero(); xv.numel()];
                gx.par_chunks_mut(t * v).enumerate().for_each(|(r, plane)| {
                    let base = r * t * v;
                    for o in r * plane_out..(r + 1) * plane_out {
                        plane[argmax[o] - base] += gd[o];
                    }
                });
                vec![(*x, Tensor::new(xv.shape(), gx).unwrap())]
            }
            Op::Subsample { x, stride } => {
                let xv = val(x);
                let (n, c, t, v) = nctv(xv.shape(), "subsample").unwrap();
                let to_len = out.shape()[2];
                let mut gx = vec![F::zero(); xv.numel()];
                for r in 0..n * c {
                    for to in 0..to_len {
                        let dst = (r * t + to * stride) * v;
                        let srco = (r * to_len + to) * v;
                        gx[dst..dst + v].copy_from_slice(&gd[srco..srco + v]);
                    }
                }
                vec![(*x, Tensor::new(xv.shape(), gx).unwrap())]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xv = val(x);
                let (n, c, s) = ncs(xv.shape()).unwrap();
                let gam = val(gamma).data();
                let m = F::of((n * s) as f64);
                let mut sum_g = vec![F::zero(); c];
                let mut sum_gx = vec![F::zero(); c];
                for ci in 0..c {
                    for ni in 0..n {
                        let o = (ni * c + ci) * s;
                        for k in o..o + s {
                            sum_g[ci] += gd[k];
                            sum_gx[ci] += gd[k] * xhat[k];
                        }
                    }
                }
                let mut res = Vec::new();
                if wants(x) {
                    let mut gx = vec![F::zero(); xv.numel()];
                    gx.par_chunks_mut(s).enumerate().for_each(|(r, row)| {
                        let ci = r % c;
                        let o = r * s;
                        let scale = gam[ci] * inv_std[ci];
                        for (k, slot) in row.iter_mut().enumerate() {
                            *slot = if *train {
                                scale / m * (m * gd[o + k] - sum_g[ci] - xhat[o + k] * sum_gx[ci])
                            } else {
                                scale * gd[o + k]
                            };
                        }
                    });
                    res.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
                }
                if wants(gamma) {
                    res.push((*gamma, Tensor::new(&[c], sum_gx).unwrap()));
                }
                if wants(beta) {
                    res.push((*beta, Tensor::new(&[c], sum_g).unwrap()));
                }
                res
            }
            Op::Concat(xs) => {
                let (n, ctot, s) = ncs(out.shape()).unwrap();
                let mut start = 0;
                let mut res = Vec::new();
                for xi in xs {
                    let shape = val(xi).shape();
                    let ci = shape[1];
                    if wants(xi) {
                        let mut gxi = Vec::with_capacity(n * ci * s);
                        for ni in 0..n {
                            let o = (ni * ctot + start) * s;
                            gxi.extend_from_slice(&gd[o..o + ci * s]);
                        }
                        res.push((*xi, Tensor::new(shape, gxi).unwrap()));
                    }
                    start += ci;
                }
                res
            }
            Op::Slice { x, start } => {
                let xv = val(x);
                let (n, c, s) = ncs(xv.shape()).unwrap();
                let len = out.shape()[1];
                let mut gx = vec![F::zero(); xv.numel()];
                for ni in 0..n {
                    let dst = (ni * c + start) * s;
                    let src = ni * len * s;
                    gx[dst..dst + len * s].copy_from_slice(&gd[src..src + len * s]);
                }
                vec![(*x, Tensor::new(xv.shape(), gx).unwrap())]
            }
            Op::GlobalAvgPool(x) => {
                let xv = val(x);
                let (_, _, s) = ncs(xv.shape()).unwrap();
                let inv = F::one() / F::of(s as f64);
                let gx = gd
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, s))
                    .collect();
                vec![(*x, Tensor::new(xv.shape(), gx).unwrap())]
            }
            Op::MeanDim1(x) => {
                let xv = val(x);
                let (a, b, s) = ncs(xv.shape()).unwrap();
                let inv = F::one() / F::of(b as f64);
                let mut gx = vec![F::zero(); xv.numel()];
                for ai in 0..a {
                    for bi in 0..b {
                        let dst = (ai * b + bi) * s;
                        for k in 0..s {
                            gx[dst + k] = gd[ai * s + k] * inv;
                        }
                    }
                }
                vec![(*x, Tensor::new(xv.shape(), gx).unwrap())]
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let lv = val(logits);
                let (n, k) = (lv.shape()[0], lv.shape()[1]);
                let scale = g.item() / F::of(n as f64);
                let mut gl = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    gl[i * k + y] -= F::one();
                }
                gl.iter_mut().for_each(|x| *x *= scale);
                vec![(*logits, Tensor::new(lv.shape(), gl).unwrap())]
            }
        }
    }
}

/// Per-channel sums of a `[N, C, S]` buffer.
fn channel_sums<F: Real>(d: &[F], n: usize, c: usize, s: usize) -> Vec<F> {
    (0..c)
        .map(|ci| {
            let mut acc = F::zero();
            for ni in 0..n {
                acc += d[(ni * c + ci) * s..][..s].iter().copied().sum::<F>();
            }
            acc
        })
        .collect()
}

impl<F: Real> Tape<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Element-wise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("mul: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = F::of(s);
        let xv = self.value(x);
        let t = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * s).collect()).unwrap();
        self.push(t, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return shape_err(format!(
                "permute: {perm:?} is not a permutation of rank {rank}"
            ));
        }
        let map = permute_index_map(xv.shape(), perm);
        let shape: Vec<usize> = perm.iter().map(|&p| xv.shape()[p]).collect();
        let data = map.iter().map(|&i| xv.data()[i]).collect();
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let t = Tensor::new(xv.shape(), data).unwrap();
        self.push(t, Op::Relu(x))
    }

    /// Per-position linear map: `x [N, Cin, ...]`, `w [Cout, Cin]`, `b [Cout]`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin, s) = ncs(xv.shape())?;
        if wv.rank() != 2 || wv.shape()[1] != cin {
            return shape_err(format!(
                "pointwise_conv: weight {:?} for input {:?}",
                wv.shape(),
                xv.shape()
            ));
        }
        let cout = wv.shape()[0];
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [cout] {
                    return shape_err(format!(
                        "pointwise_conv: bias {:?}, expected [{cout}]",
                        bv.shape()
                    ));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = vec![F::zero(); n * cout * s];
        out.par_chunks_mut(s).enumerate().for_each(|(r, row)| {
            let (ni, co) = (r / cout, r % cout);
            if let Some(bd) = bias {
                row.iter_mut().for_each(|y| *y = bd[co]);
            }
            for ci in 0..cin {
                let wvv = wd[co * cin + ci];
                let xrow = &xd[(ni * cin + ci) * s..][..s];
                for (y, &xx) in row.iter_mut().zip(xrow) {
                    *y += wvv * xx;
                }
            }
        });
        let mut shape = xv.shape().to_vec();
        shape[1] = cout;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Pointwise { x, w, b }))
    }

    /// `linear(x [N, Cin], w [Cout, Cin], b [Cout]) -> [N, Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return shape_err(format!(
                "linear: expected [N, Cin], got {:?}",
                self.shape(x)
            ));
        }
        self.pointwise_conv(x, w, b)
    }

    /// `y[n,c,t,v] = Σ_k Σ_w z[n,k,c,t,w] · a[k,w,v]` for `z [N, K, C, T, V]`
    /// and `a [K, V, V]`.
    pub fn graph_aggregate(&mut self, z: Var, a: Var) -> Result<Var> {
        let (zv, av) = (self.value(z), self.value(a));
        let (n, k, c, t, v) = match zv.shape() {
            &[n, k, c, t, v] => (n, k, c, t, v),
            s => {
                return shape_err(format!(
                    "graph_aggregate: expected [N, K, C, T, V], got {s:?}"
                ))
            }
        };
        if av.shape() != [k, v, v] {
            return shape_err(format!(
                "graph_aggregate: coefficients {:?}, expected [{k}, {v}, {v}]",
                av.shape()
            ));
        }
        let (zd, ad) = (zv.data(), av.data());
        let tv = t * v;
        let mut out = vec![F::zero(); n * c * tv];
        out.par_chunks_mut(tv).enumerate().for_each(|(r, plane)| {
            let (ni, ci) = (r / c, r % c);
            for ti in 0..t {
                let row = &mut plane[ti * v..][..v];
                for ki in 0..k {
                    let zrow = &zd[((ni * k + ki) * c + ci) * tv + ti * v..][..v];
                    for (wi, &zval) in zrow.iter().enumerate() {
                        if zval == F::zero() {
                            continue;
                        }
                        let arow = &ad[(ki * v + wi) * v..][..v];
                        for (y, &aa) in row.iter_mut().zip(arow) {
                            *y += zval * aa;
                        }
                    }
                }
            }
        });
        let t_out = Tensor::new(&[n, c, t, v], out)?;
        Ok(self.push(t_out, Op::Aggregate { z, a }))
    }

    /// Spatial graph convolution
    /// `Y[n,co,t,v] = Σ_k Σ_ci Σ_w W[k,co,ci] · X[n,ci,t,w] · A[k,w,v]`
    /// (+ `Σ_k Σ_w b[k,co] · A[k,w,v]` with a bias).
    ///
    /// `x [N, Cin, T, V]`, `a [K, V, V]`, `w [K, Cout, Cin]`, `b [K, Cout]`.
    pub fn graph_conv(&mut self, x: Var, a: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, cin, t, v) = nctv(self.shape(x), "graph_conv")?;
        let (k, cout) = match self.shape(w) {
            &[k, cout, c] if c == cin => (k, cout),
            s => return shape_err(format!("graph_conv: weight {s:?} for {cin} input channels")),
        };
        if self.shape(a) != [k, v, v] {
            return shape_err(format!(
                "graph_conv: coefficients {:?}, expected [{k}, {v}, {v}]",
                self.shape(a)
            ));
        }
        let w2 = self.reshape(w, &[k * cout, cin])?;
        let b2 = match b {
            Some(b) => Some(self.reshape(b, &[k * cout])?),
            None => None,
        };
        let z = self.pointwise_conv(x, w2, b2)?;
        let z = self.reshape(z, &[n, k, cout, t, v])?;
        self.graph_aggregate(z, a)
    }

    /// 1D convolution along `T` applied independently to every joint.
    /// `x [N, Cin, T, V]`, `w [Cout, Cin, k]`.
    pub fn temporal_conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin, t, v) = nctv(xv.shape(), "temporal_conv")?;
        let (cout, kt) = match wv.shape() {
            &[co, ci, k] if ci == cin && k > 0 => (co, k),
            s => {
                return shape_err(format!(
                    "temporal_conv: weight {s:?} for {cin} input channels"
                ))
            }
        };
        if stride == 0 || dilation == 0 {
            return shape_err("temporal_conv: stride and dilation must be positive".into());
        }
        let span = dilation * (kt - 1) + 1;
        if t + 2 * padding < span {
            return shape_err(format!(
                "temporal_conv: {t} frames too short for span {span}"
            ));
        }
        let to_len = (t + 2 * padding - span) / stride + 1;
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [cout] {
                    return shape_err(format!("temporal_conv: bias {:?}", bv.shape()));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = vec![F::zero(); n * cout * to_len * v];
        out.par_chunks_mut(to_len * v)
            .enumerate()
            .for_each(|(r, plane)| {
                let (ni, co) = (r / cout, r % cout);
                if let Some(bd) = bias {
                    plane.iter_mut().for_each(|y| *y = bd[co]);
                }
                for ci in 0..cin {
                    let xplane = &xd[(ni * cin + ci) * t * v..][..t * v];
                    for j in 0..kt {
                        let wvv = wd[(co * cin + ci) * kt + j];
                        for to in 0..to_len {
                            let ti = (to * stride + j * dilation) as isize - padding as isize;
                            if ti < 0 || ti as usize >= t {
                                continue;
                            }
                            let xrow = &xplane[ti as usize * v..][..v];
                            for (y, &xx) in plane[to * v..][..v].iter_mut().zip(xrow) {
                                *y += wvv * xx;
                            }
                        }
                    }
                }
            });
        let t_out = Tensor::new(&[n, cout, to_len, v], out)?;
        Ok(self.push(
            t_out,
            Op::TemporalConv {
                x,
                w,
                b,
                stride,
                dilation,
                padding,
            },
        ))
    }

    /// Max over temporal windows of `kernel` frames; out-of-range frames are
    /// ignored.
    pub fn temporal_max_pool(
        &mut self,
        x: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, t, v) = nctv(xv.shape(), "temporal_max_pool")?;
        if kernel == 0 || stride == 0 || padding >= kernel || t + 2 * padding < kernel {
            return shape_err(format!(
                "temporal_max_pool: kernel {kernel}, stride {stride}, padding {padding}"
            ));
        }
        let to_len = (t + 2 * padding - kernel) / stride + 1;
        let xd = xv.data();
        let plane_out = to_len * v;
        let mut out = vec![F::zero(); n * c * plane_out];
        let mut argmax = vec![0usize; n * c * plane_out];
        out.par_chunks_mut(plane_out)
            .zip(argmax.par_chunks_mut(plane_out))
            .enumerate()
            .for_each(|(r, (plane, arg))| {
                let base = r * t * v;
                for to in 0..to_len {
                    for vi in 0..v {
                        let mut best: Option<(F, usize)> = None;
                        for j in 0..kernel {
                            let ti = (to * stride + j) as isize - padding as isize;
                            if ti < 0 || ti as usize >= t {
                                continue;
                            }
                            let idx = base + ti as usize * v + vi;
                            if best.is_none_or(|(b, _)| xd[idx] > b) {
                                best = Some((xd[idx], idx));
                            }
                        }
                        let (b, i) = best.expect("window overlaps the sequence");
                        plane[to * v + vi] = b;
                        arg[to * v + vi] = i;
                    }
                }
            });
        let t_out = Tensor::new(&[n, c, to_len, v], out)?;
        Ok(self.push(t_out, Op::MaxPool { x, argmax }))
    }

    /// Keeps every `stride`-th frame starting at frame 0.
    pub fn temporal_subsample(&mut self, x: Var, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, t, v) = nctv(xv.shape(), "temporal_subsample")?;
        if stride == 0 {
            return shape_err("temporal_subsample: stride must be positive".into());
        }
        let to_len = t.div_ceil(stride);
        let mut out = Vec::with_capacity(n * c * to_len * v);
        for r in 0..n * c {
            for to in 0..to_len {
                let o = (r * t + to * stride) * v;
                out.extend_from_slice(&xv.data()[o..o + v]);
            }
        }
        let t_out = Tensor::new(&[n, c, to_len, v], out)?;
        Ok(self.push(t_out, Op::Subsample { x, stride }))
    }

    /// Per-channel normalization of `x [N, C, ...]`.
    ///
    /// In train mode batch statistics are used and `running` (mean, var) is
    /// updated with momentum 0.1 using the unbiased variance. Eval mode
    /// requires `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&mut Tensor<F>, &mut Tensor<F>)>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, s) = ncs(xv.shape())?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err(format!("batch_norm: affine parameters must be [{c}]"));
        }
        if let Some((rm, rv)) = &running {
            if rm.shape() != [c] || rv.shape() != [c] {
                return shape_err(format!("batch_norm: running statistics must be [{c}]"));
            }
        }
        let xd = xv.data();
        let eps = F::of(BN_EPS);
        let count = n * s;
        let train = mode == BatchNormMode::Train;
        let (mean, var): (Vec<F>, Vec<F>) = if train {
            (0..c)
                .into_par_iter()
                .map(|ci| {
                    let mut sum = F::zero();
                    for ni in 0..n {
                        sum += xd[(ni * c + ci) * s..][..s].iter().copied().sum::<F>();
                    }
                    let mean = sum / F::of(count as f64);
                    let mut sq = F::zero();
                    for ni in 0..n {
                        sq += xd[(ni * c + ci) * s..][..s]
                            .iter()
                            .map(|&x| (x - mean) * (x - mean))
                            .sum::<F>();
                    }
                    (mean, sq / F::of(count as f64))
                })
                .unzip()
        } else {
            let (rm, rv) = running.as_ref().ok_or_else(|| {
                Error::Shape("batch_norm: eval mode needs running statistics".into())
            })?;
            (rm.data().to_vec(), rv.data().to_vec())
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![F::zero(); xd.len()];
        let mut out = vec![F::zero(); xd.len()];
        out.par_chunks_mut(s)
            .zip(xhat.par_chunks_mut(s))
            .enumerate()
            .for_each(|(r, (row, hrow))| {
                let ci = r % c;
                let xrow = &xd[r * s..][..s];
                for k in 0..s {
                    let h = (xrow[k] - mean[ci]) * inv_std[ci];
                    hrow[k] = h;
                    row[k] = gd[ci] * h + bd[ci];
                }
            });
        if train {
            if let Some((rm, rv)) = running {
                let mom = F::of(BN_MOMENTUM);
                let unbias = if count > 1 {
                    F::of(count as f64 / (count - 1) as f64)
                } else {
                    F::one()
                };
                for ci in 0..c {
                    let m = &mut rm.data_mut()[ci];
                    *m = (F::one() - mom) * *m + mom * mean[ci];
                    let v = &mut rv.data_mut()[ci];
                    *v = (F::one() - mom) * *v + mom * var[ci] * unbias;
                }
            }
        }
        let t_out = Tensor::new(self.shape(x), out)?;
        Ok(self.push(
            t_out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Concatenates `[N, C_i, ...]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (n, _, s) = ncs(self.shape(*first))?;
        let rest = self.shape(*first)[2..].to_vec();
        let mut ctot = 0;
        for x in xs {
            let sh = self.shape(*x);
            if sh.len() < 2 || sh[0] != n || sh[2..] != rest[..] {
                return shape_err(format!(
                    "concat: {:?} does not match {:?}",
                    sh,
                    self.shape(*first)
                ));
            }
            ctot += sh[1];
        }
        let mut out = Vec::with_capacity(n * ctot * s);
        for ni in 0..n {
            for x in xs {
                let xv = self.value(*x);
                let ci = xv.shape()[1];
                out.extend_from_slice(&xv.data()[ni * ci * s..][..ci * s]);
            }
        }
        let mut shape = vec![n, ctot];
        shape.extend(rest);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Concat(xs.to_vec())))
    }

    /// Channels `[start, start + len)` of `x [N, C, ...]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, s) = ncs(xv.shape())?;
        if start + len > c || len == 0 {
            return shape_err(format!("slice [{start}, {}) of {c} channels", start + len));
        }
        let mut out = Vec::with_capacity(n * len * s);
        for ni in 0..n {
            out.extend_from_slice(&xv.data()[(ni * c + start) * s..][..len * s]);
        }
        let mut shape = xv.shape().to_vec();
        shape[1] = len;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Slice { x, start }))
    }

    /// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, s) = ncs(xv.shape())?;
        let inv = F::one() / F::of(s as f64);
        let out = xv
            .data()
            .chunks_exact(s)
            .map(|r| r.iter().copied().sum::<F>() * inv)
            .collect();
        let t = Tensor::new(&[n, c], out)?;
        Ok(self.push(t, Op::GlobalAvgPool(x)))
    }

    /// Mean over axis 1: `[A, B, ...] -> [A, ...]`.
    pub fn mean_dim1(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (a, b, s) = ncs(xv.shape())?;
        let inv = F::one() / F::of(b as f64);
        let mut out = vec![F::zero(); a * s];
        for ai in 0..a {
            for bi in 0..b {
                for k in 0..s {
                    out[ai * s + k] += xv.data()[(ai * b + bi) * s + k];
                }
            }
        }
        out.iter_mut().for_each(|x| *x *= inv);
        let mut shape = vec![a];
        shape.extend_from_slice(&xv.shape()[2..]);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::MeanDim1(x)))
    }

    /// Mean softmax cross-entropy over the batch. Returns the scalar loss
    /// and the per-sample class probabilities `[N, K]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor<F>)> {
        let lv = self.value(logits);
        let (n, k) = match lv.shape() {
            &[n, k] => (n, k),
            s => return shape_err(format!("softmax_cross_entropy: expected [N, K], got {s:?}")),
        };
        if labels.len() != n {
            return shape_err(format!("{} labels for batch of {n}", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Label {
                label: bad,
                num_classes: k,
            });
        }
        let mut probs = vec![F::zero(); n * k];
        let mut total = F::zero();
        for i in 0..n {
            let row = &lv.data()[i * k..][..k];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / z;
            }
            total += lse - row[labels[i]];
        }
        let loss = total / F::of(n as f64);
        let prob_t = Tensor::new(&[n, k], probs.clone())?;
        let v = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        );
        Ok((v, prob_t))
    }
}
