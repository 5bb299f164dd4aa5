use num_complex::Complex64;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::spectral::FftPlan;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    None,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, padding: usize },
    Linear { x: Var, w: Var, b: Var },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Reshape { x: Var },
    Affine { x: Var, scale: f64 },
    Add { a: Var, b: Var },
    SubConst { x: Var },
    Square { x: Var },
    ExpClamped { x: Var, clamped: Vec<bool> },
    Sum { x: Var },
    Scale { x: Var, c: f64 },
    AbsSum { x: Var },
    L2Norm { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, reduction: Reduction },
    SpectralFilter { x: Var, mask: Var, plan: FftPlan, spectra: Vec<Complex64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run recording of primitive operations. Nodes are appended in
/// evaluation order, so the node list is already topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(op, format!("expected a 4-d tensor, got {s:?}"))),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn out(&self, data: Vec<f64>, shape: &[usize], inputs: &[Var]) -> Tensor {
        let t = Tensor::new(shape, data).expect("op produced inconsistent shape");
        if inputs.iter().any(|&v| self.tracked(v)) {
            t.with_grad()
        } else {
            t
        }
    }

    /// Records a leaf. Its `requires_grad` flag decides whether backward fills its grad.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass for a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let [n, c, h, wd] = dims4("conv2d", self.value(x))?;
        let [k, kc, kh, kw] = dims4("conv2d", self.value(w))?;
        if kc != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if self.value(b).shape() != [k] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match {k} output channels", self.value(b).shape()),
            ));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, wd + 2 * padding),
            ));
        }
        let ho = h + 2 * padding - kh + 1;
        let wo = wd + 2 * padding - kw + 1;
        let input = self.value(x).data();
        let kernel = self.value(w).data();
        let bias = self.value(b).data();
        let mut out = vec![0.0; n * k * ho * wo];
        for ni in 0..n {
            for ki in 0..k {
                let plane = &mut out[(ni * k + ki) * ho * wo..][..ho * wo];
                plane.iter_mut().for_each(|v| *v = bias[ki]);
                for ci in 0..c {
                    let src = &input[(ni * c + ci) * h * wd..][..h * wd];
                    for i in 0..kh {
                        for j in 0..kw {
                            let wv = kernel[((ki * c + ci) * kh + i) * kw + j];
                            let (x0, x1) = col_range(j, padding, wd, wo);
                            for oy in 0..ho {
                                let iy = oy + i;
                                if iy < padding || iy - padding >= h {
                                    continue;
                                }
                                let srow = &src[(iy - padding) * wd..][..wd];
                                let orow = &mut plane[oy * wo..][..wo];
                                for ox in x0..x1 {
                                    orow[ox] += wv * srow[ox + j - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = self.out(out, &[n, k, ho, wo], &[x, w, b]);
        Ok(self.push(t, Op::Conv2d { x, w, b, padding }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = match *self.value(x).shape() {
            [n, f] => (n, f),
            ref s => return Err(Error::shape("linear", format!("expected [N, features], got {s:?}"))),
        };
        let (fout, win) = match *self.value(w).shape() {
            [o, i] => (o, i),
            ref s => return Err(Error::shape("linear", format!("expected weight [out, in], got {s:?}"))),
        };
        if win != fin || self.value(b).shape() != [fout] {
            return Err(Error::shape(
                "linear",
                format!("input features {fin}, weight {:?}, bias {:?}", self.value(w).shape(), self.value(b).shape()),
            ));
        }
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; n * fout];
        for ni in 0..n {
            let row = &xd[ni * fin..][..fin];
            for o in 0..fout {
                let wr = &wdat[o * fin..][..fin];
                out[ni * fout + o] = bd[o] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let t = self.out(out, &[n, fout], &[x, w, b]);
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let t = self.out(out, &shape, &[x]);
        self.push(t, Op::Relu { x })
    }

    /// 2×2 max pooling with stride 2; ties resolve to the first maximum.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("maxpool2", self.value(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", format!("spatial extents {h}x{w} must be even")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let t = self.out(out, &[n, c, ho, wo], &[x]);
        Ok(self.push(t, Op::MaxPool2 { x, argmax }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {shape:?}", self.value(x).shape())));
        }
        let data = self.value(x).data().to_vec();
        let t = self.out(data, shape, &[x]);
        Ok(self.push(t, Op::Reshape { x }))
    }

    /// Collapses all but the leading dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = *shape.first().ok_or_else(|| Error::shape("flatten", "scalar input"))?;
        let rest = shape[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// `x * scale + shift`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out = self.value(x).data().iter().map(|&v| v * scale + shift).collect();
        let t = self.out(out, &shape, &[x]);
        self.push(t, Op::Affine { x, scale })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let shape = self.value(a).shape().to_vec();
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(p, q)| p + q).collect();
        let t = self.out(out, &shape, &[a, b]);
        Ok(self.push(t, Op::Add { a, b }))
    }

    /// `x - c` for a constant of the same length.
    pub fn sub_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if self.value(x).numel() != c.len() {
            return Err(Error::shape(
                "sub_const",
                format!("{} values vs constant of length {}", self.value(x).numel(), c.len()),
            ));
        }
        let shape = self.value(x).shape().to_vec();
        let out = self.value(x).data().iter().zip(c).map(|(p, q)| p - q).collect();
        let t = self.out(out, &shape, &[x]);
        Ok(self.push(t, Op::SubConst { x }))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out = self.value(x).data().iter().map(|&v| v * v).collect();
        let t = self.out(out, &shape, &[x]);
        self.push(t, Op::Square { x })
    }

    /// `exp(min(x, cap))`; clamped entries pass no gradient.
    pub fn exp_clamped(&mut self, x: Var, cap: f64) -> Var {
        let shape = self.value(x).shape().to_vec();
        let clamped: Vec<bool> = self.value(x).data().iter().map(|&v| v > cap).collect();
        let out = self.value(x).data().iter().map(|&v| v.min(cap).exp()).collect();
        let t = self.out(out, &shape, &[x]);
        self.push(t, Op::ExpClamped { x, clamped })
    }

    /// Number of entries clamped by an [`Tape::exp_clamped`] node.
    pub fn clamp_count(&self, v: Var) -> usize {
        match &self.nodes[v.0].op {
            Op::ExpClamped { clamped, .. } => clamped.iter().filter(|&&c| c).count(),
            _ => 0,
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let t = self.out(vec![s], &[], &[x]);
        self.push(t, Op::Sum { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        let t = self.out(out, &shape, &[x]);
        self.push(t, Op::Scale { x, c })
    }

    /// ℓ1 norm; the subgradient at zero is taken as zero.
    pub fn abs_sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.abs()).sum();
        let t = self.out(vec![s], &[], &[x]);
        self.push(t, Op::AbsSum { x })
    }

    pub fn l2_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = self.out(vec![s], &[], &[x]);
        self.push(t, Op::L2Norm { x })
    }

    /// Softmax cross entropy, stabilized by subtracting the row maximum.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
        let (n, c) = match *self.value(logits).shape() {
            [n, c] => (n, c),
            ref s => return Err(Error::shape("cross_entropy", format!("expected [N, C] logits, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{n} rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut losses = vec![0.0; n];
        for i in 0..n {
            let row = &z[i * c..][..c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / sum;
            }
            losses[i] = lse - row[labels[i]];
        }
        let (data, shape) = match reduction {
            Reduction::Mean => (vec![losses.iter().sum::<f64>() / n as f64], vec![]),
            Reduction::None => (losses, vec![n]),
        };
        let t = self.out(data, &shape, &[logits]);
        Ok(self.push(t, Op::CrossEntropy { logits, labels: labels.to_vec(), probs, reduction }))
    }

    /// `Re(ifft2(mask ⊙ fft2(x)))` applied to every trailing `d×d` plane of `x`.
    /// A `[d, d]` mask is shared by all planes; a `[n, d, d]` mask gives plane
    /// `p` its own mask `p`, where `n` must equal the number of planes.
    pub fn spectral_filter(&mut self, x: Var, mask: Var) -> Result<Var> {
        let mshape = self.value(mask).shape();
        let d = match *mshape {
            [a, b] | [_, a, b] if a == b => a,
            ref s => {
                return Err(Error::shape("spectral_filter", format!("mask must be [d, d] or [n, d, d], got {s:?}")))
            }
        };
        let xshape = self.value(x).shape().to_vec();
        if xshape.len() < 2 || xshape[xshape.len() - 1] != d || xshape[xshape.len() - 2] != d {
            return Err(Error::shape("spectral_filter", format!("input {xshape:?} does not end in {d}x{d}")));
        }
        let plan = FftPlan::new(d)?;
        let dd = d * d;
        let planes = self.value(x).numel() / dd;
        let mask_planes = self.value(mask).numel() / dd;
        if mask_planes != 1 && mask_planes != planes {
            return Err(Error::shape(
                "spectral_filter",
                format!("{mask_planes} mask planes for {planes} input planes"),
            ));
        }
        let mut spectra = Vec::with_capacity(planes * dd);
        let mut out = Vec::with_capacity(planes * dd);
        let masks = self.value(mask).data();
        let scale = 1.0 / dd as f64;
        for (p, plane) in self.value(x).data().chunks_exact(dd).enumerate() {
            let m = &masks[(p % mask_planes) * dd..][..dd];
            let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            plan.process_2d(&mut buf, false);
            spectra.extend_from_slice(&buf);
            buf.iter_mut().zip(m).for_each(|(z, &mv)| *z *= mv);
            plan.process_2d(&mut buf, true);
            out.extend(buf.iter().map(|z| z.re * scale));
        }
        let t = self.out(out, &xshape, &[x, mask]);
        Ok(self.push(t, Op::SpectralFilter { x, mask, plan, spectra }))
    }

    /// Reverse pass from a scalar. Fills `grad` on every differentiable leaf
    /// reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.set_grad(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let tracked = |v: Var| self.nodes[v.0].value.requires_grad();
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.numel();
                grads[v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, padding } => {
                let padding = *padding;
                let [n, c, h, wd] = dims4("conv2d", self.value(*x)).unwrap();
                let [k, _, kh, kw] = dims4("conv2d", self.value(*w)).unwrap();
                let ho = h + 2 * padding - kh + 1;
                let wo = wd + 2 * padding - kw + 1;
                if tracked(*b) {
                    let gb = acc!(*b);
                    for ni in 0..n {
                        for ki in 0..k {
                            gb[ki] += g[(ni * k + ki) * ho * wo..][..ho * wo].iter().sum::<f64>();
                        }
                    }
                }
                if tracked(*w) {
                    let input = self.value(*x).data();
                    let mut gw = vec![0.0; k * c * kh * kw];
                    for ni in 0..n {
                        for ki in 0..k {
                            let gplane = &g[(ni * k + ki) * ho * wo..][..ho * wo];
                            for ci in 0..c {
                                let src = &input[(ni * c + ci) * h * wd..][..h * wd];
                                for i in 0..kh {
                                    for j in 0..kw {
                                        let (x0, x1) = col_range(j, padding, wd, wo);
                                        let mut s = 0.0;
                                        for oy in 0..ho {
                                            let iy = oy + i;
                                            if iy < padding || iy - padding >= h {
                                                continue;
                                            }
                                            let srow = &src[(iy - padding) * wd..][..wd];
                                            let grow = &gplane[oy * wo..][..wo];
                                            for ox in x0..x1 {
                                                s += grow[ox] * srow[ox + j - padding];
                                            }
                                        }
                                        gw[((ki * c + ci) * kh + i) * kw + j] += s;
                                    }
                                }
                            }
                        }
                    }
                    acc!(*w).iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
                }
                if tracked(*x) {
                    let kernel = self.value(*w).data();
                    let gx = acc!(*x);
                    for ni in 0..n {
                        for ki in 0..k {
                            let gplane = &g[(ni * k + ki) * ho * wo..][..ho * wo];
                            for ci in 0..c {
                                let dst = &mut gx[(ni * c + ci) * h * wd..][..h * wd];
                                for i in 0..kh {
                                    for j in 0..kw {
                                        let wv = kernel[((ki * c + ci) * kh + i) * kw + j];
                                        let (x0, x1) = col_range(j, padding, wd, wo);
                                        for oy in 0..ho {
                                            let iy = oy + i;
                                            if iy < padding || iy - padding >= h {
                                                continue;
                                            }
                                            let drow = &mut dst[(iy - padding) * wd..][..wd];
                                            let grow = &gplane[oy * wo..][..wo];
                                            for ox in x0..x1 {
                                                drow[ox + j - padding] += wv * grow[ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let fout = self.value(*w).shape()[0];
                if tracked(*b) {
                    let gb = acc!(*b);
                    for ni in 0..n {
                        for o in 0..fout {
                            gb[o] += g[ni * fout + o];
                        }
                    }
                }
                if tracked(*w) {
                    let xd = self.value(*x).data();
                    let gw = acc!(*w);
                    for ni in 0..n {
                        let row = &xd[ni * fin..][..fin];
                        for o in 0..fout {
                            let go = g[ni * fout + o];
                            gw[o * fin..][..fin].iter_mut().zip(row).for_each(|(a, &r)| *a += go * r);
                        }
                    }
                }
                if tracked(*x) {
                    let wd = self.value(*w).data();
                    let gx = acc!(*x);
                    for ni in 0..n {
                        let grow = &mut gx[ni * fin..][..fin];
                        for o in 0..fout {
                            let go = g[ni * fout + o];
                            grow.iter_mut().zip(&wd[o * fin..][..fin]).for_each(|(a, &wv)| *a += go * wv);
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                let gx = acc!(*x);
                for ((a, &gi), &xi) in gx.iter_mut().zip(g).zip(xd) {
                    if xi > 0.0 {
                        *a += gi;
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let gx = acc!(*x);
                for (&src, &gi) in argmax.iter().zip(g) {
                    gx[src] += gi;
                }
            }
            Op::Reshape { x } | Op::SubConst { x } => {
                acc!(*x).iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::Affine { x, scale } => {
                acc!(*x).iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
            }
            Op::Scale { x, c } => {
                acc!(*x).iter_mut().zip(g).for_each(|(a, b)| *a += b * c);
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if tracked(v) {
                        acc!(v).iter_mut().zip(g).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Square { x } => {
                let xd = self.value(*x).data();
                let gx = acc!(*x);
                for ((a, &gi), &xi) in gx.iter_mut().zip(g).zip(xd) {
                    *a += 2.0 * xi * gi;
                }
            }
            Op::ExpClamped { x, clamped } => {
                let y = node.value.data();
                let gx = acc!(*x);
                for i in 0..y.len() {
                    if !clamped[i] {
                        gx[i] += g[i] * y[i];
                    }
                }
            }
            Op::Sum { x } => {
                acc!(*x).iter_mut().for_each(|a| *a += g[0]);
            }
            Op::AbsSum { x } => {
                let xd = self.value(*x).data();
                let gx = acc!(*x);
                for (a, &xi) in gx.iter_mut().zip(xd) {
                    if xi != 0.0 {
                        *a += g[0] * xi.signum();
                    }
                }
            }
            Op::L2Norm { x } => {
                let norm = node.value.item();
                if norm > 0.0 {
                    let xd = self.value(*x).data();
                    let gx = acc!(*x);
                    for (a, &xi) in gx.iter_mut().zip(xd) {
                        *a += g[0] * xi / norm;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs, reduction } => {
                let n = labels.len();
                let c = probs.len() / n;
                let gl = acc!(*logits);
                for i in 0..n {
                    let gi = match reduction {
                        Reduction::Mean => g[0] / n as f64,
                        Reduction::None => g[i],
                    };
                    for j in 0..c {
                        let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                        gl[i * c + j] += gi * (probs[i * c + j] - onehot);
                    }
                }
            }
            Op::SpectralFilter { x, mask, plan, spectra } => {
                let d = plan.len();
                let dd = d * d;
                let scale = 1.0 / dd as f64;
                let masks = self.value(*mask).data();
                let mask_planes = masks.len() / dd;
                let mut gm = if tracked(*mask) { Some(vec![0.0; masks.len()]) } else { None };
                let mut gx = if tracked(*x) { Some(vec![0.0; g.len()]) } else { None };
                for (p, gplane) in g.chunks_exact(dd).enumerate() {
                    let mp = (p % mask_planes) * dd;
                    let m = &masks[mp..][..dd];
                    let mut buf: Vec<Complex64> = gplane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                    plan.process_2d(&mut buf, false);
                    if let Some(gm) = gm.as_mut() {
                        let spec = &spectra[p * dd..][..dd];
                        for (a, (s, b)) in gm[mp..][..dd].iter_mut().zip(spec.iter().zip(&buf)) {
                            *a += (s * b.conj()).re * scale;
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        // The filter is self-adjoint for a real mask.
                        buf.iter_mut().zip(m).for_each(|(z, &mv)| *z *= mv);
                        plan.process_2d(&mut buf, true);
                        for (a, z) in gx[p * dd..][..dd].iter_mut().zip(&buf) {
                            *a += z.re * scale;
                        }
                    }
                }
                if let Some(gm) = gm {
                    acc!(*mask).iter_mut().zip(&gm).for_each(|(a, b)| *a += b);
                }
                if let Some(gx) = gx {
                    acc!(*x).iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

/// Output columns `[x0, x1)` whose tap `j` reads an in-bounds input column.
fn col_range(j: usize, padding: usize, w: usize, wo: usize) -> (usize, usize) {
    let x0 = padding.saturating_sub(j);
    let x1 = (w + padding).saturating_sub(j).min(wo);
    (x0, x1.max(x0))
}
