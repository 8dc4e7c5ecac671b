use super::kernels::{self, ConvGeom};
use super::{shape_err, Element, Result, Tensor, TensorError, PROB_EPS};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    Depthwise { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    Dense { x: usize, w: usize, b: Option<usize>, n: usize, fin: usize, fout: usize },
    Relu(usize),
    Hardswish(usize),
    Sigmoid(usize),
    GlobalAvgPool { x: usize, inner: usize },
    Upsample { x: usize, planes: usize, h: usize, w: usize, factor: usize },
    Affine { x: usize, scale: usize, shift: usize, c: usize, inner: usize },
    ChannelScale { x: usize, gate: usize, inner: usize },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Concat { inputs: Vec<usize>, outer: usize, chunks: Vec<usize> },
    Sum(usize),
    Mean(usize),
    Mse { pred: usize, target: usize },
    AnomalyProb(usize),
    Bce { prob: usize, targets: Vec<T>, mask: Vec<bool> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Sequential record of tensor operations. Every node's inputs precede it,
/// so reverse index order is a valid topological order for backward.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `tensor` as a leaf. Its `requires_grad` flag decides whether
    /// backward populates its gradient.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Moves a leaf tensor (with its gradient) out of the graph.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if self.consumed {
            return Err(TensorError::Argument { op: "graph", detail: "graph already consumed by backward".into() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, i: usize) -> &[T] {
        self.nodes[i].value.data()
    }

    fn conv_geom(&self, op: &'static str, x: Var, w: Var, stride: usize, pad: usize, depthwise: bool) -> Result<ConvGeom> {
        if stride == 0 {
            return Err(TensorError::Argument { op, detail: "stride must be positive".into() });
        }
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 {
            return shape_err(op, format!("input must be NCHW, got {xs:?}"));
        }
        if ws.len() != 4 {
            return shape_err(op, format!("kernel must be [out, in, kh, kw], got {ws:?}"));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, k_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if depthwise {
            if c_out != c || k_in != 1 {
                return shape_err(op, format!("kernel {ws:?} does not match {c} input channels (expected [{c}, 1, kh, kw])"));
            }
        } else if k_in != c {
            return shape_err(op, format!("kernel expects {k_in} input channels, input has {c}"));
        }
        let (Some(oh), Some(ow)) = (
            ConvGeom::out_extent(h, kh, stride, pad),
            ConvGeom::out_extent(wd, kw, stride, pad),
        ) else {
            return shape_err(op, format!("kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {pad})"));
        };
        Ok(ConvGeom { n, c_in: c, h, w: wd, c_out, kh, kw, stride, pad, oh, ow })
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, len: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [len] {
                return shape_err(op, format!("bias shape {:?}, expected [{len}]", self.shape(b)));
            }
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv2d", x, w, stride, pad, false)?;
        self.check_bias("conv2d", b, geom.c_out)?;
        let out = kernels::conv2d(self.data(x.0), self.data(w.0), b.map(|b| self.data(b.0)), &geom);
        let value = Tensor::new(vec![geom.n, geom.c_out, geom.oh, geom.ow], out)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        self.push(value, Op::Conv2d { x: x.0, w: w.0, b: b.map(|b| b.0), geom }, &inputs)
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("depthwise_conv2d", x, w, stride, pad, true)?;
        self.check_bias("depthwise_conv2d", b, geom.c_out)?;
        let out = kernels::depthwise_conv2d(self.data(x.0), self.data(w.0), b.map(|b| self.data(b.0)), &geom);
        let value = Tensor::new(vec![geom.n, geom.c_out, geom.oh, geom.ow], out)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        self.push(value, Op::Depthwise { x: x.0, w: w.0, b: b.map(|b| b.0), geom }, &inputs)
    }

    /// `x: [N, F]`, `w: [O, F]`, `b: [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err("dense", format!("input {xs:?} incompatible with weight {ws:?} (expected [N, F] and [O, F])"));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        self.check_bias("dense", b, fout)?;
        let out = kernels::dense(self.data(x.0), self.data(w.0), b.map(|b| self.data(b.0)), n, fin, fout);
        let value = Tensor::new(vec![n, fout], out)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        self.push(value, Op::Dense { x: x.0, w: w.0, b: b.map(|b| b.0), n, fin, fout }, &inputs)
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(value, op, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, |v| v.max(T::zero()), Op::Relu(x.0))
    }

    pub fn hardswish(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, kernels::hardswish, Op::Hardswish(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, kernels::sigmoid, Op::Sigmoid(x.0))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.map_unary(x, |v| v * factor, Op::Scale(x.0, factor))
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return shape_err("global_avg_pool", format!("input must be NCHW, got {s:?}"));
        }
        let (n, c, inner) = (s[0], s[1], s[2] * s[3]);
        if inner == 0 {
            return shape_err("global_avg_pool", "empty spatial extent");
        }
        let denom = T::from_usize(inner).unwrap();
        let out = self.data(x.0).chunks(inner).map(|p| p.iter().copied().sum::<T>() / denom).collect();
        let value = Tensor::new(vec![n, c], out)?;
        self.push(value, Op::GlobalAvgPool { x: x.0, inner }, &[x.0])
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return shape_err("upsample_nearest", format!("input must be NCHW, got {s:?}"));
        }
        if factor == 0 {
            return Err(TensorError::Argument { op: "upsample_nearest", detail: "factor must be positive".into() });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.data(x.0);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks(h * w) {
            for oy in 0..oh {
                let row = &plane[(oy / factor) * w..][..w];
                for ox in 0..ow {
                    out.push(row[ox / factor]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, Op::Upsample { x: x.0, planes: n * c, h, w, factor }, &[x.0])
    }

    /// Per-channel `x * scale[c] + shift[c]` over `[N, C, ...]`; inference-mode
    /// batch normalization with identity running statistics.
    pub fn affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return shape_err("batchnorm_inference_affine", format!("input must be [N, C, ...], got {s:?}"));
        }
        let c = s[1];
        let inner: usize = s[2..].iter().product();
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return shape_err(
                "batchnorm_inference_affine",
                format!("scale {:?} / shift {:?} must both be [{c}]", self.shape(scale), self.shape(shift)),
            );
        }
        let (sc, sh) = (self.data(scale.0), self.data(shift.0));
        let out = self
            .data(x.0)
            .chunks(inner)
            .enumerate()
            .flat_map(|(i, p)| {
                let ch = i % c;
                p.iter().map(move |&v| v * sc[ch] + sh[ch])
            })
            .collect();
        let value = Tensor::new(s.to_vec(), out)?;
        self.push(value, Op::Affine { x: x.0, scale: scale.0, shift: shift.0, c, inner }, &[x.0, scale.0, shift.0])
    }

    /// `x[N, C, ...] * gate[N, C]` broadcast over trailing dims.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 || self.shape(gate) != &s[..2] {
            return shape_err("channel_scale", format!("gate {:?} does not match input {s:?}", self.shape(gate)));
        }
        let inner: usize = s[2..].iter().product();
        let gd = self.data(gate.0);
        let out = self
            .data(x.0)
            .chunks(inner)
            .zip(gd)
            .flat_map(|(p, &gv)| p.iter().map(move |&v| v * gv))
            .collect();
        let value = Tensor::new(s.to_vec(), out)?;
        self.push(value, Op::ChannelScale { x: x.0, gate: gate.0, inner }, &[x.0, gate.0])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a.0).iter().zip(self.data(b.0)).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(value, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a.0).iter().zip(self.data(b.0)).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(value, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for rank {}", base.len()));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{s:?} incompatible with {base:?} along axis {axis}"));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let trailing: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * trailing).collect();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (&v, &len) in inputs.iter().zip(&chunks) {
                out.extend_from_slice(&self.data(v.0)[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let idx: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        self.push(value, Op::Concat { inputs: idx.clone(), outer, chunks }, &idx)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.data(x.0).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return shape_err("mean", "empty input");
        }
        let s: T = self.data(x.0).iter().copied().sum();
        self.push(Tensor::scalar(s / T::from_usize(n).unwrap()), Op::Mean(x.0), &[x.0])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let n = self.value(pred).len();
        if n == 0 {
            return shape_err("mse_loss", "empty input");
        }
        let s: T = self.data(pred.0).iter().zip(self.data(target.0)).map(|(&a, &b)| (a - b) * (a - b)).sum();
        self.push(Tensor::scalar(s / T::from_usize(n).unwrap()), Op::Mse { pred: pred.0, target: target.0 }, &[pred.0, target.0])
    }

    /// Softmax over two logits `[N, 2]`, returning the anomaly (index 1)
    /// probability per row as `[N]`.
    pub fn anomaly_prob(&mut self, logits: Var) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[1] != 2 {
            return shape_err("anomaly_prob", format!("expected [N, 2] logits, got {s:?}"));
        }
        let n = s[0];
        let out = self.data(logits.0).chunks(2).map(|r| kernels::sigmoid(r[1] - r[0])).collect();
        self.push(Tensor::new(vec![n], out)?, Op::AnomalyProb(logits.0), &[logits.0])
    }

    /// Binary cross-entropy `-mean(y ln p + (1-y) ln(1-p))` over rows where
    /// `mask` is set, with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`. An
    /// all-false mask yields a zero loss.
    pub fn bce(&mut self, prob: Var, targets: &[T], mask: Option<&[bool]>) -> Result<Var> {
        let n = self.value(prob).len();
        if self.shape(prob).len() != 1 || targets.len() != n || mask.is_some_and(|m| m.len() != n) {
            return shape_err(
                "ce_loss",
                format!("prob {:?}, {} targets, mask {:?}", self.shape(prob), targets.len(), mask.map(<[bool]>::len)),
            );
        }
        let mask: Vec<bool> = mask.map_or_else(|| vec![true; n], <[bool]>::to_vec);
        let count = mask.iter().filter(|&&m| m).count();
        let eps = T::from_f64_lossy(PROB_EPS);
        let mut loss = T::zero();
        for ((&p, &y), _) in self.data(prob.0).iter().zip(targets).zip(&mask).filter(|(_, &m)| m) {
            let pc = p.max(eps).min(T::one() - eps);
            loss -= y * pc.ln() + (T::one() - y) * (T::one() - pc).ln();
        }
        if count > 0 {
            loss = loss / T::from_usize(count).unwrap();
        }
        self.push(Tensor::scalar(loss), Op::Bce { prob: prob.0, targets: targets.to_vec(), mask }, &[prob.0])
    }

    /// Reverse pass from a scalar `loss`. Gradients are accumulated into every
    /// `requires_grad` leaf reachable from the loss; intermediate values are
    /// released and the graph no longer accepts operations.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed || self.nodes.is_empty() {
            return Err(TensorError::EmptyGraph);
        }
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        self.consumed = true;
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = Tensor::zeros(vec![0]);
            }
        }
        Ok(())
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.nodes[i].value.data();
        let mut acc = |idx: usize, delta: Vec<T>| {
            if !self.nodes[idx].requires_grad {
                return;
            }
            match &mut grads[idx] {
                Some(buf) => buf.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { x, w, b, geom } | Op::Depthwise { x, w, b, geom } => {
                let want = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let r = if matches!(self.nodes[i].op, Op::Conv2d { .. }) {
                    kernels::conv2d_backward(self.data(*x), self.data(*w), g, geom, want)
                } else {
                    kernels::depthwise_conv2d_backward(self.data(*x), self.data(*w), g, geom, want)
                };
                if let Some(d) = r.input {
                    acc(*x, d);
                }
                if let Some(d) = r.weight {
                    acc(*w, d);
                }
                if let (Some(b), Some(d)) = (b, r.bias) {
                    acc(*b, d);
                }
            }
            Op::Dense { x, w, b, n, fin, fout } => {
                let want = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let r = kernels::dense_backward(self.data(*x), self.data(*w), g, *n, *fin, *fout, want);
                if let Some(d) = r.input {
                    acc(*x, d);
                }
                if let Some(d) = r.weight {
                    acc(*w, d);
                }
                if let (Some(b), Some(d)) = (b, r.bias) {
                    acc(*b, d);
                }
            }
            Op::Relu(x) => {
                let d = self.data(*x).iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                acc(*x, d);
            }
            Op::Hardswish(x) => {
                let d = self.data(*x).iter().zip(g).map(|(&v, &gv)| gv * kernels::hardswish_grad(v)).collect();
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = out.iter().zip(g).map(|(&y, &gv)| gv * y * (T::one() - y)).collect();
                acc(*x, d);
            }
            Op::Scale(x, f) => acc(*x, g.iter().map(|&gv| gv * *f).collect()),
            Op::GlobalAvgPool { x, inner } => {
                let denom = T::from_usize(*inner).unwrap();
                let d = g.iter().flat_map(|&gv| std::iter::repeat_n(gv / denom, *inner)).collect();
                acc(*x, d);
            }
            Op::Upsample { x, planes, h, w, factor } => {
                let (ow, op) = (w * factor, h * w * factor * factor);
                let mut d = vec![T::zero(); planes * h * w];
                for p in 0..*planes {
                    let gp = &g[p * op..(p + 1) * op];
                    let dp = &mut d[p * h * w..(p + 1) * h * w];
                    for (k, &gv) in gp.iter().enumerate() {
                        let (oy, ox) = (k / ow, k % ow);
                        dp[(oy / factor) * w + ox / factor] += gv;
                    }
                }
                acc(*x, d);
            }
            Op::Affine { x, scale, shift, c, inner } => {
                let (xd, sc) = (self.data(*x), self.data(*scale));
                if self.rg(*x) {
                    let d = g.chunks(*inner).enumerate().flat_map(|(k, gp)| gp.iter().map(move |&gv| gv * sc[k % c])).collect();
                    acc(*x, d);
                }
                let mut dscale = vec![T::zero(); *c];
                let mut dshift = vec![T::zero(); *c];
                for (k, (gp, xp)) in g.chunks(*inner).zip(xd.chunks(*inner)).enumerate() {
                    let ch = k % c;
                    for (&gv, &xv) in gp.iter().zip(xp) {
                        dscale[ch] += gv * xv;
                        dshift[ch] += gv;
                    }
                }
                acc(*scale, dscale);
                acc(*shift, dshift);
            }
            Op::ChannelScale { x, gate, inner } => {
                let (xd, gd) = (self.data(*x), self.data(*gate));
                if self.rg(*x) {
                    let d = g.chunks(*inner).zip(gd).flat_map(|(gp, &gv)| gp.iter().map(move |&v| v * gv)).collect();
                    acc(*x, d);
                }
                let d = g.chunks(*inner).zip(xd.chunks(*inner)).map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum()).collect();
                acc(*gate, d);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, g.iter().zip(bd).map(|(&gv, &v)| gv * v).collect());
                acc(*b, g.iter().zip(ad).map(|(&gv, &v)| gv * v).collect());
            }
            Op::Concat { inputs, outer, chunks } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (&inp, &len) in inputs.iter().zip(chunks) {
                    let mut d = Vec::with_capacity(outer * len);
                    for o in 0..*outer {
                        d.extend_from_slice(&g[o * total + offset..o * total + offset + len]);
                    }
                    acc(inp, d);
                    offset += len;
                }
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.nodes[*x].value.len()]),
            Op::Mean(x) => {
                let n = self.nodes[*x].value.len();
                acc(*x, vec![g[0] / T::from_usize(n).unwrap(); n]);
            }
            Op::Mse { pred, target } => {
                let n = T::from_usize(self.nodes[*pred].value.len()).unwrap();
                let two = T::from_f64_lossy(2.0);
                let d: Vec<T> = self.data(*pred).iter().zip(self.data(*target)).map(|(&p, &t)| g[0] * two * (p - t) / n).collect();
                if self.rg(*target) {
                    acc(*target, d.iter().map(|&v| -v).collect());
                }
                acc(*pred, d);
            }
            Op::AnomalyProb(logits) => {
                let d = out
                    .iter()
                    .zip(g)
                    .flat_map(|(&p, &gv)| {
                        let s = gv * p * (T::one() - p);
                        [-s, s]
                    })
                    .collect();
                acc(*logits, d);
            }
            Op::Bce { prob, targets, mask } => {
                let count = mask.iter().filter(|&&m| m).count();
                let eps = T::from_f64_lossy(PROB_EPS);
                let scale = if count > 0 { g[0] / T::from_usize(count).unwrap() } else { T::zero() };
                let d = self
                    .data(*prob)
                    .iter()
                    .zip(targets)
                    .zip(mask)
                    .map(|((&p, &y), &m)| {
                        if !m || p <= eps || p >= T::one() - eps {
                            T::zero()
                        } else {
                            -scale * (y / p - (T::one() - y) / (T::one() - p))
                        }
                    })
                    .collect();
                acc(*prob, d);
            }
        }
    }
}
