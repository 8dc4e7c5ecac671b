//! Raw compute kernels over flat NCHW slices. The graph layer owns shape
//! validation; everything here assumes consistent extents.

use super::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        (padded >= kernel).then(|| (padded - kernel) / stride + 1)
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn ker_plane(&self) -> usize {
        self.kh * self.kw
    }
}

/// Output positions `o` in `[lo, hi)` whose input tap `o*stride + k - pad`
/// lands inside `[0, in_len)`.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = in_len as isize - 1 + pad as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = out_len.min(top as usize / stride + 1);
    (lo, hi.max(lo))
}

/// `out += kernel ⋆ input` for one channel pair.
fn correlate_acc<T: Element>(out: &mut [T], input: &[T], kernel: &[T], g: &ConvGeom) {
    for ky in 0..g.kh {
        let (oy0, oy1) = tap_range(ky, g.pad, g.stride, g.h, g.oh);
        for kx in 0..g.kw {
            let (ox0, ox1) = tap_range(kx, g.pad, g.stride, g.w, g.ow);
            if ox0 >= ox1 {
                continue;
            }
            let wv = kernel[ky * g.kw + kx];
            for oy in oy0..oy1 {
                let iy = oy * g.stride + ky - g.pad;
                let row_in = &input[iy * g.w..(iy + 1) * g.w];
                let row_out = &mut out[oy * g.ow..(oy + 1) * g.ow];
                if g.stride == 1 {
                    let shift = kx as isize - g.pad as isize;
                    let src = &row_in[(ox0 as isize + shift) as usize..(ox1 as isize + shift) as usize];
                    for (o, &s) in row_out[ox0..ox1].iter_mut().zip(src) {
                        *o += wv * s;
                    }
                } else {
                    for ox in ox0..ox1 {
                        row_out[ox] += wv * row_in[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Gradient of [`correlate_acc`] w.r.t. its input, accumulated into `grad_in`.
fn correlate_grad_input<T: Element>(grad_in: &mut [T], grad_out: &[T], kernel: &[T], g: &ConvGeom) {
    for ky in 0..g.kh {
        let (oy0, oy1) = tap_range(ky, g.pad, g.stride, g.h, g.oh);
        for kx in 0..g.kw {
            let (ox0, ox1) = tap_range(kx, g.pad, g.stride, g.w, g.ow);
            if ox0 >= ox1 {
                continue;
            }
            let wv = kernel[ky * g.kw + kx];
            for oy in oy0..oy1 {
                let iy = oy * g.stride + ky - g.pad;
                let row_go = &grad_out[oy * g.ow + ox0..oy * g.ow + ox1];
                if g.stride == 1 {
                    let start = iy * g.w + ox0 + kx - g.pad;
                    for (d, &s) in grad_in[start..start + row_go.len()].iter_mut().zip(row_go) {
                        *d += wv * s;
                    }
                } else {
                    for (ox, &s) in (ox0..ox1).zip(row_go) {
                        grad_in[iy * g.w + ox * g.stride + kx - g.pad] += wv * s;
                    }
                }
            }
        }
    }
}

/// Gradient of [`correlate_acc`] w.r.t. its kernel, accumulated into `grad_k`.
fn correlate_grad_kernel<T: Element>(grad_k: &mut [T], grad_out: &[T], input: &[T], g: &ConvGeom) {
    for ky in 0..g.kh {
        let (oy0, oy1) = tap_range(ky, g.pad, g.stride, g.h, g.oh);
        for kx in 0..g.kw {
            let (ox0, ox1) = tap_range(kx, g.pad, g.stride, g.w, g.ow);
            if ox0 >= ox1 {
                continue;
            }
            let mut acc = T::zero();
            for oy in oy0..oy1 {
                let iy = oy * g.stride + ky - g.pad;
                let row_go = &grad_out[oy * g.ow + ox0..oy * g.ow + ox1];
                if g.stride == 1 {
                    let start = iy * g.w + ox0 + kx - g.pad;
                    acc += dot(&input[start..start + row_go.len()], row_go);
                } else {
                    for (ox, &s) in (ox0..ox1).zip(row_go) {
                        acc += input[iy * g.w + ox * g.stride + kx - g.pad] * s;
                    }
                }
            }
            grad_k[ky * g.kw + kx] += acc;
        }
    }
}

#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<T: Element>(y: &mut [T], a: T, x: &[T]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += a * s;
    }
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn conv2d<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (ip, op, kp) = (g.in_plane(), g.out_plane(), g.ker_plane());
    let mut out = vec![T::zero(); g.n * g.c_out * op];
    if g.is_pointwise() {
        for n in 0..g.n {
            for oc in 0..g.c_out {
                let o = &mut out[(n * g.c_out + oc) * op..][..op];
                if let Some(b) = b {
                    o.fill(b[oc]);
                }
                for ic in 0..g.c_in {
                    axpy(o, w[oc * g.c_in + ic], &x[(n * g.c_in + ic) * ip..][..ip]);
                }
            }
        }
        return out;
    }
    for n in 0..g.n {
        for oc in 0..g.c_out {
            let o = &mut out[(n * g.c_out + oc) * op..][..op];
            if let Some(b) = b {
                o.fill(b[oc]);
            }
            for ic in 0..g.c_in {
                let xi = &x[(n * g.c_in + ic) * ip..][..ip];
                let k = &w[(oc * g.c_in + ic) * kp..][..kp];
                correlate_acc(o, xi, k, g);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    let (ip, op, kp) = (g.in_plane(), g.out_plane(), g.ker_plane());
    let mut gi = want[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = want[1].then(|| vec![T::zero(); w.len()]);
    let mut gb = want[2].then(|| vec![T::zero(); g.c_out]);
    let pointwise = g.is_pointwise();
    for n in 0..g.n {
        for oc in 0..g.c_out {
            let go = &gout[(n * g.c_out + oc) * op..][..op];
            if let Some(gb) = gb.as_mut() {
                gb[oc] += go.iter().copied().sum::<T>();
            }
            if pointwise {
                for ic in 0..g.c_in {
                    let x_off = (n * g.c_in + ic) * ip;
                    let wv = w[oc * g.c_in + ic];
                    if let Some(gi) = gi.as_mut() {
                        axpy(&mut gi[x_off..x_off + ip], wv, go);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[oc * g.c_in + ic] += dot(go, &x[x_off..x_off + ip]);
                    }
                }
                continue;
            }
            for ic in 0..g.c_in {
                let k_off = (oc * g.c_in + ic) * kp;
                let x_off = (n * g.c_in + ic) * ip;
                if let Some(gi) = gi.as_mut() {
                    correlate_grad_input(&mut gi[x_off..x_off + ip], go, &w[k_off..k_off + kp], g);
                }
                if let Some(gw) = gw.as_mut() {
                    correlate_grad_kernel(&mut gw[k_off..k_off + kp], go, &x[x_off..x_off + ip], g);
                }
            }
        }
    }
    ConvGrads { input: gi, weight: gw, bias: gb }
}

pub(crate) fn depthwise_conv2d<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (ip, op, kp) = (g.in_plane(), g.out_plane(), g.ker_plane());
    let mut out = vec![T::zero(); g.n * g.c_out * op];
    for n in 0..g.n {
        for c in 0..g.c_in {
            let o = &mut out[(n * g.c_in + c) * op..][..op];
            if let Some(b) = b {
                o.fill(b[c]);
            }
            correlate_acc(o, &x[(n * g.c_in + c) * ip..][..ip], &w[c * kp..][..kp], g);
        }
    }
    out
}

pub(crate) fn depthwise_conv2d_backward<T: Element>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    let (ip, op, kp) = (g.in_plane(), g.out_plane(), g.ker_plane());
    let mut gi = want[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = want[1].then(|| vec![T::zero(); w.len()]);
    let mut gb = want[2].then(|| vec![T::zero(); g.c_in]);
    for n in 0..g.n {
        for c in 0..g.c_in {
            let go = &gout[(n * g.c_in + c) * op..][..op];
            let x_off = (n * g.c_in + c) * ip;
            if let Some(gb) = gb.as_mut() {
                gb[c] += go.iter().copied().sum::<T>();
            }
            if let Some(gi) = gi.as_mut() {
                correlate_grad_input(&mut gi[x_off..x_off + ip], go, &w[c * kp..][..kp], g);
            }
            if let Some(gw) = gw.as_mut() {
                correlate_grad_kernel(&mut gw[c * kp..][..kp], go, &x[x_off..x_off + ip], g);
            }
        }
    }
    ConvGrads { input: gi, weight: gw, bias: gb }
}

/// `y[n, o] = b[o] + Σ_f x[n, f] · w[o, f]`.
pub(crate) fn dense<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, fin: usize, fout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * fout];
    for i in 0..n {
        let xr = &x[i * fin..(i + 1) * fin];
        for o in 0..fout {
            let wr = &w[o * fin..(o + 1) * fin];
            let mut acc = b.map_or(T::zero(), |b| b[o]);
            for (&a, &c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            out[i * fout + o] = acc;
        }
    }
    out
}

pub(crate) fn dense_backward<T: Element>(
    x: &[T],
    w: &[T],
    gout: &[T],
    n: usize,
    fin: usize,
    fout: usize,
    want: [bool; 3],
) -> ConvGrads<T> {
    let mut gi = want[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = want[1].then(|| vec![T::zero(); w.len()]);
    let mut gb = want[2].then(|| vec![T::zero(); fout]);
    for i in 0..n {
        for o in 0..fout {
            let go = gout[i * fout + o];
            if let Some(gb) = gb.as_mut() {
                gb[o] += go;
            }
            if let Some(gi) = gi.as_mut() {
                for (a, &wv) in gi[i * fin..(i + 1) * fin].iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                    *a += go * wv;
                }
            }
            if let Some(gw) = gw.as_mut() {
                for (a, &xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(&x[i * fin..(i + 1) * fin]) {
                    *a += go * xv;
                }
            }
        }
    }
    ConvGrads { input: gi, weight: gw, bias: gb }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn hardswish<T: Element>(x: T) -> T {
    let three = T::from_f64_lossy(3.0);
    let six = T::from_f64_lossy(6.0);
    x * (x + three).max(T::zero()).min(six) / six
}

#[inline]
pub(crate) fn hardswish_grad<T: Element>(x: T) -> T {
    let three = T::from_f64_lossy(3.0);
    if x < -three {
        T::zero()
    } else if x > three {
        T::one()
    } else {
        (x + x + three) / T::from_f64_lossy(6.0)
    }
}
