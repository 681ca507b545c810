//! Direct 3D convolution kernels with zero "same" padding.
//!
//! Work is split over output planes (one channel, one z slice) and every
//! output element accumulates its terms in the fixed order
//! (input channel, kz, ky, kx), so results do not depend on the thread
//! count.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    let mut s = T::zero();
    for l in lanes {
        s = s + l;
    }
    s + tail
}

/// Output positions `o` with `0 ≤ o + off < n`.
#[inline]
fn valid(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy)]
pub struct Geom {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub k: usize,
}

impl Geom {
    #[inline]
    fn plane(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    fn vol(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    #[inline]
    fn k2(&self) -> usize {
        self.k * self.k
    }
}

/// `acc[y, x] += Σ w2[ky, kx] · src[y + oy, x + ox]` where the offsets are
/// `(ky − p, kx − p)`, or their negation when `flip` is set.
fn correlate_plane<T: Scalar>(acc: &mut [T], src: &[T], w2: &[T], g: &Geom, flip: bool) {
    let (nx, ny, k, p) = (g.nx, g.ny, g.k, g.pad());
    if k == 1 {
        axpy(acc, w2[0], src);
        return;
    }
    for ky in 0..k {
        let oy = if flip { p - ky as isize } else { ky as isize - p };
        let (y0, y1) = valid(ny, oy);
        if y0 >= y1 {
            continue;
        }
        for kx in 0..k {
            let ox = if flip { p - kx as isize } else { kx as isize - p };
            let wv = w2[ky * k + kx];
            if ox == 0 {
                let s0 = (y0 as isize + oy) as usize * nx;
                axpy(&mut acc[y0 * nx..y1 * nx], wv, &src[s0..s0 + (y1 - y0) * nx]);
                continue;
            }
            let (x0, x1) = valid(nx, ox);
            if x0 >= x1 {
                continue;
            }
            let len = x1 - x0;
            for y in y0..y1 {
                let s0 = (y as isize + oy) as usize * nx + (x0 as isize + ox) as usize;
                axpy(&mut acc[y * nx + x0..y * nx + x1], wv, &src[s0..s0 + len]);
            }
        }
    }
}

/// `Σ_{z,y,x} a[z, y, x] · b[z + oz, y + oy, x + ox]` over valid positions,
/// for every kernel offset; written into `out` (length k³, kx fastest).
fn correlate_weights<T: Scalar>(out: &mut [T], a: &[T], b: &[T], g: &Geom) {
    let (nx, ny, nz, k, p) = (g.nx, g.ny, g.nz, g.k, g.pad());
    let plane = g.plane();
    for kz in 0..k {
        let oz = kz as isize - p;
        let (z0, z1) = valid(nz, oz);
        for ky in 0..k {
            let oy = ky as isize - p;
            let (y0, y1) = valid(ny, oy);
            for kx in 0..k {
                let ox = kx as isize - p;
                let (x0, x1) = valid(nx, ox);
                let mut acc = T::zero();
                if x0 < x1 {
                    for z in z0..z1 {
                        let zb = (z as isize + oz) as usize;
                        for y in y0..y1 {
                            let yb = (y as isize + oy) as usize;
                            let ra = &a[z * plane + y * nx + x0..z * plane + y * nx + x1];
                            let s0 = zb * plane + yb * nx + (x0 as isize + ox) as usize;
                            acc = acc + dot(ra, &b[s0..s0 + (x1 - x0)]);
                        }
                    }
                }
                out[(kz * k + ky) * k + kx] = acc;
            }
        }
    }
}

/// Standard convolution. `x`: `[ci, vol]`, `w`: `[co, ci, k³]`,
/// returns `[co, vol]`.
pub fn conv_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, ci_n: usize, co_n: usize, g: Geom) -> Vec<T> {
    let (plane, vol, k, k2, nz, p) = (g.plane(), g.vol(), g.k, g.k2(), g.nz, g.pad());
    let mut out = vec![T::zero(); co_n * vol];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, acc)| {
        let (co, z) = (idx / nz, idx % nz);
        if let Some(b) = bias {
            acc.fill(b[co]);
        }
        for ci in 0..ci_n {
            for kz in 0..k {
                let zz = z as isize + kz as isize - p;
                if zz < 0 || zz >= nz as isize {
                    continue;
                }
                let src = &x[ci * vol + zz as usize * plane..][..plane];
                let w2 = &w[((co * ci_n + ci) * k + kz) * k2..][..k2];
                correlate_plane(acc, src, w2, &g, false);
            }
        }
    });
    out
}

/// Gradient of [`conv_forward`] with respect to its input.
pub fn conv_input_grad<T: Scalar>(gout: &[T], w: &[T], ci_n: usize, co_n: usize, g: Geom) -> Vec<T> {
    let (plane, vol, k, k2, nz, p) = (g.plane(), g.vol(), g.k, g.k2(), g.nz, g.pad());
    let mut din = vec![T::zero(); ci_n * vol];
    din.par_chunks_mut(plane).enumerate().for_each(|(idx, acc)| {
        let (ci, z) = (idx / nz, idx % nz);
        for co in 0..co_n {
            for kz in 0..k {
                let zz = z as isize + p - kz as isize;
                if zz < 0 || zz >= nz as isize {
                    continue;
                }
                let src = &gout[co * vol + zz as usize * plane..][..plane];
                let w2 = &w[((co * ci_n + ci) * k + kz) * k2..][..k2];
                correlate_plane(acc, src, w2, &g, true);
            }
        }
    });
    din
}

/// Gradient of [`conv_forward`] with respect to its weights.
pub fn conv_weight_grad<T: Scalar>(gout: &[T], x: &[T], ci_n: usize, co_n: usize, g: Geom) -> Vec<T> {
    let (vol, k3) = (g.vol(), g.k * g.k2());
    let mut dw = vec![T::zero(); co_n * ci_n * k3];
    dw.par_chunks_mut(k3).enumerate().for_each(|(idx, out)| {
        let (co, ci) = (idx / ci_n, idx % ci_n);
        correlate_weights(out, &gout[co * vol..(co + 1) * vol], &x[ci * vol..(ci + 1) * vol], &g);
    });
    dw
}

/// Depthwise convolution. `x`: `[c, vol]`, `w`: `[c, k³]`.
pub fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, c_n: usize, g: Geom) -> Vec<T> {
    let (plane, vol, k, k2, nz, p) = (g.plane(), g.vol(), g.k, g.k2(), g.nz, g.pad());
    let mut out = vec![T::zero(); c_n * vol];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, acc)| {
        let (c, z) = (idx / nz, idx % nz);
        if let Some(b) = bias {
            acc.fill(b[c]);
        }
        for kz in 0..k {
            let zz = z as isize + kz as isize - p;
            if zz < 0 || zz >= nz as isize {
                continue;
            }
            let src = &x[c * vol + zz as usize * plane..][..plane];
            correlate_plane(acc, src, &w[(c * k + kz) * k2..][..k2], &g, false);
        }
    });
    out
}

pub fn depthwise_input_grad<T: Scalar>(gout: &[T], w: &[T], c_n: usize, g: Geom) -> Vec<T> {
    let (plane, vol, k, k2, nz, p) = (g.plane(), g.vol(), g.k, g.k2(), g.nz, g.pad());
    let mut din = vec![T::zero(); c_n * vol];
    din.par_chunks_mut(plane).enumerate().for_each(|(idx, acc)| {
        let (c, z) = (idx / nz, idx % nz);
        for kz in 0..k {
            let zz = z as isize + p - kz as isize;
            if zz < 0 || zz >= nz as isize {
                continue;
            }
            let src = &gout[c * vol + zz as usize * plane..][..plane];
            correlate_plane(acc, src, &w[(c * k + kz) * k2..][..k2], &g, true);
        }
    });
    din
}

pub fn depthwise_weight_grad<T: Scalar>(gout: &[T], x: &[T], c_n: usize, g: Geom) -> Vec<T> {
    let (vol, k3) = (g.vol(), g.k * g.k2());
    let mut dw = vec![T::zero(); c_n * k3];
    dw.par_chunks_mut(k3).enumerate().for_each(|(c, out)| {
        correlate_weights(out, &gout[c * vol..(c + 1) * vol], &x[c * vol..(c + 1) * vol], &g);
    });
    dw
}

/// Per-channel sums accumulated in `f64`.
pub fn channel_sums<T: Scalar>(x: &[T], c_n: usize) -> Vec<T> {
    let vol = x.len() / c_n;
    (0..c_n)
        .map(|c| T::from_f64(x[c * vol..(c + 1) * vol].iter().map(|v| v.as_f64()).sum()))
        .collect()
}
