//! Slice-level compute kernels. Every kernel loops over independent batch
//! items, which run on the rayon pool under [`Exec::Parallel`]. Reductions
//! over the batch are always summed in item order, so both execution modes
//! produce bit-identical results.

use crate::error::{Error, Result};
use crate::learn::real::{gemm, Layout};
use crate::learn::Real;

/// Execution strategy for batch-level loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Runs `f(index, chunk)` over consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk<T, F>(exec: Exec, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_indexed<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Geometry of a square-kernel 2-D convolution on one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::Shape(format!("kernel size {} must be odd", self.k)));
        }
        if self.stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        if self.h + 2 * self.pad < self.k || self.w + 2 * self.pad < self.k {
            return Err(Error::Shape(format!(
                "kernel {} larger than padded input {}x{} (pad {})",
                self.k, self.h, self.w, self.pad
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.out_h() * self.out_w()
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one item into a `(cin·k·k) × (oh·ow)` column matrix.
pub fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation. `weight` is `[cout, cin, k, k]`, `bias` is
/// `[cout]`; `out` receives `n · cout · oh · ow` values.
pub fn conv2d_forward<T: Real>(
    exec: Exec,
    g: &ConvGeom,
    n: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let plane = g.out_h() * g.out_w();
    let in_len = g.in_len();
    for_each_chunk(exec, &mut out[..n * g.out_len()], g.out_len(), |i, y| {
        let xi = &x[i * in_len..(i + 1) * in_len];
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            xi
        } else {
            let mut buf = vec![T::zero(); g.patch() * plane];
            im2col(g, xi, &mut buf);
            owned = buf;
            &owned
        };
        for (co, row) in y.chunks_mut(plane).enumerate() {
            row.fill(bias[co]);
        }
        gemm(
            g.cout,
            g.patch(),
            plane,
            weight,
            Layout::Normal,
            cols,
            Layout::Normal,
            T::one(),
            y,
        );
    });
}

#[derive(Debug, Default)]
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// Gradients of [`conv2d_forward`] given `dout`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    exec: Exec,
    g: &ConvGeom,
    n: usize,
    x: &[T],
    weight: &[T],
    dout: &[T],
    want_dx: bool,
    want_dparams: bool,
) -> ConvGrads<T> {
    let plane = g.out_h() * g.out_w();
    let (in_len, out_len, patch) = (g.in_len(), g.out_len(), g.patch());

    let per_item = map_indexed(exec, n, |i| {
        let xi = &x[i * in_len..(i + 1) * in_len];
        let dy = &dout[i * out_len..(i + 1) * out_len];
        let dparams = want_dparams.then(|| {
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                xi
            } else {
                let mut buf = vec![T::zero(); patch * plane];
                im2col(g, xi, &mut buf);
                owned = buf;
                &owned
            };
            let mut dw = vec![T::zero(); g.cout * patch];
            gemm(
                g.cout,
                plane,
                patch,
                dy,
                Layout::Normal,
                cols,
                Layout::Transposed,
                T::zero(),
                &mut dw,
            );
            let db: Vec<T> = dy.chunks(plane).map(|r| r.iter().copied().sum()).collect();
            (dw, db)
        });
        let dx = want_dx.then(|| {
            let mut dcols = vec![T::zero(); patch * plane];
            gemm(
                patch,
                g.cout,
                plane,
                weight,
                Layout::Transposed,
                dy,
                Layout::Normal,
                T::zero(),
                &mut dcols,
            );
            if g.is_pointwise() {
                dcols
            } else {
                let mut dxi = vec![T::zero(); in_len];
                col2im_add(g, &dcols, &mut dxi);
                dxi
            }
        });
        (dx, dparams)
    });

    let mut grads = ConvGrads::default();
    if want_dx {
        let mut dx = Vec::with_capacity(n * in_len);
        for (d, _) in &per_item {
            dx.extend_from_slice(d.as_ref().expect("dx computed"));
        }
        grads.dx = Some(dx);
    }
    if want_dparams {
        let mut dw = vec![T::zero(); g.cout * patch];
        let mut db = vec![T::zero(); g.cout];
        for (_, p) in &per_item {
            let (w, b) = p.as_ref().expect("dparams computed");
            for (a, &v) in dw.iter_mut().zip(w) {
                *a = *a + v;
            }
            for (a, &v) in db.iter_mut().zip(b) {
                *a = *a + v;
            }
        }
        grads.dw = Some(dw);
        grads.db = Some(db);
    }
    grads
}

/// Nearest-neighbour 2× upsampling of `planes` independent `h×w` planes.
pub fn upsample2x<T: Real>(exec: Exec, planes: usize, h: usize, w: usize, x: &[T], out: &mut [T]) {
    let ow = 2 * w;
    for_each_chunk(exec, &mut out[..planes * 4 * h * w], 4 * h * w, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..2 * h {
            let row = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, v) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *v = row[ox / 2];
            }
        }
    });
}

/// Adjoint of [`upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward<T: Real>(
    exec: Exec,
    planes: usize,
    h: usize,
    w: usize,
    dout: &[T],
    dx: &mut [T],
) {
    let ow = 2 * w;
    for_each_chunk(exec, &mut dx[..planes * h * w], h * w, |p, dst| {
        let src = &dout[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let a = src[(2 * y) * ow + 2 * x];
                let b = src[(2 * y) * ow + 2 * x + 1];
                let c = src[(2 * y + 1) * ow + 2 * x];
                let d = src[(2 * y + 1) * ow + 2 * x + 1];
                dst[y * w + x] = (a + b) + (c + d);
            }
        }
    });
}

/// Mean over non-overlapping `k × k` blocks; `h` and `w` divisible by `k`.
pub fn avg_pool<T: Real>(exec: Exec, planes: usize, h: usize, w: usize, k: usize, x: &[T], out: &mut [T]) {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::lit((k * k) as f64);
    for_each_chunk(exec, &mut out[..planes * oh * ow], oh * ow, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        s = s + src[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                dst[oy * ow + ox] = s * inv;
            }
        }
    });
}

/// Adjoint of [`avg_pool`]: spreads each output gradient over its block.
pub fn avg_pool_backward<T: Real>(
    exec: Exec,
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    dout: &[T],
    dx: &mut [T],
) {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::lit((k * k) as f64);
    for_each_chunk(exec, &mut dx[..planes * h * w], h * w, |p, dst| {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / k) * ow + x / k] * inv;
            }
        }
    });
}
