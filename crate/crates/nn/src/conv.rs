//! 3D convolution via im2col and `dgemm`, with the matching weight and input
//! adjoints. Pooling and nearest-neighbour resampling live here too.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Upper bound on im2col buffer size, in values.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride: 1,
            pad: kernel / 2,
            dilation: 1,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilated(mut self, d: usize) -> Self {
        self.dilation = d;
        self.pad = d * (self.kernel / 2);
        self
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.k_len()
    }

    /// Rows of the im2col matrix: `cin * kernel^3`.
    pub fn k_len(&self) -> usize {
        self.cin * self.kernel.pow(3)
    }

    pub fn out_dim(&self, n: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        (n + 2 * self.pad).checked_sub(span).map(|v| v / self.stride + 1)
    }

    pub fn out_dims(&self, d: [usize; 3]) -> Result<[usize; 3]> {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = self.out_dim(d[a]).filter(|&v| v > 0).ok_or_else(|| {
                NnError::Shape(format!("input dims {d:?} are smaller than the kernel footprint"))
            })?;
        }
        Ok(o)
    }
}

struct Geometry {
    spec: ConvSpec,
    din: [usize; 3],
    dout: [usize; 3],
}

impl Geometry {
    fn new(spec: ConvSpec, x_shape: [usize; 5]) -> Result<Self> {
        if x_shape[1] != spec.cin {
            return Err(NnError::Shape(format!(
                "convolution expects {} input channels, got {}",
                spec.cin, x_shape[1]
            )));
        }
        let din = [x_shape[2], x_shape[3], x_shape[4]];
        Ok(Self {
            spec,
            din,
            dout: spec.out_dims(din)?,
        })
    }

    fn plane_out(&self) -> usize {
        self.dout[1] * self.dout[2]
    }

    fn vox_in(&self) -> usize {
        self.din.iter().product()
    }

    fn vox_out(&self) -> usize {
        self.dout.iter().product()
    }

    /// Output z-slices per im2col chunk.
    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.spec.k_len() * self.plane_out()).max(1)).clamp(1, self.dout[0])
    }

    /// Fills `col` (K x P, P = nz * plane) for output slices `z0..z0+nz` of
    /// one sample.
    fn im2col(&self, x: &[f64], z0: usize, nz: usize, col: &mut [f64]) {
        let s = &self.spec;
        let k = s.kernel;
        let p_len = nz * self.plane_out();
        let [dz, dy, dx] = self.din;
        let [_, oy, ox] = self.dout;
        let mut row = 0;
        for c in 0..s.cin {
            let xc = &x[c * self.vox_in()..(c + 1) * self.vox_in()];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let dst = &mut col[row * p_len..(row + 1) * p_len];
                        let mut p = 0;
                        for z in z0..z0 + nz {
                            let iz = (z * s.stride + kz * s.dilation) as isize - s.pad as isize;
                            if iz < 0 || iz >= dz as isize {
                                dst[p..p + oy * ox].fill(0.0);
                                p += oy * ox;
                                continue;
                            }
                            for y in 0..oy {
                                let iy = (y * s.stride + ky * s.dilation) as isize - s.pad as isize;
                                if iy < 0 || iy >= dy as isize {
                                    dst[p..p + ox].fill(0.0);
                                    p += ox;
                                    continue;
                                }
                                let base = (iz as usize * dy + iy as usize) * dx;
                                for xo in 0..ox {
                                    let ix = (xo * s.stride + kx * s.dilation) as isize - s.pad as isize;
                                    dst[p] = if ix < 0 || ix >= dx as isize {
                                        0.0
                                    } else {
                                        xc[base + ix as usize]
                                    };
                                    p += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters `col` back into `gx`.
    fn col2im(&self, col: &[f64], z0: usize, nz: usize, gx: &mut [f64]) {
        let s = &self.spec;
        let k = s.kernel;
        let p_len = nz * self.plane_out();
        let [dz, dy, dx] = self.din;
        let [_, oy, ox] = self.dout;
        let mut row = 0;
        for c in 0..s.cin {
            let gc = &mut gx[c * self.vox_in()..(c + 1) * self.vox_in()];
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let src = &col[row * p_len..(row + 1) * p_len];
                        let mut p = 0;
                        for z in z0..z0 + nz {
                            let iz = (z * s.stride + kz * s.dilation) as isize - s.pad as isize;
                            if iz < 0 || iz >= dz as isize {
                                p += oy * ox;
                                continue;
                            }
                            for y in 0..oy {
                                let iy = (y * s.stride + ky * s.dilation) as isize - s.pad as isize;
                                if iy < 0 || iy >= dy as isize {
                                    p += ox;
                                    continue;
                                }
                                let base = (iz as usize * dy + iy as usize) * dx;
                                for xo in 0..ox {
                                    let ix = (xo * s.stride + kx * s.dilation) as isize - s.pad as isize;
                                    if ix >= 0 && ix < dx as isize {
                                        gc[base + ix as usize] += src[p];
                                    }
                                    p += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.chunk();
        let total = self.dout[0];
        (0..total).step_by(step).map(move |z0| (z0, step.min(total - z0)))
    }
}

/// C (m x n) = A (m x k) * B (k x n) + beta * C, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let need_a = (m - 1) * rsa + k.saturating_sub(1) * csa + usize::from(k > 0);
    let need_b = k.saturating_sub(1) * rsb + (n - 1) * csb + usize::from(k > 0);
    let need_c = (m - 1) * rsc + (n - 1) * csc + 1;
    assert!(a.len() >= need_a && b.len() >= need_b && c.len() >= need_c);
    // SAFETY: the assertion above keeps every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn conv3d(x: &Tensor, w: &[f64], bias: Option<&[f64]>, spec: ConvSpec) -> Result<Tensor> {
    let g = Geometry::new(spec, x.shape())?;
    if w.len() != spec.weight_len() {
        return Err(NnError::Shape(format!("weight has {} values, expected {}", w.len(), spec.weight_len())));
    }
    let kl = spec.k_len();
    let (vo, plane) = (g.vox_out(), g.plane_out());
    let mut y = Tensor::zeros([x.batch(), spec.cout, g.dout[0], g.dout[1], g.dout[2]]);
    let mut col = vec![0.0; kl * g.chunk() * plane];
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for (z0, nz) in g.chunks() {
            let p = nz * plane;
            g.im2col(xs, z0, nz, &mut col[..kl * p]);
            gemm(
                spec.cout,
                kl,
                p,
                w,
                (kl, 1),
                &col,
                (p, 1),
                0.0,
                &mut ys[z0 * plane..],
                (vo, 1),
            );
        }
        if let Some(bias) = bias {
            for (c, &bc) in bias.iter().enumerate() {
                for v in &mut ys[c * vo..(c + 1) * vo] {
                    *v += bc;
                }
            }
        }
    }
    Ok(y)
}

/// Accumulates dL/dW (and dL/db) for output gradient `gy`.
pub fn conv3d_weight_grad(
    x: &Tensor,
    gy: &Tensor,
    spec: ConvSpec,
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
) -> Result<()> {
    let g = Geometry::new(spec, x.shape())?;
    let kl = spec.k_len();
    let (vo, plane) = (g.vox_out(), g.plane_out());
    let mut col = vec![0.0; kl * g.chunk() * plane];
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let gys = gy.sample(b);
        for (z0, nz) in g.chunks() {
            let p = nz * plane;
            g.im2col(xs, z0, nz, &mut col[..kl * p]);
            gemm(spec.cout, p, kl, &gys[z0 * plane..], (vo, 1), &col, (1, p), 1.0, gw, (kl, 1));
        }
    }
    if let Some(gb) = gb {
        for b in 0..gy.batch() {
            let gys = gy.sample(b);
            for (c, slot) in gb.iter_mut().enumerate() {
                *slot += gys[c * vo..(c + 1) * vo].iter().sum::<f64>();
            }
        }
    }
    Ok(())
}

/// dL/dx for output gradient `gy`; the exact adjoint of [`conv3d`] without bias.
pub fn conv3d_input_grad(gy: &Tensor, w: &[f64], spec: ConvSpec, x_shape: [usize; 5]) -> Result<Tensor> {
    let g = Geometry::new(spec, x_shape)?;
    let kl = spec.k_len();
    let (vo, plane) = (g.vox_out(), g.plane_out());
    let mut gx = Tensor::zeros(x_shape);
    let mut col = vec![0.0; kl * g.chunk() * plane];
    for b in 0..gy.batch() {
        let gys = gy.sample(b);
        let gxs = gx.sample_mut(b);
        for (z0, nz) in g.chunks() {
            let p = nz * plane;
            gemm(kl, spec.cout, p, w, (1, kl), &gys[z0 * plane..], (vo, 1), 0.0, &mut col, (p, 1));
            g.col2im(&col[..kl * p], z0, nz, gxs);
        }
    }
    Ok(gx)
}

/// Max pooling with window = stride = `k` per axis (trailing remainder is
/// dropped). Returns the output and the flat input index of every maximum.
pub fn max_pool(x: &Tensor, k: [usize; 3]) -> Result<(Tensor, Vec<usize>)> {
    let d = x.spatial();
    if (0..3).any(|a| k[a] == 0 || k[a] > d[a]) {
        return Err(NnError::Shape(format!("pool window {k:?} does not fit dims {d:?}")));
    }
    let o = [d[0] / k[0], d[1] / k[1], d[2] / k[2]];
    let mut y = Tensor::zeros([x.batch(), x.channels(), o[0], o[1], o[2]]);
    let mut arg = Vec::with_capacity(y.len());
    let vin = x.voxels();
    let mut out = 0;
    for bc in 0..x.batch() * x.channels() {
        let base = bc * vin;
        for z in 0..o[0] {
            for yy in 0..o[1] {
                for xx in 0..o[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = base;
                    for dz in 0..k[0] {
                        for dy in 0..k[1] {
                            for dx in 0..k[2] {
                                let i = base + ((z * k[0] + dz) * d[1] + yy * k[1] + dy) * d[2] + xx * k[2] + dx;
                                let v = x.data()[i];
                                if v > best {
                                    best = v;
                                    at = i;
                                }
                            }
                        }
                    }
                    y.data_mut()[out] = best;
                    arg.push(at);
                    out += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

/// Source index along one axis for nearest-neighbour resampling.
fn nearest(i: usize, from: usize, to: usize) -> usize {
    (i * from / to).min(from - 1)
}

/// Nearest-neighbour resize of the spatial dims to `size`.
pub fn upsample_nearest(x: &Tensor, size: [usize; 3]) -> Tensor {
    let d = x.spatial();
    let mut y = Tensor::zeros([x.batch(), x.channels(), size[0], size[1], size[2]]);
    let (vin, vout) = (x.voxels(), size.iter().product::<usize>());
    for bc in 0..x.batch() * x.channels() {
        let src = &x.data()[bc * vin..(bc + 1) * vin];
        let dst = &mut y.data_mut()[bc * vout..(bc + 1) * vout];
        let mut o = 0;
        for z in 0..size[0] {
            let sz = nearest(z, d[0], size[0]);
            for yy in 0..size[1] {
                let sy = nearest(yy, d[1], size[1]);
                for xx in 0..size[2] {
                    dst[o] = src[(sz * d[1] + sy) * d[2] + nearest(xx, d[2], size[2])];
                    o += 1;
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample_nearest`].
pub fn upsample_nearest_grad(gy: &Tensor, in_dims: [usize; 3]) -> Tensor {
    let size = gy.spatial();
    let d = in_dims;
    let mut gx = Tensor::zeros([gy.batch(), gy.channels(), d[0], d[1], d[2]]);
    let (vin, vout) = (d.iter().product::<usize>(), gy.voxels());
    for bc in 0..gy.batch() * gy.channels() {
        let src = &gy.data()[bc * vout..(bc + 1) * vout];
        let dst = &mut gx.data_mut()[bc * vin..(bc + 1) * vin];
        let mut o = 0;
        for z in 0..size[0] {
            let sz = nearest(z, d[0], size[0]);
            for yy in 0..size[1] {
                let sy = nearest(yy, d[1], size[1]);
                for xx in 0..size[2] {
                    dst[(sz * d[1] + sy) * d[2] + nearest(xx, d[2], size[2])] += src[o];
                    o += 1;
                }
            }
        }
    }
    gx
}
