//! Multi-coil k-space convolution kernels and their image-domain form.
//!
//! A kernel tap at `(dy, dx)` reads the neighbour at offset
//! `(dy - kh/2, dx - kw/2)` with circular wrap:
//!
//! ```text
//! out[o][ky][kx] = sum_{i,dy,dx} w[o][i][dy][dx] * in[i][ky + dy - kh/2][kx + dx - kw/2]
//! ```
//!
//! Under the centered unitary FFT this circular convolution is a per-pixel
//! coil-mixing matrix in the image domain, which is how operators apply it.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io;
use crate::tensor::{ComplexTensor4, Dims, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub n_out: usize,
    pub n_in: usize,
    pub kh: usize,
    pub kw: usize,
    /// Row-major `[out][in][dy][dx]`.
    pub taps: Vec<Complex64>,
}

impl ConvKernel {
    pub fn zeros(n_out: usize, n_in: usize, kh: usize, kw: usize) -> Self {
        ConvKernel { n_out, n_in, kh, kw, taps: vec![Complex64::new(0.0, 0.0); n_out * n_in * kh * kw] }
    }

    /// Center tap of every `o -> o` pair set to one.
    pub fn identity(n: usize, kh: usize, kw: usize) -> Self {
        let mut k = Self::zeros(n, n, kh, kw);
        for o in 0..n {
            let i = k.tap_index(o, o, kh / 2, kw / 2);
            k.taps[i] = Complex64::new(1.0, 0.0);
        }
        k
    }

    pub fn tap_index(&self, o: usize, i: usize, dy: usize, dx: usize) -> usize {
        ((o * self.n_in + i) * self.kh + dy) * self.kw + dx
    }

    pub fn tap(&self, o: usize, i: usize, dy: usize, dx: usize) -> Complex64 {
        self.taps[self.tap_index(o, i, dy, dx)]
    }

    pub fn norm(&self) -> f64 {
        self.taps.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) {
            return Err(invalid!("kernel size {}x{} must be odd", self.kh, self.kw));
        }
        if self.taps.len() != self.n_out * self.n_in * self.kh * self.kw {
            return Err(invalid!("kernel tap count does not match its shape"));
        }
        Ok(())
    }

    /// Per-pixel coil-mixing weights on an `ny x nx` grid.
    pub fn image_weights(&self, ny: usize, nx: usize) -> PixelMix {
        let (hy, hx) = ((self.kh / 2) as f64, (self.kw / 2) as f64);
        let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
        let ey: Vec<Vec<Complex64>> = (0..self.kh)
            .map(|dy| {
                (0..ny)
                    .map(|y| Complex64::from_polar(1.0, -TAU * (dy as f64 - hy) * (y as f64 - cy) / ny as f64))
                    .collect()
            })
            .collect();
        let ex: Vec<Vec<Complex64>> = (0..self.kw)
            .map(|dx| {
                (0..nx)
                    .map(|x| Complex64::from_polar(1.0, -TAU * (dx as f64 - hx) * (x as f64 - cx) / nx as f64))
                    .collect()
            })
            .collect();
        let plane = ny * nx;
        let mut w = vec![Complex64::new(0.0, 0.0); self.n_out * self.n_in * plane];
        let mut rows = vec![Complex64::new(0.0, 0.0); self.kh * nx];
        for o in 0..self.n_out {
            for i in 0..self.n_in {
                // rows[dy][x] = sum_dx tap * ex[dx][x]
                for dy in 0..self.kh {
                    let r = &mut rows[dy * nx..(dy + 1) * nx];
                    r.fill(Complex64::new(0.0, 0.0));
                    for (dx, e) in ex.iter().enumerate() {
                        let t = self.tap(o, i, dy, dx);
                        if t == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for (a, b) in r.iter_mut().zip(e) {
                            *a += t * b;
                        }
                    }
                }
                let dst = &mut w[(o * self.n_in + i) * plane..(o * self.n_in + i + 1) * plane];
                for (dy, e) in ey.iter().enumerate() {
                    let r = &rows[dy * nx..(dy + 1) * nx];
                    for y in 0..ny {
                        let f = e[y];
                        for (a, b) in dst[y * nx..(y + 1) * nx].iter_mut().zip(r) {
                            *a += f * b;
                        }
                    }
                }
            }
        }
        PixelMix { n_out: self.n_out, n_in: self.n_in, plane, w }
    }
}

/// Per-pixel linear maps from `n_in` planes to `n_out` planes.
#[derive(Debug, Clone)]
pub struct PixelMix {
    n_out: usize,
    n_in: usize,
    plane: usize,
    /// `[out][in][pixel]`.
    w: Vec<Complex64>,
}

impl PixelMix {
    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    /// `out[o] = sum_i w[o][i] * input[i]`, overwriting `out`.
    pub fn apply(&self, input: &[Complex64], out: &mut [Complex64]) {
        let p = self.plane;
        debug_assert_eq!(input.len(), self.n_in * p);
        debug_assert_eq!(out.len(), self.n_out * p);
        out.fill(Complex64::new(0.0, 0.0));
        for o in 0..self.n_out {
            let dst = &mut out[o * p..(o + 1) * p];
            for i in 0..self.n_in {
                let w = &self.w[(o * self.n_in + i) * p..(o * self.n_in + i + 1) * p];
                let src = &input[i * p..(i + 1) * p];
                for ((d, a), b) in dst.iter_mut().zip(w).zip(src) {
                    *d += a * b;
                }
            }
        }
    }

    /// `out[i] = sum_o conj(w[o][i]) * input[o]`, overwriting `out`.
    pub fn apply_adjoint(&self, input: &[Complex64], out: &mut [Complex64]) {
        let p = self.plane;
        debug_assert_eq!(input.len(), self.n_out * p);
        debug_assert_eq!(out.len(), self.n_in * p);
        out.fill(Complex64::new(0.0, 0.0));
        for o in 0..self.n_out {
            let src = &input[o * p..(o + 1) * p];
            for i in 0..self.n_in {
                let w = &self.w[(o * self.n_in + i) * p..(o * self.n_in + i + 1) * p];
                let dst = &mut out[i * p..(i + 1) * p];
                for ((d, a), b) in dst.iter_mut().zip(w).zip(src) {
                    *d += a.conj() * b;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Spirit,
    SliceGrappa,
}

/// One kernel per slice, plus the fit record.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub kind: KernelKind,
    pub kernels: Vec<ConvKernel>,
    /// Tikhonov weight actually used, per slice.
    pub lambdas: Vec<f64>,
    /// Relative fit residual per slice.
    pub residuals: Vec<f64>,
}

/// SPIRiT kernels `G_i`: slice i k-space -> slice i k-space, self center tap zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiritKernelSet(pub KernelSet);

/// Slice-GRAPPA kernels `K_i`: collapsed k-space -> slice i k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGrappaKernelSet(pub KernelSet);

impl SpiritKernelSet {
    pub fn new(kernels: Vec<ConvKernel>) -> Result<Self> {
        for k in &kernels {
            k.validate()?;
            if k.n_in != k.n_out {
                return Err(invalid!("SPIRiT kernels must be square in coils"));
            }
            for o in 0..k.n_out {
                if k.tap(o, o, k.kh / 2, k.kw / 2) != Complex64::new(0.0, 0.0) {
                    return Err(invalid!("SPIRiT self center tap must be zero (coil {o})"));
                }
            }
        }
        let n = kernels.len();
        Ok(SpiritKernelSet(KernelSet {
            kind: KernelKind::Spirit,
            kernels,
            lambdas: vec![0.0; n],
            residuals: vec![0.0; n],
        }))
    }

    pub fn kernels(&self) -> &[ConvKernel] {
        &self.0.kernels
    }
}

impl SliceGrappaKernelSet {
    pub fn new(kernels: Vec<ConvKernel>) -> Result<Self> {
        for k in &kernels {
            k.validate()?;
        }
        let n = kernels.len();
        Ok(SliceGrappaKernelSet(KernelSet {
            kind: KernelKind::SliceGrappa,
            kernels,
            lambdas: vec![0.0; n],
            residuals: vec![0.0; n],
        }))
    }

    pub fn kernels(&self) -> &[ConvKernel] {
        &self.0.kernels
    }
}

/// JSON sidecar written next to a kernel payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelMeta {
    pub kind: KernelKind,
    pub n_slice: usize,
    pub n_out: usize,
    pub n_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub lambdas: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl KernelSet {
    pub fn meta(&self) -> Result<KernelMeta> {
        let first = self.kernels.first().ok_or_else(|| invalid!("empty kernel set"))?;
        Ok(KernelMeta {
            kind: self.kind,
            n_slice: self.kernels.len(),
            n_out: first.n_out,
            n_in: first.n_in,
            kh: first.kh,
            kw: first.kw,
            lambdas: self.lambdas.clone(),
            residuals: self.residuals.clone(),
        })
    }

    /// Taps as a CT4F tensor `(n_slice * n_out, n_in, kh, kw)`.
    pub fn to_tensor(&self) -> Result<ComplexTensor4> {
        let m = self.meta()?;
        let data = self.kernels.iter().flat_map(|k| k.taps.iter().copied()).collect();
        ComplexTensor4::from_vec(Dims::new(m.n_slice * m.n_out, m.n_in, m.kh, m.kw), Domain::Kspace, data)
    }

    pub fn from_tensor(t: &ComplexTensor4, meta: &KernelMeta) -> Result<Self> {
        let d = t.dims();
        if d != Dims::new(meta.n_slice * meta.n_out, meta.n_in, meta.kh, meta.kw) {
            return Err(invalid!("kernel payload {} disagrees with its sidecar", d));
        }
        let per = meta.n_out * meta.n_in * meta.kh * meta.kw;
        let kernels = t
            .data()
            .chunks_exact(per)
            .map(|c| ConvKernel { n_out: meta.n_out, n_in: meta.n_in, kh: meta.kh, kw: meta.kw, taps: c.to_vec() })
            .collect();
        Ok(KernelSet { kind: meta.kind, kernels, lambdas: meta.lambdas.clone(), residuals: meta.residuals.clone() })
    }

    /// Writes `<stem>.ct4` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_tensor(&self.to_tensor()?, dir.join(format!("{stem}.ct4")))?;
        io::write_json(&self.meta()?, dir.join(format!("{stem}.json")))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: KernelMeta = io::read_json(dir.join(format!("{stem}.json")))?;
        let t = io::read_tensor(dir.join(format!("{stem}.ct4")))?;
        Self::from_tensor(&t, &meta)
    }

    pub fn into_spirit(self) -> Result<SpiritKernelSet> {
        if self.kind != KernelKind::Spirit {
            return Err(Error::Config("expected SPIRiT kernels".into()));
        }
        let (lambdas, residuals) = (self.lambdas.clone(), self.residuals.clone());
        let mut set = SpiritKernelSet::new(self.kernels)?;
        set.0.lambdas = lambdas;
        set.0.residuals = residuals;
        Ok(set)
    }

    pub fn into_slice_grappa(self) -> Result<SliceGrappaKernelSet> {
        if self.kind != KernelKind::SliceGrappa {
            return Err(Error::Config("expected slice-GRAPPA kernels".into()));
        }
        let (lambdas, residuals) = (self.lambdas.clone(), self.residuals.clone());
        let mut set = SliceGrappaKernelSet::new(self.kernels)?;
        set.0.lambdas = lambdas;
        set.0.residuals = residuals;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::{fft2c, ifft2c};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_has_unit_weights() {
        let k = ConvKernel::identity(2, 3, 5);
        let w = k.image_weights(6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ComplexTensor4::random_normal(Dims::new(1, 2, 6, 7), Domain::Image, &mut rng);
        let mut out = vec![Complex64::default(); x.len()];
        w.apply(x.data(), &mut out);
        for (a, b) in out.iter().zip(x.data()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn single_tap_shifts_kspace() {
        // A single tap at offset (+1, -1) reads in[ky+1][kx-1].
        let mut k = ConvKernel::zeros(1, 1, 3, 3);
        let idx = k.tap_index(0, 0, 2, 0);
        k.taps[idx] = Complex64::new(1.0, 0.0);
        let (ny, nx) = (8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kin = ComplexTensor4::random_normal(Dims::new(1, 1, ny, nx), Domain::Kspace, &mut rng);
        let w = k.image_weights(ny, nx);
        let img = ifft2c(&kin).unwrap();
        let mut mixed = img.clone();
        w.apply(img.data(), mixed.data_mut());
        let kout = fft2c(&mixed).unwrap();
        for y in 0..ny {
            for x in 0..nx {
                let expect = kin.get(0, 0, (y + 1) % ny, (x + nx - 1) % nx);
                assert!((kout.get(0, 0, y, x) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn spirit_set_rejects_nonzero_center() {
        assert!(SpiritKernelSet::new(vec![ConvKernel::identity(2, 3, 3)]).is_err());
        let mut even = ConvKernel::zeros(2, 2, 4, 3);
        even.taps.truncate(2 * 2 * 4 * 3);
        assert!(SpiritKernelSet::new(vec![even]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kernels: Vec<_> = (0..3)
            .map(|_| {
                let t = ComplexTensor4::random_normal(Dims::new(1, 4, 5, 5), Domain::Kspace, &mut rng);
                ConvKernel { n_out: 2, n_in: 2, kh: 5, kw: 5, taps: t.into_vec()[..100].to_vec() }
            })
            .collect();
        let set = SliceGrappaKernelSet::new(kernels).unwrap().0;
        let back = KernelSet::from_tensor(&set.to_tensor().unwrap(), &set.meta().unwrap()).unwrap();
        assert_eq!(back, set);
    }
}
