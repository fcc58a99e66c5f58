//! The composite self-consistency operator `H = K * [I .. I] * M * G` and
//! the normal operator `Psi = F^{-1} (H - I)^* (H - I) F`.
//!
//! `H` acts on per-slice (unmodulated) k-space. `G` is per-slice SPIRiT
//! convolution, `M` the CAIPIRINHA phase of each slice, the sum collapses
//! slices, and `K` separates the collapsed data back into slices. All
//! k-space convolutions are circular, so every stage is diagonal per pixel
//! in the image domain except `M`, which is a circular row shift. Image-domain
//! entry points therefore need no FFTs; the k-space entry points wrap them.

use num_complex::Complex64;

use crate::error::{geometry, Result};
use crate::fft::{self, PlaneFft};
use crate::kernel::{PixelMix, SliceGrappaKernelSet, SpiritKernelSet};
use crate::sampling::caipi_phase;
use crate::tensor::{ComplexTensor4, Dims, Domain};

/// Any operator providing the self-consistency residual in image domain.
pub trait SelfConsistency {
    /// Shape `(slices, coils, ny, nx)` the operator acts on.
    fn dims(&self) -> Dims;

    /// `F^{-1} (H - I) F x`.
    fn residual_image(&self, x: &ComplexTensor4) -> Result<ComplexTensor4>;

    /// `F^{-1} (H - I)^* F r`.
    fn residual_image_adjoint(&self, r: &ComplexTensor4) -> Result<ComplexTensor4>;

    /// `Psi(x) = F^{-1} (H - I)^* (H - I) F x`.
    fn normal_psi(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.residual_image_adjoint(&self.residual_image(x)?)
    }

    /// `||(H - I) F x||`, equal to the image-domain norm since `F` is unitary.
    fn residual_norm(&self, x: &ComplexTensor4) -> Result<f64> {
        Ok(self.residual_image(x)?.norm())
    }

    fn check_image(&self, x: &ComplexTensor4) -> Result<()> {
        x.check_domain(Domain::Image)?;
        if x.dims() != self.dims() {
            return Err(geometry!("operator expects {}, got {}", self.dims(), x.dims()));
        }
        Ok(())
    }
}

/// `H = I`: every tensor is self-consistent and `Psi = 0`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityConsistency {
    pub dims: Dims,
}

impl IdentityConsistency {
    pub fn new(dims: Dims) -> Self {
        IdentityConsistency { dims }
    }
}

impl SelfConsistency for IdentityConsistency {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn residual_image(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.check_image(x)?;
        Ok(ComplexTensor4::zeros(x.dims(), Domain::Image))
    }

    fn residual_image_adjoint(&self, r: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.check_image(r)?;
        Ok(ComplexTensor4::zeros(r.dims(), Domain::Image))
    }
}

/// Image-domain form of the CAIPIRINHA phase of one slice.
#[derive(Debug, Clone)]
enum SliceShift {
    /// `x'[n] = x[n + s]` along y.
    Rows(usize),
    /// Non-integer shift, applied as a k-space phase per ky line.
    Ramp(Vec<Complex64>),
}

impl SliceShift {
    fn new(j: usize, ny: usize, increment: f64) -> Self {
        let s = j as f64 * increment * ny as f64 / std::f64::consts::TAU;
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            SliceShift::Rows((r as i64).rem_euclid(ny as i64) as usize)
        } else {
            SliceShift::Ramp((0..ny).map(|m| caipi_phase(j, m, ny, increment)).collect())
        }
    }

    /// Apply to every `ny x nx` plane of `buf`; `inverse` undoes the shift.
    fn apply(&self, buf: &mut [Complex64], ny: usize, nx: usize, inverse: bool) {
        match self {
            SliceShift::Rows(0) => {}
            SliceShift::Rows(s) => {
                for plane in buf.chunks_exact_mut(ny * nx) {
                    if inverse {
                        plane.rotate_right(s * nx);
                    } else {
                        plane.rotate_left(s * nx);
                    }
                }
            }
            SliceShift::Ramp(phase) => {
                let mut fwd = PlaneFft::new(ny, nx, true);
                let mut inv = PlaneFft::new(ny, nx, false);
                for plane in buf.chunks_exact_mut(ny * nx) {
                    fwd.process(plane);
                    for (row, p) in plane.chunks_exact_mut(nx).zip(phase) {
                        let p = if inverse { p.conj() } else { *p };
                        for v in row {
                            *v *= p;
                        }
                    }
                    inv.process(plane);
                }
            }
        }
    }
}

/// The calibrated self-consistency operator of an SMS acquisition.
#[derive(Debug, Clone)]
pub struct CompositeH {
    dims: Dims,
    increment: f64,
    spirit: Vec<PixelMix>,
    grappa: Vec<PixelMix>,
    shifts: Vec<SliceShift>,
}

impl CompositeH {
    /// `dims` is the full per-slice tensor shape `(slices, coils, ny, nx)`.
    pub fn new(spirit: &SpiritKernelSet, grappa: &SliceGrappaKernelSet, increment: f64, dims: Dims) -> Result<Self> {
        let g = spirit.kernels();
        let k = grappa.kernels();
        if g.len() != dims.slices || k.len() != dims.slices {
            return Err(geometry!(
                "{} SPIRiT and {} slice-GRAPPA kernels for {} slices",
                g.len(),
                k.len(),
                dims.slices
            ));
        }
        for kern in g.iter().chain(k) {
            kern.validate()?;
            if kern.n_in != dims.coils || kern.n_out != dims.coils {
                return Err(geometry!("kernel maps {} -> {} coils, data has {}", kern.n_in, kern.n_out, dims.coils));
            }
        }
        let (ny, nx) = dims.grid();
        Ok(CompositeH {
            dims,
            increment,
            spirit: g.iter().map(|w| w.image_weights(ny, nx)).collect(),
            grappa: k.iter().map(|w| w.image_weights(ny, nx)).collect(),
            shifts: (0..dims.slices).map(|j| SliceShift::new(j, ny, increment)).collect(),
        })
    }

    pub fn increment(&self) -> f64 {
        self.increment
    }

    fn collapsed_dims(&self) -> Dims {
        self.dims.with_slices(1)
    }

    fn check(&self, t: &ComplexTensor4, domain: Domain, slices: usize) -> Result<()> {
        t.check_domain(domain)?;
        let want = self.dims.with_slices(slices);
        if t.dims() != want {
            return Err(geometry!("operator expects {}, got {}", want, t.dims()));
        }
        Ok(())
    }

    fn mix_slices(&self, mixes: &[PixelMix], x: &ComplexTensor4, adjoint: bool) -> ComplexTensor4 {
        let mut out = ComplexTensor4::zeros(x.dims(), x.domain());
        for (s, w) in mixes.iter().enumerate() {
            if adjoint {
                w.apply_adjoint(x.slice_block(s), out.slice_block_mut(s));
            } else {
                w.apply(x.slice_block(s), out.slice_block_mut(s));
            }
        }
        out
    }

    /// Image-domain `G`: per-slice SPIRiT coil mixing.
    pub fn g_image(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.check(x, Domain::Image, self.dims.slices)?;
        Ok(self.mix_slices(&self.spirit, x, false))
    }

    pub fn g_image_adjoint(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.check(x, Domain::Image, self.dims.slices)?;
        Ok(self.mix_slices(&self.spirit, x, true))
    }

    /// Image-domain `K`: collapsed `(1, C, ny, nx)` to `(S, C, ny, nx)`.
    pub fn k_image(&self, u: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.check(u, Domain::Image, 1)?;
        let mut out = ComplexTensor4::zeros(self.dims, Domain::Image);
        for (s, w) in self.grappa.iter().enumerate() {
            w.apply(u.data(), out.slice_block_mut(s));
        }
        Ok(out)
    }

    pub fn k_image_adjoint(&self, v: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.check(v, Domain::Image, self.dims.slices)?;
        let mut out = ComplexTensor4::zeros(self.collapsed_dims(), Domain::Image);
        let mut tmp = vec![Complex64::new(0.0, 0.0); out.len()];
        for (s, w) in self.grappa.iter().enumerate() {
            w.apply_adjoint(v.slice_block(s), &mut tmp);
            for (a, b) in out.data_mut().iter_mut().zip(&tmp) {
                *a += b;
            }
        }
        Ok(out)
    }

    /// Image-domain CAIPIRINHA shift and slice sum.
    fn collapse_image(&self, g: &ComplexTensor4) -> ComplexTensor4 {
        let (ny, nx) = self.dims.grid();
        let mut u = ComplexTensor4::zeros(self.collapsed_dims(), Domain::Image);
        let mut tmp = vec![Complex64::new(0.0, 0.0); u.len()];
        for (s, shift) in self.shifts.iter().enumerate() {
            tmp.copy_from_slice(g.slice_block(s));
            shift.apply(&mut tmp, ny, nx, false);
            for (a, b) in u.data_mut().iter_mut().zip(&tmp) {
                *a += b;
            }
        }
        u
    }

    fn spread_image(&self, u: &ComplexTensor4) -> ComplexTensor4 {
        let (ny, nx) = self.dims.grid();
        let mut out = ComplexTensor4::zeros(self.dims, Domain::Image);
        for (s, shift) in self.shifts.iter().enumerate() {
            let dst = out.slice_block_mut(s);
            dst.copy_from_slice(u.data());
            shift.apply(dst, ny, nx, true);
        }
        out
    }

    /// `F^{-1} H F x`.
    pub fn h_image(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        let g = self.g_image(x)?;
        self.k_image(&self.collapse_image(&g))
    }

    /// `F^{-1} H^* F v`.
    pub fn h_image_adjoint(&self, v: &ComplexTensor4) -> Result<ComplexTensor4> {
        let u = self.k_image_adjoint(v)?;
        self.g_image_adjoint(&self.spread_image(&u))
    }

    fn in_kspace(
        &self,
        k: &ComplexTensor4,
        slices: usize,
        op: impl FnOnce(&ComplexTensor4) -> Result<ComplexTensor4>,
    ) -> Result<ComplexTensor4> {
        self.check(k, Domain::Kspace, slices)?;
        Ok(fft::fft2c_owned(op(&fft::ifft2c_owned(k.clone()))?))
    }

    /// Per-slice SPIRiT convolution `G_i * k_i`.
    pub fn apply_g(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.in_kspace(k, self.dims.slices, |x| self.g_image(x))
    }

    pub fn adjoint_g(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.in_kspace(k, self.dims.slices, |x| self.g_image_adjoint(x))
    }

    /// Slice separation `K_i * collapsed` for every slice.
    pub fn apply_k(&self, collapsed: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.in_kspace(collapsed, 1, |u| self.k_image(u))
    }

    pub fn adjoint_k(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.in_kspace(k, self.dims.slices, |v| self.k_image_adjoint(v))
    }

    pub fn apply_h(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.in_kspace(k, self.dims.slices, |x| self.h_image(x))
    }

    pub fn adjoint_h(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.in_kspace(k, self.dims.slices, |v| self.h_image_adjoint(v))
    }

    /// `(H - I) k`.
    pub fn residual(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        let mut r = self.apply_h(k)?;
        r.axpy_real(-1.0, k);
        Ok(r)
    }
}

impl SelfConsistency for CompositeH {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn residual_image(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        let mut r = self.h_image(x)?;
        r.axpy_real(-1.0, x);
        Ok(r)
    }

    fn residual_image_adjoint(&self, r: &ComplexTensor4) -> Result<ComplexTensor4> {
        let mut out = self.h_image_adjoint(r)?;
        out.axpy_real(-1.0, r);
        Ok(out)
    }
}
