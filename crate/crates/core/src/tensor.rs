//! Complex 4-axis tensors laid out row-major over (slice, coil, ky, kx).

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{geometry, invalid, Result};

/// Which side of the Fourier transform a tensor lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Kspace,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Image => f.write_str("image"),
            Domain::Kspace => f.write_str("kspace"),
        }
    }
}

/// Axis extents in (slice, coil, ky, kx) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub slices: usize,
    pub coils: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Dims {
    pub const fn new(slices: usize, coils: usize, ny: usize, nx: usize) -> Self {
        Dims { slices, coils, ny, nx }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.slices, self.coils, self.ny, self.nx]
    }

    pub fn plane_len(&self) -> usize {
        self.ny * self.nx
    }

    pub fn n_planes(&self) -> usize {
        self.slices * self.coils
    }

    /// Total element count, `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.slices.checked_mul(self.coils)?.checked_mul(self.ny)?.checked_mul(self.nx)
    }

    pub fn len(&self) -> usize {
        self.slices * self.coils * self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_slices(&self, slices: usize) -> Self {
        Dims { slices, ..*self }
    }

    pub fn with_coils(&self, coils: usize) -> Self {
        Dims { coils, ..*self }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.slices, self.coils, self.ny, self.nx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor4 {
    dims: Dims,
    domain: Domain,
    data: Vec<Complex64>,
}

impl ComplexTensor4 {
    pub fn zeros(dims: Dims, domain: Domain) -> Self {
        ComplexTensor4 { dims, domain, data: vec![Complex64::new(0.0, 0.0); dims.len()] }
    }

    pub fn from_vec(dims: Dims, domain: Domain, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(invalid!("data length {} does not match dims {} ({} elements)", data.len(), dims, dims.len()));
        }
        Ok(ComplexTensor4 { dims, domain, data })
    }

    pub fn from_fn(dims: Dims, domain: Domain, mut f: impl FnMut(usize, usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for s in 0..dims.slices {
            for c in 0..dims.coils {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        data.push(f(s, c, y, x));
                    }
                }
            }
        }
        ComplexTensor4 { dims, domain, data }
    }

    /// i.i.d. standard complex Gaussian entries, `E|z|^2 = 1`.
    pub fn random_normal<R: Rng + ?Sized>(dims: Dims, domain: Domain, rng: &mut R) -> Self {
        let data = (0..dims.len()).map(|_| complex_normal(rng)).collect();
        ComplexTensor4 { dims, domain, data }
    }

    /// Unit tensor with a single one at flat index `j`.
    pub fn basis(dims: Dims, domain: Domain, j: usize) -> Self {
        let mut t = Self::zeros(dims, domain);
        t.data[j] = Complex64::new(1.0, 0.0);
        t
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub(crate) fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    pub fn index(&self, s: usize, c: usize, y: usize, x: usize) -> usize {
        ((s * self.dims.coils + c) * self.dims.ny + y) * self.dims.nx + x
    }

    pub fn get(&self, s: usize, c: usize, y: usize, x: usize) -> Complex64 {
        self.data[self.index(s, c, y, x)]
    }

    pub fn set(&mut self, s: usize, c: usize, y: usize, x: usize, v: Complex64) {
        let i = self.index(s, c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, s: usize, c: usize) -> &[Complex64] {
        let n = self.dims.plane_len();
        let start = (s * self.dims.coils + c) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, s: usize, c: usize) -> &mut [Complex64] {
        let n = self.dims.plane_len();
        let start = (s * self.dims.coils + c) * n;
        &mut self.data[start..start + n]
    }

    /// All coil planes of slice `s`, contiguous.
    pub fn slice_block(&self, s: usize) -> &[Complex64] {
        let n = self.dims.coils * self.dims.plane_len();
        &self.data[s * n..(s + 1) * n]
    }

    pub fn slice_block_mut(&mut self, s: usize) -> &mut [Complex64] {
        let n = self.dims.coils * self.dims.plane_len();
        &mut self.data[s * n..(s + 1) * n]
    }

    /// Copy of slice `s` as a one-slice tensor.
    pub fn extract_slice(&self, s: usize) -> ComplexTensor4 {
        ComplexTensor4 { dims: self.dims.with_slices(1), domain: self.domain, data: self.slice_block(s).to_vec() }
    }

    /// Stack one-slice tensors along the slice axis.
    pub fn stack_slices(parts: &[ComplexTensor4]) -> Result<ComplexTensor4> {
        let first = parts.first().ok_or_else(|| invalid!("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        let mut slices = 0;
        for p in parts {
            if p.dims.coils != first.dims.coils || p.dims.grid() != first.dims.grid() || p.domain != first.domain {
                return Err(geometry!("cannot stack {} ({}) with {} ({})", p.dims, p.domain, first.dims, first.domain));
            }
            slices += p.dims.slices;
            data.extend_from_slice(&p.data);
        }
        Ok(ComplexTensor4 { dims: first.dims.with_slices(slices), domain: first.domain, data })
    }

    pub fn check_same_shape(&self, other: &ComplexTensor4) -> Result<()> {
        if self.dims != other.dims {
            return Err(geometry!("dims {} vs {}", self.dims, other.dims));
        }
        Ok(())
    }

    pub fn check_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(invalid!("expected a {} tensor, got {}", expected, self.domain));
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale(&mut self, a: Complex64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scale_real(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> ComplexTensor4 {
        let mut out = self.clone();
        out.scale_real(a);
        out
    }

    /// `self += a * other`. Panics if dims differ.
    pub fn axpy(&mut self, a: Complex64, other: &ComplexTensor4) {
        assert_eq!(self.dims, other.dims, "axpy dims mismatch");
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    /// `self += a * other` for a real coefficient. Panics if dims differ.
    pub fn axpy_real(&mut self, a: f64, other: &ComplexTensor4) {
        assert_eq!(self.dims, other.dims, "axpy dims mismatch");
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += o * a;
        }
    }

    pub fn add(&self, other: &ComplexTensor4) -> ComplexTensor4 {
        let mut out = self.clone();
        out.axpy_real(1.0, other);
        out
    }

    pub fn sub(&self, other: &ComplexTensor4) -> ComplexTensor4 {
        let mut out = self.clone();
        out.axpy_real(-1.0, other);
        out
    }

    pub fn fill_zero(&mut self) {
        for v in &mut self.data {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// Sum of `conj(a_i) * b_i`.
pub fn inner(a: &ComplexTensor4, b: &ComplexTensor4) -> Result<Complex64> {
    a.check_same_shape(b)?;
    Ok(inner_unchecked(a, b))
}

pub(crate) fn inner_unchecked(a: &ComplexTensor4, b: &ComplexTensor4) -> Complex64 {
    a.data.iter().zip(&b.data).fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
