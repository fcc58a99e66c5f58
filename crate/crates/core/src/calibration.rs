//! Regularized least-squares fitting of SPIRiT and slice-GRAPPA kernels
//! from fully sampled calibration (ACS) data.
//!
//! Only target points whose whole kernel neighbourhood lies inside the ACS
//! block are used, so fits never see wrapped samples.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{geometry, invalid, Error, Result};
use crate::kernel::{ConvKernel, KernelKind, KernelSet, SliceGrappaKernelSet, SpiritKernelSet};
use crate::sampling::caipi_in_place;
use crate::tensor::{ComplexTensor4, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tikhonov {
    /// `lambda = factor * ||A||_F^2 / n_rows`, or `factor` itself when the
    /// calibration data are all zero.
    Scaled(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibConfig {
    pub kh: usize,
    pub kw: usize,
    pub tikhonov: Tikhonov,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig { kh: 5, kw: 5, tikhonov: Tikhonov::Scaled(1e-4) }
    }
}

impl CalibConfig {
    pub fn with_kernel(kh: usize, kw: usize, tikhonov: Tikhonov) -> Self {
        CalibConfig { kh, kw, tikhonov }
    }

    fn validate(&self) -> Result<()> {
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) || self.kh == 0 || self.kw == 0 {
            return Err(invalid!("kernel size {}x{} must be odd", self.kh, self.kw));
        }
        let lam = match self.tikhonov {
            Tikhonov::Scaled(v) | Tikhonov::Absolute(v) => v,
        };
        if !(lam >= 0.0) || !lam.is_finite() {
            return Err(invalid!("Tikhonov weight must be finite and >= 0"));
        }
        Ok(())
    }

    fn lambda(&self, frob_sqr: f64, rows: usize) -> f64 {
        match self.tikhonov {
            Tikhonov::Scaled(f) if frob_sqr > 0.0 => f * frob_sqr / rows as f64,
            Tikhonov::Scaled(f) => f,
            Tikhonov::Absolute(v) => v,
        }
    }
}

/// Outcome of one regularized least-squares problem.
#[derive(Debug, Clone)]
pub struct Fit {
    pub kernel: ConvKernel,
    pub lambda: f64,
    /// `||A w - b|| / ||b||` over all target coils.
    pub residual: f64,
}

/// Neighbourhood matrix of a multi-coil k-space region.
struct Patches {
    /// `rows x (n_in * kh * kw)`, row-major.
    a: DMatrix<Complex64>,
    /// Target positions `(ky, kx)` matching the rows.
    targets: Vec<(usize, usize)>,
}

fn patches(src: &ComplexTensor4, rows: &Range<usize>, kh: usize, kw: usize) -> Result<Patches> {
    let d = src.dims();
    let (hy, hx) = (kh / 2, kw / 2);
    if rows.end > d.ny || rows.len() < kh + 2 || d.nx < kw + 2 {
        return Err(Error::Calibration(format!(
            "calibration region {}x{} smaller than ({}+2)x({}+2)",
            rows.len(),
            d.nx,
            kh,
            kw
        )));
    }
    let mut targets = Vec::new();
    for y in rows.start + hy..rows.end - hy {
        for x in hx..d.nx - hx {
            targets.push((y, x));
        }
    }
    let ncol = d.coils * kh * kw;
    let a = DMatrix::from_fn(targets.len(), ncol, |r, col| {
        let (y, x) = targets[r];
        let c = col / (kh * kw);
        let dy = (col / kw) % kh;
        let dx = col % kw;
        src.get(0, c, y + dy - hy, x + dx - hx)
    });
    Ok(Patches { a, targets })
}

fn frob_sqr(a: &DMatrix<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Solve `min ||A w - b||^2 + lambda ||w||^2` for every column of `b`.
///
/// Normal equations with Cholesky; with `lambda > 0` a failed factorization
/// falls back to Householder QR on the augmented system. With `lambda == 0`
/// a singular normal matrix is reported as an error.
pub(crate) fn ridge_solve(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>, lambda: f64) -> Result<DMatrix<Complex64>> {
    let n = a.ncols();
    if a.nrows() < n {
        return Err(Error::Calibration(format!(
            "under-determined system: {} target rows for {} unknowns",
            a.nrows(),
            n
        )));
    }
    let ah = a.adjoint();
    let mut normal = &ah * a;
    let rhs = &ah * b;
    let max_diag = (0..n).map(|i| normal[(i, i)].re).fold(0.0, f64::max);
    for i in 0..n {
        normal[(i, i)] += Complex64::new(lambda, 0.0);
    }
    match normal.clone().cholesky() {
        Some(ch) => {
            if lambda == 0.0 {
                let l = ch.l_dirty();
                let min_pivot = (0..n).map(|i| l[(i, i)].re.powi(2)).fold(f64::INFINITY, f64::min);
                if max_diag == 0.0 || min_pivot <= 1e-12 * max_diag * n as f64 {
                    return Err(singular_error());
                }
            }
            Ok(ch.solve(&rhs))
        }
        None if lambda == 0.0 => Err(singular_error()),
        None => {
            let mut aug = DMatrix::zeros(a.nrows() + n, n);
            aug.rows_mut(0, a.nrows()).copy_from(a);
            let sq = lambda.sqrt();
            for i in 0..n {
                aug[(a.nrows() + i, i)] = Complex64::new(sq, 0.0);
            }
            let mut baug = DMatrix::zeros(a.nrows() + n, b.ncols());
            baug.rows_mut(0, a.nrows()).copy_from(b);
            let qr = aug.qr();
            let qtb = qr.q().adjoint() * baug;
            qr.r().solve_upper_triangular(&qtb).ok_or_else(|| Error::Solver("QR fallback hit a zero pivot".into()))
        }
    }
}

fn singular_error() -> Error {
    Error::Solver("singular normal matrix with zero Tikhonov weight; use lambda_t > 0".into())
}

fn check_single_slice(t: &ComplexTensor4, what: &str) -> Result<()> {
    t.check_domain(Domain::Kspace)?;
    if t.dims().slices != 1 {
        return Err(geometry!("{what} must hold one slice, got {}", t.dims()));
    }
    Ok(())
}

/// SPIRiT kernel for one slice: every point predicted from its multi-coil
/// neighbourhood, excluding the point itself.
pub fn fit_spirit(acs: &ComplexTensor4, rows: Range<usize>, cfg: &CalibConfig) -> Result<Fit> {
    cfg.validate()?;
    check_single_slice(acs, "SPIRiT calibration data")?;
    let (kh, kw) = (cfg.kh, cfg.kw);
    let nc = acs.dims().coils;
    let p = patches(acs, &rows, kh, kw)?;
    let lambda = cfg.lambda(frob_sqr(&p.a), p.a.nrows());
    let center = (kh / 2) * kw + kw / 2;

    let mut kernel = ConvKernel::zeros(nc, nc, kh, kw);
    let (mut res2, mut tgt2) = (0.0, 0.0);
    for o in 0..nc {
        let excluded = o * kh * kw + center;
        let cols: Vec<usize> = (0..nc * kh * kw).filter(|&c| c != excluded).collect();
        let a_o = p.a.select_columns(&cols);
        let b = DMatrix::from_fn(p.targets.len(), 1, |r, _| {
            let (y, x) = p.targets[r];
            acs.get(0, o, y, x)
        });
        let w = ridge_solve(&a_o, &b, lambda)?;
        res2 += (&a_o * &w - &b).norm_squared();
        tgt2 += b.norm_squared();
        for (j, &col) in cols.iter().enumerate() {
            kernel.taps[o * nc * kh * kw + col] = w[(j, 0)];
        }
    }
    Ok(Fit { kernel, lambda, residual: relative(res2, tgt2) })
}

fn relative(res2: f64, tgt2: f64) -> f64 {
    if tgt2 > 0.0 {
        (res2 / tgt2).sqrt()
    } else {
        res2.sqrt()
    }
}

/// Sum of CAIPIRINHA-modulated per-slice calibration data.
pub fn collapse_calibration(calib: &ComplexTensor4, increment: f64) -> Result<ComplexTensor4> {
    calib.check_domain(Domain::Kspace)?;
    let mut m = calib.clone();
    caipi_in_place(&mut m, increment, false);
    Ok(crate::sampling::sum_slices(&m))
}

/// Slice-GRAPPA kernels mapping collapsed multi-coil k-space to each slice.
pub fn fit_slice_grappa(
    calib_slices: &ComplexTensor4,
    calib_collapsed: &ComplexTensor4,
    rows: Range<usize>,
    cfg: &CalibConfig,
) -> Result<SliceGrappaKernelSet> {
    cfg.validate()?;
    calib_slices.check_domain(Domain::Kspace)?;
    check_single_slice(calib_collapsed, "collapsed calibration data")?;
    let ds = calib_slices.dims();
    let dc = calib_collapsed.dims();
    if ds.coils != dc.coils || ds.grid() != dc.grid() {
        return Err(geometry!("per-slice calibration {} vs collapsed {}", ds, dc));
    }
    let (kh, kw) = (cfg.kh, cfg.kw);
    let nc = ds.coils;
    let p = patches(calib_collapsed, &rows, kh, kw)?;
    let lambda = cfg.lambda(frob_sqr(&p.a), p.a.nrows());

    let b = DMatrix::from_fn(p.targets.len(), ds.slices * nc, |r, col| {
        let (y, x) = p.targets[r];
        calib_slices.get(col / nc, col % nc, y, x)
    });
    let w = ridge_solve(&p.a, &b, lambda)?;
    let fitted = &p.a * &w;

    let mut kernels = Vec::with_capacity(ds.slices);
    let mut residuals = Vec::with_capacity(ds.slices);
    for s in 0..ds.slices {
        let mut k = ConvKernel::zeros(nc, nc, kh, kw);
        let (mut res2, mut tgt2) = (0.0, 0.0);
        for o in 0..nc {
            let col = s * nc + o;
            for j in 0..nc * kh * kw {
                k.taps[o * nc * kh * kw + j] = w[(j, col)];
            }
            res2 += (fitted.column(col) - b.column(col)).norm_squared();
            tgt2 += b.column(col).norm_squared();
        }
        kernels.push(k);
        residuals.push(relative(res2, tgt2));
    }
    Ok(SliceGrappaKernelSet(KernelSet {
        kind: KernelKind::SliceGrappa,
        kernels,
        lambdas: vec![lambda; ds.slices],
        residuals,
    }))
}

/// SPIRiT kernels for every slice of single-band calibration data.
pub fn fit_spirit_all(calib: &ComplexTensor4, rows: Range<usize>, cfg: &CalibConfig) -> Result<SpiritKernelSet> {
    calib.check_domain(Domain::Kspace)?;
    let n = calib.dims().slices;
    let mut kernels = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for s in 0..n {
        let fit = fit_spirit(&calib.extract_slice(s), rows.clone(), cfg)?;
        kernels.push(fit.kernel);
        lambdas.push(fit.lambda);
        residuals.push(fit.residual);
    }
    let mut set = SpiritKernelSet::new(kernels)?;
    set.0.lambdas = lambdas;
    set.0.residuals = residuals;
    Ok(set)
}

/// Both kernel families from single-band calibration data.
pub fn calibrate(
    calib: &ComplexTensor4,
    rows: Range<usize>,
    caipi_increment: f64,
    cfg: &CalibConfig,
) -> Result<(SpiritKernelSet, SliceGrappaKernelSet)> {
    let spirit = fit_spirit_all(calib, rows.clone(), cfg)?;
    let collapsed = collapse_calibration(calib, caipi_increment)?;
    let grappa = fit_slice_grappa(calib, &collapsed, rows, cfg)?;
    Ok((spirit, grappa))
}

/// Gradient of the ridge objective at `w`, for verifying fits.
pub fn ridge_gradient(
    a: &DMatrix<Complex64>,
    b: &DVector<Complex64>,
    w: &DVector<Complex64>,
    lambda: f64,
) -> DVector<Complex64> {
    a.adjoint() * (a * w - b) + w * Complex64::new(lambda, 0.0)
}

/// Patch matrix and targets of one SPIRiT problem, exposed for checks.
pub fn spirit_system(
    acs: &ComplexTensor4,
    rows: Range<usize>,
    cfg: &CalibConfig,
    coil: usize,
) -> Result<(DMatrix<Complex64>, DVector<Complex64>, Vec<usize>)> {
    let (kh, kw) = (cfg.kh, cfg.kw);
    let nc = acs.dims().coils;
    let p = patches(acs, &rows, kh, kw)?;
    let excluded = coil * kh * kw + (kh / 2) * kw + kw / 2;
    let cols: Vec<usize> = (0..nc * kh * kw).filter(|&c| c != excluded).collect();
    let b = DVector::from_fn(p.targets.len(), |r, _| {
        let (y, x) = p.targets[r];
        acs.get(0, coil, y, x)
    });
    Ok((p.a.select_columns(&cols), b, cols))
}
