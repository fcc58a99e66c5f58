//! Independent reference constructions shared by the integration tests.
//!
//! Everything here works directly in k-space by brute force: circular
//! convolutions by explicit summation, dense matrices by applying operators
//! to every basis vector, and a naive centered DFT. None of it goes through
//! the image-domain fast paths of the library.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sms_diffusion::calibration::{fit_slice_grappa, fit_spirit, CalibConfig, Tikhonov};
use sms_diffusion::kernel::{ConvKernel, KernelKind, KernelSet, SliceGrappaKernelSet, SpiritKernelSet};
use sms_diffusion::sampling::caipi_modulate;
use sms_diffusion::tensor::complex_normal;
use sms_diffusion::{ComplexTensor4, Dims, Domain};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: Dims, domain: Domain, seed: u64) -> ComplexTensor4 {
    ComplexTensor4::random_normal(dims, domain, &mut rng(seed))
}

/// Circular multi-coil convolution of one slice by explicit summation:
/// `out[o][y][x] = sum w[o][i][dy][dx] in[i][y + dy - kh/2][x + dx - kw/2]`.
pub fn direct_conv(k: &ConvKernel, input: &ComplexTensor4, slice: usize) -> Vec<Complex64> {
    let d = input.dims();
    let (ny, nx) = (d.ny as isize, d.nx as isize);
    let (hy, hx) = ((k.kh / 2) as isize, (k.kw / 2) as isize);
    let mut out = vec![c(0.0, 0.0); k.n_out * d.plane_len()];
    for o in 0..k.n_out {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = c(0.0, 0.0);
                for i in 0..k.n_in {
                    for dy in 0..k.kh {
                        for dx in 0..k.kw {
                            let sy = (y + dy as isize - hy).rem_euclid(ny) as usize;
                            let sx = (x + dx as isize - hx).rem_euclid(nx) as usize;
                            acc += k.tap(o, i, dy, dx) * input.get(slice, i, sy, sx);
                        }
                    }
                }
                out[o * d.plane_len() + (y * nx + x) as usize] = acc;
            }
        }
    }
    out
}

pub fn random_kernel(n_out: usize, n_in: usize, size: usize, seed: u64, zero_center: bool) -> ConvKernel {
    let mut r = rng(seed);
    let mut k = ConvKernel::zeros(n_out, n_in, size, size);
    for v in &mut k.taps {
        *v = complex_normal(&mut r) * 0.3;
    }
    if zero_center {
        for o in 0..n_out.min(n_in) {
            let i = k.tap_index(o, o, size / 2, size / 2);
            k.taps[i] = c(0.0, 0.0);
        }
    }
    k
}

pub fn random_kernel_sets(dims: Dims, size: usize, seed: u64) -> (SpiritKernelSet, SliceGrappaKernelSet) {
    let g = (0..dims.slices).map(|s| random_kernel(dims.coils, dims.coils, size, seed + 10 * s as u64, true)).collect();
    let k = (0..dims.slices)
        .map(|s| random_kernel(dims.coils, dims.coils, size, seed + 10 * s as u64 + 5, false))
        .collect();
    (SpiritKernelSet::new(g).unwrap(), SliceGrappaKernelSet::new(k).unwrap())
}

/// Reference `G`: per-slice direct convolution.
pub fn ref_apply_g(spirit: &SpiritKernelSet, k: &ComplexTensor4) -> ComplexTensor4 {
    let d = k.dims();
    let mut out = ComplexTensor4::zeros(d, Domain::Kspace);
    for (s, kern) in spirit.kernels().iter().enumerate() {
        out.slice_block_mut(s).copy_from_slice(&direct_conv(kern, k, s));
    }
    out
}

/// Reference `K`: direct convolution of the collapsed data for every slice.
pub fn ref_apply_k(grappa: &SliceGrappaKernelSet, collapsed: &ComplexTensor4) -> ComplexTensor4 {
    let d = collapsed.dims();
    let n = grappa.kernels().len();
    let mut out = ComplexTensor4::zeros(d.with_slices(n), Domain::Kspace);
    for (s, kern) in grappa.kernels().iter().enumerate() {
        out.slice_block_mut(s).copy_from_slice(&direct_conv(kern, collapsed, 0));
    }
    out
}

/// Reference `H = K [I .. I] M G` on per-slice k-space.
pub fn ref_apply_h(
    spirit: &SpiritKernelSet,
    grappa: &SliceGrappaKernelSet,
    increment: f64,
    k: &ComplexTensor4,
) -> ComplexTensor4 {
    let g = ref_apply_g(spirit, k);
    let m = caipi_modulate(&g, increment).unwrap();
    let d = m.dims();
    let mut sum = ComplexTensor4::zeros(d.with_slices(1), Domain::Kspace);
    for s in 0..d.slices {
        for (a, b) in sum.data_mut().iter_mut().zip(m.slice_block(s)) {
            *a += b;
        }
    }
    ref_apply_k(grappa, &sum)
}

/// Dense matrix of a linear map by applying it to every basis vector.
pub fn materialize(dims_in: Dims, domain: Domain, f: impl Fn(&ComplexTensor4) -> ComplexTensor4) -> DMatrix<Complex64> {
    let n = dims_in.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        cols.push(f(&ComplexTensor4::basis(dims_in, domain, j)));
    }
    let m = cols[0].len();
    DMatrix::from_fn(m, n, |i, j| cols[j].data()[i])
}

/// Naive centered unitary 2D DFT matrix on one plane.
pub fn centered_dft(ny: usize, nx: usize) -> DMatrix<Complex64> {
    let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    DMatrix::from_fn(ny * nx, ny * nx, |r, col| {
        let (ky, kx) = ((r / nx) as f64 - cy, (r % nx) as f64 - cx);
        let (y, x) = ((col / nx) as f64 - cy, (col % nx) as f64 - cx);
        Complex64::from_polar(scale, -TAU * (ky * y / ny as f64 + kx * x / nx as f64))
    })
}

/// Block-diagonal DFT over all planes of a tensor.
pub fn centered_dft_blocks(dims: Dims) -> DMatrix<Complex64> {
    let f = centered_dft(dims.ny, dims.nx);
    let p = dims.plane_len();
    let n = dims.len();
    let mut out = DMatrix::zeros(n, n);
    for b in 0..dims.n_planes() {
        out.view_mut((b * p, b * p), (p, p)).copy_from(&f);
    }
    out
}

pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Degree-one trigonometric coil sensitivities given by their 3x3 k-space
/// coefficients, with a dominant DC term so they never vanish.
pub fn trig_sensitivities(coils: usize, seed: u64) -> Vec<[[Complex64; 3]; 3]> {
    let mut r = rng(seed);
    (0..coils)
        .map(|_| {
            let mut s = [[c(0.0, 0.0); 3]; 3];
            for row in &mut s {
                for v in row.iter_mut() {
                    *v = complex_normal(&mut r) * 0.15;
                }
            }
            s[1][1] = c(1.0, 0.0) + complex_normal(&mut r) * 0.1;
            s
        })
        .collect()
}

/// Multi-coil k-space `x_c = s_c * rho` for a random image `rho`: every
/// coil is a 3x3 circular convolution of the same random k-space.
pub fn consistent_kspace(sens: &[[[Complex64; 3]; 3]], ny: usize, nx: usize, seed: u64) -> ComplexTensor4 {
    let rho = random_tensor(Dims::new(1, 1, ny, nx), Domain::Kspace, seed);
    let coils = sens.len();
    let mut k = ConvKernel::zeros(coils, 1, 3, 3);
    for (o, s) in sens.iter().enumerate() {
        for dy in 0..3 {
            for dx in 0..3 {
                let i = k.tap_index(o, 0, dy, dx);
                k.taps[i] = s[dy][dx];
            }
        }
    }
    ComplexTensor4::from_vec(Dims::new(1, coils, ny, nx), Domain::Kspace, direct_conv(&k, &rho, 0)).unwrap()
}

/// The SPIRiT kernel generating two-coil data from [`consistent_kspace`]:
/// `s_2 x_1 = s_1 x_2` solved for the center of each target coil.
pub fn generating_spirit_kernel(sens: &[[[Complex64; 3]; 3]]) -> ConvKernel {
    assert_eq!(sens.len(), 2);
    let mut k = ConvKernel::zeros(2, 2, 3, 3);
    for o in 0..2 {
        let other = 1 - o;
        let d0 = sens[other][1][1];
        for dy in 0..3 {
            for dx in 0..3 {
                // x_o = x_o - (s_other / d0) * x_o + (s_o / d0) * x_other
                let own = if dy == 1 && dx == 1 { c(0.0, 0.0) } else { -sens[other][dy][dx] / d0 };
                let i = k.tap_index(o, o, dy, dx);
                k.taps[i] = own;
                let j = k.tap_index(o, other, dy, dx);
                k.taps[j] = sens[o][dy][dx] / d0;
            }
        }
    }
    k
}

/// Kernels for two slices, two coils, whose `H` leaves consistent data with
/// an all-zero second slice unchanged: SPIRiT fitted on consistent data for
/// slice 1 and on zeros for slice 2, slice-GRAPPA fitted with slice 2 = 0.
pub struct OracleKernels {
    pub spirit: SpiritKernelSet,
    pub grappa: SliceGrappaKernelSet,
    pub sens: Vec<[[Complex64; 3]; 3]>,
    pub spirit_residual: f64,
    pub grappa_residuals: Vec<f64>,
}

pub const ORACLE_INCREMENT: f64 = std::f64::consts::PI;

pub fn oracle_kernels(seed: u64) -> OracleKernels {
    let sens = trig_sensitivities(2, seed);
    let (ny, nx) = (12, 12);
    let slice1 = consistent_kspace(&sens, ny, nx, seed + 1);
    let exact = CalibConfig::with_kernel(3, 3, Tikhonov::Absolute(0.0));
    let fit1 = fit_spirit(&slice1, 0..ny, &exact).unwrap();
    let tiny = CalibConfig::with_kernel(3, 3, Tikhonov::Scaled(1e-14));
    let zeros = ComplexTensor4::zeros(slice1.dims(), Domain::Kspace);
    let fit2 = fit_spirit(&zeros, 0..ny, &tiny).unwrap();
    let spirit = SpiritKernelSet::new(vec![fit1.kernel, fit2.kernel]).unwrap();

    let calib = ComplexTensor4::stack_slices(&[slice1.clone(), zeros]).unwrap();
    let collapsed = sms_diffusion::calibration::collapse_calibration(&calib, ORACLE_INCREMENT).unwrap();
    let grappa = fit_slice_grappa(&calib, &collapsed, 0..ny, &tiny).unwrap();
    OracleKernels { spirit, grappa_residuals: grappa.0.residuals.clone(), grappa, sens, spirit_residual: fit1.residual }
}

/// Two-slice k-space consistent with [`oracle_kernels`]: slice 1 from the
/// same sensitivities, slice 2 zero.
pub fn oracle_kspace(o: &OracleKernels, ny: usize, nx: usize, seed: u64) -> ComplexTensor4 {
    let s1 = consistent_kspace(&o.sens, ny, nx, seed);
    let zeros = ComplexTensor4::zeros(s1.dims(), Domain::Kspace);
    ComplexTensor4::stack_slices(&[s1, zeros]).unwrap()
}

pub fn kernel_set(kind: KernelKind, kernels: Vec<ConvKernel>) -> KernelSet {
    let n = kernels.len();
    KernelSet { kind, kernels, lambdas: vec![0.0; n], residuals: vec![0.0; n] }
}
