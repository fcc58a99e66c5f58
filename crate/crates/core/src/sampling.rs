//! Undersampling masks, CAIPIRINHA phase cycling and the SMS forward model.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{geometry, invalid, Result};
use crate::fft;
use crate::phantom::{apply_coils, make_coils, make_phantom, Phantom, PhantomSpec};
use crate::tensor::{complex_normal, ComplexTensor4, Dims, Domain};

/// In-plane ky mask (kx fully sampled) plus the CAIPIRINHA schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub ny: usize,
    pub nx: usize,
    pub accel: usize,
    pub acs_lines: usize,
    /// Radians per ky line per slice index.
    pub caipi_increment: f64,
    /// One flag per ky line.
    pub lines: Vec<bool>,
}

impl SamplingPlan {
    /// Uniform undersampling every `accel` lines (aligned with the k-space
    /// center) plus a centered, fully sampled block of `acs_lines` lines.
    pub fn new(accel: usize, acs_lines: usize, ny: usize, nx: usize, caipi_increment: f64) -> Result<Self> {
        if accel < 1 {
            return Err(invalid!("acceleration must be >= 1"));
        }
        if acs_lines > ny {
            return Err(invalid!("acs_lines {acs_lines} exceeds n_ky {ny}"));
        }
        if ny == 0 || nx == 0 {
            return Err(invalid!("empty grid"));
        }
        let c = ny / 2;
        let acs_start = c - acs_lines / 2;
        let lines = (0..ny)
            .map(|m| {
                let in_acs = m >= acs_start && m < acs_start + acs_lines;
                let on_grid = (m + ny * accel - c).is_multiple_of(accel);
                in_acs || on_grid
            })
            .collect();
        Ok(SamplingPlan { ny, nx, accel, acs_lines, caipi_increment, lines })
    }

    /// Half-open ky range of the ACS block.
    pub fn acs_range(&self) -> std::ops::Range<usize> {
        let start = self.ny / 2 - self.acs_lines / 2;
        start..start + self.acs_lines
    }

    pub fn n_sampled(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    pub fn is_sampled(&self, ky: usize) -> bool {
        self.lines[ky]
    }

    pub fn check_grid(&self, dims: Dims) -> Result<()> {
        if dims.grid() != (self.ny, self.nx) || self.lines.len() != self.ny {
            return Err(geometry!("plan grid {}x{} does not match tensor {}", self.ny, self.nx, dims));
        }
        Ok(())
    }

    /// Apply the mask in place to any k-space tensor on the plan grid.
    pub fn mask_in_place(&self, k: &mut ComplexTensor4) {
        let d = k.dims();
        for plane in k.data_mut().chunks_exact_mut(d.plane_len()) {
            for (m, row) in plane.chunks_exact_mut(d.nx).enumerate() {
                if !self.lines[m] {
                    row.fill(Complex64::new(0.0, 0.0));
                }
            }
        }
    }
}

/// Shorthand matching the usual `(R, acs, grid)` call, no CAIPIRINHA.
pub fn make_mask(accel: usize, acs_lines: usize, ny: usize, nx: usize) -> Result<SamplingPlan> {
    SamplingPlan::new(accel, acs_lines, ny, nx, 0.0)
}

/// Phase of slice `j` on ky line `m`, measured from the k-space center so
/// that an increment of `2 pi / 3` is a pure FOV/3 shift per slice.
pub fn caipi_phase(j: usize, m: usize, ny: usize, increment: f64) -> Complex64 {
    let centered = m as f64 - (ny / 2) as f64;
    Complex64::from_polar(1.0, j as f64 * centered * increment)
}

/// Multiply slice `j`, ky line `m` by `exp(i j (m - c) increment)`.
pub fn caipi_modulate(k: &ComplexTensor4, increment: f64) -> Result<ComplexTensor4> {
    k.check_domain(Domain::Kspace)?;
    let mut out = k.clone();
    caipi_in_place(&mut out, increment, false);
    Ok(out)
}

pub(crate) fn caipi_in_place(k: &mut ComplexTensor4, increment: f64, conjugate: bool) {
    let d = k.dims();
    for s in 0..d.slices {
        if s == 0 {
            continue;
        }
        let phases: Vec<Complex64> = (0..d.ny)
            .map(|m| {
                let p = caipi_phase(s, m, d.ny, increment);
                if conjugate {
                    p.conj()
                } else {
                    p
                }
            })
            .collect();
        for c in 0..d.coils {
            for (m, row) in k.plane_mut(s, c).chunks_exact_mut(d.nx).enumerate() {
                for v in row {
                    *v *= phases[m];
                }
            }
        }
    }
}

/// `y = D * sum_slices k` for already-modulated k-space.
pub fn sms_collapse(k: &ComplexTensor4, plan: &SamplingPlan) -> Result<ComplexTensor4> {
    k.check_domain(Domain::Kspace)?;
    plan.check_grid(k.dims())?;
    let mut y = sum_slices(k);
    plan.mask_in_place(&mut y);
    Ok(y)
}

pub(crate) fn sum_slices(k: &ComplexTensor4) -> ComplexTensor4 {
    let d = k.dims();
    let mut y = ComplexTensor4::zeros(d.with_slices(1), k.domain());
    for s in 0..d.slices {
        for (a, b) in y.data_mut().iter_mut().zip(k.slice_block(s)) {
            *a += b;
        }
    }
    y
}

/// The SMS sampling operator: CAIPIRINHA phases, slice sum, ky mask.
#[derive(Debug, Clone)]
pub struct SmsSampling {
    plan: SamplingPlan,
    slices: usize,
}

impl SmsSampling {
    pub fn new(plan: SamplingPlan, slices: usize) -> Self {
        SmsSampling { plan, slices }
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    fn check(&self, d: Dims, slices: usize) -> Result<()> {
        self.plan.check_grid(d)?;
        if d.slices != slices {
            return Err(geometry!("expected {} slices, got tensor {}", slices, d));
        }
        Ok(())
    }

    /// Per-slice k-space `(S, C, ny, nx)` to collapsed data `(1, C, ny, nx)`.
    pub fn apply(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        k.check_domain(Domain::Kspace)?;
        self.check(k.dims(), self.slices)?;
        let mut m = k.clone();
        caipi_in_place(&mut m, self.plan.caipi_increment, false);
        let mut y = sum_slices(&m);
        self.plan.mask_in_place(&mut y);
        Ok(y)
    }

    /// Mask, copy to every slice, undo the slice phases.
    pub fn adjoint(&self, y: &ComplexTensor4) -> Result<ComplexTensor4> {
        y.check_domain(Domain::Kspace)?;
        self.check(y.dims(), 1)?;
        let mut masked = y.clone();
        self.plan.mask_in_place(&mut masked);
        let parts = vec![masked; self.slices];
        let mut k = ComplexTensor4::stack_slices(&parts)?;
        caipi_in_place(&mut k, self.plan.caipi_increment, true);
        Ok(k)
    }

    /// `D^* D k`, in place friendly form used by solvers.
    pub fn normal(&self, k: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.adjoint(&self.apply(k)?)
    }

    /// Image-domain forward model `D F x`.
    pub fn apply_image(&self, x: &ComplexTensor4) -> Result<ComplexTensor4> {
        self.apply(&fft::fft2c(x)?)
    }

    /// `F^{-1} D^* y`.
    pub fn adjoint_image(&self, y: &ComplexTensor4) -> Result<ComplexTensor4> {
        fft::ifft2c(&self.adjoint(y)?)
    }
}

/// Knobs for a retrospective SMS experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub phantom: PhantomSpec,
    #[serde(default = "default_accel")]
    pub accel: usize,
    #[serde(default = "default_acs")]
    pub acs_lines: usize,
    #[serde(default = "default_caipi")]
    pub caipi_increment: f64,
    /// Standard deviation of complex Gaussian noise added to `y`.
    #[serde(default)]
    pub noise_std: f64,
    /// Seed for the coil geometry; the phantom seed is in `phantom`.
    #[serde(default)]
    pub coil_seed: u64,
}

fn default_accel() -> usize {
    3
}
fn default_acs() -> usize {
    32
}
fn default_caipi() -> f64 {
    2.0 * std::f64::consts::PI / 3.0
}

impl SimulationSpec {
    pub fn new(phantom: PhantomSpec, accel: usize, acs_lines: usize) -> Self {
        let slices = phantom.n_slice.max(1) as f64;
        SimulationSpec {
            phantom,
            accel,
            acs_lines,
            caipi_increment: 2.0 * std::f64::consts::PI / slices,
            noise_std: 0.0,
            coil_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub phantom: Phantom,
    pub coils: ComplexTensor4,
    /// Multi-coil, multi-slice ground truth images.
    pub truth: ComplexTensor4,
    /// Per-slice (unmodulated) k-space of the truth.
    pub kspace: ComplexTensor4,
    /// Single-band calibration data: per-slice k-space, zero outside ACS.
    pub calib: ComplexTensor4,
    /// Collapsed, masked, optionally noisy measurement `(1, C, ny, nx)`.
    pub y: ComplexTensor4,
    pub plan: SamplingPlan,
}

pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    let p = &spec.phantom;
    let phantom = make_phantom(p)?;
    let coils = make_coils(p.n_coil, p.n_slice, p.ny, p.nx, spec.coil_seed)?;
    let truth = apply_coils(&phantom.image, &coils)?;
    let kspace = fft::fft2c(&truth)?;
    let plan = SamplingPlan::new(spec.accel, spec.acs_lines, p.ny, p.nx, spec.caipi_increment)?;

    let mut calib = ComplexTensor4::zeros(kspace.dims(), Domain::Kspace);
    let acs = plan.acs_range();
    let d = kspace.dims();
    for s in 0..d.slices {
        for c in 0..d.coils {
            let src = kspace.plane(s, c);
            let dst = calib.plane_mut(s, c);
            for m in acs.clone() {
                dst[m * d.nx..(m + 1) * d.nx].copy_from_slice(&src[m * d.nx..(m + 1) * d.nx]);
            }
        }
    }

    let sampling = SmsSampling::new(plan.clone(), d.slices);
    let mut y = sampling.apply(&kspace)?;
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x4E01_5E00);
        for (m, row) in y.data_mut().chunks_exact_mut(d.nx).enumerate() {
            let ky = m % d.ny;
            for v in row {
                let n = complex_normal(&mut rng) * spec.noise_std;
                if plan.lines[ky] {
                    *v += n;
                }
            }
        }
    }
    Ok(Simulation { phantom, coils, truth, kspace, calib, y, plan })
}
