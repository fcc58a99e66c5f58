//! Centered, unitary 2D FFTs over the (ky, kx) axes of every plane.
//!
//! `fft2c(x)[k] = N^{-1/2} sum_n x[n] exp(-2 pi i (k - c)(n - c) / N)` per axis,
//! with `c = floor(N / 2)`. The transform is an isometry, so adjoints of
//! k-space operators need no scale factors.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::tensor::{ComplexTensor4, Domain};

type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, PlanCache)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, forward))
            .or_insert_with(|| if forward { planner.plan_fft_forward(len) } else { planner.plan_fft_inverse(len) })
            .clone()
    })
}

/// Reusable plans and scratch for transforming `ny x nx` planes.
pub struct PlaneFft {
    ny: usize,
    nx: usize,
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    forward: bool,
    work: Vec<Complex64>,
    trans: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl PlaneFft {
    pub fn new(ny: usize, nx: usize, forward: bool) -> Self {
        let row = plan(nx, forward);
        let col = plan(ny, forward);
        let scratch_len = row.get_inplace_scratch_len().max(col.get_inplace_scratch_len());
        PlaneFft {
            ny,
            nx,
            row,
            col,
            forward,
            work: vec![Complex64::default(); ny * nx],
            trans: vec![Complex64::default(); ny * nx],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    /// Transform one plane in place.
    pub fn process(&mut self, plane: &mut [Complex64]) {
        let (ny, nx) = (self.ny, self.nx);
        debug_assert_eq!(plane.len(), ny * nx);
        let (cy, cx) = (ny / 2, nx / 2);
        // Forward: input index n -> work index n - c; output index k <- f + c.
        // Inverse: input index k -> f = k - c; output index n <- j + c.
        // Both directions use the same pair of rolls.
        for y in 0..ny {
            let sy = (y + cy) % ny;
            for x in 0..nx {
                let sx = (x + cx) % nx;
                self.work[y * nx + x] = plane[sy * nx + sx];
            }
        }
        self.row.process_with_scratch(&mut self.work, &mut self.scratch);
        for y in 0..ny {
            for x in 0..nx {
                self.trans[x * ny + y] = self.work[y * nx + x];
            }
        }
        self.col.process_with_scratch(&mut self.trans, &mut self.scratch);
        let scale = 1.0 / ((ny * nx) as f64).sqrt();
        for y in 0..ny {
            let dy = (y + ny - cy) % ny;
            for x in 0..nx {
                let dx = (x + nx - cx) % nx;
                plane[y * nx + x] = self.trans[dx * ny + dy] * scale;
            }
        }
    }

    pub fn is_forward(&self) -> bool {
        self.forward
    }
}

fn transform(t: &ComplexTensor4, forward: bool) -> Result<ComplexTensor4> {
    let dims = t.dims();
    if dims.is_empty() {
        return Err(invalid!("cannot transform a tensor with a zero dimension {}", dims));
    }
    let mut out = t.clone();
    transform_in_place(&mut out, forward);
    Ok(out)
}

pub(crate) fn transform_in_place(t: &mut ComplexTensor4, forward: bool) {
    let dims = t.dims();
    let mut fft = PlaneFft::new(dims.ny, dims.nx, forward);
    for plane in t.data_mut().chunks_exact_mut(dims.plane_len()) {
        fft.process(plane);
    }
    t.set_domain(if forward { Domain::Kspace } else { Domain::Image });
}

/// Image to k-space.
pub fn fft2c(t: &ComplexTensor4) -> Result<ComplexTensor4> {
    t.check_domain(Domain::Image)?;
    transform(t, true)
}

/// k-space to image.
pub fn ifft2c(t: &ComplexTensor4) -> Result<ComplexTensor4> {
    t.check_domain(Domain::Kspace)?;
    transform(t, false)
}

/// Owned-value variants used inside operator pipelines where the domain is
/// known by construction.
pub(crate) fn fft2c_owned(mut t: ComplexTensor4) -> ComplexTensor4 {
    debug_assert_eq!(t.domain(), Domain::Image);
    transform_in_place(&mut t, true);
    t
}

pub(crate) fn ifft2c_owned(mut t: ComplexTensor4) -> ComplexTensor4 {
    debug_assert_eq!(t.domain(), Domain::Kspace);
    transform_in_place(&mut t, false);
    t
}
