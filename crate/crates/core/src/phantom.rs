//! Synthetic multi-slice phantoms and multi-coil sensitivity maps.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{ComplexTensor4, Dims, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Ellipses,
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default = "default_slices")]
    pub n_slice: usize,
    #[serde(default = "default_coils")]
    pub n_coil: usize,
    pub ny: usize,
    pub nx: usize,
    pub seed: u64,
    #[serde(default = "default_family")]
    pub shape_family: ShapeFamily,
}

fn default_slices() -> usize {
    3
}
fn default_coils() -> usize {
    8
}
fn default_family() -> ShapeFamily {
    ShapeFamily::Ellipses
}

impl PhantomSpec {
    pub fn new(n_slice: usize, n_coil: usize, ny: usize, nx: usize, seed: u64) -> Self {
        PhantomSpec { n_slice, n_coil, ny, nx, seed, shape_family: ShapeFamily::Ellipses }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slice < 1 {
            return Err(invalid!("n_slice must be >= 1"));
        }
        if self.ny < 8 || self.nx < 8 {
            return Err(invalid!("grid {}x{} too small, both sides must be >= 8", self.ny, self.nx));
        }
        Ok(())
    }
}

/// Single-coil ground truth per slice plus the object support.
#[derive(Debug, Clone)]
pub struct Phantom {
    /// `(n_slice, 1, ny, nx)`, image domain, magnitudes in `[0, 1]`.
    pub image: ComplexTensor4,
    /// Per-slice support masks, row-major `ny * nx`.
    pub support: Vec<Vec<bool>>,
}

// Normalized coordinates in [-1, 1).
fn coord(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 - (n / 2) as f64) / n as f64
}

// Smooth indicator of the ellipse interior, edge width ~ one pixel.
fn soft_ellipse(u: f64, v: f64, edge: f64) -> f64 {
    let r = (u * u + v * v).sqrt();
    1.0 / (1.0 + ((r - 1.0) / edge).exp())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn local(&self, y: f64, x: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (c * dx + s * dy) / self.ax;
        let v = (-s * dx + c * dy) / self.ay;
        (u, v)
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (ny, nx) = (spec.ny, spec.nx);
    let dims = Dims::new(spec.n_slice, 1, ny, nx);
    let mut image = ComplexTensor4::zeros(dims, Domain::Image);
    let mut support = Vec::with_capacity(spec.n_slice);
    let pixel = 2.0 / ny.min(nx) as f64;

    for s in 0..spec.n_slice {
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(s as u64 + 1));
        let outline = Ellipse {
            cy: rng.gen_range(-0.04..0.04),
            cx: rng.gen_range(-0.04..0.04),
            ay: rng.gen_range(0.72..0.86),
            ax: rng.gen_range(0.58..0.74),
            angle: rng.gen_range(-0.2..0.2),
            value: rng.gen_range(0.25..0.45),
        };
        let n_inner = match spec.shape_family {
            ShapeFamily::Ellipses => rng.gen_range(4..8),
            ShapeFamily::Blobs => rng.gen_range(5..10),
        };
        let inner: Vec<Ellipse> = (0..n_inner)
            .map(|_| {
                let r = rng.gen_range(0.0..0.6f64).sqrt() * 0.8;
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                Ellipse {
                    cy: outline.cy + r * th.sin() * outline.ay,
                    cx: outline.cx + r * th.cos() * outline.ax,
                    ay: rng.gen_range(0.06..0.3),
                    ax: rng.gen_range(0.06..0.3),
                    angle: rng.gen_range(0.0..std::f64::consts::PI),
                    value: rng.gen_range(-0.2..0.5),
                }
            })
            .collect();

        let mut mask = vec![false; ny * nx];
        let plane = image.plane_mut(s, 0);
        for y in 0..ny {
            let yy = coord(y, ny);
            for x in 0..nx {
                let xx = coord(x, nx);
                let (u, v) = outline.local(yy, xx);
                if u * u + v * v >= 1.0 {
                    continue;
                }
                mask[y * nx + x] = true;
                let edge = pixel / outline.ax.min(outline.ay);
                let mut val = outline.value * soft_ellipse(u, v, edge);
                for e in &inner {
                    let (u, v) = e.local(yy, xx);
                    val += match spec.shape_family {
                        ShapeFamily::Ellipses => e.value * soft_ellipse(u, v, pixel / e.ax.min(e.ay)),
                        ShapeFamily::Blobs => e.value * (-(u * u + v * v)).exp(),
                    };
                }
                plane[y * nx + x] = Complex64::new(val.clamp(0.0, 1.0), 0.0);
            }
        }
        support.push(mask);
    }
    Ok(Phantom { image, support })
}

/// Sensitivity maps `(n_slice, n_coil, ny, nx)` from coils on two rings
/// around the object. Maps vary smoothly in-plane and across slices; the
/// largest sum-of-squares value over all slices is normalized to one.
pub fn make_coils(n_coil: usize, n_slice: usize, ny: usize, nx: usize, seed: u64) -> Result<ComplexTensor4> {
    if n_coil < 2 {
        return Err(invalid!("n_coil = {n_coil}: at least two coils are needed for parallel imaging"));
    }
    if n_slice < 1 || ny < 2 || nx < 2 {
        return Err(invalid!("bad coil grid ({n_slice}, {ny}, {nx})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC011_5EED);
    let width = 0.95;
    let coils: Vec<(f64, f64, f64, f64, f64)> = (0..n_coil)
        .map(|c| {
            let th = std::f64::consts::TAU * c as f64 / n_coil as f64 + rng.gen_range(-0.15..0.15);
            let z = if c % 2 == 0 { 0.55 } else { -0.55 } + rng.gen_range(-0.1..0.1);
            let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
            let slope = rng.gen_range(0.3..0.8);
            (1.25 * th.sin(), 1.25 * th.cos(), z, phase0, slope)
        })
        .collect();

    let dims = Dims::new(n_slice, n_coil, ny, nx);
    let dz = 0.5;
    let mut maps = ComplexTensor4::from_fn(dims, Domain::Image, |s, c, y, x| {
        let (py, px, pz, phase0, slope) = coils[c];
        let z = (s as f64 - (n_slice as f64 - 1.0) / 2.0) * dz;
        let (yy, xx) = (coord(y, ny), coord(x, nx));
        let d2 = (yy - py).powi(2) + (xx - px).powi(2) + (z - pz).powi(2);
        let mag = (-d2 / (2.0 * width * width)).exp();
        let dir = (py.atan2(px)).sin_cos();
        let phase = phase0 + slope * (yy * dir.0 + xx * dir.1);
        Complex64::from_polar(mag, phase)
    });
    let plane = ny * nx;
    let mut peak: f64 = 0.0;
    for s in 0..n_slice {
        for p in 0..plane {
            let sos: f64 = (0..n_coil).map(|c| maps.plane(s, c)[p].norm_sqr()).sum();
            peak = peak.max(sos.sqrt());
        }
    }
    maps.scale_real(1.0 / peak);
    Ok(maps)
}

/// Root-sum-of-squares over coils, `(n_slice, ny*nx)`.
pub fn sum_of_squares(maps: &ComplexTensor4) -> Vec<Vec<f64>> {
    let d = maps.dims();
    (0..d.slices)
        .map(|s| {
            (0..d.plane_len())
                .map(|p| (0..d.coils).map(|c| maps.plane(s, c)[p].norm_sqr()).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

/// Largest magnitude difference between neighbouring pixels in any map.
pub fn max_finite_difference(maps: &ComplexTensor4) -> f64 {
    let d = maps.dims();
    let mut worst: f64 = 0.0;
    for s in 0..d.slices {
        for c in 0..d.coils {
            let p = maps.plane(s, c);
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let v = p[y * d.nx + x];
                    if y + 1 < d.ny {
                        worst = worst.max((p[(y + 1) * d.nx + x] - v).norm());
                    }
                    if x + 1 < d.nx {
                        worst = worst.max((p[y * d.nx + x + 1] - v).norm());
                    }
                }
            }
        }
    }
    worst
}

/// Multi-coil images: phantom slice times that slice's coil maps.
pub fn apply_coils(phantom: &ComplexTensor4, maps: &ComplexTensor4) -> Result<ComplexTensor4> {
    let pd = phantom.dims();
    let md = maps.dims();
    if pd.coils != 1 || pd.slices != md.slices || pd.grid() != md.grid() {
        return Err(crate::error::geometry!("phantom {} incompatible with coil maps {}", pd, md));
    }
    Ok(ComplexTensor4::from_fn(md, Domain::Image, |s, c, y, x| phantom.get(s, 0, y, x) * maps.get(s, c, y, x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = PhantomSpec::new(3, 4, 32, 32, 7);
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a.image, b.image);
        let c = make_phantom(&PhantomSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.image, c.image);
        assert_eq!(make_coils(4, 3, 32, 32, 1).unwrap(), make_coils(4, 3, 32, 32, 1).unwrap());
    }

    #[test]
    fn background_is_zero_and_range_is_unit() {
        for family in [ShapeFamily::Ellipses, ShapeFamily::Blobs] {
            let spec = PhantomSpec { shape_family: family, ..PhantomSpec::new(3, 4, 40, 36, 3) };
            let p = make_phantom(&spec).unwrap();
            for s in 0..3 {
                let plane = p.image.plane(s, 0);
                for (v, &inside) in plane.iter().zip(&p.support[s]) {
                    assert!(v.re >= 0.0 && v.re <= 1.0 && v.im == 0.0);
                    if !inside {
                        assert_eq!(*v, Complex64::new(0.0, 0.0));
                    }
                }
                assert!(p.support[s].iter().filter(|&&b| b).count() > 40 * 36 / 4);
            }
        }
    }

    #[test]
    fn slices_pairwise_distinct() {
        let p = make_phantom(&PhantomSpec::new(3, 4, 32, 32, 7)).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                let a = p.image.extract_slice(i);
                let b = p.image.extract_slice(j);
                assert!(a.sub(&b).norm() > 0.1 * a.norm());
            }
        }
    }

    #[test]
    fn rejects_small_grid() {
        assert!(make_phantom(&PhantomSpec::new(3, 4, 7, 32, 1)).is_err());
        assert!(make_phantom(&PhantomSpec::new(0, 4, 32, 32, 1)).is_err());
    }

    #[test]
    fn coil_coverage_and_smoothness() {
        let maps = make_coils(4, 3, 32, 32, 5).unwrap();
        let p = make_phantom(&PhantomSpec::new(3, 4, 32, 32, 5)).unwrap();
        let sos = sum_of_squares(&maps);
        for (row, support) in sos.iter().zip(&p.support) {
            for (v, &inside) in row.iter().zip(support) {
                assert!(*v <= 1.0 + 1e-12);
                if inside {
                    assert!(*v >= 0.1, "SoS {v} below 0.1 on support");
                }
            }
        }
        assert!(max_finite_difference(&maps) < 4.0 / 32.0);
        assert!(make_coils(1, 3, 32, 32, 5).is_err());
    }
}
