mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use sms_diffusion::diffusion::{
    perturb, project_t, reverse_sample, BrownianPath, ConstantRate, Frozen, Guidance, Init, NoiseSchedule,
    ProjectionConfig, RngNoise, SamplerConfig, Schedule,
};
use sms_diffusion::fft::ifft2c;
use sms_diffusion::operators::{CompositeH, IdentityConsistency, SelfConsistency};
use sms_diffusion::sampling::{SamplingPlan, SmsSampling};
use sms_diffusion::score::ZeroScore;
use sms_diffusion::{ComplexTensor4, Dims, Domain, Error, Result};

const INC: f64 = std::f64::consts::TAU / 3.0;

fn random_h(dims: Dims, seed: u64) -> CompositeH {
    let (g, k) = random_kernel_sets(dims, 3, seed);
    CompositeH::new(&g, &k, INC, dims).unwrap()
}

fn tight(mu: f64) -> ProjectionConfig {
    ProjectionConfig { mu, max_iters: 2000, tol: 1e-13 }
}

#[test]
fn projection_is_linear() {
    let dims = Dims::new(2, 2, 8, 8);
    let h = random_h(dims, 1);
    let cfg = tight(1e-2);
    let u = random_tensor(dims, Domain::Image, 2);
    let v = random_tensor(dims, Domain::Image, 3);
    let (a, b) = (Complex64::new(0.4, 1.3), Complex64::new(-0.7, 0.2));
    let mut comb = u.clone();
    comb.scale(a);
    comb.axpy(b, &v);
    let lhs = project_t(&comb, &h, &cfg).unwrap();
    assert!(lhs.converged);
    let mut rhs = project_t(&u, &h, &cfg).unwrap().z;
    rhs.scale(a);
    rhs.axpy(b, &project_t(&v, &h, &cfg).unwrap().z);
    assert!(lhs.z.sub(&rhs).norm() <= 1e-8 * comb.norm());
}

#[test]
fn projection_of_zero_is_zero() {
    let dims = Dims::new(3, 2, 8, 8);
    let h = random_h(dims, 4);
    let z = ComplexTensor4::zeros(dims, Domain::Image);
    assert_eq!(project_t(&z, &h, &ProjectionConfig::default()).unwrap().z.max_abs(), 0.0);
}

#[test]
fn projection_contracts_the_residual() {
    let dims = Dims::new(3, 4, 16, 16);
    let h = random_h(dims, 5);
    let cfg = ProjectionConfig::default();
    for trial in 0..50 {
        let z = random_tensor(dims, Domain::Image, 100 + trial);
        let before = h.residual_norm(&z).unwrap();
        let after = h.residual_norm(&project_t(&z, &h, &cfg).unwrap().z).unwrap();
        assert!(after < before, "trial {trial}: {after} vs {before}");
    }
}

#[test]
fn projection_fixes_consistent_data() {
    let o = oracle_kernels(6);
    let dims = Dims::new(2, 2, 8, 8);
    let h = CompositeH::new(&o.spirit, &o.grappa, ORACLE_INCREMENT, dims).unwrap();
    let x = ifft2c(&oracle_kspace(&o, 8, 8, 7)).unwrap();
    let cfg = ProjectionConfig::default();
    let tx = project_t(&x, &h, &cfg).unwrap().z;
    assert!(tx.sub(&x).norm() <= 10.0 * cfg.tol * x.norm(), "{}", tx.sub(&x).norm() / x.norm());
}

/// Eigenvalues of the dense `Psi` of the oracle operator on a 6x6 grid.
fn oracle_psi_spectrum(h: &CompositeH, dims: Dims) -> Vec<f64> {
    let dense = materialize(dims, Domain::Image, |e| h.normal_psi(e).unwrap());
    let herm = (&dense + dense.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[test]
fn projection_is_idempotent_with_small_proximity_weight() {
    let o = oracle_kernels(8);
    let dims = Dims::new(2, 2, 6, 6);
    let h = CompositeH::new(&o.spirit, &o.grappa, ORACLE_INCREMENT, dims).unwrap();
    let ev = oracle_psi_spectrum(&h, dims);
    let gap = ev.iter().copied().find(|&v| v > 1e-8).unwrap();
    let null = ev.iter().filter(|&&v| v <= 1e-8).count();
    println!("oracle Psi: null dimension {null}, smallest non-zero eigenvalue {gap:.3e}");

    // Idempotence holds up to max_i tau_i (1 - tau_i), tau_i = 1 / (1 + psi_i / mu).
    let cfg = ProjectionConfig { mu: 1e-9, max_iters: 2000, tol: 1e-6 };
    for trial in 0..10 {
        let z = random_tensor(dims, Domain::Image, 200 + trial);
        let tz = project_t(&z, &h, &cfg).unwrap().z;
        let ttz = project_t(&tz, &h, &cfg).unwrap().z;
        let err = ttz.sub(&tz).norm();
        assert!(err <= 10.0 * cfg.tol * z.norm(), "trial {trial}: {}", err / z.norm());
    }
}

#[test]
fn default_projection_idempotence_gap_matches_spectrum() {
    // With the default weight T is a spectral filter, not a projector; the
    // departure from idempotence is bounded by the eigenvalue formula.
    let o = oracle_kernels(8);
    let dims = Dims::new(2, 2, 6, 6);
    let h = CompositeH::new(&o.spirit, &o.grappa, ORACLE_INCREMENT, dims).unwrap();
    let ev = oracle_psi_spectrum(&h, dims);
    let mu = ProjectionConfig::default().mu;
    let bound = ev
        .iter()
        .map(|&p| {
            let tau = 1.0 / (1.0 + p.max(0.0) / mu);
            tau * (1.0 - tau)
        })
        .fold(0.0, f64::max);
    let cfg = tight(mu);
    let z = random_tensor(dims, Domain::Image, 9);
    let tz = project_t(&z, &h, &cfg).unwrap().z;
    let ttz = project_t(&tz, &h, &cfg).unwrap().z;
    assert!(ttz.sub(&tz).norm() <= (bound + 1e-10) * z.norm());
}

fn dense_t(h: &CompositeH, dims: Dims, cfg: &ProjectionConfig) -> DMatrix<Complex64> {
    materialize(dims, Domain::Image, |e| project_t(e, h, cfg).unwrap().z)
}

#[test]
fn perturbation_covariance_matches_dense_projection() {
    let o = oracle_kernels(10);
    let dims = Dims::new(2, 2, 6, 6);
    let h = CompositeH::new(&o.spirit, &o.grappa, ORACLE_INCREMENT, dims).unwrap();
    let cfg = tight(1e-2);
    let sched = NoiseSchedule::default();
    let t = 0.3;
    let sigma = sched.sigma(t);
    let tm = dense_t(&h, dims, &cfg);
    let target = (&tm * tm.adjoint()).scale(sigma * sigma);

    let n = dims.len();
    let x0 = random_tensor(dims, Domain::Image, 11);
    let mut rng = rng(12);
    let mut cov = DMatrix::<Complex64>::zeros(n, n);
    let mut mean = vec![Complex64::new(0.0, 0.0); n];
    let draws = 20_000;
    for _ in 0..draws {
        let (xt, z) = perturb(&x0, t, &sched, &h, &cfg, &mut rng).unwrap();
        let d: Vec<Complex64> = xt.data().iter().zip(x0.data()).map(|(a, b)| a - b).collect();
        // Contraction of each draw relative to the raw noise.
        let raw = h.residual_norm(&z.scaled(sigma)).unwrap();
        let dt = ComplexTensor4::from_vec(dims, Domain::Image, d.clone()).unwrap();
        assert!(h.residual_norm(&dt).unwrap() <= raw * (1.0 + 1e-12));
        let v = nalgebra::DVector::from_vec(d);
        cov += &v * v.adjoint();
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    cov /= Complex64::new(draws as f64, 0.0);
    let rel = (&cov - &target).norm() / target.norm();
    println!("perturbation covariance: relative Frobenius error {rel:.4}");
    assert!(rel <= 0.05);

    // Mean of x_t - x0 within 4 standard errors per entry.
    for (i, m) in mean.iter().enumerate() {
        let m = m / draws as f64;
        let se = (target[(i, i)].re / (2.0 * draws as f64)).sqrt();
        assert!(m.re.abs() <= 4.0 * se + 1e-12 && m.im.abs() <= 4.0 * se + 1e-12, "entry {i}: {m}");
    }
}

#[test]
fn perturbation_time_range() {
    let dims = Dims::new(1, 2, 8, 8);
    let h = IdentityConsistency::new(dims);
    let x0 = random_tensor(dims, Domain::Image, 13);
    let mut r = rng(14);
    let cfg = ProjectionConfig::default();
    let sched = NoiseSchedule::default();
    for t in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(perturb(&x0, t, &sched, &h, &cfg, &mut r), Err(Error::InvalidArgument(_))));
    }
    // Vanishing noise scale leaves the sample where it was.
    let bm = ConstantRate { beta: 1.0, kappa: 1.0, n_steps: 10, eps: 1e-3 };
    let (xt, _) = perturb(&x0, 1e-300, &bm, &h, &cfg, &mut r).unwrap();
    assert!(xt.sub(&x0).norm() <= 1e-140 * x0.norm());
}

#[test]
fn frozen_dynamics_return_the_initialization() {
    let dims = Dims::new(3, 2, 12, 8);
    let h = random_h(dims, 15);
    let plan = SamplingPlan::new(3, 2, 12, 8, INC).unwrap();
    let d = SmsSampling::new(plan, 3);
    let y = d.apply(&random_tensor(dims, Domain::Kspace, 16)).unwrap();
    let guidance = Guidance { sampling: &d, y: &y, lambda_dc: 0.0 };
    let init = random_tensor(dims, Domain::Image, 17);
    let out = reverse_sample(
        &h,
        &ZeroScore,
        &Frozen { n_steps: 25 },
        Some(guidance),
        Some(init.clone()),
        &SamplerConfig::default(),
        &mut RngNoise::new(1),
        None,
    )
    .unwrap();
    assert_eq!(out.x, init);
    assert_eq!(out.trajectory.len(), 26);
    assert_eq!(out.unconverged_projections, 0);

    // The configured initialization rule is used when no start is given.
    let zf = reverse_sample(
        &h,
        &ZeroScore,
        &Frozen { n_steps: 3 },
        Some(guidance),
        None,
        &SamplerConfig { init: Init::ZeroFilled, ..SamplerConfig::default() },
        &mut RngNoise::new(1),
        None,
    )
    .unwrap();
    assert_eq!(zf.x, d.adjoint_image(&y).unwrap());
}

/// Score of `CN(m, S + v I)` for a Hermitian 2x2 `S`.
fn gaussian_score(m: [Complex64; 2], s: [[f64; 2]; 2], v: f64, x: &ComplexTensor4) -> ComplexTensor4 {
    let a = [[s[0][0] + v, s[0][1]], [s[1][0], s[1][1] + v]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let d = [x.data()[0] - m[0], x.data()[1] - m[1]];
    let out = vec![-(d[0] * inv[0][0] + d[1] * inv[0][1]), -(d[0] * inv[1][0] + d[1] * inv[1][1])];
    ComplexTensor4::from_vec(x.dims(), Domain::Image, out).unwrap()
}

#[test]
fn gaussian_toy_matches_the_analytic_target() {
    let dims = Dims::new(1, 1, 1, 2);
    let h = IdentityConsistency::new(dims);
    let m = [Complex64::new(0.5, -1.0), Complex64::new(-0.25, 0.75)];
    let s = [[1.0, 0.4], [0.4, 0.6]];
    let sched = ConstantRate { beta: 10.0, kappa: 1.0, n_steps: 1000, eps: 1e-4 };
    let score = |x: &ComplexTensor4, t: f64, _sigma: f64| -> Result<ComplexTensor4> {
        Ok(gaussian_score(m, s, sched.beta * t, x))
    };
    let cfg = SamplerConfig { final_noise: true, ..SamplerConfig::default() };
    let chains = 10_000;
    let mut draw = rng(18);
    let (l00, l10) = (s[0][0].sqrt(), s[1][0] / s[0][0].sqrt());
    let l11 = (s[1][1] - l10 * l10).sqrt();
    let mut samples = Vec::with_capacity(chains);
    for chain in 0..chains {
        // Start exactly on the t = 1 marginal: the sampler adds sigma(1) T(xi).
        let z0 = sms_diffusion::tensor::complex_normal(&mut draw);
        let z1 = sms_diffusion::tensor::complex_normal(&mut draw);
        let init = vec![m[0] + z0 * l00, m[1] + z0 * l10 + z1 * l11];
        let init = ComplexTensor4::from_vec(dims, Domain::Image, init).unwrap();
        let out =
            reverse_sample(&h, &score, &sched, None, Some(init), &cfg, &mut RngNoise::new(chain as u64), None).unwrap();
        samples.push([out.x.data()[0], out.x.data()[1]]);
    }
    let n = chains as f64;
    let v_end = sched.beta * sched.eps;
    let target = [[s[0][0] + v_end, s[0][1]], [s[1][0], s[1][1] + v_end]];
    for i in 0..2 {
        let mean = samples.iter().map(|x| x[i]).sum::<Complex64>() / n;
        let se = (target[i][i] / (2.0 * n)).sqrt();
        let (dr, di) = ((mean - m[i]).re.abs(), (mean - m[i]).im.abs());
        println!("mean[{i}] deviation {:.2} / {:.2} standard errors", dr / se, di / se);
        assert!(dr <= 3.0 * se && di <= 3.0 * se);
    }
    for i in 0..2 {
        for j in 0..2 {
            let c = samples.iter().map(|x| (x[i] - m[i]) * (x[j] - m[j]).conj()).sum::<Complex64>() / n;
            let se = (target[i][i] * target[j][j] / n).sqrt();
            let dev = (c - target[i][j]).norm();
            println!("cov[{i}{j}] = {c:.4}, target {:.4}, deviation {:.2} standard errors", target[i][j], dev / se);
            assert!(dev <= 3.0 * se);
        }
    }
}

#[test]
fn finer_discretizations_converge_to_the_reference() {
    let dims = Dims::new(2, 2, 8, 8);
    let h = random_h(dims, 19);
    let sched = |n| ConstantRate { beta: 4.0, kappa: 1.0, n_steps: n, eps: 1e-3 };
    let score =
        |x: &ComplexTensor4, t: f64, _sigma: f64| -> Result<ComplexTensor4> { Ok(x.scaled(-1.0 / (1.0 + 4.0 * t))) };
    let cfg = SamplerConfig { projection: tight(1e-2), ..SamplerConfig::default() };
    let run = |n: usize| {
        let mut path = BrownianPath::new(dims, 4096, 20);
        reverse_sample(
            &h,
            &score,
            &sched(n),
            None,
            Some(ComplexTensor4::zeros(dims, Domain::Image)),
            &cfg,
            &mut path,
            None,
        )
        .unwrap()
        .x
    };
    let reference = run(4096);
    let errors: Vec<f64> = [64, 256, 1024].iter().map(|&n| run(n).sub(&reference).norm() / reference.norm()).collect();
    println!("strong error against N = 4096: {errors:?}");
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn sampler_keeps_iterates_self_consistent() {
    let dims = Dims::new(3, 2, 12, 8);
    let h = random_h(dims, 21);
    let sched = NoiseSchedule { n_steps: 50, ..NoiseSchedule::default() };
    let score = |x: &ComplexTensor4, _t: f64, sigma: f64| -> Result<ComplexTensor4> {
        Ok(x.scaled(-1.0 / (1.0 + sigma * sigma)))
    };
    let init = random_tensor(dims, Domain::Image, 22);
    let out = reverse_sample(
        &h,
        &score,
        &sched,
        None,
        Some(init.clone()),
        &SamplerConfig::default(),
        &mut RngNoise::new(3),
        None,
    )
    .unwrap();
    let start = h.residual_norm(&init).unwrap() / init.norm();
    let tr = &out.trajectory;
    for rec in &tr[tr.len() / 10..] {
        assert!(rec.consistency < start, "step {}: {} vs {start}", rec.step, rec.consistency);
    }
    assert!(out.x.is_finite());
}

#[test]
fn sampler_reports_mismatched_score() {
    let dims = Dims::new(1, 2, 8, 8);
    let h = IdentityConsistency::new(dims);
    let bad = |_x: &ComplexTensor4, _t: f64, _s: f64| -> Result<ComplexTensor4> {
        Ok(ComplexTensor4::zeros(Dims::new(1, 1, 8, 8), Domain::Image))
    };
    let sched = NoiseSchedule { n_steps: 4, ..NoiseSchedule::default() };
    let r = reverse_sample(&h, &bad, &sched, None, None, &SamplerConfig::default(), &mut RngNoise::new(0), None);
    assert!(matches!(r, Err(Error::Geometry(_))));
}

#[test]
fn diverging_score_is_reported_with_its_step() {
    let dims = Dims::new(1, 1, 4, 4);
    let h = IdentityConsistency::new(dims);
    let blow = |x: &ComplexTensor4, _t: f64, _s: f64| -> Result<ComplexTensor4> { Ok(x.scaled(1e300)) };
    let sched = NoiseSchedule { n_steps: 20, ..NoiseSchedule::default() };
    let r = reverse_sample(&h, &blow, &sched, None, None, &SamplerConfig::default(), &mut RngNoise::new(0), None);
    assert!(matches!(r, Err(Error::Divergence { .. })), "{:?}", r.map(|o| o.x.max_abs()));
}

#[test]
fn schedule_invariants() {
    let s = NoiseSchedule::default();
    let grid = s.grid();
    assert_eq!(grid.len(), s.n_steps + 1);
    assert_eq!(grid[0], 1.0);
    assert_eq!(*grid.last().unwrap(), s.eps);
    for w in grid.windows(2) {
        assert!(s.sigma(w[1]) <= s.sigma(w[0]));
        assert!(s.beta(w[0]) > 0.0);
    }
    let c = ConstantRate { beta: 2.0, kappa: 0.5, n_steps: 10, eps: 1e-3 };
    assert_eq!(c.sigma(0.0), 0.0);
    assert!((c.eta(0.4) - 1.0).abs() < 1e-15);
}
