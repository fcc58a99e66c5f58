//! A small convolutional score network and projected denoising score
//! matching.
//!
//! The network maps the real and imaginary parts of every (slice, coil)
//! plane through `hidden_layers` 3x3 convolutions with SiLU activations and
//! a per-layer channel bias computed from a sinusoidal embedding of `t`,
//! then a final 3x3 convolution back to the input channels. The score is the
//! network output divided by `sigma(t)`.
//!
//! Without `sigma_data` the input is scaled by `1/sqrt(1 + sigma^2)` and the
//! zero-initialized final layer gives a zero initial score. With
//! `sigma_data = s` the input is scaled by `1/sqrt(sigma^2 + s^2)`, the output
//! by `s/sqrt(sigma^2 + s^2)`, and a skip term `-sigma x / (sigma^2 + s^2)` is
//! added, so the untrained net is the exact score of `CN(0, s^2 + sigma^2)`.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{project_t, ProjectionConfig, Schedule, ScoreModel};
use crate::error::{geometry, invalid, Error, Result};
use crate::io;
use crate::operators::SelfConsistency;
use crate::tensor::{ComplexTensor4, Dims, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreNetConfig {
    pub slices: usize,
    pub coils: usize,
    pub width: usize,
    pub hidden_layers: usize,
    /// Length of the sinusoidal time embedding (even).
    pub embed_dim: usize,
    /// Typical per-entry magnitude of clean data. When set, the output
    /// carries the Gaussian-prior skip term and the network only learns
    /// the correction; the initial score is then no longer zero.
    #[serde(default)]
    pub sigma_data: Option<f64>,
}

impl ScoreNetConfig {
    pub fn new(slices: usize, coils: usize) -> Self {
        ScoreNetConfig { slices, coils, width: 32, hidden_layers: 3, embed_dim: 16, sigma_data: None }
    }

    pub fn channels(&self) -> usize {
        2 * self.slices * self.coils
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices == 0 || self.coils == 0 || self.width == 0 {
            return Err(invalid!("score net needs positive slices, coils and width"));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(invalid!("time embedding length must be even and positive"));
        }
        if let Some(sd) = self.sigma_data {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(invalid!("sigma_data must be positive, got {sd}"));
            }
        }
        Ok(())
    }

    /// Input scale, output scale and skip weight at noise level `sigma`:
    /// `N = c_out net(c_in x) + c_skip x`.
    fn precondition(&self, sigma: f64) -> (f64, f64, f64) {
        match self.sigma_data {
            None => (1.0 / (1.0 + sigma * sigma).sqrt(), 1.0, 0.0),
            Some(sd) => {
                let v = sigma * sigma + sd * sd;
                (1.0 / v.sqrt(), sd / v.sqrt(), -sigma / v)
            }
        }
    }
}

const TAPS: usize = 9;

#[derive(Debug, Clone, Copy)]
struct Layer {
    cin: usize,
    cout: usize,
    /// Offsets into the flat parameter vector.
    w: usize,
    b: usize,
    /// Time-embedding projection `(cout, embed_dim)`, hidden layers only.
    e: Option<usize>,
}

fn layout(cfg: &ScoreNetConfig) -> (Vec<Layer>, usize) {
    let mut layers = Vec::new();
    let mut off = 0;
    let ch = cfg.channels();
    for l in 0..=cfg.hidden_layers {
        let cin = if l == 0 { ch } else { cfg.width };
        let last = l == cfg.hidden_layers;
        let cout = if last { ch } else { cfg.width };
        let w = off;
        off += cout * cin * TAPS;
        let b = off;
        off += cout;
        let e = if last {
            None
        } else {
            let e = off;
            off += cout * cfg.embed_dim;
            Some(e)
        };
        layers.push(Layer { cin, cout, w, b, e });
    }
    (layers, off)
}

#[derive(Debug, Clone)]
pub struct ScoreNet {
    cfg: ScoreNetConfig,
    layers: Vec<Layer>,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Cache {
    /// im2col of each layer's input.
    cols: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    emb: Array1<f64>,
    c_out: f64,
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

fn silu_grad(v: f64) -> f64 {
    let s = 1.0 / (1.0 + (-v).exp());
    s * (1.0 + v * (1.0 - s))
}

/// `(c, ny*nx)` to `(c*9, ny*nx)` with zero padding.
fn im2col(a: ArrayView2<f64>, ny: usize, nx: usize) -> Array2<f64> {
    let c = a.nrows();
    let mut cols = Array2::zeros((c * TAPS, ny * nx));
    for ci in 0..c {
        let src = a.row(ci);
        for dy in 0..3 {
            for dx in 0..3 {
                let mut dst = cols.row_mut(ci * TAPS + dy * 3 + dx);
                for y in 0..ny {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= ny as isize {
                        continue;
                    }
                    for x in 0..nx {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= nx as isize {
                            continue;
                        }
                        dst[y * nx + x] = src[sy as usize * nx + sx as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: ArrayView2<f64>, c: usize, ny: usize, nx: usize) -> Array2<f64> {
    let mut a = Array2::zeros((c, ny * nx));
    for ci in 0..c {
        let mut dst = a.row_mut(ci);
        for dy in 0..3 {
            for dx in 0..3 {
                let src = cols.row(ci * TAPS + dy * 3 + dx);
                for y in 0..ny {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= ny as isize {
                        continue;
                    }
                    for x in 0..nx {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= nx as isize {
                            continue;
                        }
                        dst[sy as usize * nx + sx as usize] += src[y * nx + x];
                    }
                }
            }
        }
    }
    a
}

/// Sinusoidal features of `t` at geometric frequencies from 1 to 1000.
pub fn time_embedding(t: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for k in 0..half {
        let f = if half > 1 { (1000f64.ln() * k as f64 / (half - 1) as f64).exp() } else { 1.0 };
        e[k] = (f * t).sin();
        e[half + k] = (f * t).cos();
    }
    e
}

fn to_channels(x: &ComplexTensor4, scale: f64) -> Array2<f64> {
    let d = x.dims();
    let p = d.plane_len();
    let mut a = Array2::zeros((2 * d.n_planes(), p));
    for (k, plane) in x.data().chunks_exact(p).enumerate() {
        for (j, v) in plane.iter().enumerate() {
            a[[2 * k, j]] = v.re * scale;
            a[[2 * k + 1, j]] = v.im * scale;
        }
    }
    a
}

fn from_channels(a: &Array2<f64>, dims: Dims) -> ComplexTensor4 {
    let p = dims.plane_len();
    let mut data = Vec::with_capacity(dims.len());
    for k in 0..dims.n_planes() {
        for j in 0..p {
            data.push(Complex64::new(a[[2 * k, j]], a[[2 * k + 1, j]]));
        }
    }
    ComplexTensor4::from_vec(dims, Domain::Image, data).expect("channel count matches dims")
}

impl ScoreNet {
    /// Random hidden layers, zero output layer.
    pub fn new(cfg: ScoreNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (layers, n) = layout(&cfg);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers[..layers.len() - 1] {
            let std = (2.0 / (l.cin * TAPS) as f64).sqrt();
            for v in &mut params[l.w..l.w + l.cout * l.cin * TAPS] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
            if let Some(e) = l.e {
                let std = (1.0 / cfg.embed_dim as f64).sqrt();
                for v in &mut params[e..e + l.cout * cfg.embed_dim] {
                    *v = std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Ok(ScoreNet { cfg, layers, params })
    }

    pub fn from_params(cfg: ScoreNetConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let (layers, n) = layout(&cfg);
        if params.len() != n {
            return Err(invalid!("score net needs {n} parameters, got {}", params.len()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("score net parameters must be finite"));
        }
        Ok(ScoreNet { cfg, layers, params })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &ComplexTensor4) -> Result<()> {
        x.check_domain(Domain::Image)?;
        let d = x.dims();
        if d.slices != self.cfg.slices || d.coils != self.cfg.coils {
            return Err(geometry!(
                "score net built for {} slices x {} coils, input is {}",
                self.cfg.slices,
                self.cfg.coils,
                d
            ));
        }
        Ok(())
    }

    fn weights(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.cout, l.cin * TAPS), &self.params[l.w..l.w + l.cout * l.cin * TAPS])
            .expect("layer shape")
    }

    fn run(&self, x: &ComplexTensor4, t: f64, sigma: f64) -> (Array2<f64>, Cache) {
        let (ny, nx) = x.dims().grid();
        let emb = time_embedding(t, self.cfg.embed_dim);
        let (c_in, c_out, c_skip) = self.cfg.precondition(sigma);
        let mut a = to_channels(x, c_in);
        let mut cols_all = Vec::with_capacity(self.layers.len());
        let mut pre_all = Vec::with_capacity(self.layers.len() - 1);
        for l in &self.layers {
            let cols = im2col(a.view(), ny, nx);
            let mut z = self.weights(l).dot(&cols);
            let mut bias = Array1::from(self.params[l.b..l.b + l.cout].to_vec());
            if let Some(e) = l.e {
                let proj = ArrayView2::from_shape(
                    (l.cout, self.cfg.embed_dim),
                    &self.params[e..e + l.cout * self.cfg.embed_dim],
                )
                .expect("embedding shape");
                bias += &proj.dot(&emb);
            }
            for (mut row, b) in z.axis_iter_mut(Axis(0)).zip(bias.iter()) {
                row += *b;
            }
            cols_all.push(cols);
            if l.e.is_some() {
                a = z.mapv(silu);
                pre_all.push(z);
            } else {
                a = z;
            }
        }
        if c_out != 1.0 {
            a.mapv_inplace(|v| v * c_out);
        }
        if c_skip != 0.0 {
            a.scaled_add(c_skip, &to_channels(x, 1.0));
        }
        (a, Cache { cols: cols_all, pre: pre_all, emb, c_out })
    }

    /// Raw network output `N(x, t)`; the score is `N / sigma`.
    pub fn forward(&self, x: &ComplexTensor4, t: f64, sigma: f64) -> Result<ComplexTensor4> {
        self.check_input(x)?;
        let (out, _) = self.run(x, t, sigma);
        Ok(from_channels(&out, x.dims()))
    }

    /// Parameter gradient of `Re <g, N(x, t)>` for an output cotangent `g`.
    fn backward(&self, cache: &Cache, g: &ComplexTensor4, grad: &mut [f64]) {
        let (ny, nx) = g.dims().grid();
        let mut d = to_channels(g, cache.c_out);
        for (li, l) in self.layers.iter().enumerate().rev() {
            if l.e.is_some() {
                let pre = &cache.pre[li];
                d.zip_mut_with(pre, |dv, &z| *dv *= silu_grad(z));
            }
            let cols = &cache.cols[li];
            let dw = d.dot(&cols.t());
            for (gv, v) in grad[l.w..l.w + l.cout * l.cin * TAPS].iter_mut().zip(dw.iter()) {
                *gv += v;
            }
            let db = d.sum_axis(Axis(1));
            for (gv, v) in grad[l.b..l.b + l.cout].iter_mut().zip(db.iter()) {
                *gv += v;
            }
            if let Some(e) = l.e {
                let ed = self.cfg.embed_dim;
                for o in 0..l.cout {
                    for k in 0..ed {
                        grad[e + o * ed + k] += db[o] * cache.emb[k];
                    }
                }
            }
            if li > 0 {
                let dcols = self.weights(l).t().dot(&d);
                d = col2im(dcols.view(), l.cin, ny, nx);
            }
        }
    }
}

impl ScoreModel for ScoreNet {
    fn score(&self, x: &ComplexTensor4, t: f64, sigma: f64) -> Result<ComplexTensor4> {
        let mut s = self.forward(x, t, sigma)?;
        if sigma > 0.0 {
            s.scale_real(1.0 / sigma);
        }
        Ok(s)
    }
}

/// A zero score, e.g. for frozen-dynamics checks.
pub struct ZeroScore;

impl ScoreModel for ZeroScore {
    fn score(&self, x: &ComplexTensor4, _t: f64, _sigma: f64) -> Result<ComplexTensor4> {
        Ok(ComplexTensor4::zeros(x.dims(), Domain::Image))
    }
}

/// One training draw: clean sample index, time and noise.
#[derive(Debug, Clone)]
pub struct DsmDraw {
    pub index: usize,
    pub t: f64,
    pub z: ComplexTensor4,
}

/// Draw `(index, t, z)` with `t ~ U(eps, 1]` and `z ~ CN(0, I)`.
pub fn draw_batch<R: Rng + ?Sized>(n_data: usize, batch: usize, dims: Dims, eps: f64, rng: &mut R) -> Vec<DsmDraw> {
    (0..batch)
        .map(|_| {
            let index = rng.gen_range(0..n_data);
            let t = eps + (1.0 - eps) * (1.0 - rng.gen::<f64>());
            let z = ComplexTensor4::random_normal(dims, Domain::Image, rng);
            DsmDraw { index, t, z }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DsmLoss {
    /// Mean over the batch of `||sigma T(s(x_t, t)) + z||^2`.
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Gradient of `loss` with respect to the flat parameters.
    pub grad: Vec<f64>,
}

/// Projected denoising score matching on fixed draws.
///
/// Per sample `x_t = x_0 + sigma T(z)` and, with the network output
/// `N = sigma s`, the loss is `||T(N) + z||^2`. Its output cotangent
/// `2 T^*(T(N) + z)` uses that `T` is Hermitian.
pub fn dsm_loss<H, S>(
    net: &ScoreNet,
    data: &[ComplexTensor4],
    draws: &[DsmDraw],
    sched: &S,
    h: &H,
    proj: &ProjectionConfig,
) -> Result<DsmLoss>
where
    H: SelfConsistency + ?Sized,
    S: Schedule + ?Sized,
{
    if draws.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let mut grad = vec![0.0; net.n_params()];
    let mut per_sample = Vec::with_capacity(draws.len());
    for (i, d) in draws.iter().enumerate() {
        let x0 = data.get(d.index).ok_or_else(|| invalid!("draw index {} out of range", d.index))?;
        net.check_input(x0)?;
        let sigma = sched.sigma(d.t);
        let tz = project_t(&d.z, h, proj)?.z;
        let mut xt = x0.clone();
        xt.axpy_real(sigma, &tz);
        let (out, cache) = net.run(&xt, d.t, sigma);
        let n_out = from_channels(&out, xt.dims());
        if !n_out.is_finite() {
            return Err(Error::Training { index: i, what: "non-finite network output".into() });
        }
        let mut r = project_t(&n_out, h, proj)?.z;
        r.axpy_real(1.0, &d.z);
        let l = r.norm_sqr();
        if !l.is_finite() {
            return Err(Error::Training { index: i, what: format!("non-finite loss {l}") });
        }
        per_sample.push(l);
        let mut g = project_t(&r, h, proj)?.z;
        g.scale_real(2.0 / draws.len() as f64);
        net.backward(&cache, &g, &mut grad);
    }
    let loss = per_sample.iter().sum::<f64>() / draws.len() as f64;
    Ok(DsmLoss { loss, per_sample, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Lower end of `t ~ U(eps, 1]`.
    pub t_min: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 4,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            t_min: 1e-3,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(invalid!("training needs at least one step and one sample per batch"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid!("learning rate must be positive"));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(invalid!("t_min must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.learning_rate,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.b1.powi(self.step as i32);
        let c2 = 1.0 - self.b2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.b1 * *m + (1.0 - self.b1) * g;
            *v = self.b2 * *v + (1.0 - self.b2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub loss: Vec<f64>,
}

impl TrainLog {
    /// Trailing moving average with window `w`.
    pub fn smoothed(&self, w: usize) -> Vec<f64> {
        let w = w.max(1);
        (0..self.loss.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.loss[lo..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }
}

/// Checkpoint metadata stored next to the CT4F parameter payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub net: ScoreNetConfig,
    pub schedule: crate::diffusion::NoiseSchedule,
    pub seed: u64,
    pub step: usize,
    pub n_params: usize,
}

pub fn save_checkpoint(net: &ScoreNet, meta: &CheckpointMeta, dir: &Path, stem: &str) -> Result<()> {
    let data = net.params.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let t = ComplexTensor4::from_vec(Dims::new(1, 1, 1, net.n_params()), Domain::Image, data)?;
    io::write_tensor(&t, dir.join(format!("{stem}.ct4")))?;
    io::write_json(meta, dir.join(format!("{stem}.json")))
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(ScoreNet, CheckpointMeta)> {
    let meta: CheckpointMeta = io::read_json(dir.join(format!("{stem}.json")))?;
    let t = io::read_tensor(dir.join(format!("{stem}.ct4")))?;
    if t.len() != meta.n_params {
        return Err(geometry!("checkpoint holds {} values, metadata says {}", t.len(), meta.n_params));
    }
    let params = t.data().iter().map(|v| v.re).collect();
    Ok((ScoreNet::from_params(meta.net, params)?, meta))
}

/// Where and how training writes checkpoints.
pub struct CheckpointSink<'a> {
    pub dir: PathBuf,
    pub stem: String,
    pub schedule: &'a crate::diffusion::NoiseSchedule,
}

/// Train `net` in place on `data`; returns the per-step loss curve.
///
/// A non-finite loss aborts training after writing the last finite
/// parameters to the checkpoint sink, if one is given.
pub fn train<H: SelfConsistency + ?Sized>(
    net: &mut ScoreNet,
    data: &[ComplexTensor4],
    sched: &crate::diffusion::NoiseSchedule,
    h: &H,
    proj: &ProjectionConfig,
    cfg: &TrainConfig,
    sink: Option<&CheckpointSink<'_>>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let dims = data[0].dims();
    for x in data {
        if x.dims() != dims {
            return Err(geometry!("training samples differ in shape: {} vs {}", x.dims(), dims));
        }
        net.check_input(x)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.n_params(), cfg);
    let mut log = TrainLog { loss: Vec::with_capacity(cfg.steps) };
    let write = |net: &ScoreNet, step: usize| -> Result<()> {
        if let Some(sink) = sink {
            let meta = CheckpointMeta {
                net: net.cfg,
                schedule: *sink.schedule,
                seed: cfg.seed,
                step,
                n_params: net.n_params(),
            };
            save_checkpoint(net, &meta, &sink.dir, &sink.stem)?;
        }
        Ok(())
    };
    for step in 0..cfg.steps {
        let draws = draw_batch(data.len(), cfg.batch_size, dims, cfg.t_min, &mut rng);
        let out = match dsm_loss(net, data, &draws, sched, h, proj) {
            Ok(out) if out.grad.iter().all(|g| g.is_finite()) => out,
            Ok(_) => {
                write(net, step)?;
                return Err(Error::Training { index: step, what: "non-finite gradient".into() });
            }
            Err(e) => {
                write(net, step)?;
                return Err(e);
            }
        };
        log.loss.push(out.loss);
        adam.update(&mut net.params, &out.grad);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            write(net, step + 1)?;
        }
    }
    Ok(log)
}
