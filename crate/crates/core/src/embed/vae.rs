use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Embedding, SignalWindow};
use crate::rng::{derive, stage_rng, Rng};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"WVAE";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub input_dim: usize,
    /// Hidden layer widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the KL term.
    pub beta: f64,
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            input_dim: super::DEFAULT_WINDOW_LEN,
            hidden: vec![256],
            latent_dim: 20,
            learning_rate: 5e-4,
            epochs: 150,
            batch_size: 64,
            beta: 1.412,
            validation_fraction: 0.2,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.beta >= 0.0) {
            return Err(Error::config("learning rate and batch size must be positive, beta non-negative"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        Dense { w, b: Array1::zeros(fan_out) }
    }

    fn zeros_like(&self) -> Dense {
        Dense { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.len()) }
    }
}

/// Loss of one batch, averaged over its rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    /// Squared reconstruction error summed over the window.
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
    pub train_recon: f64,
    pub train_kl: f64,
}

/// Variational autoencoder with dense ReLU layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub config: VaeConfig,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    pub history: Vec<EpochLoss>,
    /// Multiplier on the KL gradient; 1 except in mutation tests.
    kl_grad_scale: f64,
}

/// Closed-form KL divergence of N(mu, exp(logvar)) from N(0, I).
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu.iter().zip(logvar).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum::<f64>()
}

struct Cache {
    enc_in: Vec<Array2<f64>>,
    enc_pre: Vec<Array2<f64>>,
    dec_in: Vec<Array2<f64>>,
    dec_pre: Vec<Array2<f64>>,
    mu: Array2<f64>,
    logvar: Array2<f64>,
}

fn forward_stack(layers: &[Dense], x: &Array2<f64>, ins: &mut Vec<Array2<f64>>, pres: &mut Vec<Array2<f64>>) -> Array2<f64> {
    let mut a = x.clone();
    for (i, l) in layers.iter().enumerate() {
        let mut z = a.dot(&l.w);
        z += &l.b;
        ins.push(a);
        a = if i + 1 < layers.len() { z.mapv(|v| v.max(0.0)) } else { z.clone() };
        pres.push(z);
    }
    a
}

fn backward_stack(layers: &[Dense], ins: &[Array2<f64>], pres: &[Array2<f64>], d_out: Array2<f64>, grads: &mut [Dense]) -> Array2<f64> {
    let mut d = d_out;
    for i in (0..layers.len()).rev() {
        if i + 1 < layers.len() {
            d.zip_mut_with(&pres[i], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        grads[i].w += &ins[i].t().dot(&d);
        grads[i].b += &d.sum_axis(Axis(0));
        d = d.dot(&layers[i].w.t());
    }
    d
}

impl Vae {
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stage_rng(config.seed, "vae-init", 0);
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        widths.push(2 * config.latent_dim);
        let encoder = widths.windows(2).map(|w| Dense::init(w[0], w[1], &mut rng)).collect();
        let mut dec_widths = vec![config.latent_dim];
        dec_widths.extend(config.hidden.iter().rev());
        dec_widths.push(config.input_dim);
        let decoder = dec_widths.windows(2).map(|w| Dense::init(w[0], w[1], &mut rng)).collect();
        Ok(Vae { config, encoder, decoder, history: Vec::new(), kl_grad_scale: 1.0 })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.config.input_dim {
            return Err(Error::domain(format!("window has {width} samples, model expects {}", self.config.input_dim)));
        }
        Ok(())
    }

    fn encode_matrix(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut a = x.clone();
        for (i, l) in self.encoder.iter().enumerate() {
            let mut z = a.dot(&l.w);
            z += &l.b;
            a = if i + 1 < self.encoder.len() { z.mapv(|v| v.max(0.0)) } else { z };
        }
        let lat = self.config.latent_dim;
        (a.slice(s![.., ..lat]).to_owned(), a.slice(s![.., lat..]).to_owned())
    }

    /// Deterministic posterior parameters of one window.
    pub fn encode(&self, x: &SignalWindow) -> Result<Embedding> {
        Ok(self.encode_batch(std::slice::from_ref(x))?.remove(0))
    }

    pub fn encode_batch(&self, xs: &[SignalWindow]) -> Result<Vec<Embedding>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        for x in xs {
            self.check_width(x.len())?;
        }
        let x = stack(xs, &(0..xs.len()).collect::<Vec<_>>(), self.config.input_dim);
        let (mu, lv) = self.encode_matrix(&x);
        Ok((0..xs.len())
            .map(|i| Embedding { mu: mu.row(i).to_vec(), logvar: lv.row(i).to_vec() })
            .collect())
    }

    /// Reconstruction from latent codes.
    pub fn decode(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut a = z.clone();
        for (i, l) in self.decoder.iter().enumerate() {
            let mut h = a.dot(&l.w);
            h += &l.b;
            a = if i + 1 < self.decoder.len() { h.mapv(|v| v.max(0.0)) } else { h };
        }
        a
    }

    fn forward(&self, x: &Array2<f64>, eps: &Array2<f64>) -> (LossParts, Cache, Array2<f64>) {
        let b = x.nrows() as f64;
        let mut cache = Cache {
            enc_in: Vec::new(),
            enc_pre: Vec::new(),
            dec_in: Vec::new(),
            dec_pre: Vec::new(),
            mu: Array2::zeros((0, 0)),
            logvar: Array2::zeros((0, 0)),
        };
        let out = forward_stack(&self.encoder, x, &mut cache.enc_in, &mut cache.enc_pre);
        let lat = self.config.latent_dim;
        let mu = out.slice(s![.., ..lat]).to_owned();
        let logvar = out.slice(s![.., lat..]).to_owned();
        let sigma = logvar.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&sigma * eps);
        let recon_x = forward_stack(&self.decoder, &z, &mut cache.dec_in, &mut cache.dec_pre);
        let diff = &recon_x - x;
        let recon = diff.mapv(|v| v * v).sum() / b;
        let kl = -0.5 * (1.0 + &logvar - &mu.mapv(|v| v * v) - &logvar.mapv(f64::exp)).sum() / b;
        cache.mu = mu;
        cache.logvar = logvar;
        (LossParts { loss: recon + self.config.beta * kl, recon, kl }, cache, diff)
    }

    /// Loss and parameter gradients for one batch with fixed noise `eps`.
    fn loss_and_grads(&self, x: &Array2<f64>, eps: &Array2<f64>) -> (LossParts, Vec<Dense>, Vec<Dense>) {
        let b = x.nrows() as f64;
        let (parts, cache, diff) = self.forward(x, eps);
        let mut g_dec: Vec<Dense> = self.decoder.iter().map(Dense::zeros_like).collect();
        let mut g_enc: Vec<Dense> = self.encoder.iter().map(Dense::zeros_like).collect();
        let d_recon = diff.mapv(|v| 2.0 * v / b);
        let dz = backward_stack(&self.decoder, &cache.dec_in, &cache.dec_pre, d_recon, &mut g_dec);

        let k = self.config.beta * self.kl_grad_scale / b;
        let sigma = cache.logvar.mapv(|v| (0.5 * v).exp());
        let d_mu = &dz + &cache.mu.mapv(|m| k * m);
        let d_logvar = &dz * eps * &sigma * 0.5 + cache.logvar.mapv(|lv| k * 0.5 * (lv.exp() - 1.0));
        let lat = self.config.latent_dim;
        let mut d_out = Array2::zeros((x.nrows(), 2 * lat));
        d_out.slice_mut(s![.., ..lat]).assign(&d_mu);
        d_out.slice_mut(s![.., lat..]).assign(&d_logvar);
        backward_stack(&self.encoder, &cache.enc_in, &cache.enc_pre, d_out, &mut g_enc);
        (parts, g_enc, g_dec)
    }

    /// ELBO-style loss of a batch of windows with reparameterization noise
    /// drawn from `rng`.
    pub fn elbo_loss(&self, xs: &[SignalWindow], rng: &mut Rng) -> Result<LossParts> {
        for x in xs {
            self.check_width(x.len())?;
        }
        let x = stack(xs, &(0..xs.len()).collect::<Vec<_>>(), self.config.input_dim);
        let eps = noise(xs.len(), self.config.latent_dim, rng);
        let parts = self.forward(&x, &eps).0;
        if !parts.loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        Ok(parts)
    }

    /// Loss with explicit noise, for exact checks.
    pub fn elbo_loss_with_noise(&self, x: &Array2<f64>, eps: &Array2<f64>) -> LossParts {
        self.forward(x, eps).0
    }

    /// Train on `windows`, holding out a validation fraction.
    pub fn train(config: VaeConfig, windows: &[SignalWindow]) -> Result<Vae> {
        let mut vae = Vae::new(config)?;
        vae.fit(windows)?;
        Ok(vae)
    }

    pub fn fit(&mut self, windows: &[SignalWindow]) -> Result<()> {
        let cfg = self.config.clone();
        for w in windows {
            self.check_width(w.len())?;
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut stage_rng(cfg.seed, "vae-split", 0));
        let n_val = ((windows.len() as f64) * cfg.validation_fraction).round() as usize;
        let (val_idx, train_idx) = order.split_at(n_val);
        let mut train_idx = train_idx.to_vec();
        if train_idx.is_empty() {
            return Err(Error::InsufficientData("no training windows after the validation split".into()));
        }
        let val_x = (!val_idx.is_empty()).then(|| stack(windows, val_idx, cfg.input_dim));
        let validation = |vae: &Vae, epoch: usize| -> f64 {
            match &val_x {
                Some(vx) => {
                    let eps = noise(vx.nrows(), cfg.latent_dim, &mut stage_rng(cfg.seed, "vae-val", epoch as u64));
                    vae.forward(vx, &eps).0.loss
                }
                None => f64::NAN,
            }
        };

        let mut state = OptState::new(self);
        let mut rng = stage_rng(cfg.seed, "vae-train", 0);
        self.history.clear();
        let initial = {
            let all = stack(windows, &train_idx, cfg.input_dim);
            let eps = noise(all.nrows(), cfg.latent_dim, &mut stage_rng(cfg.seed, "vae-val", u64::MAX));
            self.forward(&all, &eps).0
        };
        self.history.push(EpochLoss {
            epoch: 0,
            train: initial.loss,
            validation: validation(self, 0),
            train_recon: initial.recon,
            train_kl: initial.kl,
        });
        for epoch in 1..=cfg.epochs {
            train_idx.shuffle(&mut rng);
            let (mut sum, mut recon, mut kl) = (0.0, 0.0, 0.0);
            for batch in train_idx.chunks(cfg.batch_size) {
                let x = stack(windows, batch, cfg.input_dim);
                let eps = noise(batch.len(), cfg.latent_dim, &mut rng);
                let (parts, g_enc, g_dec) = self.loss_and_grads(&x, &eps);
                if !parts.loss.is_finite() {
                    return Err(Error::Diverged { epoch, reason: format!("batch loss {}", parts.loss) });
                }
                let w = batch.len() as f64;
                sum += parts.loss * w;
                recon += parts.recon * w;
                kl += parts.kl * w;
                state.step(self, g_enc, g_dec, &cfg);
            }
            let n = train_idx.len() as f64;
            let val = validation(self, epoch);
            if !val.is_finite() && val_x.is_some() {
                return Err(Error::Diverged { epoch, reason: format!("validation loss {val}") });
            }
            self.history.push(EpochLoss { epoch, train: sum / n, validation: val, train_recon: recon / n, train_kl: kl / n });
        }
        Ok(())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn save(&self, mut out: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            config: &'a VaeConfig,
            param_count: usize,
            history: &'a [EpochLoss],
        }
        let header = serde_json::to_vec(&Header { config: &self.config, param_count: self.param_count(), history: &self.history })?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for l in self.layers() {
            for v in l.w.iter().chain(l.b.iter()) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(mut input: impl Read) -> Result<Vae> {
        #[derive(Deserialize)]
        struct Header {
            config: VaeConfig,
            param_count: usize,
            history: Vec<EpochLoss>,
        }
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a VAE model file".into()));
        }
        let mut u32b = [0u8; 4];
        input.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let mut u64b = [0u8; 8];
        input.read_exact(&mut u64b)?;
        let mut header = vec![0u8; u64::from_le_bytes(u64b) as usize];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut vae = Vae::new(header.config)?;
        if vae.param_count() != header.param_count {
            return Err(Error::Format("parameter count does not match the architecture".into()));
        }
        for l in vae.layers_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                input.read_exact(&mut u64b)?;
                *v = f64::from_le_bytes(u64b);
            }
        }
        vae.history = header.history;
        Ok(vae)
    }

    /// All parameters flattened in layer order.
    pub fn params(&self) -> Vec<f64> {
        self.layers().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::domain("parameter vector length mismatch"));
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn set_kl_grad_scale(&mut self, scale: f64) {
        self.kl_grad_scale = scale;
    }

    /// Backpropagated gradient, flattened like [`Vae::params`].
    pub fn gradient(&self, x: &Array2<f64>, eps: &Array2<f64>) -> Vec<f64> {
        let (_, g_enc, g_dec) = self.loss_and_grads(x, eps);
        g_enc
            .iter()
            .chain(&g_dec)
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

struct OptState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl OptState {
    fn new(vae: &Vae) -> Self {
        let zeros = || vae.layers().map(Dense::zeros_like).collect::<Vec<_>>();
        OptState { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, vae: &mut Vae, g_enc: Vec<Dense>, g_dec: Vec<Dense>, cfg: &VaeConfig) {
        self.t += 1;
        let lr = cfg.learning_rate;
        let grads = g_enc.into_iter().chain(g_dec);
        let layers = vae.encoder.iter_mut().chain(vae.decoder.iter_mut());
        for (((layer, g), m), v) in layers.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            match cfg.optimizer {
                Optimizer::Sgd { momentum } => {
                    m.w.zip_mut_with(&g.w, |mv, &gv| *mv = momentum * *mv - lr * gv);
                    m.b.zip_mut_with(&g.b, |mv, &gv| *mv = momentum * *mv - lr * gv);
                    layer.w += &m.w;
                    layer.b += &m.b;
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    let upd = |p: &mut f64, mv: &mut f64, vv: &mut f64, gv: f64| {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *p -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    };
                    ndarray::Zip::from(&mut layer.w).and(&mut m.w).and(&mut v.w).and(&g.w).for_each(|p, mv, vv, &gv| upd(p, mv, vv, gv));
                    ndarray::Zip::from(&mut layer.b).and(&mut m.b).and(&mut v.b).and(&g.b).for_each(|p, mv, vv, &gv| upd(p, mv, vv, gv));
                }
            }
        }
    }
}

fn stack(windows: &[SignalWindow], idx: &[usize], width: usize) -> Array2<f64> {
    let mut x = Array2::zeros((idx.len(), width));
    for (r, &i) in idx.iter().enumerate() {
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&windows[i].values[..]));
    }
    x
}

fn noise(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Compare backpropagated gradients with central finite differences of the
/// loss under frozen noise. Returns the largest relative error
/// `|g_bp − g_fd| / max(|g_bp|, |g_fd|, 1e−12)`.
pub fn gradient_check(vae: &Vae, x: &Array2<f64>, eps_noise: &Array2<f64>, epsilon: f64) -> f64 {
    let analytic = vae.gradient(x, eps_noise);
    let base = vae.params();
    let mut probe = vae.clone();
    let mut worst = 0.0f64;
    for (i, &g_bp) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + epsilon;
        probe.set_params(&p).unwrap();
        let up = probe.elbo_loss_with_noise(x, eps_noise).loss;
        p[i] = base[i] - epsilon;
        probe.set_params(&p).unwrap();
        let down = probe.elbo_loss_with_noise(x, eps_noise).loss;
        let g_fd = (up - down) / (2.0 * epsilon);
        let err = (g_bp - g_fd).abs() / g_bp.abs().max(g_fd.abs()).max(1e-12);
        worst = worst.max(err);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeSearchTrial {
    pub config: VaeConfig,
    pub best_validation: f64,
}

/// Seeded random search over learning rate, latent size, epochs, batch size
/// and KL weight; returns trials ordered as drawn.
pub fn vae_random_search(base: &VaeConfig, windows: &[SignalWindow], n_trials: usize, seed: u64) -> Result<Vec<VaeSearchTrial>> {
    if n_trials < 1 {
        return Err(Error::domain("search needs at least one trial"));
    }
    let mut rng = stage_rng(seed, "vae-search", 0);
    (0..n_trials)
        .map(|i| {
            let config = VaeConfig {
                learning_rate: 10f64.powf(rng.random_range(-4.0..-2.5)),
                latent_dim: rng.random_range(8..=32),
                epochs: rng.random_range(base.epochs / 2..=base.epochs).max(1),
                batch_size: [16, 32, 64, 128][rng.random_range(0..4)],
                beta: rng.random_range(0.5..2.0),
                seed: derive(seed, "vae-trial", i as u64),
                ..base.clone()
            };
            let vae = Vae::train(config.clone(), windows)?;
            let best = vae.history.iter().skip(1).map(|h| h.validation).fold(f64::INFINITY, f64::min);
            Ok(VaeSearchTrial { config, best_validation: best })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64, hidden: Vec<usize>, beta: f64) -> Vae {
        Vae::new(VaeConfig { input_dim: 6, hidden, latent_dim: 2, beta, seed, ..Default::default() }).unwrap()
    }

    fn batch(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = stage_rng(seed, "batch", 0);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_divergence(&[0.0; 20], &[0.0; 20]), 0.0);
        let mut mu = vec![0.0; 20];
        mu[0] = 1.0;
        assert_eq!(kl_divergence(&mu, &[0.0; 20]), 0.5);
    }

    #[test]
    fn gradient_check_on_small_networks() {
        for seed in 0..5 {
            let hidden = match seed % 3 {
                0 => vec![5],
                1 => vec![4, 3],
                _ => vec![],
            };
            let vae = small(seed, hidden, 1.412);
            assert!(vae.param_count() <= 1000);
            let x = batch(seed, 4, 6);
            let eps = noise(4, 2, &mut stage_rng(seed, "eps", 0));
            let err = gradient_check(&vae, &x, &eps, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn corrupted_kl_gradient_is_caught() {
        let mut vae = small(1, vec![5], 1.412);
        vae.set_kl_grad_scale(2.0);
        let x = batch(1, 4, 6);
        let eps = noise(4, 2, &mut stage_rng(1, "eps", 0));
        assert!(gradient_check(&vae, &x, &eps, 1e-5) > 1e-2);
        // Without the KL term the corruption is invisible.
        let mut plain = small(1, vec![5], 0.0);
        plain.set_kl_grad_scale(2.0);
        assert!(gradient_check(&plain, &x, &eps, 1e-5) < 1e-4);
    }

    #[test]
    fn loss_decomposes_exactly() {
        let vae = small(3, vec![5], 1.412);
        let x = batch(3, 8, 6);
        let eps = noise(8, 2, &mut stage_rng(3, "eps", 0));
        let p = vae.elbo_loss_with_noise(&x, &eps);
        assert_eq!(p.loss, p.recon + 1.412 * p.kl);
        assert!(p.kl >= 0.0);
    }

    #[test]
    fn zero_network_encodes_to_prior() {
        let mut vae = small(0, vec![5], 1.0);
        let zeros = vec![0.0; vae.param_count()];
        vae.set_params(&zeros).unwrap();
        let e = vae.encode(&SignalWindow::raw(vec![0.3; 6])).unwrap();
        assert_eq!(e.mu, vec![0.0; 2]);
        assert_eq!(e.logvar, vec![0.0; 2]);
        assert!(vae.encode(&SignalWindow::raw(vec![0.3; 5])).is_err());
    }

    #[test]
    fn identity_decoder_without_kl_has_zero_loss() {
        // Latent = input through linear layers, no noise and no KL weight.
        let mut vae = Vae::new(VaeConfig { input_dim: 3, hidden: vec![], latent_dim: 3, beta: 0.0, ..Default::default() }).unwrap();
        let mut p = vec![0.0; vae.param_count()];
        // Encoder 3x6 weights: identity on the mu half, logvar weights 0.
        for i in 0..3 {
            p[i * 6 + i] = 1.0;
        }
        let dec = 3 * 6 + 6;
        for i in 0..3 {
            p[dec + i * 3 + i] = 1.0;
        }
        vae.set_params(&p).unwrap();
        let x = batch(0, 5, 3);
        let eps = Array2::zeros((5, 3));
        assert_eq!(vae.elbo_loss_with_noise(&x, &eps).loss, 0.0);
    }

    #[test]
    fn constant_zero_data_is_reconstructed_quickly() {
        let windows = vec![SignalWindow::raw(vec![0.0; 32]); 64];
        let cfg = VaeConfig {
            input_dim: 32,
            hidden: vec![16],
            latent_dim: 4,
            epochs: 200,
            batch_size: 16,
            learning_rate: 5e-3,
            ..Default::default()
        };
        let vae = Vae::train(cfg, &windows).unwrap();
        let last = vae.history.last().unwrap();
        assert!(last.train_recon < 1e-2 * vae.history[0].train_recon.max(1.0), "{last:?}");
    }

    #[test]
    fn training_is_deterministic_and_serializable() {
        let windows: Vec<SignalWindow> = (0..40)
            .map(|i| SignalWindow::raw((0..16).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect()))
            .collect();
        let cfg = VaeConfig { input_dim: 16, hidden: vec![8], latent_dim: 3, epochs: 5, batch_size: 8, seed: 9, ..Default::default() };
        let a = Vae::train(cfg.clone(), &windows).unwrap();
        let b = Vae::train(cfg, &windows).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params(), b.params());
        let mut buf = Vec::new();
        a.save(&mut buf).unwrap();
        let back = Vae::load(&buf[..]).unwrap();
        assert_eq!(back.params(), a.params());
        assert_eq!(back.history, a.history);
        assert!(Vae::load(&b"nope"[..]).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30)) {
            let mu: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let lv: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assert!(kl_divergence(&mu, &lv) >= 0.0);
        }

        #[test]
        fn encode_stays_finite_on_large_inputs(x in prop::collection::vec(-1e6f64..1e6, 6)) {
            let vae = small(4, vec![5], 1.0);
            let e = vae.encode(&SignalWindow::raw(x)).unwrap();
            prop_assert!(e.fused_view().iter().all(|v| v.is_finite()));
            prop_assert_eq!(e.dim(), 4);
        }
    }
}
