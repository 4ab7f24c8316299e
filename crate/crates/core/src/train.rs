//! Adversarial training loop for the critic/generator pair.
//!
//! Each iteration runs `d_iters_per_g` critic updates minimizing
//! `mean(D(fake)) - mean(D(real)) + gradient_penalty`, then one generator
//! update minimizing `-mean(D(G(z)))`, with bias-corrected Adam on both.
//! Real samples are exact one-hot grids; fake samples stay as softmax
//! outputs when fed to the critic.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, Corpus, Vocab};
use crate::error::{Error, Result};
use crate::model::{
    discriminator_forward, generator_forward, one_hot_batch, sample_noise, save_checkpoint,
    Checkpoint, LeasedParams, ModelConfig, ModelParams, Moments, RngState,
};
use crate::ndgrad::{HostTensor, Tape, Var};
use crate::scalar::Scalar;

/// Epsilon inside the gradient-norm square root. Must be small enough that
/// a critic with an exactly zero input-gradient is penalized by essentially
/// exactly lambda, while keeping the norm differentiable at zero.
pub const GP_NORM_EPS: f64 = 1e-16;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Critic updates per generator update.
    pub d_iters_per_g: u32,
    /// Gradient-penalty coefficient (lambda).
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 199_000,
            d_iters_per_g: 10,
            lambda: 10.0,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            adam_eps: 1e-8,
            checkpoint_every: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_iters_per_g == 0 {
            return Err(Error::Config("d_iters_per_g must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0,1), got {v}")));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Generator,
    Discriminator,
}

/// Losses recorded for one iteration (last critic update of the cycle).
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gp: f64,
}

const LOSS_RING: usize = 256;

pub struct TrainState<T: Scalar> {
    pub iteration: u64,
    pub params: ModelParams<T>,
    pub moments: Moments<T>,
    pub rng: ChaCha8Rng,
    pub losses: VecDeque<StepLosses>,
    /// Completed optimizer steps per network (drives bias correction).
    pub g_steps: u64,
    pub d_steps: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(cfg, train_cfg.seed)?;
        let moments = Moments::zeros_like(&params);
        Ok(TrainState {
            iteration: 0,
            params,
            moments,
            rng: ChaCha8Rng::seed_from_u64(train_cfg.seed),
            losses: VecDeque::new(),
            g_steps: 0,
            d_steps: 0,
        })
    }

    /// Rebuild from a checkpoint; optimizer step counts are derived from the
    /// iteration and the configured critic/generator ratio.
    pub fn from_checkpoint(ckpt: &Checkpoint, train_cfg: &TrainConfig) -> TrainState<f32> {
        TrainState {
            iteration: ckpt.iteration,
            params: ckpt.params.clone(),
            moments: ckpt
                .moments
                .clone()
                .unwrap_or_else(|| Moments::zeros_like(&ckpt.params)),
            rng: ckpt.rng.restore(),
            losses: VecDeque::new(),
            g_steps: ckpt.iteration,
            d_steps: ckpt.iteration * train_cfg.d_iters_per_g as u64,
        }
    }

    fn record(&mut self, losses: StepLosses) {
        if self.losses.len() == LOSS_RING {
            self.losses.pop_front();
        }
        self.losses.push_back(losses);
    }
}

/// Gradient penalty with explicit per-sample interpolation coefficients and
/// an arbitrary critic: `lambda * mean((||dD/dx_hat||_2 - 1)^2)`.
///
/// The returned scalar is tape-recorded through the inner gradient, so
/// differentiating it with respect to the critic parameters is valid.
pub fn gradient_penalty_with<'t, T, F>(
    tape: &'t Tape<T>,
    real: &HostTensor<T>,
    fake: &HostTensor<T>,
    eps: &[T],
    lambda: T,
    critic: F,
) -> Result<Var<'t, T>>
where
    T: Scalar,
    F: FnOnce(Var<'t, T>) -> Result<Var<'t, T>>,
{
    if real.shape != fake.shape || real.shape.len() != 3 {
        return Err(Error::Shape {
            op: "gradient_penalty",
            lhs: real.shape.clone(),
            rhs: fake.shape.clone(),
        });
    }
    let b = real.shape[0];
    let per = real.numel() / b;
    if eps.len() != b {
        return Err(Error::Shape {
            op: "gradient_penalty(eps)",
            lhs: vec![eps.len()],
            rhs: vec![b],
        });
    }
    // x_hat = eps*real + (1-eps)*fake, built as a leaf: the penalty gradient
    // flows into the critic parameters, not into the data.
    let mut blend = Vec::with_capacity(real.numel());
    for i in 0..b {
        let e = eps[i];
        let ne = T::one() - e;
        for j in 0..per {
            blend.push(e * real.data[i * per + j] + ne * fake.data[i * per + j]);
        }
    }
    let xhat = tape.leaf(&real.shape, blend)?;
    let scores = critic(xhat)?;
    // Per-sample input gradients, via the batch-summed score (samples are
    // independent in the critic).
    let gx = tape.grad(scores.sum_all()?, &[xhat])?[0];
    let norms = gx.reshape(&[b, per])?.l2_norm_rows(T::fr(GP_NORM_EPS))?;
    norms
        .add_scalar(-T::one())?
        .square()?
        .mean()?
        .scale(lambda)
}

/// Gradient penalty for the model critic, epsilons drawn from `rng`.
pub fn gradient_penalty<'t, T: Scalar>(
    tape: &'t Tape<T>,
    real: &HostTensor<T>,
    fake: &HostTensor<T>,
    params: &LeasedParams<'t, T>,
    cfg: &ModelConfig,
    lambda: T,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t, T>> {
    let b = real.shape.first().copied().unwrap_or(0);
    let eps: Vec<T> = (0..b).map(|_| T::fr(rng.gen::<f64>())).collect();
    gradient_penalty_with(tape, real, fake, &eps, lambda, |xhat| {
        discriminator_forward(xhat, params, cfg)
    })
}

/// One bias-corrected Adam update on the selected network's tensors.
/// `grads` must align with the parameter order filtered by the prefix.
pub fn adam_step<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    which: Which,
    grads: &[Vec<T>],
) -> Result<()> {
    let prefix = match which {
        Which::Generator => "g.",
        Which::Discriminator => "d.",
    };
    for g in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: state.iteration,
                what: format!("non-finite gradient in {prefix} update"),
            });
        }
    }
    let t = match which {
        Which::Generator => {
            state.g_steps += 1;
            state.g_steps
        }
        Which::Discriminator => {
            state.d_steps += 1;
            state.d_steps
        }
    };
    let lr = T::fr(cfg.lr);
    let b1 = T::fr(cfg.beta1);
    let b2 = T::fr(cfg.beta2);
    let eps = T::fr(cfg.adam_eps);
    let bc1 = T::fr(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::fr(1.0 - cfg.beta2.powi(t as i32));

    let mut gi = 0usize;
    for (idx, (name, tensor)) in state.params.tensors_mut().enumerate() {
        if !name.starts_with(prefix) {
            continue;
        }
        let g = grads
            .get(gi)
            .unwrap_or_else(|| panic!("missing gradient for tensor {name}"));
        assert_eq!(g.len(), tensor.numel(), "gradient shape mismatch for {name}");
        let m = &mut state.moments.m[idx];
        let v = &mut state.moments.v[idx];
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            tensor.data[j] = tensor.data[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        gi += 1;
    }
    assert_eq!(gi, grads.len(), "gradient count mismatch for {prefix}");
    Ok(())
}

fn net_grads<'t, T: Scalar>(
    tape: &'t Tape<T>,
    loss: Var<'t, T>,
    leased: &LeasedParams<'t, T>,
    prefix: &str,
) -> Result<Vec<Vec<T>>> {
    let wrt = leased.with_prefix(prefix);
    let grads = tape.grad(loss, &wrt)?;
    Ok(grads.iter().map(|g| g.to_vec()).collect())
}

/// One training iteration: `d_iters_per_g` critic updates on `real_batch`
/// (fresh noise and interpolation coefficients each), then one generator
/// update with fresh noise.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    real_batch: &HostTensor<T>,
) -> Result<StepLosses> {
    let b = real_batch.shape[0];
    let lambda = T::fr(cfg.lambda);
    let mut d_loss_val = 0.0f64;
    let mut gp_val = 0.0f64;

    for _ in 0..cfg.d_iters_per_g {
        let tape: Tape<T> = Tape::new();
        let leased = state.params.lease(&tape);
        let noise = sample_noise::<T>(&mut state.rng, b, model_cfg.noise_dim);
        let z = tape.leaf_tensor(&noise);
        let fake = generator_forward(z, &leased, model_cfg)?;
        let fake_host = fake.to_host();
        let real_v = tape.leaf_tensor(real_batch);
        let d_fake = discriminator_forward(fake, &leased, model_cfg)?.mean()?;
        let d_real = discriminator_forward(real_v, &leased, model_cfg)?.mean()?;
        let gp = gradient_penalty(
            &tape,
            real_batch,
            &fake_host,
            &leased,
            model_cfg,
            lambda,
            &mut state.rng,
        )?;
        let loss = d_fake.sub(d_real)?.add(gp)?;
        d_loss_val = loss.item().f64();
        gp_val = gp.item().f64();
        if !d_loss_val.is_finite() {
            return Err(Error::Divergence {
                iteration: state.iteration,
                what: format!("critic loss {d_loss_val}"),
            });
        }
        let grads = net_grads(&tape, loss, &leased, "d.")?;
        adam_step(state, cfg, Which::Discriminator, &grads)?;
    }

    let tape: Tape<T> = Tape::new();
    let leased = state.params.lease(&tape);
    let noise = sample_noise::<T>(&mut state.rng, b, model_cfg.noise_dim);
    let z = tape.leaf_tensor(&noise);
    let fake = generator_forward(z, &leased, model_cfg)?;
    let g_loss = discriminator_forward(fake, &leased, model_cfg)?
        .mean()?
        .scale(-T::one())?;
    let g_loss_val = g_loss.item().f64();
    if !g_loss_val.is_finite() {
        return Err(Error::Divergence {
            iteration: state.iteration,
            what: format!("generator loss {g_loss_val}"),
        });
    }
    let grads = net_grads(&tape, g_loss, &leased, "g.")?;
    adam_step(state, cfg, Which::Generator, &grads)?;

    state.iteration += 1;
    let losses = StepLosses {
        iteration: state.iteration,
        d_loss: d_loss_val,
        g_loss: g_loss_val,
        gp: gp_val,
    };
    state.record(losses);
    Ok(losses)
}

/// Frequency-weighted sampler over the encoded unique passwords of a corpus.
pub struct BatchSampler {
    rows: Vec<Vec<u16>>,
    cumulative: Vec<u64>,
    total: u64,
}

impl BatchSampler {
    pub fn new(corpus: &Corpus, vocab: &Vocab, seq_len: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(corpus.unique() as usize);
        let mut cumulative = Vec::with_capacity(corpus.unique() as usize);
        let mut acc = 0u64;
        for (p, count) in corpus.iter() {
            rows.push(corpus::encode(p, vocab, seq_len)?);
            acc += count;
            cumulative.push(acc);
        }
        if rows.is_empty() {
            return Err(Error::EmptyCorpus(
                "cannot sample from an empty corpus".into(),
            ));
        }
        Ok(BatchSampler {
            rows,
            cumulative,
            total: acc,
        })
    }

    /// Draw one row i.i.d. with probability proportional to its count.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> &Vec<u16> {
        let r = rng.gen_range(0..self.total);
        let idx = self.cumulative.partition_point(|&c| c <= r);
        &self.rows[idx]
    }

    pub fn batch(&self, rng: &mut ChaCha8Rng, b: usize) -> Vec<Vec<u16>> {
        (0..b).map(|_| self.draw(rng).clone()).collect()
    }
}

/// Output of a full training run.
pub struct TrainOutput {
    pub checkpoints: Vec<PathBuf>,
    pub losses_csv: PathBuf,
}

fn write_checkpoint_at(
    out_dir: &Path,
    state: &TrainState<f32>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    name: Option<&str>,
) -> Result<PathBuf> {
    let file = match name {
        Some(n) => out_dir.join(n),
        None => out_dir.join(format!("ckpt_{:08}.bin", state.iteration)),
    };
    let ckpt = Checkpoint {
        config: cfg.clone(),
        vocab: vocab.clone(),
        params: state.params.clone(),
        iteration: state.iteration,
        moments: Some(state.moments.clone()),
        rng: RngState::capture(&state.rng),
    };
    save_checkpoint(&file, &ckpt)?;
    Ok(file)
}

/// Full training loop over a corpus: builds the vocab, runs `iterations`
/// steps with frequency-weighted batches, writes `losses.csv` plus an
/// initial checkpoint, one every `checkpoint_every` iterations, and a final
/// one. On divergence a crash checkpoint is written before the error is
/// returned.
pub fn train(
    corpus: &Corpus,
    cfg: &TrainConfig,
    model_cfg_base: &ModelConfig,
    out_dir: impl AsRef<Path>,
    mut on_iter: impl FnMut(&StepLosses),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let vocab = corpus::build_vocab(corpus)?;
    let mut model_cfg = model_cfg_base.clone();
    model_cfg.vocab_size = vocab.len();
    model_cfg.validate()?;
    if corpus.max_len() > model_cfg.seq_len {
        return Err(Error::Config(format!(
            "corpus max_len {} exceeds seq_len {}",
            corpus.max_len(),
            model_cfg.seq_len
        )));
    }

    let sampler = BatchSampler::new(corpus, &vocab, model_cfg.seq_len)?;
    let mut state: TrainState<f32> = TrainState::new(&model_cfg, cfg)?;

    let losses_csv = out_dir.join("losses.csv");
    let mut losses_file = std::io::BufWriter::new(
        std::fs::File::create(&losses_csv).map_err(|e| Error::io(&losses_csv, e))?,
    );
    writeln!(losses_file, "iteration,d_loss,g_loss,gp").map_err(|e| Error::io(&losses_csv, e))?;

    let mut checkpoints = vec![write_checkpoint_at(out_dir, &state, &model_cfg, &vocab, None)?];

    for _ in 0..cfg.iterations {
        let rows = sampler.batch(&mut state.rng, model_cfg.batch_size);
        let real = one_hot_batch::<f32>(&rows, model_cfg.seq_len, model_cfg.vocab_size);
        let losses = match train_step(&mut state, cfg, &model_cfg, &real) {
            Ok(l) => l,
            Err(e @ Error::Divergence { .. }) => {
                write_checkpoint_at(out_dir, &state, &model_cfg, &vocab, Some("ckpt_crash.bin"))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(
            losses_file,
            "{},{},{},{}",
            losses.iteration, losses.d_loss, losses.g_loss, losses.gp
        )
        .map_err(|e| Error::io(&losses_csv, e))?;
        on_iter(&losses);
        if state.iteration % cfg.checkpoint_every == 0 {
            checkpoints.push(write_checkpoint_at(out_dir, &state, &model_cfg, &vocab, None)?);
        }
    }
    if state.iteration % cfg.checkpoint_every != 0 {
        checkpoints.push(write_checkpoint_at(out_dir, &state, &model_cfg, &vocab, None)?);
    }
    losses_file.flush().map_err(|e| Error::io(&losses_csv, e))?;
    Ok(TrainOutput {
        checkpoints,
        losses_csv,
    })
}
