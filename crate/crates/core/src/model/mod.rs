//! Generator and discriminator definitions, parameter initialization and
//! checkpoint serialization.
//!
//! Both networks are residual 1-D convolutional stacks. The generator maps
//! a noise vector to a `[seq_len, vocab]` grid of per-position character
//! distributions; the discriminator (critic) maps such a grid to one
//! unbounded realness score per sample — no sigmoid, as required for the
//! Wasserstein objective.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndgrad::{HostTensor, Tape, Var};
use crate::scalar::Scalar;

/// Scale applied to the residual branch before it is added back to the
/// block input.
pub const RES_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Generated sequence length (also the corpus max password length).
    pub seq_len: usize,
    /// Noise vector dimension fed to the generator.
    pub noise_dim: usize,
    /// Channel count of every convolutional layer.
    pub layer_dim: usize,
    /// Residual blocks per network.
    pub n_res_blocks: usize,
    /// Symbol count including the pad.
    pub vocab_size: usize,
    /// Width of all 1-D convolutions.
    pub kernel_width: usize,
    /// Residual branch scale; fixed at 0.3.
    pub res_scale: f64,
    /// Training batch size.
    pub batch_size: usize,
}

impl ModelConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            seq_len: 10,
            noise_dim: 128,
            layer_dim: 128,
            n_res_blocks: 5,
            vocab_size,
            kernel_width: 5,
            res_scale: RES_SCALE,
            batch_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("noise_dim", self.noise_dim),
            ("layer_dim", self.layer_dim),
            ("n_res_blocks", self.n_res_blocks),
            ("vocab_size", self.vocab_size),
            ("kernel_width", self.kernel_width),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.res_scale != RES_SCALE {
            return Err(Error::Config(format!(
                "res_scale is fixed at {RES_SCALE}, got {}",
                self.res_scale
            )));
        }
        Ok(())
    }
}

/// Named parameter collection for both networks, in a fixed order
/// (generator first, then discriminator).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: Vec<(String, HostTensor<T>)>,
}

/// Adam first/second moment buffers, aligned with [`ModelParams`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .map(|(_, t)| vec![T::zero(); t.numel()])
            .collect();
        Moments {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Shapes of every tensor for a config, in parameter order.
fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (l, d, v, k, nd) = (
        cfg.seq_len,
        cfg.layer_dim,
        cfg.vocab_size,
        cfg.kernel_width,
        cfg.noise_dim,
    );
    let mut out = Vec::new();
    out.push(("g.proj.w".into(), vec![nd, l * d]));
    out.push(("g.proj.b".into(), vec![l * d]));
    for i in 0..cfg.n_res_blocks {
        for conv in ["conv1", "conv2"] {
            out.push((format!("g.block{i}.{conv}.w"), vec![k * d, d]));
            out.push((format!("g.block{i}.{conv}.b"), vec![d]));
        }
    }
    out.push(("g.out.w".into(), vec![k * d, v]));
    out.push(("g.out.b".into(), vec![v]));
    out.push(("d.in.w".into(), vec![k * v, d]));
    out.push(("d.in.b".into(), vec![d]));
    for i in 0..cfg.n_res_blocks {
        for conv in ["conv1", "conv2"] {
            out.push((format!("d.block{i}.{conv}.w"), vec![k * d, d]));
            out.push((format!("d.block{i}.{conv}.b"), vec![d]));
        }
    }
    out.push(("d.out.w".into(), vec![l * d, 1]));
    out.push(("d.out.b".into(), vec![1]));
    out
}

impl<T: Scalar> ModelParams<T> {
    /// Weights ~ Normal(0, 0.02), biases zero; deterministic per seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        let tensors = param_layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with(".b") {
                    vec![T::zero(); n]
                } else {
                    (0..n).map(|_| T::fr(normal.sample(&mut rng))).collect()
                };
                (name, HostTensor { shape, data })
            })
            .collect();
        Ok(ModelParams { tensors })
    }

    pub fn from_tensors(tensors: Vec<(String, HostTensor<T>)>) -> Self {
        ModelParams { tensors }
    }

    pub fn get(&self, name: &str) -> &HostTensor<T> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .unwrap_or_else(|| panic!("no parameter tensor named {name}"))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &HostTensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut HostTensor<T>)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn has_non_finite(&self) -> bool {
        self.tensors.iter().any(|(_, t)| t.has_non_finite())
    }

    /// Lease every tensor onto a tape as leaf nodes, keeping order.
    pub fn lease<'t>(&self, tape: &'t Tape<T>) -> LeasedParams<'t, T> {
        LeasedParams {
            vars: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf_tensor(t)))
                .collect(),
        }
    }
}

/// Tape-resident view of [`ModelParams`] for one forward/backward pass.
pub struct LeasedParams<'t, T: Scalar> {
    vars: Vec<(String, Var<'t, T>)>,
}

impl<'t, T: Scalar> LeasedParams<'t, T> {
    pub fn get(&self, name: &str) -> Var<'t, T> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("no leased tensor named {name}"))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var<'t, T>)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Leased vars whose name starts with `prefix` ("g." or "d.").
    pub fn with_prefix(&self, prefix: &str) -> Vec<Var<'t, T>> {
        self.vars
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| *v)
            .collect()
    }
}

/// `x + res_scale * conv2(relu(conv1(relu(x))))`, shape-preserving.
pub fn residual_block<'t, T: Scalar>(
    x: Var<'t, T>,
    w1: Var<'t, T>,
    b1: Var<'t, T>,
    w2: Var<'t, T>,
    b2: Var<'t, T>,
    width: usize,
    res_scale: T,
) -> Result<Var<'t, T>> {
    let y = x
        .relu()?
        .conv1d(w1, width)?
        .affine(b1)?
        .relu()?
        .conv1d(w2, width)?
        .affine(b2)?;
    x.add(y.scale(res_scale)?)
}

fn run_blocks<'t, T: Scalar>(
    mut h: Var<'t, T>,
    params: &LeasedParams<'t, T>,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    for i in 0..cfg.n_res_blocks {
        h = residual_block(
            h,
            params.get(&format!("{prefix}.block{i}.conv1.w")),
            params.get(&format!("{prefix}.block{i}.conv1.b")),
            params.get(&format!("{prefix}.block{i}.conv2.w")),
            params.get(&format!("{prefix}.block{i}.conv2.b")),
            cfg.kernel_width,
            T::fr(cfg.res_scale),
        )?;
    }
    Ok(h)
}

/// Generator: noise `[b, noise_dim]` to per-position character
/// distributions `[b, seq_len, vocab]`; every position sums to 1.
pub fn generator_forward<'t, T: Scalar>(
    z: Var<'t, T>,
    params: &LeasedParams<'t, T>,
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    let zs = z.shape();
    if zs.len() != 2 || zs[1] != cfg.noise_dim {
        return Err(Error::Shape {
            op: "generator_forward",
            lhs: zs,
            rhs: vec![0, cfg.noise_dim],
        });
    }
    let b = zs[0];
    let h = z
        .matmul(params.get("g.proj.w"))?
        .affine(params.get("g.proj.b"))?
        .reshape(&[b, cfg.seq_len, cfg.layer_dim])?;
    let h = run_blocks(h, params, "g", cfg)?;
    h.conv1d(params.get("g.out.w"), cfg.kernel_width)?
        .affine(params.get("g.out.b"))?
        .softmax()
}

/// Discriminator/critic: `[b, seq_len, vocab]` grids (one-hot or softmax
/// rows) to unbounded scores `[b]`.
pub fn discriminator_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    params: &LeasedParams<'t, T>,
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    let xs = x.shape();
    if xs.len() != 3 || xs[1] != cfg.seq_len || xs[2] != cfg.vocab_size {
        return Err(Error::Shape {
            op: "discriminator_forward",
            lhs: xs,
            rhs: vec![0, cfg.seq_len, cfg.vocab_size],
        });
    }
    let b = xs[0];
    let h = x
        .conv1d(params.get("d.in.w"), cfg.kernel_width)?
        .affine(params.get("d.in.b"))?;
    let h = run_blocks(h, params, "d", cfg)?;
    h.reshape(&[b, cfg.seq_len * cfg.layer_dim])?
        .matmul(params.get("d.out.w"))?
        .affine(params.get("d.out.b"))?
        .reshape(&[b])
}

/// Draw a `[b, noise_dim]` standard-normal noise batch.
pub fn sample_noise<T: Scalar>(rng: &mut ChaCha8Rng, b: usize, noise_dim: usize) -> HostTensor<T> {
    let normal = Normal::new(0.0f64, 1.0).expect("valid normal");
    HostTensor {
        shape: vec![b, noise_dim],
        data: (0..b * noise_dim)
            .map(|_| T::fr(normal.sample(rng)))
            .collect(),
    }
}

/// One-hot encode index rows `[b][seq_len]` into `[b, seq_len, vocab]`.
pub fn one_hot_batch<T: Scalar>(rows: &[Vec<u16>], seq_len: usize, vocab: usize) -> HostTensor<T> {
    let b = rows.len();
    let mut data = vec![T::zero(); b * seq_len * vocab];
    for (i, row) in rows.iter().enumerate() {
        debug_assert_eq!(row.len(), seq_len);
        for (l, &idx) in row.iter().enumerate() {
            data[(i * seq_len + l) * vocab + idx as usize] = T::one();
        }
    }
    HostTensor {
        shape: vec![b, seq_len, vocab],
        data,
    }
}

#[cfg(test)]
mod tests;
