use super::*;
use crate::corpus::Vocab;
use rand::Rng;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        seq_len: 4,
        noise_dim: 6,
        layer_dim: 3,
        n_res_blocks: 2,
        vocab_size: 5,
        kernel_width: 3,
        res_scale: RES_SCALE,
        batch_size: 2,
    }
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let cfg = tiny_cfg();
    let a: ModelParams<f32> = ModelParams::init(&cfg, 42).unwrap();
    let b: ModelParams<f32> = ModelParams::init(&cfg, 42).unwrap();
    assert_eq!(a, b);
    let c: ModelParams<f32> = ModelParams::init(&cfg, 43).unwrap();
    assert_ne!(a, c);
    for (name, t) in a.tensors() {
        if name.ends_with(".b") {
            assert!(t.data.iter().all(|&v| v == 0.0), "{name} not zero");
        }
    }
}

#[test]
fn init_weight_statistics() {
    // 128x128 weight: sample mean within 3 sigma of 0, std within 3 sigma
    // of 0.02.
    let cfg = ModelConfig {
        seq_len: 1,
        noise_dim: 128,
        layer_dim: 128,
        n_res_blocks: 1,
        vocab_size: 3,
        kernel_width: 1,
        res_scale: RES_SCALE,
        batch_size: 1,
    };
    let p: ModelParams<f64> = ModelParams::init(&cfg, 7).unwrap();
    let w = p.get("g.proj.w");
    let n = w.data.len() as f64;
    assert_eq!(n, 128.0 * 128.0);
    let mean = w.data.iter().sum::<f64>() / n;
    let var = w.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let mean_tol = 3.0 * 0.02 / n.sqrt();
    let std_tol = 3.0 * 0.02 / (2.0 * n).sqrt();
    assert!(mean.abs() < mean_tol, "mean {mean} vs {mean_tol}");
    assert!((std - 0.02).abs() < std_tol, "std {std}");
}

#[test]
fn zeroed_block_is_identity() {
    let tape: Tape<f32> = Tape::new();
    let (b, l, d, k) = (2, 5, 3, 3);
    let xdata: Vec<f32> = (0..b * l * d).map(|i| (i as f32) * 0.17 - 1.3).collect();
    let x = tape.leaf(&[b, l, d], xdata.clone()).unwrap();
    let w1 = tape.zeros(&[k * d, d]);
    let b1 = tape.zeros(&[d]);
    let w2 = tape.zeros(&[k * d, d]);
    let b2 = tape.zeros(&[d]);
    let y = residual_block(x, w1, b1, w2, b2, k, 0.3).unwrap();
    assert_eq!(y.to_vec(), xdata); // exact, bit for bit
}

#[test]
fn residual_block_hand_oracle() {
    // Single channel, length 3, hand-set kernels.
    let tape: Tape<f32> = Tape::new();
    let x = tape.leaf(&[1, 3, 1], vec![1.0, -2.0, 3.0]).unwrap();
    let w1 = tape.leaf(&[3, 1], vec![0.5, 1.0, -1.0]).unwrap();
    let b1 = tape.leaf(&[1], vec![0.1]).unwrap();
    let w2 = tape.leaf(&[3, 1], vec![1.0, 0.0, 0.0]).unwrap();
    let b2 = tape.leaf(&[1], vec![-0.2]).unwrap();
    let y = residual_block(x, w1, b1, w2, b2, 3, 0.3).unwrap();
    // relu(x) = [1,0,3]; conv1+b1 = [1.1,-2.4,3.1]; relu = [1.1,0,3.1];
    // conv2 (left tap) + b2 = [-0.2,0.9,-0.2]; out = x + 0.3*that.
    let expect = [0.94f32, -1.73, 2.94];
    for (got, want) in y.to_vec().iter().zip(expect) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn block_shape_preserved_and_mismatch_rejected() {
    let tape: Tape<f32> = Tape::new();
    let cfg = tiny_cfg();
    let params: ModelParams<f32> = ModelParams::init(&cfg, 0).unwrap();
    let leased = params.lease(&tape);
    let x = tape.zeros(&[3, cfg.seq_len, cfg.layer_dim]);
    let y = run_blocks(x, &leased, "g", &cfg).unwrap();
    assert_eq!(y.shape(), vec![3, cfg.seq_len, cfg.layer_dim]);

    let bad = tape.zeros(&[3, cfg.seq_len, cfg.layer_dim + 1]);
    assert!(run_blocks(bad, &leased, "g", &cfg).is_err());
}

#[test]
fn generator_rows_on_simplex_and_deterministic() {
    let cfg = tiny_cfg();
    let params: ModelParams<f32> = ModelParams::init(&cfg, 5).unwrap();
    let run = || {
        let tape: Tape<f32> = Tape::new();
        let leased = params.lease(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let z = tape.leaf_tensor(&sample_noise(&mut rng, 3, cfg.noise_dim));
        generator_forward(z, &leased, &cfg).unwrap().to_vec()
    };
    let probs = run();
    for row in probs.chunks(cfg.vocab_size) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
    let again = run();
    assert_eq!(
        probs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        again.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn zero_weights_give_uniform_generator_and_zero_scores() {
    let cfg = tiny_cfg();
    let mut params: ModelParams<f32> = ModelParams::init(&cfg, 5).unwrap();
    for (_, t) in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let tape: Tape<f32> = Tape::new();
    let leased = params.lease(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = tape.leaf_tensor(&sample_noise(&mut rng, 2, cfg.noise_dim));
    let probs = generator_forward(z, &leased, &cfg).unwrap();
    let uniform = 1.0 / cfg.vocab_size as f32;
    for v in probs.to_vec() {
        assert!((v - uniform).abs() < 1e-6);
    }
    let scores = discriminator_forward(probs, &leased, &cfg).unwrap();
    assert_eq!(scores.to_vec(), vec![0.0; 2]);
}

#[test]
fn discriminator_batch_equivariance() {
    let cfg = tiny_cfg();
    let params: ModelParams<f32> = ModelParams::init(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<u16>> = (0..4)
        .map(|_| {
            (0..cfg.seq_len)
                .map(|_| rng.gen_range(0..cfg.vocab_size as u16))
                .collect()
        })
        .collect();
    let score_of = |order: &[usize]| -> Vec<f32> {
        let permuted: Vec<Vec<u16>> = order.iter().map(|&i| rows[i].clone()).collect();
        let batch = one_hot_batch::<f32>(&permuted, cfg.seq_len, cfg.vocab_size);
        let tape: Tape<f32> = Tape::new();
        let leased = params.lease(&tape);
        let x = tape.leaf_tensor(&batch);
        discriminator_forward(x, &leased, &cfg).unwrap().to_vec()
    };
    let base = score_of(&[0, 1, 2, 3]);
    let perm = score_of(&[2, 0, 3, 1]);
    assert_eq!(perm[0], base[2]);
    assert_eq!(perm[1], base[0]);
    assert_eq!(perm[2], base[3]);
    assert_eq!(perm[3], base[1]);
}

/// Independent forward oracle: the same architecture written as plain
/// nested loops, no tape, no gemm, no unfold.
mod oracle {
    use super::ModelConfig;

    pub fn conv1d(x: &[f64], l: usize, cin: usize, w: &[f64], cout: usize, width: usize, bias: &[f64]) -> Vec<f64> {
        let pad = (width - 1) / 2;
        let mut out = vec![0.0; l * cout];
        for pos in 0..l {
            for co in 0..cout {
                let mut acc = bias[co];
                for dk in 0..width {
                    let src = pos as isize + dk as isize - pad as isize;
                    if src >= 0 && (src as usize) < l {
                        for ci in 0..cin {
                            acc += x[src as usize * cin + ci] * w[(dk * cin + ci) * cout + co];
                        }
                    }
                }
                out[pos * cout + co] = acc;
            }
        }
        out
    }

    pub fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v.max(0.0)).collect()
    }

    pub fn block(x: &[f64], l: usize, d: usize, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], width: usize) -> Vec<f64> {
        let y = conv1d(&relu(x), l, d, w1, d, width, b1);
        let y = conv1d(&relu(&y), l, d, w2, d, width, b2);
        x.iter().zip(y).map(|(&xi, yi)| xi + 0.3 * yi).collect()
    }

    /// Per-sample discriminator score.
    pub fn d_score(sample: &[f64], cfg: &ModelConfig, get: &dyn Fn(&str) -> Vec<f64>) -> f64 {
        let (l, d, k) = (cfg.seq_len, cfg.layer_dim, cfg.kernel_width);
        let mut h = conv1d(sample, l, cfg.vocab_size, &get("d.in.w"), d, k, &get("d.in.b"));
        for i in 0..cfg.n_res_blocks {
            h = block(
                &h,
                l,
                d,
                &get(&format!("d.block{i}.conv1.w")),
                &get(&format!("d.block{i}.conv1.b")),
                &get(&format!("d.block{i}.conv2.w")),
                &get(&format!("d.block{i}.conv2.b")),
                k,
            );
        }
        let wout = get("d.out.w");
        h.iter().zip(&wout).map(|(a, b)| a * b).sum::<f64>() + get("d.out.b")[0]
    }

    /// Per-sample generator output (softmax rows) from a noise vector.
    pub fn g_probs(z: &[f64], cfg: &ModelConfig, get: &dyn Fn(&str) -> Vec<f64>) -> Vec<f64> {
        let (l, d, k, v) = (cfg.seq_len, cfg.layer_dim, cfg.kernel_width, cfg.vocab_size);
        let wproj = get("g.proj.w");
        let bproj = get("g.proj.b");
        let mut h = vec![0.0; l * d];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut acc = bproj[j];
            for (i, &zi) in z.iter().enumerate() {
                acc += zi * wproj[i * l * d + j];
            }
            *hj = acc;
        }
        for i in 0..cfg.n_res_blocks {
            h = block(
                &h,
                l,
                d,
                &get(&format!("g.block{i}.conv1.w")),
                &get(&format!("g.block{i}.conv1.b")),
                &get(&format!("g.block{i}.conv2.w")),
                &get(&format!("g.block{i}.conv2.b")),
                k,
            );
        }
        let logits = conv1d(&h, l, d, &get("g.out.w"), v, k, &get("g.out.b"));
        let mut probs = vec![0.0; l * v];
        for pos in 0..l {
            let row = &logits[pos * v..(pos + 1) * v];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                probs[pos * v + j] = e / s;
            }
        }
        probs
    }
}

#[test]
fn forward_matches_naive_oracle() {
    let cfg = tiny_cfg();
    let params: ModelParams<f64> = ModelParams::init(&cfg, 17).unwrap();
    let get = |name: &str| params.get(name).data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = sample_noise::<f64>(&mut rng, 2, cfg.noise_dim);
    let rows: Vec<Vec<u16>> = (0..2)
        .map(|_| {
            (0..cfg.seq_len)
                .map(|_| rng.gen_range(0..cfg.vocab_size as u16))
                .collect()
        })
        .collect();
    let x = one_hot_batch::<f64>(&rows, cfg.seq_len, cfg.vocab_size);

    let tape: Tape<f64> = Tape::new();
    let leased = params.lease(&tape);
    let zv = tape.leaf_tensor(&z);
    let xv = tape.leaf_tensor(&x);
    let probs = generator_forward(zv, &leased, &cfg).unwrap().to_vec();
    let scores = discriminator_forward(xv, &leased, &cfg).unwrap().to_vec();

    let per = cfg.seq_len * cfg.vocab_size;
    for s in 0..2 {
        let want = oracle::g_probs(&z.data[s * cfg.noise_dim..(s + 1) * cfg.noise_dim], &cfg, &get);
        for (a, b) in probs[s * per..(s + 1) * per].iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let want = oracle::d_score(&x.data[s * per..(s + 1) * per], &cfg, &get);
        assert!((scores[s] - want).abs() < 1e-10);
    }
}

#[test]
fn gradient_reaches_every_parameter_tensor() {
    let cfg = tiny_cfg();
    let params: ModelParams<f32> = ModelParams::init(&cfg, 12).unwrap();
    let tape: Tape<f32> = Tape::new();
    let leased = params.lease(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = tape.leaf_tensor(&sample_noise(&mut rng, 4, cfg.noise_dim));
    let fake = generator_forward(z, &leased, &cfg).unwrap();
    let score = discriminator_forward(fake, &leased, &cfg).unwrap().mean().unwrap();
    let wrt: Vec<_> = leased.vars().map(|(_, v)| v).collect();
    let names: Vec<_> = leased.vars().map(|(n, _)| n.to_string()).collect();
    let grads = tape.grad(score, &wrt).unwrap();
    for (name, g) in names.iter().zip(&grads) {
        assert!(
            g.to_vec().iter().any(|&v| v != 0.0),
            "gradient dead for {name}"
        );
    }
}

#[test]
fn checkpoint_round_trip_bit_identical() {
    let cfg = tiny_cfg();
    let params: ModelParams<f32> = ModelParams::init(&cfg, 9).unwrap();
    let vocab = Vocab::from_bytes(*b"abcd");
    assert_eq!(vocab.len(), cfg.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let _: f64 = rng.gen(); // advance so word_pos is nontrivial
    let ckpt = Checkpoint {
        config: cfg,
        vocab,
        params: params.clone(),
        iteration: 1234,
        moments: Some(Moments::zeros_like(&params)),
        rng: RngState::capture(&rng),
    };
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&p1, &ckpt).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    assert_eq!(loaded, ckpt);
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    // restored rng continues identically
    let mut a = ckpt.rng.restore();
    let mut b = rng;
    assert_eq!(a.gen::<u64>(), b.gen::<u64>());
}

#[test]
fn checkpoint_bad_magic_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"NOPEnope").unwrap();
    let err = load_checkpoint(&p).unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err}");

    let cfg = tiny_cfg();
    let params: ModelParams<f32> = ModelParams::init(&cfg, 9).unwrap();
    let ckpt = Checkpoint {
        config: cfg,
        vocab: Vocab::from_bytes(*b"abcd"),
        params,
        iteration: 0,
        moments: None,
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
    };
    let good = dir.path().join("good.ckpt");
    save_checkpoint(&good, &ckpt).unwrap();
    let bytes = std::fs::read(&good).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_checkpoint(&cut).unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err}");
}
