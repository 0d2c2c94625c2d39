use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_lab_core::dataset::{FeatureSequence, NormStats};
use ris_lab_core::neural::*;

const F: usize = 5;
const D: usize = 6;
const K: usize = 3;

fn tiny_dims() -> ModelDims {
    ModelDims {
        input: D,
        hidden1: 4,
        hidden2: 4,
        n_classes: K,
        embed: 3,
    }
}

fn random_sample(rng: &mut ChaCha8Rng) -> Sample {
    let data: Vec<f64> = (0..F * D).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = rng.random_range(0..K);
    let mean = |c: usize| (0..F).map(|f| data[f * D + c]).sum::<f64>() / F as f64;
    let u = [mean(0) + 0.5 * k as f64, mean(1) - 0.25 * k as f64];
    Sample {
        x: FeatureSequence {
            steps: F,
            width: D,
            data,
        },
        k,
        u,
    }
}

fn synthetic(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_sample(&mut rng)).collect()
}

fn refs(v: &[Sample]) -> Vec<&Sample> {
    v.iter().collect()
}

/// Parameters spread wider than the initializer so every gate is exercised.
fn random_theta(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.8..0.8)).collect()
}

// ---------------------------------------------------------------------------
// Straight-line reference of the recurrent model, written with plain loops
// over the flat parameter vector.

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ref_cell(
    theta: &[f64],
    cell: &CellBlocks,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    relu: bool,
) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let act = |v: f64| if relu { v.max(0.0) } else { v.tanh() };
    let mut z = vec![0.0; 4 * hid];
    for (j, zj) in z.iter_mut().enumerate() {
        let mut s = theta[cell.b.offset + j];
        for (i, xi) in x.iter().enumerate() {
            s += xi * theta[cell.wx.offset + i * 4 * hid + j];
        }
        for (i, hi) in h.iter().enumerate() {
            s += hi * theta[cell.wh.offset + i * 4 * hid + j];
        }
        *zj = s;
    }
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for j in 0..hid {
        let (i_g, f_g, g_g, o_g) = (
            sigmoid(z[j]),
            sigmoid(z[hid + j]),
            act(z[2 * hid + j]),
            sigmoid(z[3 * hid + j]),
        );
        c_new[j] = f_g * c[j] + i_g * g_g;
        h_new[j] = o_g * act(c_new[j]);
    }
    (h_new, c_new)
}

fn ref_run(
    theta: &[f64],
    cell: &CellBlocks,
    xs: &[Vec<f64>],
    hid: usize,
    relu: bool,
) -> Vec<Vec<f64>> {
    let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
    xs.iter()
        .map(|x| {
            let (hn, cn) = ref_cell(theta, cell, x, &h, &c, relu);
            h = hn;
            c = cn;
            h.clone()
        })
        .collect()
}

fn ref_forward(d: &ModelDims, theta: &[f64], s: &Sample) -> ([f64; 2], Vec<f64>) {
    let l = d.layout();
    let xs: Vec<Vec<f64>> = (0..s.x.steps).map(|f| s.x.step(f).to_vec()).collect();
    let fw = ref_run(theta, &l.bilstm_fw, &xs, d.hidden1, false);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut bw = ref_run(theta, &l.bilstm_bw, &rev, d.hidden1, false);
    bw.reverse();
    let cat: Vec<Vec<f64>> = fw
        .iter()
        .zip(&bw)
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    let h2 = ref_run(theta, &l.lstm2, &cat, d.hidden2, true);
    let mut v = h2.last().unwrap().clone();
    v.extend_from_slice(
        &theta[l.embed.offset + s.k * d.embed..l.embed.offset + (s.k + 1) * d.embed],
    );
    let head = |w: &Block, b: &Block, j: usize| {
        theta[b.offset + j]
            + v.iter()
                .enumerate()
                .map(|(i, vi)| vi * theta[w.offset + i * w.cols + j])
                .sum::<f64>()
    };
    let u_hat = [
        head(&l.coord_w, &l.coord_b, 0),
        head(&l.coord_w, &l.coord_b, 1),
    ];
    let logits: Vec<f64> = (0..d.n_classes)
        .map(|j| head(&l.class_w, &l.class_b, j))
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
    (u_hat, logits.iter().map(|x| (x - m).exp() / z).collect())
}

fn ref_loss(d: &ModelDims, theta: &[f64], batch: &[&Sample], alpha: f64) -> f64 {
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let (u_hat, p) = ref_forward(d, theta, s);
        total += ((u_hat[0] - s.u[0]).powi(2) + (u_hat[1] - s.u[1]).powi(2)) / n;
        total -= p[s.k].ln() / n;
    }
    total + alpha * theta.iter().map(|t| t * t).sum::<f64>()
}

fn ref_mlp_loss(d: &MlpDims, theta: &[f64], batch: &[&Sample]) -> f64 {
    let [w1, b1, w2, b2, w3, b3] = d.blocks();
    let layer = |x: &[f64], w: &Block, b: &Block, relu: bool| -> Vec<f64> {
        (0..w.cols)
            .map(|j| {
                let s = theta[b.offset + j]
                    + x.iter()
                        .enumerate()
                        .map(|(i, xi)| xi * theta[w.offset + i * w.cols + j])
                        .sum::<f64>();
                if relu {
                    s.max(0.0)
                } else {
                    s
                }
            })
            .collect()
    };
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|s| {
            let y = layer(
                &layer(&layer(&s.x.data, &w1, &b1, true), &w2, &b2, true),
                &w3,
                &b3,
                false,
            );
            ((y[0] - s.u[0]).powi(2) + (y[1] - s.u[1]).powi(2)) / n
        })
        .sum()
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn central_difference(
    theta: &[f64],
    range: std::ops::Range<usize>,
    f: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    const H: f64 = 1e-5;
    let mut t = theta.to_vec();
    range
        .map(|i| {
            let orig = t[i];
            t[i] = orig + H;
            let up = f(&t);
            t[i] = orig - H;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

// ---------------------------------------------------------------------------

#[test]
fn predictions_match_straight_line_reference() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 1);
    let set = synthetic(12, 2);
    let seqs: Vec<&FeatureSequence> = set.iter().map(|s| &s.x).collect();
    let ks: Vec<usize> = set.iter().map(|s| s.k).collect();
    let out = net.predict(&theta, &seqs, &ks).unwrap();
    for (s, (u_hat, p)) in set.iter().zip(&out) {
        let (ru, rp) = ref_forward(&d, &theta, s);
        for c in 0..2 {
            assert!((u_hat[c] - ru[c]).abs() < 1e-12);
        }
        for (a, b) in p.iter().zip(&rp) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_matches_finite_differences_for_every_group() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 3);
    let set = synthetic(6, 4);
    let batch = refs(&set);
    let alpha = 1e-3;
    let (_, grad) = loss_and_grad(&net, &theta, &batch, alpha, false);
    for (name, range) in d.layout().groups() {
        let numeric = central_difference(&theta, range.clone(), |t| ref_loss(&d, t, &batch, alpha));
        let err = max_rel_err(&grad[range], &numeric);
        assert!(err < 1e-4, "group {name}: max relative error {err:e}");
    }
}

#[test]
fn baseline_gradient_matches_finite_differences() {
    let dims = MlpDims {
        input: F * D,
        hidden: 7,
    };
    let net = MlpNet::new(dims);
    let theta = random_theta(dims.n_params(), 5);
    let set = synthetic(5, 6);
    let batch = refs(&set);
    let (loss, grad) = loss_and_grad(&net, &theta, &batch, 0.0, false);
    assert!((loss.total - ref_mlp_loss(&dims, &theta, &batch)).abs() < 1e-12);
    let numeric = central_difference(&theta, 0..theta.len(), |t| ref_mlp_loss(&dims, t, &batch));
    let err = max_rel_err(&grad, &numeric);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn regularizer_adds_two_alpha_theta() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 7);
    let set = synthetic(4, 8);
    let (l0, g0) = loss_and_grad(&net, &theta, &refs(&set), 0.0, false);
    let (l1, g1) = loss_and_grad(&net, &theta, &refs(&set), 0.3, false);
    let sq: f64 = theta.iter().map(|t| t * t).sum();
    assert!((l1.reg - 0.3 * sq).abs() < 1e-12);
    assert_eq!(l0.reg, 0.0);
    for ((a, b), t) in g1.iter().zip(&g0).zip(&theta) {
        assert!((a - b - 0.6 * t).abs() < 1e-12);
    }
}

#[test]
fn unused_embedding_rows_get_no_gradient() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 9);
    let mut set = synthetic(8, 10);
    for s in &mut set {
        s.k = 1;
    }
    let (_, g) = loss_and_grad(&net, &theta, &refs(&set), 0.0, false);
    let e = d.layout().embed;
    for k in [0, 2] {
        assert!(g[e.offset + k * d.embed..e.offset + (k + 1) * d.embed]
            .iter()
            .all(|&v| v == 0.0));
    }
    assert!(g[e.offset + d.embed..e.offset + 2 * d.embed]
        .iter()
        .any(|&v| v != 0.0));
}

#[test]
fn parallel_gradient_is_bitwise_serial() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 11);
    let set = synthetic(3 * CHUNK + 5, 12);
    let (ls, gs) = loss_and_grad(&net, &theta, &refs(&set), 1e-4, false);
    let (lp, gp) = loss_and_grad(&net, &theta, &refs(&set), 1e-4, true);
    assert_eq!(ls.total.to_bits(), lp.total.to_bits());
    assert!(gs.iter().zip(&gp).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn adam_agrees_bitwise_with_references_over_many_steps() {
    let n = 37;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut a = random_theta(n, 14);
    let mut b = a.clone();
    let mut c = a.clone();
    let (mut sa, mut sb) = (AdamState::new(n, 1e-3), AdamState::new(n, 1e-3));
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for t in 1..=1000 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        adam_step(&mut a, &g, &mut sa).unwrap();
        adam_step_scalar(&mut b, &g, &mut sb).unwrap();
        let c1 = 1.0 - 0.9f64.powi(t);
        let c2 = 1.0 - 0.999f64.powi(t);
        for i in 0..n {
            m[i] = 0.9 * m[i] + (1.0 - 0.9) * g[i];
            v[i] = 0.999 * v[i] + (1.0 - 0.999) * g[i] * g[i];
            c[i] -= 1e-3 * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
        }
    }
    assert_eq!(sa, sb);
    assert_eq!(sa.step, 1000);
    for i in 0..n {
        assert_eq!(a[i].to_bits(), b[i].to_bits());
        assert_eq!(a[i].to_bits(), c[i].to_bits());
    }
}

#[test]
fn adam_rejects_nan_without_touching_state() {
    let mut theta = vec![0.5, -0.5];
    let mut st = AdamState::new(2, 0.1);
    adam_step(&mut theta, &[1.0, 1.0], &mut st).unwrap();
    let (t0, s0) = (theta.clone(), st.clone());
    assert!(matches!(
        adam_step(&mut theta, &[0.0, f64::NAN], &mut st),
        Err(NeuralError::NonFiniteGradient { index: 1 })
    ));
    assert_eq!(theta, t0);
    assert_eq!(st, s0);
}

#[test]
fn hybrid_loss_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let k = rng.random_range(1..10);
        let alpha = rng.random_range(0.0..1.0);
        let theta: Vec<f64> = (0..rng.random_range(0..50))
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let mut u_hat = Vec::new();
        let mut u = Vec::new();
        let mut probs = Vec::new();
        let mut idx = Vec::new();
        for _ in 0..n {
            u_hat.push([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            u.push([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.push(raw.iter().map(|r| r / s).collect::<Vec<f64>>());
            idx.push(rng.random_range(0..k));
        }
        let got = hybrid_loss(
            &u_hat,
            &probs,
            &u,
            &idx,
            &theta,
            &LossSpec {
                alpha,
                n_classes: k,
            },
        )
        .unwrap();
        let mut want = 0.0;
        for i in 0..n {
            let dx = u[i][0] - u_hat[i][0];
            let dy = u[i][1] - u_hat[i][1];
            want += (dx * dx + dy * dy - probs[i][idx[i]].ln()) / n as f64;
        }
        for t in &theta {
            want += alpha * t * t;
        }
        assert!(
            (got.total - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{} vs {want}",
            got.total
        );
        assert!((got.coord + got.class + got.reg - got.total).abs() < 1e-12);
    }
}

#[test]
fn evaluate_loss_agrees_with_predict_and_hybrid_loss() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 16);
    let set = synthetic(300, 17);
    let seqs: Vec<&FeatureSequence> = set.iter().map(|s| &s.x).collect();
    let ks: Vec<usize> = set.iter().map(|s| s.k).collect();
    let out = net.predict(&theta, &seqs, &ks).unwrap();
    let u_hat: Vec<[f64; 2]> = out.iter().map(|o| o.0).collect();
    let probs: Vec<Vec<f64>> = out.into_iter().map(|o| o.1).collect();
    let u: Vec<[f64; 2]> = set.iter().map(|s| s.u).collect();
    let want = hybrid_loss(
        &u_hat,
        &probs,
        &u,
        &ks,
        &theta,
        &LossSpec {
            alpha: 0.01,
            n_classes: K,
        },
    )
    .unwrap();
    let got = evaluate_loss(&net, &theta, &refs(&set), 0.01);
    assert!((got.total - want.total).abs() < 1e-10 * want.total);
    assert!((got.coord - want.coord).abs() < 1e-10 * want.coord);
}

#[test]
fn wrong_shapes_and_classes_are_rejected() {
    let d = tiny_dims();
    let net = BiLstmNet::new(d);
    let theta = random_theta(d.n_params(), 18);
    let s = synthetic(1, 19).remove(0);
    assert!(matches!(
        net.predict(&theta, &[&s.x], &[K]),
        Err(NeuralError::ClassIndex { index: 3, k: 3 })
    ));
    let narrow = FeatureSequence {
        steps: F,
        width: D - 1,
        data: vec![0.0; F * (D - 1)],
    };
    assert!(matches!(
        net.predict(&theta, &[&narrow], &[0]),
        Err(NeuralError::Shape(_))
    ));
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 10,
        lr: 1e-2,
        alpha: 1e-5,
        seed: 3,
        clip: Some(5.0),
        parallel: false,
    }
}

fn small_dims() -> ModelDims {
    ModelDims {
        input: D,
        hidden1: 8,
        hidden2: 8,
        n_classes: K,
        embed: 3,
    }
}

#[test]
fn zero_epochs_return_the_initialization() {
    let net = BiLstmNet::new(small_dims());
    let set = synthetic(40, 20);
    let (tr, va) = set.split_at(30);
    let out = train(&net, &refs(tr), &refs(va), &quick_config(0)).unwrap();
    let mut rng = ris_lab_core::rng::stream(3, ris_lab_core::rng::Domain::Init, 0);
    assert_eq!(out.theta, net.init(&mut rng));
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, 0);
    assert_eq!(out.best_val, out.initial_val);
    assert_eq!(
        out.best_val,
        evaluate_loss(&net, &out.theta, &refs(va), 1e-5).total
    );
}

#[test]
fn training_reduces_validation_loss_and_keeps_the_best() {
    let net = BiLstmNet::new(small_dims());
    let set = synthetic(100, 21);
    let (tr, va) = set.split_at(80);
    let out = train(&net, &refs(tr), &refs(va), &quick_config(30)).unwrap();
    assert_eq!(out.history.len(), 30);
    assert!(
        out.best_val < out.initial_val,
        "{} !< {}",
        out.best_val,
        out.initial_val
    );
    let min = out
        .history
        .iter()
        .map(|h| h.val_loss)
        .fold(out.initial_val, f64::min);
    assert_eq!(out.best_val, min);
    assert_eq!(
        evaluate_loss(&net, &out.theta, &refs(va), 1e-5).total,
        out.best_val
    );
    assert!(out.history[out.best_epoch - 1].improved);
}

#[test]
fn training_is_deterministic_and_worker_independent() {
    let net = BiLstmNet::new(small_dims());
    let set = synthetic(60, 22);
    let (tr, va) = set.split_at(45);
    let cfg = TrainConfig {
        batch: 40,
        ..quick_config(4)
    };
    let a = train(&net, &refs(tr), &refs(va), &cfg).unwrap();
    let b = train(&net, &refs(tr), &refs(va), &cfg).unwrap();
    let p = train(
        &net,
        &refs(tr),
        &refs(va),
        &TrainConfig {
            parallel: true,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a, p);
    let other = train(&net, &refs(tr), &refs(va), &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.theta, other.theta);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let net = BiLstmNet::new(small_dims());
    let set = synthetic(10, 23);
    for cfg in [
        TrainConfig {
            batch: 0,
            ..quick_config(1)
        },
        TrainConfig {
            lr: 0.0,
            ..quick_config(1)
        },
        TrainConfig {
            alpha: -1.0,
            ..quick_config(1)
        },
    ] {
        assert!(matches!(
            train(&net, &refs(&set), &refs(&set), &cfg),
            Err(NeuralError::Hyper(_))
        ));
    }
    assert!(matches!(
        train(&net, &[], &refs(&set), &quick_config(1)),
        Err(NeuralError::Empty(_))
    ));
}

#[test]
fn grid_search_rows_and_selection() {
    let net = BiLstmNet::new(small_dims());
    let set = synthetic(50, 24);
    let (tr, va) = set.split_at(40);
    let base = quick_config(5);
    let single = [GridPoint {
        lr: 1e-2,
        alpha: 1e-5,
    }];
    let (best, rows) = grid_search(&net, &single, &refs(tr), &refs(va), &base).unwrap();
    assert_eq!((best, rows.len()), (0, 1));
    let plain = train(&net, &refs(tr), &refs(va), &base).unwrap();
    assert_eq!(rows[0].best_val, plain.best_val);

    let grid = [
        GridPoint {
            lr: 1e-2,
            alpha: 0.0,
        },
        GridPoint {
            lr: 1e-2,
            alpha: 10.0,
        },
    ];
    let (best, rows) = grid_search(&net, &grid, &refs(tr), &refs(va), &base).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(best, 0);
    assert!(rows[0].final_train_loss < rows[1].final_train_loss);
    assert!(matches!(
        grid_search(&net, &[], &refs(tr), &refs(va), &base),
        Err(NeuralError::Hyper(_))
    ));
}

fn sample_checkpoint() -> Checkpoint {
    let dims = small_dims();
    let theta = random_theta(dims.n_params(), 25);
    Checkpoint {
        header: CheckpointHeader {
            architecture: Architecture::Bilstm { dims },
            hyper: quick_config(7),
            split_seed: 9,
            dataset_hash: "ab".repeat(32),
            val_loss: 0.125,
            best_epoch: 4,
            norm: NormStats {
                mean: vec![0.1; D],
                std: vec![1.5; D],
            },
            steps: F,
            n_params: dims.n_params(),
            producer: Some("cd".repeat(32)),
        },
        theta,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ck = sample_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert!(back
        .theta
        .iter()
        .zip(&ck.theta)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back.model_dims().unwrap(), small_dims());
    assert!(back.mlp_dims().is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = sample_checkpoint().to_bytes();
    let cases: Vec<Vec<u8>> = vec![
        Vec::new(),
        b"RISLAB-CKPT 9\n{}\n".to_vec(),
        bytes[..bytes.len() - 3].to_vec(),
        [bytes.as_slice(), &[0u8; 8]].concat(),
        String::from_utf8_lossy(&bytes[..40])
            .replace('{', "[")
            .into_bytes(),
    ];
    for c in cases {
        assert!(matches!(
            parse_checkpoint(&c),
            Err(NeuralError::Checkpoint(_))
        ));
    }
    assert!(matches!(
        load_checkpoint(std::path::Path::new("/nonexistent/x.ckpt")),
        Err(NeuralError::Io(_))
    ));
}
