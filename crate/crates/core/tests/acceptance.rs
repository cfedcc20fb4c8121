//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use sfconv::complexity::{count_flops, count_params, layer_flops, sfconv_rank_threshold};
use sfconv::harness::train::{train, CHECKPOINT_FILE, METRICS_FILE};
use sfconv::harness::{
    Checkpoint, ConvKind, ConvSpec, Layer, Network, TaskKind, TrainConfig, Trainer,
};
use sfconv::imstats::{kurtosis, skewness, weight_histogram};
use sfconv::linalg::svd;
use sfconv::nn::{self, ConvConfig};
use sfconv::regularizer::{
    kl_to_uniform, matrix_kl, matrix_kl_gradient, network_kl, normalize_spectrum,
};
use sfconv::sfconv::{
    init_factorized, sfconv_backward, sfconv_forward, sfconv_forward_cached, FactorizedFilter,
};
use sfconv::Tensor;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn parameter_reduction() -> Check {
    let sf = ok(init_factorized(64, 64, 3, 10, 0))?.param_count();
    let spec = ConvSpec {
        kind: ConvKind::Full,
        kernel: 3,
        in_channels: 64,
        out_channels: 64,
        stride: 1,
        padding: 1,
        rank: 10,
    };
    let full_net = ok(Network::sequential(vec![ok(spec.build(&mut rng(0)))?]))?;
    let full = count_params(&full_net);
    ensure!(sf == 3_904, "factorized layer has {sf} parameters");
    ensure!(full == 36_928, "full layer has {full} parameters");
    Ok(format!("{sf} vs {full}"))
}

fn svd_oracle() -> Check {
    let mut g = rng(11);
    let (mut worst_recon, mut worst_ortho, mut worst_sigma) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..200 {
        let (m, n) = if trial % 2 == 0 {
            (g.random_range(1..=48), g.random_range(1..=10))
        } else {
            (g.random_range(1..=10), g.random_range(1..=48))
        };
        let a = randn(&mut g, &[m, n]);
        let t = m.min(n);
        let r = ok(svd(&a))?;
        let mut us = r.u.data().to_vec();
        for i in 0..m {
            for j in 0..t {
                us[i * t + j] *= r.sigma[j];
            }
        }
        let rebuilt = naive_matmul(&us, &transpose(r.v.data(), n, t), m, t, n);
        let diff: Vec<f64> = rebuilt.iter().zip(a.data()).map(|(x, y)| x - y).collect();
        worst_recon = worst_recon.max(frob(&diff) / frob(a.data()));
        for (mat, rows) in [(&r.u, m), (&r.v, n)] {
            let gram = naive_matmul(&transpose(mat.data(), rows, t), mat.data(), t, rows, t);
            for i in 0..t {
                for j in 0..t {
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst_ortho = worst_ortho.max((gram[i * t + j] - want).abs());
                }
            }
        }
        let oracle = oracle_singular_values(a.data(), m, n);
        for (s, o) in r.sigma.iter().zip(&oracle) {
            worst_sigma = worst_sigma.max((s - o).abs() / oracle[0]);
        }
    }
    ensure!(
        worst_recon <= 1e-10,
        "reconstruction error {worst_recon:.2e}"
    );
    ensure!(
        worst_ortho <= 1e-10,
        "orthonormality error {worst_ortho:.2e}"
    );
    ensure!(
        worst_sigma <= 1e-8,
        "singular values off the oracle by {worst_sigma:.2e}"
    );
    Ok(format!(
        "recon {worst_recon:.1e}, ortho {worst_ortho:.1e}, sigma {worst_sigma:.1e}"
    ))
}

fn kl_gradient_fd() -> Check {
    let mut g = rng(300);
    let mut worst = 0.0f64;
    let mut near_ties = 0;
    for trial in 0..50 {
        let k = [1, 3, 5][g.random_range(0..3)];
        let c = g.random_range(1..=8);
        let r = g.random_range(2..=10);
        let (m, n) = if g.random_bool(0.5) {
            (c * k, r)
        } else {
            (r, c * k)
        };
        let a = if trial % 5 < 2 && m.min(n) >= 2 {
            let t = m.min(n);
            let mut sigma: Vec<f64> = (0..t).map(|_| g.random_range(0.2..3.0)).collect();
            sigma.sort_by(|a, b| b.total_cmp(a));
            let i = g.random_range(0..t - 1);
            sigma[i + 1] = sigma[i] * (1.0 - [1e-3, 1e-5, 1e-7][trial % 3]);
            sigma.sort_by(|a, b| b.total_cmp(a));
            near_ties += 1;
            matrix_with_spectrum(&mut g, m, n, &sigma)
        } else {
            randn(&mut g, &[m, n])
        };
        let a = a.scale(1.0 / a.frobenius_norm());
        let (_, grad) = ok(matrix_kl_gradient(&a))?;
        let num = numeric_grad(&a, 1e-6, |x| matrix_kl(x).unwrap());
        worst = worst.max(max_rel_err(grad.data(), &num));
    }
    ensure!(worst < 1e-5, "relative error {worst:.2e}");
    Ok(format!(
        "50 matrices ({near_ties} near-ties), max rel err {worst:.1e}"
    ))
}

fn random_conv(g: &mut ChaCha8Rng) -> (ConvConfig, [usize; 4]) {
    let k = [1, 3, 5][g.random_range(0..3)];
    let cfg = ConvConfig::square(
        k,
        g.random_range(1..=2),
        g.random_range(0..=k / 2),
        g.random_range(1..=3),
        g.random_range(1..=3),
    );
    let dims = [
        g.random_range(1..=2),
        cfg.in_channels,
        g.random_range(k.max(4)..=8),
        g.random_range(k.max(4)..=8),
    ];
    (cfg, dims)
}

fn conv_op_gradients() -> Check {
    const EPS: f64 = 1e-6;
    const N: usize = 20;
    let mut g = rng(100);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, analytic: &Tensor, numeric: &[f64]| {
        let e = max_rel_err(analytic.data(), numeric);
        match worst.iter_mut().find(|(n, _)| *n == name) {
            Some((_, w)) => *w = w.max(e),
            None => worst.push((name, e)),
        }
    };
    for _ in 0..N {
        let (cfg, dims) = random_conv(&mut g);
        let x = randn(&mut g, &dims);
        let wt = randn(&mut g, &cfg.weight_shape());
        let bias = randn(&mut g, &[cfg.out_channels]);
        let y = ok(nn::conv2d_forward(&x, &wt, Some(&bias), &cfg))?;
        let r = randn(&mut g, y.shape());
        let gr = ok(nn::conv2d_backward(&r, &x, &wt, true, &cfg))?;
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| {
            probe(&nn::conv2d_forward(x, wt, Some(b), &cfg).unwrap(), &r)
        };
        record(
            "conv2d",
            &gr.input,
            &numeric_grad(&x, EPS, |v| f(v, &wt, &bias)),
        );
        record(
            "conv2d",
            &gr.weight,
            &numeric_grad(&wt, EPS, |v| f(&x, v, &bias)),
        );
        record(
            "conv2d",
            gr.bias.as_ref().unwrap(),
            &numeric_grad(&bias, EPS, |v| f(&x, &wt, v)),
        );

        let r = g.random_range(1..=4);
        let k = cfg.kernel_h;
        let q = randn(&mut g, &[r, cfg.in_channels, 1, k]);
        let p = randn(&mut g, &[cfg.out_channels, r, k, 1]);
        let sb = randn(&mut g, &[cfg.out_channels]);
        let with = |q: &Tensor, p: &Tensor, b: &Tensor| {
            FactorizedFilter::new(q.clone(), p.clone(), Some(b.clone()), cfg).unwrap()
        };
        let filt = with(&q, &p, &sb);
        let (y, mid) = ok(sfconv_forward_cached(&x, &filt))?;
        let rr = randn(&mut g, y.shape());
        let gs = ok(sfconv_backward(&rr, &x, &mid, &filt))?;
        let f = |x: &Tensor, ft: &FactorizedFilter| probe(&sfconv_forward(x, ft).unwrap(), &rr);
        record("sfconv", &gs.input, &numeric_grad(&x, EPS, |v| f(v, &filt)));
        record(
            "sfconv",
            &gs.q_filters,
            &numeric_grad(&q, EPS, |v| f(&x, &with(v, &p, &sb))),
        );
        record(
            "sfconv",
            &gs.p_filters,
            &numeric_grad(&p, EPS, |v| f(&x, &with(&q, v, &sb))),
        );
        record(
            "sfconv",
            gs.bias.as_ref().unwrap(),
            &numeric_grad(&sb, EPS, |v| f(&x, &with(&q, &p, v))),
        );

        let even = [
            dims[0],
            dims[1],
            2 * g.random_range(1..4),
            2 * g.random_range(1..4),
        ];
        let x = randn(&mut g, &even);
        let r = randn(&mut g, &even);
        record(
            "relu",
            &ok(nn::relu_backward(&r, &x))?,
            &numeric_grad(&x, EPS, |v| probe(&nn::relu_forward(v), &r)),
        );
        let s = nn::sigmoid_forward(&x);
        record(
            "sigmoid",
            &ok(nn::sigmoid_backward(&r, &s))?,
            &numeric_grad(&x, EPS, |v| probe(&nn::sigmoid_forward(v), &r)),
        );
        let pool = ok(nn::maxpool2d_forward(&x))?;
        let rp = randn(&mut g, pool.output.shape());
        record(
            "maxpool",
            &ok(nn::maxpool2d_backward(&rp, &pool.argmax, x.shape()))?,
            &numeric_grad(&x, EPS, |v| {
                probe(&nn::maxpool2d_forward(v).unwrap().output, &rp)
            }),
        );
        let ru = randn(&mut g, &[even[0], even[1], 2 * even[2], 2 * even[3]]);
        record(
            "upsample",
            &ok(nn::upsample2x_backward(&ru))?,
            &numeric_grad(&x, EPS, |v| probe(&nn::upsample2x_forward(v).unwrap(), &ru)),
        );
        let other = randn(&mut g, &[even[0], 2, even[2], even[3]]);
        let rc = randn(&mut g, &[even[0], even[1] + 2, even[2], even[3]]);
        let (ga, gb) = ok(nn::split_channels(&rc, even[1]))?;
        record(
            "concat",
            &ga,
            &numeric_grad(&x, EPS, |v| {
                probe(&nn::concat_channels(v, &other).unwrap(), &rc)
            }),
        );
        record(
            "concat",
            &gb,
            &numeric_grad(&other, EPS, |v| {
                probe(&nn::concat_channels(&x, v).unwrap(), &rc)
            }),
        );

        let o = g.random_range(1..5);
        let dw = randn(&mut g, &[o, x.numel() / even[0]]);
        let db = randn(&mut g, &[o]);
        let rd = randn(&mut g, &[even[0], o]);
        let gd = ok(nn::dense_backward(&rd, &x, &dw))?;
        let f =
            |x: &Tensor, w: &Tensor, b: &Tensor| probe(&nn::dense_forward(x, w, b).unwrap(), &rd);
        record(
            "dense",
            &gd.input,
            &numeric_grad(&x, EPS, |v| f(v, &dw, &db)),
        );
        record(
            "dense",
            &gd.weight,
            &numeric_grad(&dw, EPS, |v| f(&x, v, &db)),
        );
        record(
            "dense",
            &gd.bias,
            &numeric_grad(&db, EPS, |v| f(&x, &dw, v)),
        );

        let classes = g.random_range(2..6);
        let logits = randn(&mut g, &[dims[0] + 1, classes]).scale(3.0);
        let labels: Vec<usize> = (0..=dims[0]).map(|_| g.random_range(0..classes)).collect();
        let ce = ok(nn::softmax_cross_entropy(&logits, &labels))?;
        record(
            "cross-entropy",
            &ce.grad,
            &numeric_grad(&logits, EPS, |v| {
                nn::softmax_cross_entropy(v, &labels).unwrap().loss
            }),
        );
        let md = [dims[0], 1, even[2] + 1, even[3] + 1];
        let pred = uniform(&mut g, &md, 0.0, 1.0);
        let mask = uniform(&mut g, &md, 0.0, 1.0).map(|v| if v > 0.6 { 1.0 } else { 0.0 });
        let d = ok(nn::batch_dice_loss(&pred, &mask, nn::DICE_SMOOTHING))?;
        record(
            "dice",
            &d.grad,
            &numeric_grad(&pred, EPS, |v| {
                nn::batch_dice_loss(v, &mask, nn::DICE_SMOOTHING)
                    .unwrap()
                    .loss
            }),
        );
    }
    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, e)| *e >= 1e-5)
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    ensure!(
        bad.is_empty(),
        "relative error over 1e-5: {}",
        bad.join(", ")
    );
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!(
        "{} ops x {N} instances, max rel err {max:.1e}",
        worst.len()
    ))
}

fn separable_equivalence() -> Check {
    let mut g = rng(200);
    let (mut worst, mut cases) = (0.0f64, 0);
    for k in [1, 3, 5] {
        for _ in 0..10 {
            let stride = g.random_range(1..=3);
            let pad = g.random_range(0..k);
            let (c_in, c_out) = (g.random_range(1..=3), g.random_range(1..=3));
            let cfg = ConvConfig::square(k, stride, pad, c_in, c_out);
            let q = randn(&mut g, &[1, c_in, 1, k]);
            let p = randn(&mut g, &[c_out, 1, k, 1]);
            let bias = randn(&mut g, &[c_out]);
            let mut w = vec![0.0; c_out * c_in * k * k];
            for o in 0..c_out {
                for c in 0..c_in {
                    for i in 0..k {
                        for j in 0..k {
                            w[((o * c_in + c) * k + i) * k + j] =
                                p.data()[o * k + i] * q.data()[c * k + j];
                        }
                    }
                }
            }
            let w = ok(Tensor::new([c_out, c_in, k, k], w))?;
            let f = ok(FactorizedFilter::new(q, p, Some(bias.clone()), cfg))?;
            let (ih, iw) = (g.random_range(k.max(3)..=9), g.random_range(k.max(3)..=9));
            let x = randn(&mut g, &[2, c_in, ih, iw]);
            let y = ok(sfconv_forward(&x, &f))?;
            let full = ok(nn::conv2d_forward(&x, &w, Some(&bias), &cfg))?;
            let oracle = naive_conv(&x, &w, Some(&bias), &cfg);
            ensure!(
                y.shape() == full.shape(),
                "shape mismatch for k={k} s={stride} p={pad}"
            );
            worst = worst
                .max(max_abs_diff(y.data(), full.data()))
                .max(max_abs_diff(y.data(), oracle.data()));
            cases += 1;
        }
    }
    ensure!(worst <= 1e-10, "max difference {worst:.2e}");
    Ok(format!("{cases} cases, max diff {worst:.1e}"))
}

fn kl_bounds() -> Check {
    for len in 1..=16 {
        let u = kl_to_uniform(&ok(normalize_spectrum(&vec![1.3; len]))?);
        ensure!(
            u.abs() < 1e-15,
            "uniform spectrum of length {len} gives {u}"
        );
        let mut one_hot = vec![0.0; len];
        one_hot[0] = 2.0;
        let kl = kl_to_uniform(&ok(normalize_spectrum(&one_hot))?);
        let ln_l = (len as f64).ln();
        ensure!(
            kl <= ln_l + 1e-12 && (kl - ln_l).abs() < 1e-9,
            "one-hot L={len}: {kl} vs ln L {ln_l}"
        );
    }
    let mut g = rng(302);
    let mut worst_scale = 0.0f64;
    for _ in 0..200 {
        let len = g.random_range(1..20);
        let sigma: Vec<f64> = (0..len).map(|_| g.random_range(0.0..5.0)).collect();
        let kl = kl_to_uniform(&ok(normalize_spectrum(&sigma))?);
        ensure!(
            kl >= 0.0 && kl <= (len as f64).ln() + 1e-12,
            "KL {kl} outside [0, ln {len}]"
        );
        let (m, n) = (g.random_range(1..=30), g.random_range(1..=10));
        let a = randn(&mut g, &[m, n]);
        let base = ok(matrix_kl(&a))?;
        for c in [1e-3, -2.0, 1e4] {
            worst_scale = worst_scale.max((ok(matrix_kl(&a.scale(c)))? - base).abs());
        }
    }
    ensure!(
        worst_scale <= 1e-10,
        "scale invariance violated by {worst_scale:.2e}"
    );
    Ok(format!("scale invariance within {worst_scale:.1e}"))
}

fn mean_layer_kl(net: &Network) -> Result<f64, String> {
    let layers = net.factorized_layers();
    let n = layers.len() as f64;
    Ok(ok(network_kl(layers))?.0 / n)
}

fn weight_variance(net: &Network) -> Result<f64, String> {
    Ok(ok(weight_histogram(net, 64, false))?.variance)
}

struct Effect {
    metric: f64,
    kl_init: f64,
    kl_reg: f64,
    kl_plain: f64,
    var_reg: f64,
    var_plain: f64,
}

fn regularization_effect(base: &TrainConfig, lambda: f64) -> Result<Effect, String> {
    let kl_init = mean_layer_kl(ok(Trainer::new(base.clone()))?.network())?;
    let mut reg = base.clone();
    reg.optim.lambda = Some(lambda);
    let mut plain = base.clone();
    plain.optim.lambda = Some(0.0);
    let reg = ok(train(reg, None))?;
    let plain = ok(train(plain, None))?;
    Ok(Effect {
        metric: reg.metrics.last().ok_or("no epochs ran")?.train_metric,
        kl_init,
        kl_reg: mean_layer_kl(reg.trainer.network())?,
        kl_plain: mean_layer_kl(plain.trainer.network())?,
        var_reg: weight_variance(reg.trainer.network())?,
        var_plain: weight_variance(plain.trainer.network())?,
    })
}

fn classification_effect() -> Check {
    let mut c = TrainConfig::for_task(TaskKind::Classification, 7);
    c.optim.epochs = Some(30);
    c.model.width = 8;
    c.data.n_train = 150;
    c.data.n_eval = 30;
    let e = regularization_effect(&c, 5.0)?;
    let detail = format!(
        "train acc {:.3}, KL/layer init {:.4} -> {:.4} (lambda 0: {:.4}), weight var {:.5} vs {:.5}",
        e.metric, e.kl_init, e.kl_reg, e.kl_plain, e.var_reg, e.var_plain
    );
    ensure!(e.metric >= 0.95, "train accuracy below 0.95: {detail}");
    ensure!(
        e.kl_reg < e.kl_init && e.kl_reg < e.kl_plain,
        "spectrum not flattened: {detail}"
    );
    ensure!(
        e.var_reg >= e.var_plain,
        "weight variance not larger: {detail}"
    );
    Ok(detail)
}

fn segmentation_effect() -> Check {
    let mut c = TrainConfig::for_task(TaskKind::Segmentation, 7);
    c.optim.epochs = Some(20);
    c.model.width = 8;
    c.data.n_train = 64;
    c.data.n_eval = 16;
    let e = regularization_effect(&c, 10.0)?;
    let detail = format!(
        "train dice {:.3}, KL/layer init {:.4} -> {:.4} (lambda 0: {:.4}), weight var {:.5} vs {:.5}",
        e.metric, e.kl_init, e.kl_reg, e.kl_plain, e.var_reg, e.var_plain
    );
    ensure!(e.metric >= 0.80, "train Dice below 0.80: {detail}");
    ensure!(
        e.kl_reg < e.kl_init && e.kl_reg < e.kl_plain,
        "spectrum not flattened: {detail}"
    );
    ensure!(
        e.var_reg >= e.var_plain,
        "weight variance not larger: {detail}"
    );
    Ok(detail)
}

fn determinism() -> Check {
    let dir = ok(tempfile::tempdir())?;
    for kind in [TaskKind::Classification, TaskKind::Segmentation] {
        let mut c = TrainConfig::for_task(kind, 21);
        c.optim.epochs = Some(4);
        c.model.width = 4;
        c.data.n_train = if kind == TaskKind::Classification {
            64
        } else {
            32
        };
        c.data.n_eval = 8;
        c.output.checkpoint_every = 2;
        let (a, b) = (
            dir.path().join(format!("{kind:?}-a")),
            dir.path().join(format!("{kind:?}-b")),
        );
        let whole = ok(train(c.clone(), Some(&a)))?;
        ok(train(c.clone(), Some(&b)))?;
        for file in [METRICS_FILE, CHECKPOINT_FILE] {
            let x = ok(std::fs::read(a.join(file)))?;
            ensure!(
                x == ok(std::fs::read(b.join(file)))?,
                "{kind:?}: {file} differs between runs"
            );
        }

        let mut first = ok(Trainer::new(c))?;
        first.run_epoch().map_err(|e| e.to_string())?;
        first.run_epoch().map_err(|e| e.to_string())?;
        let bytes = first.checkpoint().to_bytes();
        let mut resumed = ok(Trainer::from_checkpoint(&ok(Checkpoint::from_bytes(
            &bytes,
        ))?))?;
        let mut tail = Vec::new();
        while !resumed.is_finished() {
            tail.extend(ok(resumed.run_epoch())?.1);
        }
        let split = whole.steps.len() - tail.len();
        ensure!(
            whole.steps[split..] == tail[..],
            "{kind:?}: resumed loss sequence differs"
        );
        ensure!(
            resumed.checkpoint().to_bytes() == ok(std::fs::read(a.join(CHECKPOINT_FILE)))?,
            "{kind:?}: resumed final checkpoint differs"
        );
    }
    Ok("metrics and checkpoints byte-identical; resume matches".into())
}

fn statistics_oracles() -> Check {
    let mut g = rng(400);
    let exp = Exp::new(1.0).unwrap();
    let xs: Vec<f64> = (0..1_000_000).map(|_| exp.sample(&mut g)).collect();
    let s = ok(skewness(&xs))?;
    let xs: Vec<f64> = (0..1_000_000)
        .map(|_| StandardNormal.sample(&mut g))
        .collect();
    let k = ok(kurtosis(&xs))?;
    let half: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut g)).collect();
    let mirrored: Vec<f64> = half.iter().flat_map(|&d| [3.0 + d, 3.0 - d]).collect();
    let m = ok(skewness(&mirrored))?;
    ensure!((s - 2.0).abs() <= 0.05, "exponential skewness {s}");
    ensure!(k.abs() <= 0.1, "normal excess kurtosis {k}");
    ensure!(m.abs() <= 1e-12, "symmetric sample skewness {m:e}");
    Ok(format!("skew {s:.4}, kurt {k:.4}, symmetric {m:.1e}"))
}

fn flops_monotonicity() -> Check {
    let (mut configs, mut compared) = (0, 0);
    for kind in [TaskKind::Classification, TaskKind::Segmentation] {
        for width in [4, 8, 16, 32] {
            for rank in [1, 2, 4, 10, 20] {
                for size in [16, 32, 48] {
                    let mut cfg = TrainConfig::for_task(kind, 0);
                    cfg.model.width = width;
                    cfg.model.rank = rank;
                    cfg.model.input_size = Some(size);
                    let shape = cfg.input_shape();
                    let sf = ok(cfg.build_network())?;
                    cfg.model.conv = ConvKind::Full;
                    let full = ok(cfg.build_network())?;
                    let (ls, lf) = (
                        ok(layer_flops(&sf, &shape))?,
                        ok(layer_flops(&full, &shape))?,
                    );
                    ensure!(
                        ok(count_flops(&sf, &shape))? == ls.iter().sum::<u64>(),
                        "count_flops not additive"
                    );
                    ensure!(
                        ok(count_flops(&full, &shape))? == lf.iter().sum::<u64>(),
                        "count_flops not additive"
                    );
                    let shapes = ok(sf.infer_shapes(&shape))?;
                    let mut all_below = true;
                    for (i, node) in sf.nodes().iter().enumerate() {
                        let Layer::SfConv(f) = &node.layer else {
                            ensure!(ls[i] == lf[i], "non-factorized node {i} differs");
                            continue;
                        };
                        let input = &shapes[node.inputs[0]];
                        let threshold = ok(sfconv_rank_threshold(f.config(), input[2], input[3]))?;
                        if (rank as f64) < threshold {
                            ensure!(
                                ls[i] < lf[i],
                                "{kind:?} width {width} rank {rank} node {i}: {} >= {}",
                                ls[i],
                                lf[i]
                            );
                            compared += 1;
                        } else {
                            all_below = false;
                        }
                    }
                    if all_below {
                        ensure!(
                            ls.iter().sum::<u64>() < lf.iter().sum::<u64>(),
                            "network total not smaller"
                        );
                    }
                    configs += 1;
                }
            }
        }
    }
    Ok(format!(
        "{configs} backbone configs, {compared} layers below threshold"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, CheckFn); 11] = [
        ("parameter-reduction arithmetic", parameter_reduction),
        ("SVD oracle", svd_oracle),
        ("KL-gradient correctness", kl_gradient_fd),
        ("conv-op gradients", conv_op_gradients),
        ("separable equivalence", separable_equivalence),
        ("KL bounds and extremes", kl_bounds),
        (
            "classification regularization effect",
            classification_effect,
        ),
        ("segmentation smoke", segmentation_effect),
        ("determinism", determinism),
        ("statistics oracles", statistics_oracles),
        ("FLOPs monotonicity", flops_monotonicity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (status, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{status} {:>2} {name}: {detail} [{:.1}s]",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
