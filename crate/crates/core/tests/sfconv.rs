mod common;

use common::*;
use rand::Rng;
use sfconv::nn::{conv2d_forward, ConvConfig};
use sfconv::sfconv::{init_factorized, sfconv_forward, spectrum_view, FactorizedFilter};
use sfconv::Tensor;

/// `W[o,c,i,j] = Σ_r P[o,r,i]·Q[r,c,j]`, built index by index.
fn outer_weight(q: &Tensor, p: &Tensor, c_in: usize, c_out: usize, k: usize, r: usize) -> Tensor {
    let mut w = vec![0.0; c_out * c_in * k * k];
    for o in 0..c_out {
        for c in 0..c_in {
            for i in 0..k {
                for j in 0..k {
                    let mut s = 0.0;
                    for t in 0..r {
                        s += p.data()[(o * r + t) * k + i] * q.data()[(t * c_in + c) * k + j];
                    }
                    w[((o * c_in + c) * k + i) * k + j] = s;
                }
            }
        }
    }
    Tensor::new([c_out, c_in, k, k], w).unwrap()
}

#[test]
fn rank_one_equals_outer_product_conv() {
    let mut g = rng(200);
    let mut cases = 0;
    for k in [1, 3, 5] {
        for stride in 1..=3 {
            for pad in 0..k {
                for _ in 0..2 {
                    let (c_in, c_out) = (g.random_range(1..=3), g.random_range(1..=3));
                    let (h, w) = (g.random_range(k.max(3)..=9), g.random_range(k.max(3)..=9));
                    let b = g.random_range(1..=2);
                    let cfg = ConvConfig::square(k, stride, pad, c_in, c_out);
                    let q = randn(&mut g, &[1, c_in, 1, k]);
                    let p = randn(&mut g, &[c_out, 1, k, 1]);
                    let bias = randn(&mut g, &[c_out]);
                    let f = FactorizedFilter::new(q.clone(), p.clone(), Some(bias.clone()), cfg)
                        .unwrap();
                    let x = randn(&mut g, &[b, c_in, h, w]);
                    let y = sfconv_forward(&x, &f).unwrap();
                    let weight = outer_weight(&q, &p, c_in, c_out, k, 1);
                    let oracle = naive_conv(&x, &weight, Some(&bias), &cfg);
                    assert_eq!(y.shape(), oracle.shape());
                    let err = max_abs_diff(y.data(), oracle.data());
                    assert!(err <= 1e-10, "k={k} s={stride} p={pad}: {err}");
                    let full = conv2d_forward(&x, &weight, Some(&bias), &cfg).unwrap();
                    assert!(max_abs_diff(y.data(), full.data()) <= 1e-10);
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 2 * 3 * (1 + 3 + 5));
}

#[test]
fn any_rank_matches_emulated_weight() {
    let mut g = rng(201);
    for _ in 0..30 {
        let k = [1, 3, 5][g.random_range(0..3)];
        let cfg = ConvConfig::square(
            k,
            g.random_range(1..=2),
            g.random_range(0..=k / 2),
            g.random_range(1..=4),
            g.random_range(1..=4),
        );
        let r = g.random_range(1..=6);
        let q = randn(&mut g, &[r, cfg.in_channels, 1, k]);
        let p = randn(&mut g, &[cfg.out_channels, r, k, 1]);
        let f = FactorizedFilter::new(q.clone(), p.clone(), None, cfg).unwrap();
        let weight = outer_weight(&q, &p, cfg.in_channels, cfg.out_channels, k, r);
        assert!(max_abs_diff(f.emulated_weight().data(), weight.data()) < 1e-12);
        let x = randn(&mut g, &[2, cfg.in_channels, 7, 8]);
        let y = sfconv_forward(&x, &f).unwrap();
        let oracle = naive_conv(&x, &weight, None, &cfg);
        assert!(max_abs_diff(y.data(), oracle.data()) <= 1e-10);
    }
}

#[test]
fn factor_matrices_multiply_to_the_unfolded_kernel() {
    // P·Q is the (c_out·k)×(c_in·k) unfolding W[(o,i),(c,j)].
    let mut g = rng(202);
    let (c_in, c_out, k, r) = (3, 4, 3, 2);
    let q = randn(&mut g, &[r, c_in, 1, k]);
    let p = randn(&mut g, &[c_out, r, k, 1]);
    let f = FactorizedFilter::new(
        q.clone(),
        p.clone(),
        None,
        ConvConfig::square(k, 1, 1, c_in, c_out),
    )
    .unwrap();
    let view = spectrum_view(&f);
    assert_eq!(view.matrix_p.shape(), &[c_out * k, r]);
    assert_eq!(view.matrix_q.shape(), &[r, c_in * k]);
    let pq = naive_matmul(
        view.matrix_p.data(),
        view.matrix_q.data(),
        c_out * k,
        r,
        c_in * k,
    );
    let w = outer_weight(&q, &p, c_in, c_out, k, r);
    for o in 0..c_out {
        for i in 0..k {
            for c in 0..c_in {
                for j in 0..k {
                    let a = pq[(o * k + i) * (c_in * k) + c * k + j];
                    let b = w.data()[((o * c_in + c) * k + i) * k + j];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn parameter_counts() {
    let f = init_factorized(64, 64, 3, 10, 0).unwrap();
    assert_eq!(f.param_count(), 3_904);
    assert!(f.is_compressive());
    let g = init_factorized(2, 2, 3, 10, 0).unwrap();
    assert_eq!(g.param_count(), 3 * 10 * 4 + 2);
    assert!(!g.is_compressive());
}

#[test]
fn init_statistics() {
    // q ~ N(0, 2/(c_in·k)), p ~ N(0, 2/(r·k)).
    let f = init_factorized(64, 64, 3, 10, 9).unwrap();
    let var = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64;
    let (vq, vp) = (var(&f.q_filters), var(&f.p_filters));
    assert!((vq / (2.0 / 192.0) - 1.0).abs() < 0.1, "{vq}");
    assert!((vp / (2.0 / 30.0) - 1.0).abs() < 0.1, "{vp}");
    assert!(f.bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
    assert_eq!(init_factorized(64, 64, 3, 10, 9).unwrap(), f);
}

#[test]
fn shape_errors() {
    let cfg = ConvConfig::square(3, 1, 1, 2, 2);
    let q = Tensor::zeros([2, 2, 1, 3]).unwrap();
    let p = Tensor::zeros([2, 3, 3, 1]).unwrap();
    assert!(FactorizedFilter::new(q.clone(), p, None, cfg).is_err());
    let p = Tensor::zeros([2, 2, 3, 1]).unwrap();
    let f = FactorizedFilter::new(q, p, None, cfg).unwrap();
    assert!(sfconv_forward(&Tensor::zeros([1, 3, 5, 5]).unwrap(), &f).is_err());
}
