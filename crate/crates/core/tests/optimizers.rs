use lbsac_core::optimizers::{
    lamb_trust_ratio, lars_trust_ratio, scale_learning_rate, Optimizer, OptimizerConfig,
    OptimizerKind,
};
use proptest::prelude::*;

fn step(opt: &mut Optimizer<f64>, params: &mut [Vec<f64>], grads: &[Vec<f64>]) {
    let mut views: Vec<&mut [f64]> = params.iter_mut().map(|p| p.as_mut_slice()).collect();
    let grads: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    opt.step(&mut views, &grads).unwrap();
}

#[test]
fn adamw_matches_scalar_recursion() {
    let (lr, b1, b2, eps, wd) = (0.05, 0.9, 0.999, 1e-8, 0.01);
    let mut cfg = OptimizerConfig::adamw(lr);
    cfg.weight_decay = wd;
    let mut opt = Optimizer::<f64>::new(cfg, [1]);
    let mut params = vec![vec![0.7]];

    let (mut p, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
    for t in 1..=10 {
        let g = (t as f64).sin() + 0.3;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p);
        step(&mut opt, &mut params, &[vec![g]]);
        assert!((params[0][0] - p).abs() < 1e-7, "step {t}: {} vs {p}", params[0][0]);
    }
    assert_eq!(opt.step_count(), 10);
}

#[test]
fn adamw_step_size_approaches_lr() {
    let lr = 1e-3;
    let mut opt = Optimizer::<f64>::new(OptimizerConfig::adamw(lr), [1]);
    let mut params = vec![vec![0.0]];
    let mut previous = 0.0;
    for t in 1..=1000 {
        step(&mut opt, &mut params, &[vec![2.5]]);
        let size = (params[0][0] - previous).abs();
        previous = params[0][0];
        if t == 1000 {
            assert!((size - lr).abs() < 0.01 * lr, "step size {size}");
        }
    }
}

#[test]
fn steps_are_deterministic() {
    for kind in [OptimizerKind::AdamW, OptimizerKind::Lars, OptimizerKind::Lamb] {
        let run = || {
            let mut cfg = OptimizerConfig::new(kind, 0.01);
            cfg.weight_decay = 0.01;
            let mut opt = Optimizer::<f64>::new(cfg, [3, 2]);
            let mut params = vec![vec![0.1, -0.2, 0.3], vec![1.0, -1.0]];
            for t in 0..20 {
                let t = t as f64;
                let grads = vec![vec![t.sin(), t.cos(), 0.5], vec![-t.sin(), 0.2]];
                step(&mut opt, &mut params, &grads);
            }
            (params, opt)
        };
        let (a, oa) = run();
        let (b, ob) = run();
        assert_eq!(a, b, "{kind:?}");
        assert_eq!(oa.first_moments(), ob.first_moments());
    }
}

/// With ε and weight decay zeroed, a LAMB step on `(k·p, k·g)` is exactly
/// `k` times the step on `(p, g)`: the Adam direction is scale free and the
/// trust ratio carries the factor `‖p‖`.
#[test]
fn lamb_step_is_scale_equivariant() {
    let p = vec![0.3, -0.8, 0.5, 0.1];
    let g = vec![0.2, 0.4, -0.1, 0.7];
    let moved = |k: f64| {
        let mut cfg = OptimizerConfig::new(OptimizerKind::Lamb, 0.01);
        cfg.eps = 0.0;
        let mut opt = Optimizer::<f64>::new(cfg, [4]);
        let mut params = vec![p.iter().map(|x| x * k).collect::<Vec<_>>()];
        let grads = vec![g.iter().map(|x| x * k).collect::<Vec<_>>()];
        step(&mut opt, &mut params, &grads);
        params[0].iter().zip(&p).map(|(a, b)| a - b * k).collect::<Vec<_>>()
    };
    let base = moved(1.0);
    for k in [2.0, 0.25, 17.0] {
        for (s, b) in moved(k).iter().zip(&base) {
            assert!((s - k * b).abs() < 1e-6 * (k * b).abs().max(1e-12), "k={k}");
        }
    }
}

proptest! {
    #[test]
    fn lr_scaling_is_multiplicative(base in 1usize..512, batch in 1usize..4096, k in 1usize..16) {
        let lr = scale_learning_rate(3e-4, base, batch).unwrap();
        let scaled = scale_learning_rate(3e-4, base, batch * k * k).unwrap();
        prop_assert!((scaled - k as f64 * lr).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn lars_ratio_is_scale_invariant(
        pn in 1e-3f64..1e3, gn in 1e-3f64..1e3, wd in 0.0f64..0.1, k in 1e-2f64..1e2,
    ) {
        let r = lars_trust_ratio(pn, gn, wd, 0.0, 1.0);
        let rk = lars_trust_ratio(k * pn, k * gn, wd, 0.0, 1.0);
        prop_assert!((r - rk).abs() <= 1e-6 * r.max(1.0));
    }

    #[test]
    fn lamb_ratio_is_scale_invariant(pn in 1e-3f64..1e3, un in 1e-3f64..1e3, k in 1e-2f64..1e2) {
        let r = lamb_trust_ratio(pn, un);
        let rk = lamb_trust_ratio(k * pn, k * un);
        prop_assert!((r - rk).abs() <= 1e-6 * r.max(1.0));
    }

    #[test]
    fn lars_layer_ratio_survives_rescaling(
        p in prop::collection::vec(-2.0f64..2.0, 4),
        g in prop::collection::vec(-2.0f64..2.0, 4),
        k in 0.1f64..10.0,
    ) {
        // Zero momentum history: the first LARS step is lr·ratio·(g + wd·p),
        // so the ratio is recoverable from the displacement.
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm(&p) > 1e-3 && norm(&g) > 1e-3);
        let ratio = |k: f64| {
            let mut cfg = OptimizerConfig::new(OptimizerKind::Lars, 0.1);
            cfg.eps = 0.0;
            let mut opt = Optimizer::<f64>::new(cfg, [4]);
            let mut params = vec![p.iter().map(|x| x * k).collect::<Vec<_>>()];
            let grads = vec![g.iter().map(|x| x * k).collect::<Vec<_>>()];
            step(&mut opt, &mut params, &grads);
            let moved: Vec<f64> = params[0].iter().zip(&p).map(|(a, b)| b * k - a).collect();
            norm(&moved) / (0.1 * k * norm(&g))
        };
        let (r1, rk) = (ratio(1.0), ratio(k));
        prop_assert!((r1 - rk).abs() <= 1e-6 * r1.max(1.0), "{} vs {}", r1, rk);
    }
}
