use wsod_core::harness::{evaluate, gen_dataset, train, RunConfig};

#[test]
fn default_constants() {
    let c = RunConfig::default();
    assert_eq!(c.mining.alpha, 0.9);
    assert_eq!(c.mining.tau_nms, 0.1);
    assert_eq!(c.mining.tau_sur, 0.5);
    assert_eq!(c.icbc.tau_l, 0.1);
    assert_eq!(c.icbc.tau_h, 0.5);
    assert_eq!(c.icbc.theta, 0.5);
    assert_eq!(c.icbc.grid_n, 2);
    assert_eq!(c.icbc.q, 1.5);
    assert_eq!(c.loss.gamma, 0.1);
    assert_eq!(c.model.stages, 3);
    assert_eq!(c.scc.lambda, 0.01);
    assert_eq!(c.scc.tau_midn, 0.001);
    assert_eq!(c.mct.t_n, 1);
    assert_eq!(c.mct.a, 0.4);
    assert_eq!(c.train.lr, 1e-3);
    assert_eq!(c.train.momentum, 0.9);
    assert_eq!(c.train.weight_decay, 5e-4);
    assert_eq!(c.train.batch, 4);
    assert_eq!(
        (c.data.n_train, c.data.n_test, c.data.n_classes),
        (200, 100, 5)
    );
    assert_eq!(c.feature_dim(), 18);
    assert!(c.features.s_part > c.features.s_full);
}

#[test]
fn class_histogram_is_near_uniform() {
    let cfg = RunConfig::default();
    let data = gen_dataset(&cfg, cfg.seed);
    let mut hist = [0usize; 5];
    for s in &data.train {
        for (c, &y) in s.scene.labels.iter().enumerate() {
            hist[c] += usize::from(y);
        }
    }
    let mean = hist.iter().sum::<usize>() as f64 / 5.0;
    for h in hist {
        assert!((h as f64 - mean).abs() <= 0.2 * mean, "{hist:?}");
    }
}

#[test]
fn datasets_are_reproducible() {
    let cfg = RunConfig::default();
    let a = gen_dataset(&cfg, 3);
    let b = gen_dataset(&cfg, 3);
    for (x, y) in a
        .train
        .iter()
        .chain(&a.test)
        .zip(b.train.iter().chain(&b.test))
    {
        assert_eq!(x.scene, y.scene);
        assert_eq!(x.proposals, y.proposals);
        assert_eq!(x.features, y.features);
    }
    let c = gen_dataset(&cfg, 4);
    assert_ne!(a.train[0].scene, c.train[0].scene);
}

/// Logged losses are per-batch, so consecutive values are noisy; the check
/// is that the first 100 logged totals fall below the starting total.
#[test]
fn loss_falls_over_first_hundred_steps() {
    let mut cfg = RunConfig::default();
    cfg.train.iterations = 101;
    let data = gen_dataset(&cfg, cfg.seed);
    let log = train(&cfg, &data.train).unwrap().log;
    let start = log[0].total;
    let below = log[1..].iter().filter(|l| l.total < start).count();
    assert!(below >= 90, "{below} of 100 steps below the starting loss");
}

#[test]
fn small_run_end_to_end() {
    let mut cfg = RunConfig::default();
    cfg.data.n_train = 16;
    cfg.data.n_test = 8;
    cfg.train.iterations = 30;
    cfg.train.lr_drop_at = 20;
    let data = gen_dataset(&cfg, 1);
    let a = train(&cfg, &data.train).unwrap();
    let b = train(&cfg, &data.train).unwrap();
    assert_eq!(a.log_text(), b.log_text());
    assert!(a.model.same_parameters(&b.model));
    let ev = evaluate(&a.model, &cfg, &data).unwrap();
    assert_eq!(ev.metrics.per_class_ap.len(), 5);
    assert!((0.0..=1.0).contains(&ev.metrics.map));
    assert!((0.0..=1.0).contains(&ev.metrics.corloc));
    assert_eq!(ev.metrics.config_digest, cfg.digest());
}
