use dualode::metrics::{Metrics, MetricsAccumulator};
use dualode::model::ModelConfig;
use dualode::pipeline::synthetic::{generate_synthetic, Synthetic, SyntheticSpec, WindRegime};
use dualode::train::{evaluate_windows, forecast, prepare, train, Checkpoint, Prepared, TrainConfig, TrainError};

fn data(length: usize, noise: f64) -> Synthetic {
    generate_synthetic(&SyntheticSpec {
        seed: 11,
        n_stations: 9,
        length,
        emission: 3.0,
        emission_spread: 0.5,
        diurnal_amplitude: 0.4,
        beta: vec![-0.06],
        x0_spread: 0.5,
        wind: WindRegime::Gusty {
            speed: 3.0,
            direction: 240.0,
            gust: 1.0,
            jitter_deg: 30.0,
        },
        noise_sigma: noise,
        noise_relative: true,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small(variant: &str, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        patience: 0,
        model: ModelConfig {
            variant: variant.into(),
            latent: 6,
            hidden: 6,
            gnn_layers: 2,
            history: 6,
            horizon: 4,
            train_dt: 3.0,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn prepared(cfg: &TrainConfig, s: &Synthetic) -> Prepared {
    prepare(&cfg.model, cfg.split, s.graph.clone(), &s.panel).unwrap()
}

#[test]
fn one_epoch_on_ten_windows_emits_a_finite_loss() {
    let s = data(39, 0.0);
    let cfg = TrainConfig {
        split: [19.0, 10.0, 10.0],
        ..small("dual", 1)
    };
    let p = prepared(&cfg, &s);
    assert_eq!(p.train.starts(1).len(), 10);
    let out = train(&cfg, &p, |_| {}).unwrap();
    assert_eq!(out.logs.len(), 1);
    let log = &out.logs[0];
    assert!(log.l_total.is_finite() && log.l_pred.is_finite() && log.val_mae.is_finite());
    assert!(log.l_tcl.unwrap().is_finite());
    assert_eq!(log.lr, 0.005);
}

#[test]
fn same_seed_gives_identical_logs_and_parameters() {
    let s = data(100, 0.05);
    let cfg = small("dual", 3);
    let p = prepared(&cfg, &s);
    let a = train(&cfg, &p, |_| {}).unwrap();
    let b = train(&cfg, &p, |_| {}).unwrap();
    let lines = |o: &Vec<_>| serde_json::to_string(o).unwrap();
    assert_eq!(lines(&a.logs), lines(&b.logs));
    assert_eq!(
        serde_json::to_string(&a.checkpoint).unwrap(),
        serde_json::to_string(&b.checkpoint).unwrap()
    );
    let c = train(&TrainConfig { seed: 1, ..cfg }, &p, |_| {}).unwrap();
    assert_ne!(lines(&a.logs), lines(&c.logs));
}

#[test]
fn learning_rate_decays_by_exact_powers_of_ten() {
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    for epoch in 0..20 {
        let k = [10, 15].iter().filter(|&&m| epoch >= m).count() as i32;
        assert_eq!(cfg.lr_at(epoch), 0.005 * 0.1f64.powi(k), "epoch {epoch}");
    }
    let short = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert_eq!(short.lr_at(0), 0.005);
}

fn balanced(length: usize) -> Synthetic {
    generate_synthetic(&SyntheticSpec {
        seed: 4,
        n_stations: 9,
        length,
        beta: (0..9).map(|i| -0.02 + 0.005 * i as f64).collect(),
        x0_spread: 0.7,
        balance: true,
        wind: WindRegime::Gusty {
            speed: 3.0,
            direction: 250.0,
            gust: 1.0,
            jitter_deg: 40.0,
        },
        ..SyntheticSpec::default()
    })
    .unwrap()
}

#[test]
fn training_loss_halves_on_noiseless_data() {
    // The physics branch can represent this set exactly.
    let s = balanced(120);
    let cfg = small("physics", 50);
    let out = train(&cfg, &prepared(&cfg, &s), |_| {}).unwrap();
    assert_eq!(out.logs.len(), 50);
    let (first, last) = (out.logs[0].l_total, out.logs[49].l_total);
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn dual_training_loss_goes_down() {
    let s = balanced(120);
    let cfg = small("dual", 30);
    let out = train(&cfg, &prepared(&cfg, &s), |_| {}).unwrap();
    let (first, last) = (out.logs[0].l_total, out.logs[29].l_total);
    assert!(last < first, "loss {first} -> {last}");
    assert!(out.logs.iter().all(|l| l.l_tcl.is_some()));
}

#[test]
fn trained_model_beats_the_training_mean() {
    let s = data(160, 0.05);
    let cfg = small("dual", 15);
    let p = prepared(&cfg, &s);
    let out = train(&cfg, &p, |_| {}).unwrap();
    let ck = &out.checkpoint;
    let model = ck.build_model().unwrap();
    let store = ck.store().unwrap();
    let stride = cfg.eval_stride();
    let report = evaluate_windows(model.as_ref(), &store, &p.ctx, &cfg.model, &p.test, stride).unwrap();

    // Stats are fitted on the train split only, so this is the training mean.
    let stations = p.stats.pm25_mean();
    let mean = stations.iter().sum::<f64>() / stations.len() as f64;
    let mut acc = MetricsAccumulator::new(cfg.model.horizon);
    for start in p.test.starts(stride) {
        let sample = p.test.sample(start);
        let truth: Vec<Vec<f64>> = sample.target_raw.iter().map(|m| m.data.clone()).collect();
        let base = vec![vec![mean; 9]; truth.len()];
        let sudden = vec![vec![false; 9]; truth.len()];
        acc.add_window(&truth, &base, &sudden);
    }
    let baseline = acc.report().unwrap();
    assert!(
        report.overall.mae < baseline.overall.mae,
        "model {} vs mean {}",
        report.overall.mae,
        baseline.overall.mae
    );
}

#[test]
fn perfect_forecasts_score_zero_and_reports_round_trip() {
    let s = data(100, 0.05);
    let cfg = small("physics", 1);
    let p = prepared(&cfg, &s);
    let mut acc = MetricsAccumulator::new(4);
    for start in p.test.starts(4) {
        let sample = p.test.sample(start);
        let truth: Vec<Vec<f64>> = sample.target_raw.iter().map(|m| m.data.clone()).collect();
        let sudden = vec![vec![true; 9]; truth.len()];
        acc.add_window(&truth, &truth, &sudden);
    }
    let report = acc.report().unwrap();
    let zero = Metrics { mae: 0.0, rmse: 0.0, smape: 0.0 };
    assert_eq!(report.overall, zero);
    assert_eq!(report.sudden_change, Some(zero));
    assert!(report.per_horizon.iter().all(|m| *m == zero));
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<dualode::metrics::EvalReport>(&json).unwrap(), report);
}

#[test]
fn checkpoint_round_trips_through_json() {
    let s = data(100, 0.05);
    let cfg = small("dual", 2);
    let p = prepared(&cfg, &s);
    let ck = train(&cfg, &p, |_| {}).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let sample = p.test.sample(p.test.starts(1)[0]);
    let run = |ck: &Checkpoint| {
        let ctx = ck.context().unwrap();
        forecast(ck.build_model().unwrap().as_ref(), &ck.store().unwrap(), &ctx, &ck.model, &sample).unwrap()
    };
    assert_eq!(run(&ck), run(&back));
}

#[test]
fn diverging_training_aborts_with_the_last_good_checkpoint() {
    let s = data(100, 0.05);
    let cfg = TrainConfig {
        lr: 1e6,
        clip_norm: 0.0,
        ..small("physics", 30)
    };
    match train(&cfg, &prepared(&cfg, &s), |_| {}) {
        Err(TrainError::NonFinite { epoch, .. }) => assert!(epoch >= 1),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e6 should diverge"),
    }
}

#[test]
fn missing_config_file_is_reported_with_its_path() {
    let err = TrainConfig::load(std::path::Path::new("definitely/missing.json")).unwrap_err();
    assert!(err.to_string().contains("definitely/missing.json"), "{err}");
}
