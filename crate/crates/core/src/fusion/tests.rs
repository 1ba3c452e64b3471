use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{check, random_matrix};

fn sigmoid_oracle(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn latents(rng: &mut ChaCha8Rng, tau: usize, n: usize, d: usize) -> (Vec<Matrix>, Vec<Matrix>) {
    let zp = (0..tau).map(|_| random_matrix(n, d, 1.0, rng)).collect();
    let zd = (0..tau).map(|_| random_matrix(n, d, 1.0, rng)).collect();
    (zp, zd)
}

fn on_tape<'t>(tape: &'t Tape, ms: &[Matrix]) -> Vec<Var<'t>> {
    ms.iter().map(|m| tape.constant(m.clone())).collect()
}

/// Loop-by-loop evaluation of the contrastive terms with 1-based indices.
fn tcl_oracle(zp: &[Matrix], zd: &[Matrix], cfg: &DecayTclConfig) -> Vec<f64> {
    let tau = cfg.tau;
    let bar: Vec<&Matrix> = zp.iter().chain(zd).chain(zp).collect();
    let sim = |a: usize, b: usize| {
        let (x, y) = (bar[a - 1], bar[b - 1]);
        let n = x.rows;
        (0..n)
            .map(|i| {
                let (u, v) = (x.row(i), y.row(i));
                let dot: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
                let nu = u.iter().map(|p| p * p).sum::<f64>().sqrt();
                let nv = v.iter().map(|p| p * p).sum::<f64>().sqrt();
                dot / (nu * nv)
            })
            .sum::<f64>()
            / n as f64
    };
    let p = |t: usize, tp: usize| {
        let excluded = match cfg.denominator {
            TclDenominator::ExcludePartner => tp,
            TclDenominator::Standard => t,
        };
        let den: f64 = (1..=2 * tau).filter(|&i| i != excluded).map(|i| sim(t, i).exp()).sum();
        sim(t, tp).exp() / den
    };
    (1..=2 * tau)
        .map(|t| {
            let mut l = -p(t, t + tau).ln();
            for j in (1..=2 * tau).filter(|&j| j != t && j != t + tau) {
                let off = t.abs_diff(j);
                let w = if off < tau {
                    2.0 * sigmoid_oracle(-cfg.lambda1 * off as f64)
                } else {
                    2.0 * sigmoid_oracle(-cfg.lambda2 * (off % tau) as f64)
                };
                l -= w * p(t, j).ln();
            }
            l
        })
        .collect()
}

#[test]
fn decay_weight_values() {
    let cfg = DecayTclConfig::new(24);
    let w1 = decay_weight(5, 6, &cfg).unwrap();
    assert!((w1 - 2.0 / (1.0 + 1f64.exp())).abs() < 1e-12);
    assert!((w1 - 0.53788).abs() < 1e-5);
    let w2 = decay_weight(1, 26, &cfg).unwrap();
    assert!((w2 - 2.0 / (1.0 + 0.8f64.exp())).abs() < 1e-12);
    assert!((w2 - 0.62005).abs() < 1e-5);
    assert!(matches!(decay_weight(3, 3, &cfg), Err(FusionError::UndefinedPair(3))));
    // The cross-branch partner at exactly tau apart gets the limiting weight 1.
    assert_eq!(decay_weight(30, 6, &cfg).unwrap(), 1.0);
}

#[test]
fn decay_weight_decreases_with_offset() {
    let cfg = DecayTclConfig::new(24);
    for d in 1..23 {
        assert!(decay_weight(1, 1 + d, &cfg).unwrap() > decay_weight(1, 2 + d, &cfg).unwrap());
        assert!(decay_weight(1, 25 + d, &cfg).unwrap() > decay_weight(1, 26 + d, &cfg).unwrap());
    }
    assert!(DecayTclConfig { lambda1: 0.0, ..DecayTclConfig::new(2) }.validate().is_err());
}

#[test]
fn identical_branches_give_unit_positive_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (zp, _) = latents(&mut rng, 4, 5, 3);
    let tape = Tape::new();
    let s = similarity_matrix(&on_tape(&tape, &zp), &on_tape(&tape, &zp)).unwrap().value();
    for t in 0..8 {
        assert!((s.get(t, t + 4) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn contrastive_terms_match_the_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for tau in [1, 2, 3, 5] {
        for denominator in [TclDenominator::ExcludePartner, TclDenominator::Standard] {
            let cfg = DecayTclConfig {
                denominator,
                ..DecayTclConfig::new(tau)
            };
            let (zp, zd) = latents(&mut rng, tau, 4, 3);
            let tape = Tape::new();
            let terms = tcl_terms(&on_tape(&tape, &zp), &on_tape(&tape, &zd), &cfg).unwrap().value();
            let oracle = tcl_oracle(&zp, &zd, &cfg);
            for (a, b) in terms.data.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "tau {tau}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn single_step_horizon_reduces_to_the_positive_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (zp, zd) = latents(&mut rng, 1, 3, 4);
    let cfg = DecayTclConfig::new(1);
    let tape = Tape::new();
    let (p, d) = (on_tape(&tape, &zp), on_tape(&tape, &zd));
    let l1 = tcl_terms(&p, &d, &cfg).unwrap().value().data[0];
    let s = similarity_matrix(&p, &d).unwrap().value();
    // p(1, 2) = exp(S12) / exp(S11): the denominator keeps only i = 1.
    let expected = -(s.get(0, 1).exp() / s.get(0, 0).exp()).ln();
    assert_eq!(l1, expected);
}

#[test]
fn loss_is_invariant_to_positive_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (zp, zd) = latents(&mut rng, 3, 4, 3);
        let c = rng.random_range(0.05..20.0);
        let scale = |v: &[Matrix]| v.iter().map(|m| m.scale(c)).collect::<Vec<_>>();
        let cfg = DecayTclConfig::new(3);
        let tape = Tape::new();
        let a = tcl_loss(&on_tape(&tape, &zp), &on_tape(&tape, &zd), &cfg).unwrap().scalar();
        let b = tcl_loss(&on_tape(&tape, &scale(&zp)), &on_tape(&tape, &scale(&zd)), &cfg)
            .unwrap()
            .scalar();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!(a >= 0.0);
    }
}

#[test]
fn gradient_descent_aligns_data_latents_with_physics_latents() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tau = 2;
    let (n, d) = (3, 16);
    let unit = |m: Matrix| {
        let mut m = m;
        for i in 0..m.rows {
            let norm = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..m.cols {
                m.set(i, j, m.get(i, j) / norm);
            }
        }
        m
    };
    let zp: Vec<Matrix> = (0..tau).map(|_| unit(random_matrix(n, d, 1.0, &mut rng))).collect();
    let mut store = ParamStore::new();
    for t in 0..tau {
        store.insert(format!("zd{t}"), random_matrix(n, d, 1.0, &mut rng));
    }
    let cfg = DecayTclConfig::new(tau);
    for _ in 0..20000 {
        let tape = Tape::new();
        let p = on_tape(&tape, &zp);
        let zd: Vec<_> = (0..tau).map(|t| tape.param(&store, &format!("zd{t}")).unwrap()).collect();
        let loss = tcl_loss(&p, &zd, &cfg).unwrap();
        let grads = tape.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate(&grads);
        for (_, t) in store.iter_mut() {
            let step = t.grad.scale(-0.5);
            t.value.add_assign(&step);
        }
    }
    let cos = |u: &[f64], v: &[f64]| {
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            / (u.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt())
    };
    for t in 0..tau {
        let z = store.value(&format!("zd{t}")).unwrap();
        for i in 0..n {
            let positive = cos(z.row(i), zp[t].row(i));
            // The weighted soft-positive terms keep the optimum slightly off
            // perfect alignment.
            assert!(positive > 0.97, "step {t} station {i}: {positive}");
            for (s, other) in zp.iter().enumerate().filter(|(s, _)| *s != t) {
                let negative = cos(z.row(i), other.row(i));
                assert!(positive > negative + 0.1, "step {t} vs {s} station {i}: {positive} {negative}");
            }
        }
    }
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut a = vec![false; n * n];
    for &(i, j) in edges {
        a[i * n + j] = true;
        a[j * n + i] = true;
    }
    a
}

fn stack(rng: &mut ChaCha8Rng, d: usize, layers: usize) -> (FusionStack, ParamStore) {
    let f = FusionStack::new("fusion", d, layers).unwrap();
    let mut store = ParamStore::new();
    f.init(&mut store, rng);
    (f, store)
}

#[test]
fn zero_layers_is_a_config_error() {
    assert!(matches!(FusionStack::new("f", 4, 0), Err(FusionError::Config(_))));
}

#[test]
fn edgeless_fusion_is_a_per_station_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (f, store) = stack(&mut rng, 2, 3);
    let a = normalized_adjacency(4, &adjacency(4, &[])).unwrap();
    assert_eq!(a, Matrix::identity(4));
    let zp = random_matrix(4, 2, 1.0, &mut rng);
    let zd = random_matrix(4, 2, 1.0, &mut rng);
    let tape = Tape::new();
    let out = f
        .fuse(&tape, &store, tape.constant(zp.clone()), tape.constant(zd.clone()), tape.constant(a))
        .unwrap()
        .value();
    for i in 0..4 {
        let mut h: Vec<f64> = zp.row(i).iter().chain(zd.row(i)).copied().collect();
        for l in &f.layers {
            let w = store.value(&l.weight_name()).unwrap();
            let b = store.value(&l.bias_name()).unwrap();
            h = (0..4)
                .map(|c| (b.get(0, c) + (0..4).map(|r| h[r] * w.get(r, c)).sum::<f64>()).tanh())
                .collect();
        }
        for (c, v) in h.iter().enumerate() {
            assert!((out.get(i, c) - v).abs() < 1e-14);
        }
    }
}

#[test]
fn fusion_respects_components_and_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (f, store) = stack(&mut rng, 3, 3);
    let n = 5;
    let edges = [(0, 1), (1, 2), (3, 4)];
    let a = normalized_adjacency(n, &adjacency(n, &edges)).unwrap();
    let zp = random_matrix(n, 3, 1.0, &mut rng);
    let zd = random_matrix(n, 3, 1.0, &mut rng);
    let run = |a: &Matrix, zp: &Matrix, zd: &Matrix| {
        let tape = Tape::new();
        f.fuse(&tape, &store, tape.constant(zp.clone()), tape.constant(zd.clone()), tape.constant(a.clone()))
            .unwrap()
            .value()
    };
    let base = run(&a, &zp, &zd);
    let mut zp2 = zp.clone();
    zp2.set(0, 0, zp2.get(0, 0) + 1.0);
    let moved = run(&a, &zp2, &zd);
    assert_eq!(base.row(3), moved.row(3));
    assert_eq!(base.row(4), moved.row(4));
    assert_ne!(base.row(2), moved.row(2));

    let perm = [3, 0, 4, 2, 1];
    let permute_rows = |m: &Matrix| Matrix::from_rows(&perm.iter().map(|&p| m.row(p).to_vec()).collect::<Vec<_>>());
    let pedges: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(i, j)| {
            let pi = perm.iter().position(|&p| p == i).unwrap();
            let pj = perm.iter().position(|&p| p == j).unwrap();
            (pi, pj)
        })
        .collect();
    let pa = normalized_adjacency(n, &adjacency(n, &pedges)).unwrap();
    let permuted = run(&pa, &permute_rows(&zp), &permute_rows(&zd));
    let expected = permute_rows(&base);
    assert!(permuted.zip_map(&expected, |x, y| x - y).max_abs() < 1e-14);
}

#[test]
fn zero_decoder_predicts_the_training_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (f, mut store) = stack(&mut rng, 2, 1);
    for name in [f.decoder.weight_name(), f.decoder.bias_name()] {
        let shape = store.value(&name).unwrap().shape();
        store.set_value(&name, Matrix::zeros(shape.0, shape.1)).unwrap();
    }
    let scale = StationScale {
        mean: vec![40.0, 55.0, 70.0],
        std: vec![10.0, 12.0, 20.0],
    };
    let tape = Tape::new();
    let h = tape.constant(random_matrix(3, 4, 1.0, &mut rng));
    let z = f.decode(&tape, &store, h).unwrap();
    assert_eq!(z.shape(), (3, 1));
    assert_eq!(scale.denormalize(z).unwrap().value().data, scale.mean);
    let missing = StationScale { mean: vec![], std: vec![] };
    assert!(matches!(missing.denormalize(z), Err(FusionError::MissingStats(3))));
}

#[test]
fn normalize_and_denormalize_are_inverse() {
    let scale = StationScale {
        mean: vec![40.0, 55.0],
        std: vec![10.0, 0.5],
    };
    let tape = Tape::new();
    let x = tape.constant(Matrix::column(vec![12.5, 99.0]));
    let back = scale.denormalize(scale.normalize(x).unwrap()).unwrap().value();
    assert!(back.zip_map(&x.value(), |a, b| a - b).max_abs() < 1e-12);
}

#[test]
fn prediction_loss_by_hand() {
    let tape = Tape::new();
    let x = vec![Matrix::column(vec![10.0, 20.0])];
    let xhat = vec![tape.constant(Matrix::column(vec![12.0, 16.0]))];
    assert_eq!(prediction_loss(&x, &xhat, PredNorm::L1).unwrap().scalar(), 3.0);
    assert_eq!(prediction_loss(&x, &xhat, PredNorm::L2).unwrap().scalar(), 10.0);
    let nan = vec![Matrix::column(vec![f64::NAN, 1.0])];
    assert!(matches!(
        prediction_loss(&nan, &xhat, PredNorm::L1),
        Err(FusionError::NonFiniteTarget { step: 0, station: 0 })
    ));
}

#[test]
fn total_loss_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (zp, _) = latents(&mut rng, 3, 4, 2);
    let x: Vec<Matrix> = (0..3).map(|_| random_matrix(4, 1, 5.0, &mut rng)).collect();
    let cfg = DecayTclConfig::new(3);
    let tape = Tape::new();
    let p = on_tape(&tape, &zp);
    let perfect = on_tape(&tape, &x);
    let parts = total_loss(&x, &perfect, Some((&p, &p)), 0.1, &cfg, PredNorm::L1).unwrap();
    assert_eq!(parts.pred.scalar(), 0.0);
    assert!((parts.total.scalar() - 0.1 * parts.tcl.unwrap().scalar()).abs() < 1e-15);
    assert!(parts.total.scalar() >= 0.0);

    let noisy: Vec<_> = x.iter().map(|m| tape.constant(m.map(|v| v + 1.0))).collect();
    let parts = total_loss(&x, &noisy, Some((&p, &p)), 0.0, &cfg, PredNorm::L1).unwrap();
    assert_eq!(parts.total.scalar(), parts.pred.scalar());
}

#[test]
fn fusion_and_loss_gradients_match_finite_differences() {
    let n = 4;
    let a = normalized_adjacency(n, &adjacency(n, &[(0, 1), (1, 2), (2, 3)])).unwrap();
    let scale = StationScale {
        mean: vec![30.0, 40.0, 50.0, 60.0],
        std: vec![5.0, 6.0, 7.0, 8.0],
    };
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (f, mut store) = stack(&mut rng, 2, 2);
        let (zp, zd) = latents(&mut rng, 2, n, 2);
        for (t, (p, d)) in zp.iter().zip(&zd).enumerate() {
            store.insert(format!("zp{t}"), p.clone());
            store.insert(format!("zd{t}"), d.clone());
        }
        let targets: Vec<Matrix> = (0..2).map(|_| random_matrix(n, 1, 20.0, &mut rng).map(|v| v + 45.0)).collect();
        let cfg = DecayTclConfig::new(2);
        let report = check(&store, 1e-4, 16, |tape, s| {
            let zp: Vec<_> = (0..2).map(|t| tape.param(s, &format!("zp{t}")).unwrap()).collect();
            let zd: Vec<_> = (0..2).map(|t| tape.param(s, &format!("zd{t}")).unwrap()).collect();
            let a_hat = tape.constant(a.clone());
            let preds: Vec<_> = (0..2)
                .map(|t| {
                    let h = f.fuse(tape, s, zp[t], zd[t], a_hat).unwrap();
                    scale.denormalize(f.decode(tape, s, h).unwrap()).unwrap()
                })
                .collect();
            total_loss(&targets, &preds, Some((&zp, &zd)), 0.5, &cfg, PredNorm::L1)
                .unwrap()
                .total
        });
        assert!(report.max_rel_err < 1e-4, "seed {seed}: {report:?}");
    }
}

