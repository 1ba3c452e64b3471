use chrono::{DateTime, Duration, Utc};

use super::synthetic::{generate_synthetic, Layout, SyntheticSpec, WindRegime};
use super::*;
use crate::geo::{StationMeta, StationSet};

fn t0() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").unwrap().with_timezone(&Utc)
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn filled(len: usize, n: usize, f: impl Fn(usize, usize, usize) -> f64) -> ObservationPanel {
    let mut p = ObservationPanel::empty(t0(), len, ids(n));
    for t in 0..len {
        for i in 0..n {
            for k in 0..FEATURES.len() {
                p.set(t, i, k, f(t, i, k));
            }
        }
    }
    p
}

fn stations(coords: &[(f64, f64)]) -> StationSet {
    StationSet::new(
        coords
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| StationMeta::new(format!("s{i}"), lat, lon, 0.0))
            .collect(),
    )
    .unwrap()
}

#[test]
fn off_grid_times_are_rejected() {
    let times = vec![t0(), t0() + Duration::hours(2)];
    let err = ObservationPanel::new(times, ids(1), vec![0.0; 12]).unwrap_err();
    assert!(matches!(err, PipelineError::Grid(_)));
}

#[test]
fn impute_without_missing_is_identity() {
    let p = filled(6, 2, |t, i, k| (t * 10 + i + k) as f64);
    let (out, report) = impute(&p, &stations(&[(40.0, 116.0), (40.01, 116.0)])).unwrap();
    assert_eq!(out, p);
    assert_eq!(report, ImputeReport::default());
}

#[test]
fn missing_cell_copies_nearest_station() {
    // s1 is about 1 km from s0, s2 is far away.
    let st = stations(&[(40.0, 116.0), (40.009, 116.0), (41.0, 117.0)]);
    let mut p = filled(4, 3, |_, i, _| 10.0 * (i + 1) as f64);
    p.set(2, 0, PM25, f64::NAN);
    let (out, _) = impute(&p, &st).unwrap();
    assert_eq!(out.get(2, 0, PM25), 20.0);
}

#[test]
fn nearest_station_ties_break_by_id() {
    let st = stations(&[(40.0, 116.0), (40.0, 116.1), (40.0, 115.9)]);
    let mut p = filled(2, 3, |_, i, _| i as f64);
    p.set(0, 0, PM25, f64::NAN);
    let (out, _) = impute(&p, &st).unwrap();
    assert_eq!(out.get(0, 0, PM25), 1.0);
}

#[test]
fn one_step_gap_is_linearly_interpolated() {
    let st = stations(&[(40.0, 116.0)]);
    let mut p = filled(3, 1, |_, _, _| 1.0);
    p.set(0, 0, PM25, 10.0);
    p.set(1, 0, PM25, f64::NAN);
    p.set(2, 0, PM25, 20.0);
    let (out, report) = impute(&p, &st).unwrap();
    assert_eq!(out.get(1, 0, PM25), 15.0);
    assert_eq!(report.interpolated, 1);
}

#[test]
fn long_gaps_stay_missing_and_drop_windows() {
    let st = stations(&[(40.0, 116.0)]);
    let mut p = filled(12, 1, |t, _, _| t as f64);
    p.set(5, 0, PM25, f64::NAN);
    p.set(6, 0, PM25, f64::NAN);
    let (out, report) = impute(&p, &st).unwrap();
    assert!(out.is_missing(5, 0, PM25) && out.is_missing(6, 0, PM25));
    assert_eq!(report.unfilled, 2);
    let starts = window_starts(&out, 2, 2, 1);
    assert!(starts.iter().all(|&s| s + 4 <= 5 || s > 6));
    assert_eq!(starts, vec![0, 1, 7, 8]);
}

#[test]
fn imputation_never_touches_observed_cells() {
    let st = stations(&[(40.0, 116.0), (40.05, 116.1), (39.9, 116.3)]);
    let mut p = filled(20, 3, |t, i, k| ((t * 7 + i * 3 + k) % 11) as f64);
    for (t, i, k) in [(1, 0, 0), (3, 1, 2), (3, 2, 2), (3, 0, 2), (7, 2, 5), (8, 0, 0), (8, 1, 0), (8, 2, 0)] {
        p.set(t, i, k, f64::NAN);
    }
    let (out, _) = impute(&p, &st).unwrap();
    for t in 0..p.len() {
        for i in 0..3 {
            for k in 0..FEATURES.len() {
                if !p.is_missing(t, i, k) {
                    assert_eq!(out.get(t, i, k), p.get(t, i, k));
                }
            }
        }
    }
    assert_eq!(out.missing_count(), 0);
}

#[test]
fn normalize_round_trips() {
    let p = filled(30, 3, |t, i, k| (t as f64 * 0.37 + i as f64).sin() * 50.0 + k as f64 * 100.0);
    let stats = FeatureStats::fit(&p);
    let back = stats.denormalize(&stats.normalize(&p).unwrap()).unwrap();
    for (a, b) in back.values().iter().zip(p.values()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn constant_feature_uses_unit_scale() {
    let p = filled(10, 2, |t, _, k| if k == 1 { 7.0 } else { t as f64 });
    let stats = FeatureStats::fit(&p);
    assert_eq!(stats.std[1], 1.0);
    let z = stats.normalize(&p).unwrap();
    assert!((0..10).all(|t| z.get(t, 0, 1) == 0.0));
}

#[test]
fn stats_ignore_validation_and_test_content() {
    let p = filled(100, 2, |t, i, k| (t * (i + 1) + k) as f64);
    let a = split_chronological(&p, [7.0, 1.0, 2.0], 4).unwrap();
    let mut q = p.clone();
    for t in 80..100 {
        q.set(t, 0, PM25, 1e6);
    }
    let b = split_chronological(&q, [7.0, 1.0, 2.0], 4).unwrap();
    assert_eq!(FeatureStats::fit(&a.train), FeatureStats::fit(&b.train));
}

#[test]
fn split_seven_one_two() {
    let p = filled(100, 1, |t, _, _| t as f64);
    let s = split_chronological(&p, [7.0, 1.0, 2.0], 5).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
    assert_eq!(s.val.times[0], p.times[70]);
    assert_eq!(s.test.times[0], p.times[80]);
    assert_eq!(s.manifest.test.end, p.times[99]);
}

#[test]
fn four_years_split_at_year_boundaries() {
    let end = DateTime::parse_from_rfc3339("2028-01-01T00:00:00Z").unwrap().with_timezone(&Utc);
    let len = ((end - t0()).num_hours() / 3) as usize;
    let p = filled(len, 1, |_, _, _| 0.0);
    let s = split_chronological(&p, [2.0, 1.0, 1.0], 48).unwrap();
    let year = |y: i32| {
        DateTime::parse_from_rfc3339(&format!("{y}-01-01T00:00:00Z"))
            .unwrap()
            .with_timezone(&Utc)
    };
    // Leap days move the ratio boundaries by at most a day.
    assert!((s.manifest.val.start - year(2026)).num_hours().abs() <= 24);
    assert!((s.manifest.test.start - year(2027)).num_hours().abs() <= 24);
}

#[test]
fn windows_stay_inside_their_split() {
    let p = filled(200, 2, |t, _, _| t as f64);
    let s = split_chronological(&p, [7.0, 1.0, 2.0], 8).unwrap();
    for (part, range) in [(&s.train, &s.manifest.train), (&s.val, &s.manifest.val), (&s.test, &s.manifest.test)] {
        for start in window_starts(part, 4, 4, 1) {
            let first = part.times[start];
            let last = part.times[start + 7];
            assert!(first >= range.start && last <= range.end);
        }
    }
}

#[test]
fn short_split_is_an_error() {
    let p = filled(50, 1, |_, _, _| 0.0);
    let err = split_chronological(&p, [7.0, 1.0, 2.0], 48).unwrap_err();
    assert!(matches!(err, PipelineError::InsufficientData { .. }));
}

#[test]
fn window_count_matches_formula() {
    for (len, t, tau, stride) in [(100, 24, 24, 1), (100, 24, 24, 24), (48, 24, 24, 1), (77, 5, 3, 4)] {
        let p = filled(len, 1, |_, _, _| 1.0);
        let expect = (len - t - tau) / stride + 1;
        assert_eq!(window_starts(&p, t, tau, stride).len(), expect, "len {len} stride {stride}");
    }
}

#[test]
fn sudden_change_rule() {
    assert!(label_series(&[100.0; 5]).iter().all(|f| !f));
    assert_eq!(label_series(&[80.0, 105.0]), vec![true, false]);
    assert_eq!(label_series(&[50.0, 80.0]), vec![false, false]);
    assert_eq!(label_series(&[76.0, 55.0]), vec![true, false]);
    assert_eq!(label_series(&[76.0, 96.0]), vec![false, false]);
}

#[test]
fn panel_labels_look_one_step_past_the_range() {
    let mut p = filled(4, 1, |_, _, _| 0.0);
    for (t, v) in [80.0, 90.0, 120.0, 60.0].into_iter().enumerate() {
        p.set(t, 0, PM25, v);
    }
    let m = label_sudden_changes(&p, 1..3);
    assert_eq!(m, vec![vec![true], vec![true]]);
}

#[test]
fn csv_round_trip_and_hourly_resampling() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = filled(5, 2, |t, i, k| (t * 100 + i * 10 + k) as f64);
    p.set(2, 1, 3, f64::NAN);
    let path = dir.path().join("obs.csv");
    write_observations_csv(&path, &p).unwrap();
    let back = read_observations_csv(&path, &p.stations).unwrap();
    assert_eq!(back.times, p.times);
    for (a, b) in back.values().iter().zip(p.values()) {
        assert!(a == b || (a.is_nan() && b.is_nan()));
    }

    let hourly = dir.path().join("hourly.csv");
    let mut text = String::from("timestamp,station_id,pm25,temp,pressure,humidity,wind_speed,wind_dir\n");
    for h in 0..7 {
        text.push_str(&format!("2024-01-01T{h:02}:00:00Z,s0,{h},1,2,3,4,5\n"));
    }
    std::fs::write(&hourly, text).unwrap();
    let q = read_observations_csv(&hourly, &ids(1)).unwrap();
    assert_eq!(q.len(), 3);
    assert_eq!(q.feature_at(1, PM25), vec![3.0]);
    assert_eq!(q.feature_at(2, PM25), vec![6.0]);
}

#[test]
fn unknown_station_in_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.csv");
    std::fs::write(
        &path,
        "timestamp,station_id,pm25,temp,pressure,humidity,wind_speed,wind_dir\n2024-01-01T00:00:00Z,zz,1,1,1,1,1,1\n",
    )
    .unwrap();
    assert!(matches!(read_observations_csv(&path, &ids(1)), Err(PipelineError::UnknownStation(_))));
}

fn still() -> WindRegime {
    WindRegime::Constant {
        speed: 0.0,
        direction: 0.0,
    }
}

#[test]
fn equilibrium_spec_gives_constant_panel() {
    let spec = SyntheticSpec {
        n_stations: 9,
        length: 40,
        beta: vec![0.0],
        wind: still(),
        ..SyntheticSpec::default()
    };
    let s = generate_synthetic(&spec).unwrap();
    for t in 0..s.panel.len() {
        for i in 0..9 {
            assert_eq!(s.panel.get(t, i, PM25), 80.0);
        }
    }
}

#[test]
fn pure_decay_matches_exponential() {
    let spec = SyntheticSpec {
        n_stations: 4,
        length: 30,
        k: 0.0,
        beta: vec![-0.1],
        wind: still(),
        x0: 50.0,
        x0_spread: 0.5,
        ..SyntheticSpec::default()
    };
    let s = generate_synthetic(&spec).unwrap();
    for t in 0..s.panel.len() {
        let decay = (-0.1 * 3.0 * t as f64).exp();
        for i in 0..4 {
            let expect = s.x0[i] * decay;
            let got = s.panel.get(t, i, PM25);
            assert!((got - expect).abs() <= 1e-6 * s.x0[i], "t {t} i {i}: {got} vs {expect}");
        }
    }
}

/// Composite Simpson over an even number of equal panels.
fn simpson(ys: &[f64], h: f64) -> f64 {
    let n = ys.len() - 1;
    assert!(n % 2 == 0);
    let mut s = ys[0] + ys[n];
    for (k, y) in ys.iter().enumerate().take(n).skip(1) {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * y;
    }
    s * h / 3.0
}

#[test]
fn mass_change_equals_integrated_open_term() {
    let spec = SyntheticSpec {
        seed: 3,
        n_stations: 9,
        length: 16,
        k: 5.0,
        beta: (0..9).map(|i| -0.05 + 0.01 * i as f64).collect(),
        wind: WindRegime::Rotating {
            speed: 4.0,
            direction: 200.0,
            deg_per_step: 25.0,
        },
        x0_spread: 0.6,
        ..SyntheticSpec::default()
    };
    let s = generate_synthetic(&spec).unwrap();
    let h = 0.05;
    let steps = ((s.panel.len() - 1) as f64 * 3.0 / h).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let traj = s.model.trajectory(&s.x0, &times).unwrap();
    let beta = &s.model.system.beta;
    let open: Vec<f64> = traj
        .states
        .iter()
        .map(|x| x.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    let mass = |x: &Vec<f64>| x.iter().sum::<f64>();
    let delta = mass(traj.states.last().unwrap()) - mass(&traj.states[0]);
    let integral = simpson(&open, h);
    assert!(((delta - integral) / integral).abs() < 1e-4, "{delta} vs {integral}");
}

#[test]
fn generation_is_bit_reproducible() {
    let spec = SyntheticSpec {
        seed: 11,
        layout: Layout::Random,
        n_stations: 8,
        length: 20,
        wind: WindRegime::Gusty {
            speed: 3.0,
            direction: 90.0,
            gust: 1.0,
            jitter_deg: 30.0,
        },
        noise_sigma: 0.05,
        noise_relative: true,
        emission: 2.0,
        emission_spread: 0.5,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    let bits = |p: &ObservationPanel| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.panel), bits(&b.panel));
    assert_eq!(a.truth, b.truth);
    let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(bits(&a.panel), bits(&c.panel));
}

#[test]
fn blowup_reports_divergence_time() {
    let spec = SyntheticSpec {
        n_stations: 4,
        length: 200,
        k: 0.0,
        beta: vec![0.5],
        wind: still(),
        ..SyntheticSpec::default()
    };
    match generate_synthetic(&spec) {
        Err(PipelineError::Divergence { t }) => assert!(t > 0.0 && t < 600.0),
        other => panic!("expected divergence, got {:?}", other.map(|s| s.truth)),
    }
}

#[test]
fn hidden_boundary_line_observes_inner_stations() {
    let spec = SyntheticSpec {
        layout: Layout::Line,
        n_stations: 6,
        hidden_boundary: 2,
        length: 10,
        wind: WindRegime::Outward { speed: 3.0 },
        ..SyntheticSpec::default()
    };
    let s = generate_synthetic(&spec).unwrap();
    assert_eq!(s.panel.n(), 6);
    assert_eq!(s.observed, vec![2, 3, 4, 5, 6, 7]);
    assert_eq!(s.model.system.n(), 10);
    // West half blows toward the west (from the east), east half the opposite.
    assert!((s.panel.get(0, 0, WIND_DIR) - 90.0).abs() < 1.0);
    assert!((s.panel.get(0, 5, WIND_DIR) - 270.0).abs() < 1.0);
}
