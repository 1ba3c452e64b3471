use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{read_graph_json, write_graph_json};
use super::*;

fn cosine_law_km(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    EARTH_RADIUS_KM * c.clamp(-1.0, 1.0).acos()
}

fn station(id: &str, lat: f64, lon: f64) -> StationMeta {
    StationMeta::new(id, lat, lon, 0.0)
}

fn set(stations: Vec<StationMeta>) -> StationSet {
    StationSet::new(stations).unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> StationSet {
    set((0..n)
        .map(|i| station(&format!("s{i}"), rng.random_range(30.0..32.0), rng.random_range(110.0..113.0)))
        .collect())
}

/// Raster over lat [0, 0.2], lon [0, 1] whose height depends on longitude only.
fn lon_profile(h: impl Fn(f64) -> f64) -> ElevationField {
    let (nrows, ncols) = (3, 1001);
    let mut z = Vec::new();
    for _ in 0..nrows {
        for c in 0..ncols {
            z.push(h(c as f64 * 0.001));
        }
    }
    ElevationField::Raster(Raster::new(nrows, ncols, 0.0, 0.0, 0.1, 0.001, z).unwrap())
}

#[test]
fn haversine_identical_points() {
    let p = LatLon::new(39.90, 116.40);
    assert_eq!(haversine_km(p, p), 0.0);
}

#[test]
fn haversine_antipodal_is_half_circumference() {
    let d = haversine_km(LatLon::new(0.0, 0.0), LatLon::new(0.0, 180.0));
    assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
    assert!((d - 20015.0).abs() < 1.0);
}

#[test]
fn haversine_short_distance_matches_cosine_law() {
    let a = LatLon::new(39.90, 116.40);
    let b = LatLon::new(40.00, 116.40);
    let d = haversine_km(a, b);
    assert!((d - cosine_law_km(a, b)).abs() < 1e-6);
    assert!((d - 11.12).abs() < 0.01, "{d}");
}

#[test]
fn haversine_random_pairs_match_cosine_law_and_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a = LatLon::new(rng.random_range(-80.0..80.0), rng.random_range(-180.0..180.0));
        let b = LatLon::new(rng.random_range(-80.0..80.0), rng.random_range(-180.0..180.0));
        let d = haversine_km(a, b);
        assert_eq!(d, haversine_km(b, a));
        assert!((d - cosine_law_km(a, b)).abs() < 1e-5 * d.max(1.0));
    }
}

#[test]
fn bearings_of_cardinal_directions() {
    let o = LatLon::new(0.0, 0.0);
    assert!((initial_bearing_deg(o, LatLon::new(1.0, 0.0)) - 0.0).abs() < 1e-9);
    assert!((initial_bearing_deg(o, LatLon::new(0.0, 1.0)) - 90.0).abs() < 1e-9);
    assert!((initial_bearing_deg(o, LatLon::new(-1.0, 0.0)) - 180.0).abs() < 1e-9);
    assert!((initial_bearing_deg(o, LatLon::new(0.0, -1.0)) - 270.0).abs() < 1e-9);
}

#[test]
fn station_set_rejects_duplicates_and_bad_coordinates() {
    assert!(StationSet::new(vec![station("a", 0.0, 0.0), station("a", 1.0, 1.0)]).is_err());
    assert!(StationSet::new(vec![station("a", 91.0, 0.0)]).is_err());
    assert!(StationSet::new(vec![station("a", 0.0, -181.0)]).is_err());
}

#[test]
fn ridge_height_on_flat_terrain_is_zero() {
    let (a, b) = (station("a", 0.0, 0.0), station("b", 1.0, 1.0));
    assert_eq!(ridge_height(&a, &b, &ElevationField::Flat).unwrap(), 0.0);
}

#[test]
fn single_ridge_is_found_within_one_sample_step() {
    let h = 1500.0;
    let half_width = 0.1;
    let field = lon_profile(|lon| h * (1.0 - (lon - 0.5).abs() / half_width).max(0.0));
    let (a, b) = (station("a", 0.1, 0.0), station("b", 0.1, 1.0));
    let r = ridge_height(&a, &b, &field).unwrap();
    // Dense-sample oracle of the same supremum.
    let dense = (1..100_000)
        .map(|k| {
            let lon = k as f64 / 100_000.0;
            field.height(LatLon::new(0.1, lon)).unwrap()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let one_step = h / half_width / (RIDGE_SAMPLES + 1) as f64;
    assert!((dense - h).abs() < 1e-6);
    assert!(r <= dense + 1e-9);
    assert!(dense - r <= one_step, "{r} vs {dense}");
}

#[test]
fn valley_between_high_endpoints_is_negative() {
    let field = lon_profile(|lon| 1000.0 * (lon - 0.5).abs());
    let (a, b) = (station("a", 0.1, 0.0), station("b", 0.1, 1.0));
    assert!(ridge_height(&a, &b, &field).unwrap() < 0.0);
}

#[test]
fn ridge_height_outside_raster_is_a_coverage_error() {
    let field = lon_profile(|_| 0.0);
    let (a, b) = (station("a", 0.1, 0.0), station("b", 0.1, 2.0));
    assert!(matches!(ridge_height(&a, &b, &field), Err(GeoError::Coverage { .. })));
}

#[test]
fn elevation_grid_parses_and_interpolates() {
    let field = ElevationField::parse("2 2 10 20 1 1\n0 10\n20 30\n").unwrap();
    assert_eq!(field.height(LatLon::new(10.5, 20.5)).unwrap(), 15.0);
    assert_eq!(field.height(LatLon::new(11.0, 20.0)).unwrap(), 20.0);
    assert!(ElevationField::parse("2 2 10 20 1 1\n0 10 20\n").is_err());
    assert!(ElevationField::parse("2 2 10 20 0 1\n0 10 20 30\n").is_err());
}

#[test]
fn graph_respects_distance_threshold() {
    let s = set(vec![station("a", 0.0, 0.0), station("b", 0.0, 1.0)]);
    let d = haversine_km(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
    let g = build_geospatial_graph(&s, &ElevationField::Flat, d - 1.0, 100.0).unwrap();
    assert!(!g.adjacent(0, 1));
    let g = build_geospatial_graph(&s, &ElevationField::Flat, d + 1.0, 100.0).unwrap();
    assert!(g.adjacent(0, 1) && g.adjacent(1, 0));
}

#[test]
fn ridge_above_threshold_cuts_the_edge() {
    let field = lon_profile(|lon| 2000.0 * (1.0 - (lon - 0.5).abs() / 0.1).max(0.0));
    let s = set(vec![station("a", 0.1, 0.0), station("b", 0.1, 1.0)]);
    assert!(!build_geospatial_graph(&s, &field, 300.0, 1200.0).unwrap().adjacent(0, 1));
    assert!(build_geospatial_graph(&s, &field, 300.0, 2500.0).unwrap().adjacent(0, 1));
}

#[test]
fn graph_needs_two_stations() {
    let s = set(vec![station("a", 0.0, 0.0)]);
    assert!(matches!(
        build_geospatial_graph(&s, &ElevationField::Flat, 300.0, 1200.0),
        Err(GeoError::Degenerate(_))
    ));
}

#[test]
fn random_graphs_are_symmetric_and_respect_thresholds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let s = random_set(&mut rng, n);
        let g = build_geospatial_graph(&s, &ElevationField::Flat, 150.0, 1200.0).unwrap();
        let diff = build_diffusion_graph(&g).unwrap();
        for i in 0..n {
            assert!(!g.adjacent(i, i));
            assert_eq!(diff.weights.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(g.adjacent(i, j), g.adjacent(j, i));
                assert_eq!(g.distance.get(i, j), g.distance.get(j, i));
                assert_eq!(diff.weights.get(i, j), diff.weights.get(j, i));
                if g.adjacent(i, j) {
                    assert!(g.distance.get(i, j) <= 150.0);
                    assert_eq!(diff.weights.get(i, j), 1.0 / g.distance.get(i, j));
                } else {
                    assert_eq!(diff.weights.get(i, j), 0.0);
                }
            }
        }
    }
}

#[test]
fn removing_a_station_gives_the_induced_subgraph() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_set(&mut rng, 9);
    let full = build_geospatial_graph(&s, &ElevationField::Flat, 150.0, 1200.0).unwrap();
    let keep: Vec<usize> = (0..9).filter(|&i| i != 4).collect();
    let sub = build_geospatial_graph(&s.subset(&keep).unwrap(), &ElevationField::Flat, 150.0, 1200.0).unwrap();
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            assert_eq!(sub.adjacent(a, b), full.adjacent(i, j));
            assert_eq!(sub.distance.get(a, b), full.distance.get(i, j));
        }
    }
}

#[test]
fn diffusion_weight_is_inverse_distance() {
    let dlat = 10.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
    let s = set(vec![station("a", 0.0, 0.0), station("b", dlat, 0.0), station("c", 5.0, 5.0)]);
    let g = build_geospatial_graph(&s, &ElevationField::Flat, 50.0, 1200.0).unwrap();
    let w = build_diffusion_graph(&g).unwrap().weights;
    assert!((w.get(0, 1) - 0.1).abs() < 1e-12);
    assert_eq!(w.get(0, 2), 0.0);
}

#[test]
fn co_located_adjacent_stations_are_rejected() {
    let s = set(vec![station("a", 0.0, 0.0), station("b", 0.0, 0.0)]);
    let g = build_geospatial_graph(&s, &ElevationField::Flat, 50.0, 1200.0).unwrap();
    assert!(matches!(build_diffusion_graph(&g), Err(GeoError::DuplicateLocation(0, 1))));
}

fn east_west_pair() -> GeoGraph {
    let s = set(vec![station("w", 0.0, 0.0), station("e", 0.0, 0.1)]);
    build_geospatial_graph(&s, &ElevationField::Flat, 50.0, 1200.0).unwrap()
}

#[test]
fn calm_wind_gives_empty_advection() {
    let g = east_west_pair();
    let a = build_advection_graph(&g, &[0.0, 0.0], &[90.0, 45.0], WindConvention::From, 0).unwrap();
    assert_eq!(a.weights.max_abs(), 0.0);
}

#[test]
fn wind_along_bearing_gives_speed_over_distance() {
    let g = east_west_pair();
    let d = g.distance.get(0, 1);
    // Westerly wind (from 270) blows toward the east.
    let a = build_advection_graph(&g, &[5.0, 0.0], &[270.0, 0.0], WindConvention::From, 0).unwrap();
    assert!((a.weights.get(0, 1) - 3.6 * 5.0 / d).abs() < 1e-12);
    assert_eq!(a.weights.get(1, 0), 0.0);

    let toward = build_advection_graph(&g, &[5.0, 0.0], &[90.0, 0.0], WindConvention::Toward, 0).unwrap();
    assert_eq!(toward.weights, a.weights);

    // The reverse edge depends only on the downstream station's own wind.
    let b = build_advection_graph(&g, &[5.0, 2.0], &[270.0, 90.0], WindConvention::From, 1).unwrap();
    assert_eq!(b.weights.get(0, 1), a.weights.get(0, 1));
    assert!((b.weights.get(1, 0) - 3.6 * 2.0 / d).abs() < 1e-12);
}

#[test]
fn perpendicular_wind_gives_zero_weight() {
    let g = east_west_pair();
    let a = build_advection_graph(&g, &[5.0, 5.0], &[0.0, 180.0], WindConvention::Toward, 0).unwrap();
    assert_eq!(a.weights.max_abs(), 0.0);
}

#[test]
fn advection_rejects_wrong_lengths() {
    let g = east_west_pair();
    assert!(matches!(
        build_advection_graph(&g, &[1.0], &[0.0, 0.0], WindConvention::From, 0),
        Err(GeoError::Shape(_))
    ));
}

#[test]
fn advection_weights_are_nonnegative_and_follow_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..50 {
        let s = random_set(&mut rng, 8);
        let g = build_geospatial_graph(&s, &ElevationField::Flat, 150.0, 1200.0).unwrap();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..10.0)).collect();
        let dir: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..360.0)).collect();
        let a = build_advection_graph(&g, &v, &dir, WindConvention::From, t).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let w = a.weights.get(i, j);
                assert!(w >= 0.0);
                if !g.adjacent(i, j) {
                    assert_eq!(w, 0.0);
                }
            }
        }
        let rotated: Vec<f64> = dir.iter().map(|d| d + 180.0).collect();
        let b = build_advection_graph(&g, &v, &rotated, WindConvention::From, t + 1).unwrap();
        if !g.edges().is_empty() {
            assert_ne!(a.weights, b.weights);
        }
    }
}

#[test]
fn graph_json_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = random_set(&mut rng, 6);
    let g = build_geospatial_graph(&s, &ElevationField::Flat, 150.0, 1200.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.json");
    write_graph_json(&path, &g).unwrap();
    let back = read_graph_json(&path).unwrap();
    assert_eq!(back, g);
}
