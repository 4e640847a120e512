use approx::assert_abs_diff_eq;
use pel::reconstruct::*;
use pel::signal::{AveragedTrial, Channel, ChannelStats, Nominal, Source};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, half: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-half..half))).collect()
}

fn samples(bases: Vec<Point>, field: impl Fn(&Point) -> Point) -> VectorFieldSamples {
    VectorFieldSamples {
        vectors: bases.iter().map(&field).collect(),
        bases,
        source: None,
    }
}

fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn rms_ratio(pairs: impl Iterator<Item = (Point, Point)>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (e, f) in pairs {
        num += norm(e).powi(2);
        den += norm(f).powi(2);
    }
    (num / den).sqrt()
}

// Library defaults apart from a center count suited to 800 samples.
const FIT: HhdConfig = HhdConfig {
    k: 80,
    sigma: SigmaPolicy::Spacing { factor: 0.1 },
    ridge: 1e-6,
    curl_weight: 1e4,
    seed: 3,
};

#[test]
fn test_config_tracks_defaults() {
    assert_eq!(HhdConfig { k: 80, seed: 3, ..HhdConfig::default() }, FIT);
}

#[test]
fn bowl_potential_is_recovered() {
    let bowl = |p: &Point| p.map(|v| -v);
    let s = samples(cloud(800, 1.0, 1), bowl);
    let mut m = reconstruct(&s, &FIT).unwrap();
    let held = cloud(300, 0.7, 2);
    let err = rms_ratio(held.iter().map(|p| {
        let (_, g) = m.eval(p);
        let f = bowl(p);
        ([-g[0] - f[0], -g[1] - f[1], -g[2] - f[2]], f)
    }));
    assert!(err < 0.02, "gradient error {err}");
    // Phi matches 0.5 |p|^2 up to a constant, aligned on the mean.
    let want: Vec<f64> = held.iter().map(|p| 0.5 * norm(*p).powi(2)).collect();
    let offset = held.iter().zip(&want).map(|(p, w)| m.eval(p).0 - w).sum::<f64>() / held.len() as f64;
    m.gauge -= offset;
    for (p, w) in held.iter().zip(&want) {
        assert!((m.eval(p).0 - w).abs() < 0.01, "{p:?}");
    }
}

#[test]
fn pure_curl_leaks_little_into_the_potential() {
    let curl = |p: &Point| [-p[1], p[0], 0.0];
    let s = samples(cloud(800, 1.0, 4), curl);
    let m = reconstruct(&s, &FIT).unwrap();
    let held = cloud(300, 0.7, 5);
    let leak = rms_ratio(held.iter().map(|p| (m.eval(p).1, curl(p))));
    assert!(leak < 0.05, "leakage {leak}");
    // The solenoidal part carries the field instead, within the accuracy its
    // heavier ridge allows.
    let fit = rms_ratio(held.iter().map(|p| {
        let f = m.field(p);
        let c = curl(p);
        ([f[0] - c[0], f[1] - c[1], f[2] - c[2]], c)
    }));
    assert!(fit < 0.15, "field error {fit}");
}

#[test]
fn zero_field_gives_zero_coefficients() {
    let s = samples(cloud(100, 1.0, 6), |_| [0.0; 3]);
    let centers = kmeans_centers(&s.bases, 10, 1).unwrap();
    let m = hhd_fit(&s, &centers, 2.0, 1e-6).unwrap();
    assert!(m.a.iter().all(|&v| v == 0.0));
    assert!(m.b.iter().all(|b| *b == [0.0; 3]));
}

#[test]
fn training_field_residual_matches_report() {
    let f = |p: &Point| [-p[0] - p[1], p[0] - p[1] * p[2], p[2].sin()];
    let s = samples(cloud(400, 1.0, 7), f);
    let m = reconstruct(&s, &HhdConfig { k: 40, ..FIT }).unwrap();
    let direct = rms_ratio(s.bases.iter().zip(&s.vectors).map(|(p, v)| {
        let g = m.field(p);
        ([g[0] - v[0], g[1] - v[1], g[2] - v[2]], *v)
    }));
    assert_abs_diff_eq!(direct, m.residual, epsilon = 1e-6);
}

#[test]
fn single_center_is_the_centroid() {
    let bases = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
    let c = kmeans_centers(&bases, 1, 9).unwrap();
    assert_eq!(c.len(), 1);
    for (got, want) in c[0].iter().zip([0.25, 0.5, 0.75]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
    }
}

#[test]
fn centers_on_a_base_are_rejected() {
    // Each isolated base forms its own cluster, so every center lands on it.
    let bases = vec![[0.0; 3], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]];
    assert!(kmeans_centers(&bases, 3, 1).unwrap().is_empty());
    let pairs = vec![[0.0; 3], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0], [5.1, 0.0, 0.0]];
    let c = kmeans_centers(&pairs, 2, 1).unwrap();
    assert_eq!(c.len(), 2);
}

#[test]
fn oversized_k_is_reduced() {
    let bases = vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
    let c = kmeans_with(&bases, 10, 2, KMeansOptions::default()).unwrap();
    assert!(c.len() <= 4);
}

#[test]
fn lone_center_kernel_value() {
    let mut m = ReconstructionModel {
        centers: vec![[0.2, -0.1, 0.4]],
        sigma: 1.0,
        lambda: 0.0,
        a: vec![1.0],
        b: vec![[0.0; 3]],
        gauge: 0.75,
        ratio: 0.01,
        source: None,
        seed: 0,
        residual: 0.0,
    };
    assert_abs_diff_eq!(m.eval(&[0.2, -0.1, 0.4]).0, 1.75, epsilon = 1e-15);
    assert_abs_diff_eq!(m.eval(&[40.0, 0.0, 0.0]).0, 0.75, epsilon = 1e-15);
    m.gauge = 0.0;
    assert_eq!(m.eval(&[0.2, -0.1, 0.4]).1, [0.0; 3]);
}

#[test]
fn gradient_matches_finite_differences() {
    let s = samples(cloud(300, 1.0, 11), |p| [p[1].cos(), -p[0], p[2] * p[0]]);
    let m = reconstruct(&s, &HhdConfig { k: 30, ..FIT }).unwrap();
    let h = 1e-5;
    for p in cloud(20, 0.8, 12) {
        let (_, g) = m.eval(&p);
        for d in 0..3 {
            let (mut lo, mut hi) = (p, p);
            lo[d] -= h;
            hi[d] += h;
            let fd = (m.eval(&hi).0 - m.eval(&lo).0) / (2.0 * h);
            assert!((fd - g[d]).abs() <= 1e-6 * g[d].abs().max(1.0), "{fd} vs {}", g[d]);
        }
    }
}

#[test]
fn model_json_round_trip_is_exact() {
    let s = samples(cloud(200, 1.0, 13), |p| p.map(|v| -2.0 * v));
    let m = reconstruct(&s, &HhdConfig { k: 20, ..FIT }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.write_json(&path).unwrap();
    let back = ReconstructionModel::read_json(&path).unwrap();
    assert_eq!(back, m);
    let p = [0.1, 0.2, -0.3];
    assert_eq!(back.eval(&p), m.eval(&p));
}

fn flat_trial(nominal: Nominal, value: impl Fn(Channel, f64) -> f64) -> AveragedTrial {
    let x: Vec<f64> = (0..=300).map(|i| -100.0 + i as f64).collect();
    AveragedTrial {
        nominal,
        channels: Channel::ALL
            .iter()
            .map(|&c| ChannelStats {
                mean: x.iter().map(|&v| value(c, v)).collect(),
                std: vec![0.0; x.len()],
            })
            .collect(),
        missing: vec![false; x.len()],
        x,
        repetitions: 1,
    }
}

#[test]
fn assembled_bases_and_vectors_use_the_unification_ratio() {
    let nominal = Nominal {
        alpha_deg: 0.0,
        beta_deg: -20.0,
        f: 0.0,
    };
    let t = flat_trial(nominal, |c, _| if c == Channel::Fx { -2.0 } else { 0.0 });
    let s = assemble_samples(&[t], Source::Raw, (-100.0, 100.0)).unwrap();
    assert_eq!(s.len(), 201);
    let last = s.bases.last().unwrap();
    assert_abs_diff_eq!(last[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(last[2], (-20f64).to_radians(), epsilon = 1e-12);
    assert_abs_diff_eq!(s.vectors[0][0], -200.0, epsilon = 1e-9);
}

#[test]
fn free_sample_is_the_gravity_field() {
    let body = pel::geometry::BodyParams::default();
    let (a, b) = (30f64.to_radians(), (-25f64).to_radians());
    let g = pel::landscape::gravity_forces(&body, a, b);
    let nominal = Nominal {
        alpha_deg: 30.0,
        beta_deg: -25.0,
        f: 0.5,
    };
    let t = flat_trial(nominal, |c, _| match c {
        Channel::GravityAlpha => g[1],
        Channel::GravityBeta => g[2],
        _ => 0.0,
    });
    let s = assemble_samples(&[t], Source::Normal, (-100.0, -100.0)).unwrap();
    // -grad(PE_G) from the closed form of the gravity energy.
    let wh = body.weight() * body.com_offset;
    let want = [0.0, -wh * a.sin() * b.cos(), -wh * a.cos() * b.sin()];
    for d in 0..3 {
        assert_abs_diff_eq!(s.vectors[0][d], want[d], epsilon = 1e-12);
    }
}

#[test]
fn assembly_rejects_empty_input() {
    assert!(matches!(assemble_samples(&[], Source::Model, (-100.0, 100.0)), Err(pel::Error::EmptyInput(_))));
}

#[test]
fn subsample_keeps_about_the_requested_share() {
    let s = samples(cloud(2000, 1.0, 14), |p| *p);
    let kept = s.subsample(0.4, 3);
    let share = kept.len() as f64 / 2000.0;
    assert!((share - 0.4).abs() < 0.05);
    assert_eq!(s.subsample(0.4, 3), kept);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn centers_stay_inside_the_bounding_box(seed in 0u64..500, k in 1usize..25) {
        let bases = cloud(120, 1.0, seed);
        let c = kmeans_centers(&bases, k, seed).unwrap();
        for d in 0..3 {
            let lo = bases.iter().map(|b| b[d]).fold(f64::INFINITY, f64::min);
            let hi = bases.iter().map(|b| b[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c.iter().all(|p| p[d] >= lo && p[d] <= hi));
        }
        for p in &c {
            prop_assert!(bases.iter().all(|b| norm([b[0] - p[0], b[1] - p[1], b[2] - p[2]]) >= MIN_CENTER_DISTANCE));
        }
    }

    #[test]
    fn coefficients_scale_with_the_field(scale in -4.0..4.0f64, seed in 0u64..100) {
        let f = |p: &Point| [p[1] - p[0], p[2] * p[2], -p[0] * p[1]];
        let base = samples(cloud(150, 1.0, seed), f);
        let scaled = VectorFieldSamples {
            vectors: base.vectors.iter().map(|v| v.map(|c| scale * c)).collect(),
            ..base.clone()
        };
        let centers = kmeans_centers(&base.bases, 12, seed).unwrap();
        let m1 = hhd_fit(&base, &centers, 3.0, 1e-8).unwrap();
        let m2 = hhd_fit(&scaled, &centers, 3.0, 1e-8).unwrap();
        let top = m1.a.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (a1, a2) in m1.a.iter().zip(&m2.a) {
            prop_assert!((a2 - scale * a1).abs() <= 1e-6 * top * (1.0 + scale.abs()));
        }
    }

    #[test]
    fn fixed_seed_is_deterministic(seed in 0u64..1000) {
        let s = samples(cloud(100, 1.0, seed), |p| [p[2], p[0], p[1]]);
        let cfg = HhdConfig { k: 10, seed, ..FIT };
        prop_assert_eq!(reconstruct(&s, &cfg).unwrap(), reconstruct(&s, &cfg).unwrap());
    }
}

