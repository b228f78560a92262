use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use titan_core::projection::{drop_points, flip_cloud, spherical_project, Point, PointCloud, ProjectionConfig};

fn random_cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                let r: f32 = rng.gen_range(0.5..60.0);
                let az: f32 = rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI);
                let el: f32 = rng.gen_range(-0.5..0.1);
                Point::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin(), rng.gen())
            })
            .collect(),
    )
}

/// Pixel from the spherical formulas, written out independently.
fn oracle_pixel(p: &Point, cfg: &ProjectionConfig) -> Option<(usize, usize)> {
    let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
    let r = (x * x + y * y + z * z).sqrt();
    let pitch = (z / r).asin();
    let (up, down) = (cfg.fov_up.to_radians(), cfg.fov_down.to_radians());
    if pitch > up || pitch < down {
        return None;
    }
    let yaw = y.atan2(x);
    let u = (0.5 * (1.0 - yaw / std::f64::consts::PI) * cfg.width as f64).floor().clamp(0.0, cfg.width as f64 - 1.0);
    let v = ((1.0 - (pitch - down) / (up - down)) * cfg.height as f64).floor().clamp(0.0, cfg.height as f64 - 1.0);
    Some((u as usize, v as usize))
}

#[test]
fn nearest_wins_against_brute_force() {
    let cfg = ProjectionConfig { width: 64, height: 16, fov_up: 3.0, fov_down: -25.0 };
    for seed in 0..5 {
        let cloud = random_cloud(seed, 1000);
        let img = spherical_project(&cloud, &cfg).unwrap();
        for v in 0..cfg.height {
            for u in 0..cfg.width {
                let best = cloud
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| oracle_pixel(p, &cfg) == Some((u, v)))
                    .min_by(|a, b| a.1.range().total_cmp(&b.1.range()))
                    .map(|(i, _)| i);
                assert_eq!(img.source_index(u, v), best, "pixel ({u}, {v}) seed {seed}");
                assert_eq!(img.is_valid(u, v), best.is_some());
            }
        }
    }
}

#[test]
fn invalid_pixels_hold_fill_value() {
    let cfg = ProjectionConfig { width: 32, height: 8, fov_up: 3.0, fov_down: -25.0 };
    let img = spherical_project(&random_cloud(9, 50), &cfg).unwrap();
    for v in 0..cfg.height {
        for u in 0..cfg.width {
            if !img.is_valid(u, v) {
                assert_eq!(img.pixel(u, v), [titan_core::projection::INVALID_FILL; 5]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn range_channel_is_point_norm(seed in any::<u64>(), n in 1usize..300) {
        let cfg = ProjectionConfig { width: 128, height: 32, fov_up: 3.0, fov_down: -25.0 };
        let cloud = random_cloud(seed, n);
        let img = spherical_project(&cloud, &cfg).unwrap();
        for v in 0..cfg.height {
            for u in 0..cfg.width {
                if img.is_valid(u, v) {
                    let [x, y, z, _, r] = img.pixel(u, v).map(|c| c as f64);
                    let norm = (x * x + y * y + z * z).sqrt();
                    prop_assert!((r - norm).abs() <= 1e-5 * norm);
                }
            }
        }
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>(), n in 0usize..200) {
        let cloud = random_cloud(seed, n);
        prop_assert_eq!(flip_cloud(&flip_cloud(&cloud)), cloud);
    }

    #[test]
    fn flip_mirrors_columns(seed in any::<u64>(), n in 1usize..200) {
        let cfg = ProjectionConfig { width: 64, height: 16, fov_up: 3.0, fov_down: -25.0 };
        let cloud = random_cloud(seed, n);
        let a = spherical_project(&cloud, &cfg).unwrap();
        let b = spherical_project(&flip_cloud(&cloud), &cfg).unwrap();
        for v in 0..cfg.height {
            for u in 0..cfg.width {
                let m = cfg.width - 1 - u;
                prop_assert_eq!(a.is_valid(u, v), b.is_valid(m, v));
                prop_assert_eq!(a.range_at(u, v), b.range_at(m, v));
            }
        }
    }

    #[test]
    fn projection_is_deterministic(seed in any::<u64>(), n in 0usize..200) {
        let cfg = ProjectionConfig { width: 64, height: 16, fov_up: 3.0, fov_down: -25.0 };
        let cloud = random_cloud(seed, n);
        prop_assert_eq!(spherical_project(&cloud, &cfg).unwrap(), spherical_project(&cloud, &cfg).unwrap());
    }

    #[test]
    fn drop_keeps_a_subsequence(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let cloud = random_cloud(seed, 100);
        let kept = drop_points(&cloud, frac, seed).unwrap();
        let mut it = cloud.points.iter();
        for p in &kept.points {
            prop_assert!(it.any(|q| q == p));
        }
        if frac == 0.0 {
            prop_assert_eq!(kept.len(), 100);
        }
    }
}

#[test]
fn drop_fraction_is_binomial() {
    let cloud = random_cloud(1, 20000);
    let kept = drop_points(&cloud, 0.1, 4).unwrap().len() as f64;
    let (mean, sd) = (18000.0, (20000.0f64 * 0.1 * 0.9).sqrt());
    assert!((kept - mean).abs() < 5.0 * sd, "{kept}");
    assert!(drop_points(&cloud, 1.5, 0).is_err());
}
