mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use common::rng;
use titan_core::image::{DepthMap, SegmentMap, IGNORE};
use titan_core::metrics::{confusion, depth_metrics, frechet_distance, iou, swd, ImagePlanes, SwdConfig};

/// Per-class IoU from explicit pixel sets.
fn iou_oracle(pred: &[u8], gt: &[u8], classes: usize) -> Vec<Option<f64>> {
    (0..classes as u8)
        .map(|c| {
            let valid = |i: &usize| gt[*i] != IGNORE;
            let p: Vec<usize> = (0..gt.len()).filter(valid).filter(|&i| pred[i] == c).collect();
            let g: Vec<usize> = (0..gt.len()).filter(valid).filter(|&i| gt[i] == c).collect();
            let inter = p.iter().filter(|i| g.contains(i)).count();
            let union = p.len() + g.len() - inter;
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

fn segmap(labels: Vec<u8>) -> SegmentMap {
    SegmentMap::new(labels.len(), 1, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_matches_set_oracle(seed in any::<u64>(), n in 1usize..60, classes in 2usize..6) {
        let mut r = rng(seed);
        let gt: Vec<u8> = (0..n).map(|_| if r.gen_bool(0.1) { IGNORE } else { r.gen_range(0..classes as u8) }).collect();
        let pred: Vec<u8> = (0..n).map(|_| r.gen_range(0..classes as u8)).collect();
        let report = iou(&confusion(&segmap(pred.clone()), &segmap(gt.clone()), classes).unwrap());
        let oracle = iou_oracle(&pred, &gt, classes);
        prop_assert_eq!(report.per_class.len(), oracle.len());
        for (a, b) in report.per_class.iter().zip(&oracle) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-15),
                (None, None) => {}
                _ => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
        let present: Vec<f64> = oracle.iter().flatten().copied().collect();
        if !present.is_empty() {
            prop_assert!((report.miou - present.iter().sum::<f64>() / present.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_thresholds_are_ordered(seed in any::<u64>(), n in 1usize..100) {
        let mut r = rng(seed);
        let gt: Vec<f64> = (0..n).map(|_| r.gen_range(0.5..80.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * r.gen_range(0.2..4.0)).collect();
        let d = depth_metrics(&DepthMap::new(n, 1, pred).unwrap(), &DepthMap::new(n, 1, gt).unwrap(), None).unwrap();
        prop_assert!(d.delta1 <= d.delta2 && d.delta2 <= d.delta3);
        prop_assert!(d.abs_rel >= 0.0 && d.rms >= 0.0 && d.rms_log10 >= 0.0);
    }

    #[test]
    fn relative_depth_errors_are_scale_free(seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut r = rng(seed);
        let gt: Vec<f64> = (0..20).map(|_| r.gen_range(1.0..50.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * r.gen_range(0.5..2.0)).collect();
        let a = depth_metrics(&DepthMap::new(20, 1, pred.clone()).unwrap(), &DepthMap::new(20, 1, gt.clone()).unwrap(), None).unwrap();
        let scale = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<_>>();
        let b = depth_metrics(&DepthMap::new(20, 1, scale(&pred)).unwrap(), &DepthMap::new(20, 1, scale(&gt)).unwrap(), None).unwrap();
        prop_assert!((a.abs_rel - b.abs_rel).abs() < 1e-12);
        prop_assert!((a.rms_log10 - b.rms_log10).abs() < 1e-12);
        prop_assert!((a.rms * s - b.rms).abs() < 1e-9 * b.rms.max(1.0));
        prop_assert_eq!((a.delta1, a.delta2), (b.delta1, b.delta2));
    }
}

#[test]
fn masked_pixels_are_skipped() {
    let gt = DepthMap::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let pred = DepthMap::new(4, 1, vec![1.0, 100.0, 3.0, 4.0]).unwrap();
    let d = depth_metrics(&pred, &gt, Some(&[true, false, true, true])).unwrap();
    assert_eq!((d.abs_rel, d.rms, d.delta1), (0.0, 0.0, 1.0));
}

#[test]
fn frechet_matches_diagonal_closed_form() {
    // Independent axes with scales σ and τ: Σ_k (μ_k − ν_k)² + (σ_k − τ_k)².
    let mut r = rng(21);
    let (sa, sb) = ([1.0, 2.0, 0.5], [1.5, 1.0, 0.5]);
    let (ma, mb) = ([0.0, 1.0, -1.0], [0.5, 1.0, 0.0]);
    let draw = |m: &[f64; 3], s: &[f64; 3], r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..40_000).map(|_| (0..3).map(|k| m[k] + s[k] * r.sample::<f64, _>(StandardNormal)).collect()).collect()
    };
    let (a, b) = (draw(&ma, &sa, &mut r), draw(&mb, &sb, &mut r));
    let want: f64 = (0..3).map(|k| (ma[k] - mb[k]).powi(2) + (sa[k] - sb[k]).powi(2)).sum();
    let got = frechet_distance(&a, &b).unwrap();
    assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
}

#[test]
fn swd_separates_shifted_sets() {
    let mut r = rng(5);
    let img = |r: &mut rand_chacha::ChaCha8Rng, shift: f64| ImagePlanes {
        channels: 1,
        width: 32,
        height: 32,
        data: (0..1024).map(|i| ((i % 32) as f64 / 8.0).sin() + shift * r.gen::<f64>()).collect(),
    };
    let a: Vec<_> = (0..4).map(|_| img(&mut r, 0.0)).collect();
    let b: Vec<_> = (0..4).map(|_| img(&mut r, 1.0)).collect();
    let cfg = SwdConfig { resolution: 32, ..Default::default() };
    let same = swd(&a, &a, &cfg).unwrap();
    assert_eq!(same.average, 0.0);
    assert_eq!(same.per_level.len(), 2);
    assert!(swd(&a, &b, &cfg).unwrap().average > 0.0);
    assert!(swd(&a, &[], &cfg).is_err());
}
