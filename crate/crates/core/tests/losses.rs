mod common;

use proptest::prelude::*;

use common::{gradients, lovasz_oracle_gap, rel_err, rng, uniform, ConstantCritic, LinearCritic};
use titan_core::autodiff::Var;
use titan_core::image::IGNORE;
use titan_core::losses::{
    inverse_depth_smoothness, lovasz_softmax, mae, ssim_loss, weighted_cross_entropy, wgan_gp_d_loss, wgan_gp_d_loss_with,
    ClassFrequencies, LossReport,
};
use titan_core::tensor::Tensor;

fn softmax(x: &Tensor) -> Var {
    Var::constant(x.clone()).softmax(1)
}

#[test]
fn lovasz_matches_jaccard_on_hard_predictions() {
    let (gap, cases) = lovasz_oracle_gap(4, &[2, 3]);
    assert!(cases > 0);
    assert!(gap <= 1e-12, "{gap}");
}

#[test]
fn cross_entropy_by_hand() {
    // Two pixels, two classes; α = 1/√f.
    let p = Var::constant(Tensor::new(vec![1, 2, 1, 2], vec![0.8, 0.3, 0.2, 0.7]));
    let f = ClassFrequencies::new(vec![0.25, 0.75]).unwrap();
    let got = weighted_cross_entropy(&p, &[0, 1], &f).unwrap().item();
    let want = -(2.0 * 0.8f64.ln() + 0.75f64.sqrt().recip() * 0.7f64.ln()) / 2.0;
    assert!((got - want).abs() < 1e-14);
    let ignored = weighted_cross_entropy(&p, &[0, IGNORE], &f).unwrap().item();
    assert!((ignored + 2.0 * 0.8f64.ln()).abs() < 1e-14);
}

#[test]
fn invalid_segment_inputs_are_rejected() {
    let p = Var::constant(Tensor::full(&[1, 2, 1, 2], 0.7));
    assert!(lovasz_softmax(&p, &[0, 1]).is_err(), "mass 1.4 per pixel");
    let p = Var::constant(Tensor::full(&[1, 2, 1, 2], 0.5));
    assert!(lovasz_softmax(&p, &[0, 2]).is_err(), "label out of range");
    assert!(lovasz_softmax(&p, &[0]).is_err(), "label count");
    let f = ClassFrequencies::uniform(3);
    assert!(weighted_cross_entropy(&p, &[0, 1], &f).is_err());
}

#[test]
fn gradient_penalty_extremes() {
    let mut r = rng(3);
    let seg = [3, 2, 4, 4];
    let dep = [3, 1, 4, 4];
    let (rs, rd, fs, fd, c) = (
        uniform(&seg, 0.0, 1.0, &mut r),
        uniform(&dep, 0.0, 1.0, &mut r),
        uniform(&seg, 0.0, 1.0, &mut r),
        uniform(&dep, 0.0, 1.0, &mut r),
        uniform(&seg, 0.0, 1.0, &mut r),
    );
    let l = wgan_gp_d_loss(&ConstantCritic(-3.0), (&rs, &rd), (&fs, &fd), &c, 10.0, &mut r).unwrap();
    assert_eq!(l.penalty, 10.0);
    assert_eq!(l.wasserstein, 0.0);
    let lin = LinearCritic::unit(&seg[1..], &dep[1..], 4);
    let l = wgan_gp_d_loss(&lin, (&rs, &rd), (&fs, &fd), &c, 10.0, &mut r).unwrap();
    assert!(l.penalty < 1e-12, "{}", l.penalty);

    // A critic with gradient norm 2 everywhere pays λ·(2 − 1)².
    let double = LinearCritic { w_seg: lin.w_seg.map(|v| 2.0 * v), w_depth: lin.w_depth.map(|v| 2.0 * v) };
    let l = wgan_gp_d_loss_with(&double, (&rs, &rd), (&fs, &fd), &c, 10.0, &[0.1, 0.5, 0.9]).unwrap();
    assert!((l.penalty - 10.0).abs() < 1e-12);
    assert!(wgan_gp_d_loss_with(&double, (&rs, &rd), (&fs, &fd), &c, 10.0, &[0.5]).is_err());
}

#[test]
fn penalty_gradient_reaches_critic_weights() {
    // d/dw of λ(‖w‖ − 1)² for a linear critic is 2λ(‖w‖ − 1)·w/‖w‖.
    let mut r = rng(8);
    let seg = [2, 2, 3, 3];
    let dep = [2, 1, 3, 3];
    let (rs, rd, fs, fd, c) = (
        uniform(&seg, 0.0, 1.0, &mut r),
        uniform(&dep, 0.0, 1.0, &mut r),
        uniform(&seg, 0.0, 1.0, &mut r),
        uniform(&dep, 0.0, 1.0, &mut r),
        uniform(&seg, 0.0, 1.0, &mut r),
    );
    let w0 = uniform(&[27], -0.5, 0.5, &mut r);
    let f = |w: &Var| {
        let critic = VarCritic(w.clone());
        wgan_gp_d_loss_with(&critic, (&rs, &rd), (&fs, &fd), &c, 10.0, &[0.3, 0.6]).unwrap().loss
    };
    let (a, n) = gradients(&f, &w0, 1e-5);
    assert!(rel_err(&a, &n) < 1e-6, "{}", rel_err(&a, &n));
}

/// Linear critic whose weights are a differentiable variable.
struct VarCritic(Var);

impl titan_core::losses::Critic for VarCritic {
    fn score(&self, seg: &Var, depth: &Var, _c: &Var) -> titan_core::Result<Var> {
        let b = seg.shape()[0];
        let x = Var::concat(&[seg.reshape(&[b, 18]), depth.reshape(&[b, 9])], 1);
        Ok(self.0.reshape(&[1, 27]).broadcast_to(&[b, 27]).mul(&x).sum_to(&[b, 1]).reshape(&[b]))
    }
}

#[test]
fn depth_losses_vanish_on_targets() {
    let mut r = rng(1);
    let t = uniform(&[2, 1, 6, 6], 0.1, 1.0, &mut r);
    assert_eq!(mae(&Var::constant(t.clone()), &t).unwrap().item(), 0.0);
    assert!(ssim_loss(&Var::constant(t.clone()), &t, 3).unwrap().item().abs() < 1e-12);
    let flat = Tensor::full(&[1, 1, 5, 5], 0.4);
    let guide = uniform(&[1, 1, 5, 5], 0.0, 1.0, &mut r);
    assert_eq!(inverse_depth_smoothness(&Var::constant(flat), &guide).unwrap().item(), 0.0);
    // Planes have no second derivative either.
    let plane = Tensor::from_fn(&[1, 1, 5, 5], |i| 0.1 * (i % 5) as f64 + 0.05 * (i / 5) as f64);
    assert!(inverse_depth_smoothness(&Var::constant(plane), &guide).unwrap().item() < 1e-14);
}

#[test]
fn ssim_window_must_fit() {
    let t = Tensor::full(&[1, 1, 4, 4], 0.5);
    assert!(ssim_loss(&Var::constant(t.clone()), &t, 5).is_err());
}

#[test]
fn report_flags_non_finite_components() {
    let r = LossReport::from_components(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0);
    assert_eq!(r.grand_total, 1.0 + 2.0 + 3.0 + 4.0 + 5.0 + 7.0);
    assert!(r.first_non_finite().is_none());
    let bad = LossReport { mae: f64::NAN, ..r };
    assert_eq!(bad.first_non_finite().map(|c| c.0), Some("mae"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn segment_losses_are_bounded(seed in any::<u64>(), classes in 2usize..5) {
        let mut r = rng(seed);
        let x = uniform(&[2, classes, 3, 3], -3.0, 3.0, &mut r);
        let labels: Vec<u8> = (0..18).map(|i| ((seed as usize + i * 7) % classes) as u8).collect();
        let p = softmax(&x);
        let ls = lovasz_softmax(&p, &labels).unwrap().item();
        prop_assert!((0.0..=1.0).contains(&ls));
        let wce = weighted_cross_entropy(&p, &labels, &ClassFrequencies::uniform(classes)).unwrap().item();
        prop_assert!(wce >= 0.0);
    }

    #[test]
    fn mae_is_symmetric_and_ssim_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = uniform(&[1, 1, 5, 5], 0.0, 1.0, &mut r);
        let b = uniform(&[1, 1, 5, 5], 0.0, 1.0, &mut r);
        let ab = mae(&Var::constant(a.clone()), &b).unwrap().item();
        let ba = mae(&Var::constant(b.clone()), &a).unwrap().item();
        prop_assert!((ab - ba).abs() < 1e-15);
        let s = ssim_loss(&Var::constant(a), &b, 3).unwrap().item();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn perfect_predictions_have_zero_lovasz(seed in any::<u64>()) {
        let labels: Vec<u8> = (0..9).map(|i| ((seed >> i) & 1) as u8 + (i % 3 == 0) as u8).collect();
        let p = Tensor::from_fn(&[1, 3, 3, 3], |i| (labels[i % 9] as usize == i / 9) as u8 as f64);
        prop_assert_eq!(lovasz_softmax(&Var::constant(p), &labels).unwrap().item(), 0.0);
    }
}
