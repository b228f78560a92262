mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{rng, uniform};
use titan_core::autodiff::{grad_values, Var};
use titan_core::losses::wgan_gp_d_loss_with;
use titan_core::network::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use titan_core::tensor::Tensor;

fn input(cfg: &GeneratorConfig, batch: usize, seed: u64) -> Tensor {
    let (w, h) = cfg.input_size;
    uniform(&[batch, 5 + cfg.num_classes, h, w], 0.0, 1.0, &mut rng(seed))
}

fn variants() -> Vec<GeneratorConfig> {
    let base = GeneratorConfig::default();
    vec![
        base.clone(),
        GeneratorConfig { encoder_pyramid: false, decoder_pyramid: false, ..base.clone() },
        GeneratorConfig { depth_head: false, ..base.clone() },
        GeneratorConfig { encoder_pyramid: false, ..base },
    ]
}

#[test]
fn output_shapes() {
    for cfg in variants() {
        let (g, p) = Generator::build(&cfg, 0).unwrap();
        let out = g.forward(&p.bind(false), &Var::constant(input(&cfg, 2, 1)), None).unwrap();
        let (w, h) = cfg.output_size;
        assert_eq!(out.logits.shape(), [2, cfg.num_classes, h, w]);
        assert_eq!(out.depth.as_ref().map(|d| d.shape().to_vec()), cfg.depth_head.then(|| vec![2, 1, h, w]));
        if let Some(d) = &out.depth {
            assert!(d.value().data().iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn wrong_input_is_rejected() {
    let cfg = GeneratorConfig::default();
    let (g, p) = Generator::build(&cfg, 0).unwrap();
    assert!(g.forward(&p.bind(false), &Var::constant(Tensor::zeros(&[1, 5, 16, 64])), None).is_err());
}

#[test]
fn every_generator_parameter_gets_gradient() {
    for cfg in variants() {
        let (g, p) = Generator::build(&cfg, 3).unwrap();
        let vars = p.bind(true);
        let out = g.forward(&vars, &Var::constant(input(&cfg, 2, 4)), None).unwrap();
        let (w, h) = cfg.output_size;
        let weights = uniform(&[2, cfg.num_classes, h, w], -1.0, 1.0, &mut rng(5));
        let mut loss = out.probabilities().mul_const(&weights).sum();
        if let Some(d) = &out.depth {
            loss = loss.add(&d.mul_const(&uniform(&[2, 1, h, w], -1.0, 1.0, &mut rng(6))).sum());
        }
        let grads = grad_values(&loss, &vars);
        for (name, gr) in p.names().iter().zip(&grads) {
            assert!(gr.data().iter().any(|v| *v != 0.0), "{name} has zero gradient in {cfg:?}");
        }
    }
}

#[test]
fn pyramid_adds_parameters() {
    let count = |cfg: &GeneratorConfig| Generator::build(cfg, 0).unwrap().1.count();
    let v = variants();
    assert!(count(&v[0]) > count(&v[1]));
    assert!(count(&v[0]) > count(&v[2]));
    assert!(count(&v[0]) > count(&v[3]) && count(&v[3]) > count(&v[1]));
}

#[test]
fn dropout_follows_the_rng() {
    let cfg = GeneratorConfig::default();
    let (g, p) = Generator::build(&cfg, 0).unwrap();
    let x = Var::constant(input(&cfg, 1, 2));
    let run = |seed: Option<u64>| {
        let mut r = seed.map(ChaCha8Rng::seed_from_u64);
        g.forward(&p.bind(false), &x, r.as_mut()).unwrap().logits.value().clone()
    };
    assert_eq!(run(None), run(None));
    assert_eq!(run(Some(1)), run(Some(1)));
    assert_ne!(run(Some(1)), run(Some(2)));
    assert_ne!(run(None), run(Some(1)));
}

#[test]
fn same_seed_same_weights() {
    let cfg = GeneratorConfig::default();
    assert_eq!(Generator::build(&cfg, 7).unwrap().1.values(), Generator::build(&cfg, 7).unwrap().1.values());
    assert_ne!(Generator::build(&cfg, 7).unwrap().1.values(), Generator::build(&cfg, 8).unwrap().1.values());
}

#[test]
fn gradient_penalty_trains_the_critic() {
    let (c, s, h, w) = (4, 2, 32, 128);
    let (d, p) = Discriminator::build(&DiscriminatorConfig::default(), c, true, 1).unwrap();
    let mut r = rng(2);
    let seg = [s, c, h, w];
    let dep = [s, 1, h, w];
    let (rs, rd, fs, fd, cond) = (
        uniform(&seg, 0.0, 1.0, &mut r),
        uniform(&dep, 0.0, 1.0, &mut r),
        uniform(&seg, 0.0, 1.0, &mut r),
        uniform(&dep, 0.0, 1.0, &mut r),
        uniform(&seg, 0.0, 1.0, &mut r),
    );
    let vars = p.bind(true);
    let critic = d.bind(&vars);
    let l = wgan_gp_d_loss_with(&critic, (&rs, &rd), (&fs, &fd), &cond, 10.0, &[0.25, 0.75]).unwrap();
    assert!(l.penalty > 0.0);
    // Only the penalty term: its second-order path must reach every weight.
    let penalty_only = l.loss.sub(&Var::scalar(l.wasserstein));
    let grads = grad_values(&penalty_only, &vars);
    let ws = grad_values(&l.loss, &vars);
    for ((name, g), full) in p.names().iter().zip(&grads).zip(&ws) {
        if name.ends_with("weight") {
            assert!(g.data().iter().any(|v| *v != 0.0), "{name}");
        }
        assert!(full.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn critic_without_depth_ignores_it() {
    let c = 4;
    let (d, p) = Discriminator::build(&DiscriminatorConfig::default(), c, false, 1).unwrap();
    let vars = p.bind(false);
    let mut r = rng(3);
    let seg = Var::constant(uniform(&[1, c, 16, 16], 0.0, 1.0, &mut r));
    let cond = Var::constant(uniform(&[1, c, 16, 16], 0.0, 1.0, &mut r));
    let a = d.forward(&vars, &seg, &Var::constant(Tensor::zeros(&[1, 1, 16, 16])), &cond).unwrap();
    let b = d.forward(&vars, &seg, &Var::constant(Tensor::full(&[1, 1, 16, 16], 5.0)), &cond).unwrap();
    assert_eq!(a.value(), b.value());
    assert_eq!(a.shape(), [1]);
}
