mod common;

use common::*;
use dadin::data::{Domain, Instance};
use dadin::loss::LossWeights;
use dadin::model::{BranchNormalizer, Dadin, ModelConfig, Targets, VariantConfig};
use dadin::params::Partition;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Builds a perturbed model whose routing threshold sits in the widest gap
/// between two batch predictions. Both branches then receive rows and small
/// parameter changes never reroute one.
fn model_for(cfg: ModelConfig, batch: &[Instance], seed: u64) -> Dadin {
    let build = |cfg: ModelConfig| {
        let mut m = Dadin::new(cfg, tiny_layout(), seed).unwrap();
        perturb(&mut m, 0.5, seed + 100);
        m
    };
    let probe = build(cfg.clone());
    let mut ys = probe.predict(batch).unwrap().y_hat;
    ys.sort_by(f64::total_cmp);
    let (lo, hi) = ys
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
        .unwrap();
    let model = build(ModelConfig {
        threshold: (lo + hi) / 2.0,
        ..cfg
    });
    let routed = model.predict(batch).unwrap().branch;
    assert!(routed.contains(&0) && routed.contains(&1), "one branch is empty");
    if model.config().variant.use_domain_agnostic_layer {
        assert!(live_fraction(&model, batch) > 0.2, "domain-agnostic layer is mostly dead");
    }
    model
}

/// Largest relative error between tape and finite-difference gradients.
fn worst_error(model: &mut Dadin, batch: &[Instance], w: &LossWeights) -> f64 {
    let mask_seed = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut fwd = model.forward(batch, true, &mut rng).unwrap();
    let (loss, _) = fwd.objective(&Targets::from_instances(batch), w).unwrap();
    fwd.tape.backward(loss).unwrap();
    let grads = model.params().gradients(&fwd.tape, &fwd.bound);
    let names: Vec<(String, usize)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.numel()))
        .collect();
    let mut worst = 0.0f64;
    for (k, (name, n)) in names.iter().enumerate() {
        for i in 0..*n {
            let expected = expected_gradient_richardson(model, batch, w, mask_seed, name, i, 1e-4);
            worst = worst.max(relative_error(grads.0[k].data()[i], expected));
        }
    }
    worst
}

fn batch(seed: u64, n: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let d = if i % 2 == 0 { Domain::Target } else { Domain::Source };
            random_instance(&mut rng, d, i)
        })
        .collect()
}

#[test]
fn every_variant_matches_finite_differences() {
    let b = batch(1, 4);
    for name in VariantConfig::NAMES {
        let cfg = ModelConfig {
            variant: VariantConfig::named(name).unwrap(),
            ..tiny_config(3, 2)
        };
        let mut model = model_for(cfg, &b, 2);
        let err = worst_error(&mut model, &b, &LossWeights::default());
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn batch_normalizer_matches_finite_differences() {
    let b = batch(5, 5);
    let cfg = ModelConfig {
        branch_normalizer: BranchNormalizer::Batch,
        ..tiny_config(3, 3)
    };
    let mut model = model_for(cfg, &b, 4);
    let err = worst_error(&mut model, &b, &LossWeights::default());
    assert!(err < 1e-4, "relative error {err:e}");
}

fn gradients_of(model: &Dadin, b: &[Instance], w: &LossWeights) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fwd = model.forward(b, true, &mut rng).unwrap();
    let (loss, _) = fwd.objective(&Targets::from_instances(b), w).unwrap();
    fwd.tape.backward(loss).unwrap();
    model
        .params()
        .gradients(&fwd.tape, &fwd.bound)
        .iter()
        .map(|g| g.data().to_vec())
        .collect()
}

#[test]
fn detached_gate_only_cuts_the_path_through_the_prediction() {
    let b = batch(5, 6);
    let attached = model_for(tiny_config(3, 3), &b, 4);
    let cfg = ModelConfig {
        detach_gate: true,
        ..attached.config().clone()
    };
    let mut detached = Dadin::new(cfg, tiny_layout(), 0).unwrap();
    detached.load_params(attached.params()).unwrap();
    let w = LossWeights::default();
    let without_intra = LossWeights { lambda3: 0.0, ..w };
    let g_att = gradients_of(&attached, &b, &w);
    let g_det = gradients_of(&detached, &b, &w);
    let g_plain = gradients_of(&attached, &b, &without_intra);
    let mut label_differs = false;
    for (k, p) in attached.params().iter().enumerate() {
        match p.partition {
            Partition::Label => {
                // The predictor reaches the intra-class terms only through the gate.
                for (a, c) in g_det[k].iter().zip(&g_plain[k]) {
                    assert!((a - c).abs() <= 1e-12 * (1.0 + c.abs()), "{}", p.name);
                }
                label_differs |= g_att[k] != g_det[k];
            }
            part if part.is_domain_classifier() => assert_eq!(g_att[k], g_det[k], "{}", p.name),
            _ => {}
        }
    }
    assert!(label_differs, "the attached gate should feed the predictor");
}

#[test]
fn zero_domain_weights_leave_classifiers_without_gradient() {
    let b = batch(9, 4);
    let model = model_for(tiny_config(3, 2), &b, 6);
    let w = LossWeights {
        lambda2: 0.0,
        lambda3: 0.0,
        ..LossWeights::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut fwd = model.forward(&b, true, &mut rng).unwrap();
    let (loss, _) = fwd.objective(&Targets::from_instances(&b), &w).unwrap();
    fwd.tape.backward(loss).unwrap();
    let grads = model.params().gradients(&fwd.tape, &fwd.bound);
    for (p, g) in model.params().iter().zip(grads.iter()) {
        if p.partition.is_domain_classifier() {
            assert!(g.data().iter().all(|&x| x == 0.0), "{} has gradient", p.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_batches_match_finite_differences(
        seed in 0u64..10_000,
        n in 2usize..6,
        d in 2usize..5,
        alpha in 0.0f64..=1.0,
        lambda2 in 0.0f64..2.0,
        lambda3 in 0.0f64..2.0,
    ) {
        let b = batch(seed, n);
        let mut model = model_for(tiny_config(d, 2), &b, seed);
        let w = LossWeights { lambda1: 1.0, lambda2, lambda3, alpha };
        let err = worst_error(&mut model, &b, &w);
        prop_assert!(err < 1e-4, "relative error {err:e}");
    }
}
