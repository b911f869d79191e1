//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use dadin::data::{Domain, DomainPaths, Instance, ItemField, Schema};
use dadin::loss::LossWeights;
use dadin::model::{Dadin, FeatureLayout, FieldSpec, ModelConfig, Targets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Root of the bundled CSV fixture.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

pub fn fixture_paths() -> (DomainPaths, Schema) {
    let dir = fixture_dir();
    let schema = Schema::load(&dir.join("schema.toml")).expect("bundled schema");
    (
        DomainPaths {
            target: dir.join("target.csv"),
            source: dir.join("source.csv"),
        },
        schema,
    )
}

pub fn tiny_layout() -> FeatureLayout {
    FeatureLayout {
        profile: vec![FieldSpec::new("user", 6), FieldSpec::new("segment", 4)],
        target_item: vec![FieldSpec::new("ad", 7), FieldSpec::new("ad category", 4)],
        source_item: vec![FieldSpec::new("article", 8)],
    }
}

pub fn tiny_config(d: usize, seqlen: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: d,
        seqlen,
        dnn_hidden: vec![6],
        predictor_hidden: 5,
        ..ModelConfig::default()
    }
}

/// A random instance valid for [`tiny_layout`].
pub fn random_instance<R: Rng>(rng: &mut R, domain: Domain, record_id: usize) -> Instance {
    let hist = |rng: &mut R, vocab: usize| -> Vec<usize> {
        let n = rng.random_range(0..4);
        (0..n).map(|_| rng.random_range(1..vocab)).collect()
    };
    let item = match domain {
        Domain::Target => ItemField::Target(vec![rng.random_range(1..7), rng.random_range(1..4)]),
        Domain::Source => ItemField::Source(vec![rng.random_range(1..8)]),
    };
    Instance {
        record_id,
        user: rng.random_range(0..6),
        profile: vec![rng.random_range(1..6), rng.random_range(1..4)],
        target_history: hist(rng, 7),
        source_history: hist(rng, 8),
        item,
        y: f64::from(rng.random_range(0..2u8)),
        domain,
        timestamp: 0,
    }
}

/// Adds Gaussian noise of scale `sigma` to every parameter, moving the model
/// away from the symmetric initial point where all rows predict about 0.5.
pub fn jitter(model: &mut Dadin, sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    for p in model.params_mut().iter_mut() {
        for x in p.value.data_mut() {
            *x += rng.sample(normal);
        }
    }
}

/// Jitters `model` and lifts the domain-agnostic bias so the ReLU passes
/// most units; a dead layer would hide every path through the classifiers.
pub fn perturb(model: &mut Dadin, sigma: f64, seed: u64) {
    jitter(model, sigma, seed);
    if let Some(b) = model.params_mut().by_name_mut("domain_agnostic.b") {
        b.value.data_mut().iter_mut().for_each(|x| *x += 1.0);
    }
}

/// Fraction of nonzero entries of `h_DA` in an inference pass.
pub fn live_fraction(model: &Dadin, batch: &[Instance]) -> f64 {
    let h = model.predict(batch).expect("forward").h_da;
    h.data().iter().filter(|&&x| x != 0.0).count() as f64 / h.numel() as f64
}

/// `L_y` and the weighted total of one training-mode pass whose dropout
/// masks come from `mask_seed`.
pub fn loss_parts(model: &Dadin, batch: &[Instance], w: &LossWeights, mask_seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut fwd = model.forward(batch, true, &mut rng).expect("forward");
    let (_, parts) = fwd.objective(&Targets::from_instances(batch), w).expect("objective");
    (parts.l_y, parts.total)
}

/// Finite-difference oracle for the gradient the tape should produce.
///
/// Domain-classifier parameters descend the plain objective. Every other
/// parameter reaches the domain losses only through a reversal, so its
/// expected gradient is `∂(λ1 L_y) − ∂(domain terms)`, which is
/// `2 ∂(λ1 L_y) − ∂total`.
pub fn expected_gradient(
    model: &mut Dadin,
    batch: &[Instance],
    w: &LossWeights,
    mask_seed: u64,
    name: &str,
    index: usize,
    step: f64,
) -> f64 {
    let partition = model.params().by_name(name).expect("parameter").partition;
    let eval = |delta: f64, model: &mut Dadin| {
        let p = model.params_mut().by_name_mut(name).unwrap();
        let orig = p.value.data()[index];
        p.value.data_mut()[index] = orig + delta;
        let out = loss_parts(model, batch, w, mask_seed);
        model.params_mut().by_name_mut(name).unwrap().value.data_mut()[index] = orig;
        out
    };
    let (ly_p, tot_p) = eval(step, model);
    let (ly_m, tot_m) = eval(-step, model);
    let d_total = (tot_p - tot_m) / (2.0 * step);
    let d_y = w.lambda1 * (ly_p - ly_m) / (2.0 * step);
    if partition.is_domain_classifier() {
        d_total
    } else {
        2.0 * d_y - d_total
    }
}

/// Relative error with a floor that keeps vanishing gradients from
/// dividing by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// [`expected_gradient`] with Richardson extrapolation over steps `h` and
/// `h/2`, which cancels the leading truncation term.
pub fn expected_gradient_richardson(
    model: &mut Dadin,
    batch: &[Instance],
    w: &LossWeights,
    mask_seed: u64,
    name: &str,
    index: usize,
    step: f64,
) -> f64 {
    let coarse = expected_gradient(model, batch, w, mask_seed, name, index, step);
    let fine = expected_gradient(model, batch, w, mask_seed, name, index, step / 2.0);
    (4.0 * fine - coarse) / 3.0
}
