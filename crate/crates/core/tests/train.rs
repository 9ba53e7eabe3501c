use dynspan::attention::masked_softmax;
use dynspan::model::{Model, ModelConfig, Recording, Variant};
use dynspan::nn::{Mode, Params};
use dynspan::scene::{synth_batch, Scenario};
use dynspan::train::{dataset_loss, gradcheck, loss_and_grad, resume, train, Dataset, LossWeights, TrainConfig};
use dynspan::Error;
use proptest::prelude::*;

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 4,
        repeated_modules: 1,
        max_span: 20,
        ..ModelConfig::new(variant)
    }
}

fn data(scenario: Scenario, count: usize) -> Dataset {
    let scenes = synth_batch(&scenario.spec(8000), count, 5).unwrap();
    Dataset::from_generated(&scenes).unwrap()
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        learning_rate: lr,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_the_loss_constant() {
    let d = data(Scenario::TimeInvariant, 4);
    let mut model = Model::build(small_config(Variant::AllDas), 1).unwrap();
    let r = train(&mut model, &d, &cfg(3, 0.0)).unwrap();
    for l in r.epoch_losses.iter().chain([&r.final_loss]) {
        assert!((l - r.initial_loss).abs() <= 1e-12, "{l} vs {}", r.initial_loss);
    }
}

#[test]
fn same_seed_gives_identical_curves() {
    let d = data(Scenario::VariantDelay, 3);
    let run = || {
        let mut model = Model::build(small_config(Variant::AllDas), 2).unwrap();
        train(&mut model, &d, &cfg(2, 1e-3)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.epoch_losses, b.epoch_losses);
    assert_eq!(a.final_loss, b.final_loss);
    assert_eq!(a.spans, b.spans);
    assert!(a.final_loss < a.initial_loss);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data(Scenario::TimeInvariant, 3);
    let mut full = Model::build(small_config(Variant::GtsaDas), 3).unwrap();
    let whole = train(&mut full, &d, &cfg(3, 1e-3)).unwrap();

    let path = tmp.path().join("run.ckpt");
    let mut part = Model::build(small_config(Variant::GtsaDas), 3).unwrap();
    let mut c = cfg(2, 1e-3);
    c.checkpoint = Some(path.clone());
    train(&mut part, &d, &c).unwrap();
    c.epochs = 3;
    let (_, resumed) = resume(&path, &d, &c).unwrap();
    assert_eq!(resumed.epoch_losses.len(), 3);
    for (x, y) in whole.epoch_losses.iter().zip(&resumed.epoch_losses) {
        assert!((x - y).abs() <= 1e-6);
    }
    assert!((whole.final_loss - resumed.final_loss).abs() <= 1e-6);
    assert_eq!(resumed.initial_loss, whole.initial_loss);
}

#[test]
fn nan_loss_names_the_tensor() {
    let d = data(Scenario::TimeInvariant, 2);
    let mut model = Model::build(small_config(Variant::AllDas), 4).unwrap();
    model.visit_mut("", &mut |name, p| {
        if name == "head.weight" {
            p.value[0] = f64::NAN;
        }
    });
    match train(&mut model, &d, &cfg(1, 1e-3)) {
        Err(Error::NanLoss(msg)) => assert!(msg.contains("head.weight"), "{msg}"),
        other => panic!("expected NanLoss, got {other:?}"),
    }
}

#[test]
fn span_heads_receive_gradient_when_delay_varies() {
    let d = data(Scenario::VariantDelay, 2);
    let mut model = Model::build(small_config(Variant::AllDas), 5).unwrap();
    let mics: Vec<_> = d.examples.iter().map(|e| e.mic.clone()).collect();
    let refs: Vec<_> = d.examples.iter().map(|e| e.reference.clone()).collect();
    let mut rec = Recording::new();
    let est = model.forward_batch(&mics, &refs, Mode::Train, &mut rec).unwrap();
    let grads: Vec<_> = est
        .iter()
        .zip(&d.examples)
        .map(|(e, x)| loss_and_grad(e, &x.target, LossWeights::default()).unwrap().1 / 2.0)
        .collect();
    model.zero_grad();
    model.backward(&mut rec, &grads).unwrap();
    let mut norms = Vec::new();
    model.visit("", &mut |name, p| {
        if name.contains("span") && name.ends_with(".v") {
            norms.push((name, p.grad.iter().map(|g| g * g).sum::<f64>().sqrt()));
        }
    });
    assert!(!norms.is_empty());
    assert!(norms.iter().any(|(_, n)| *n > 0.0), "{norms:?}");
    let ta = norms.iter().find(|(n, _)| n == "merge.span.v").unwrap();
    assert!(ta.1 > 0.0);
}

#[test]
fn dataset_loss_does_not_update() {
    let d = data(Scenario::TimeInvariant, 2);
    let mut model = Model::build(small_config(Variant::AllDas), 6).unwrap();
    let c = cfg(1, 1e-3);
    let before = model.to_checkpoint();
    let a = dataset_loss(&mut model, &d, &c).unwrap();
    let b = dataset_loss(&mut model, &d, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(before, model.to_checkpoint());
}

#[test]
fn gradcheck_all_das_passes_including_span_heads() {
    let r = gradcheck(Variant::AllDas, 0).unwrap();
    assert!(r.passed(), "{}", r.to_text());
    let v = r.block("merge.span.v").unwrap();
    assert!(v.checked > 0 && v.max_rel_error <= 1e-4);
    let b = r.block("merge.span.b").unwrap();
    assert!(b.checked > 0 && b.max_rel_error <= 1e-4);
    for g in 0..5 {
        let v = r.block(&format!("modules.0.gtsa.span{g}.v")).unwrap();
        assert!(v.checked > 0 && v.max_rel_error <= 1e-4, "{}", r.to_text());
    }
}

#[test]
fn gradcheck_fixed_window_projections_pass() {
    let r = gradcheck(Variant::BaselineTa, 1).unwrap();
    assert!(r.passed(), "{}", r.to_text());
    for proj in ["query", "key", "value"] {
        let blocks: Vec<_> = r.blocks.iter().filter(|b| b.name.starts_with(&format!("merge.{proj}."))).collect();
        assert!(!blocks.is_empty(), "{proj}");
        assert!(blocks.iter().all(|b| b.max_rel_error <= 1e-4));
    }
}

proptest! {
    #[test]
    fn scores_at_zero_mask_positions_do_not_matter(
        scores in prop::collection::vec(-30.0f64..30.0, 2..40),
        junk in prop::collection::vec(-1e6f64..1e6, 40),
        z in 0.5f64..30.0,
    ) {
        let masks: Vec<f64> = (0..scores.len())
            .map(|lag| ((2.0 + z - lag as f64) / 2.0).clamp(0.0, 1.0))
            .collect();
        let altered: Vec<f64> = scores
            .iter()
            .zip(&masks)
            .zip(&junk)
            .map(|((s, m), j)| if *m == 0.0 { *j } else { *s })
            .collect();
        let a = masked_softmax(&scores, &masks).unwrap();
        let b = masked_softmax(&altered, &masks).unwrap();
        prop_assert_eq!(a, b);
    }
}
