use dynspan::dsp::{ComplexSpectrogram, Waveform};
use dynspan::model::{Model, ModelConfig, Recording, Variant, ALGORITHMIC_LATENCY_MS};
use dynspan::nn::gradcheck::{check_params, GradCheckOptions};
use dynspan::nn::{Mode, Params};
use dynspan::Error;
use ndarray::{s, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_spec(frames: usize, bins: usize, seed: u64) -> ComplexSpectrogram {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_simple_fn((2, frames, bins), || {
        let v: f64 = StandardNormal.sample(&mut r);
        v
    });
    ComplexSpectrogram::from_array(data).unwrap()
}

fn names(m: &Model) -> Vec<String> {
    m.manifest().into_iter().map(|(n, _, _)| n).collect()
}

#[test]
fn variants_differ_only_where_expected() {
    let base = Model::build(ModelConfig::tiny(Variant::BaselineTa), 1).unwrap();
    let das = Model::build(ModelConfig::tiny(Variant::TaDas), 1).unwrap();
    let (a, b) = (names(&base), names(&das));
    let extra: Vec<&String> = b.iter().filter(|n| !a.contains(n)).collect();
    assert_eq!(extra, ["merge.span.v", "merge.span.b"]);
    assert!(a.iter().all(|n| b.contains(n)));

    let all = names(&Model::build(ModelConfig::tiny(Variant::AllDas), 1).unwrap());
    assert!(all.contains(&"merge.span.v".to_string()));
    for i in 0..4 {
        for g in 0..5 {
            assert!(all.contains(&format!("modules.{i}.gtsa.span{g}.v")));
        }
    }
    let cat = Model::build(ModelConfig::tiny(Variant::BaselineCat), 1).unwrap();
    assert!(cat.ta().is_none());
    assert!(names(&cat).iter().all(|n| !n.contains("span") && !n.starts_with("merge.query")));
    let gtsa = names(&Model::build(ModelConfig::tiny(Variant::GtsaDas), 1).unwrap());
    assert!(!gtsa.contains(&"merge.span.v".to_string()));
    assert!(gtsa.contains(&"modules.3.gtsa.span4.b".to_string()));
}

#[test]
fn default_shapes() {
    let c = ModelConfig::default();
    assert_eq!((c.channels, c.repeated_modules, c.gtsa_groups, c.max_span), (16, 4, 5, 100));
    assert_eq!(c.encoded_bins(), 40);
    assert_eq!(c.attention_width(), 640);
    let m = Model::build(c, 0).unwrap();
    assert!(m.num_params() > 10_000);
    assert_eq!(ALGORITHMIC_LATENCY_MS, 30.0);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    Model::build(ModelConfig::tiny(Variant::AllDas), 9).unwrap().save(&a).unwrap();
    Model::build(ModelConfig::tiny(Variant::AllDas), 9).unwrap().save(&b).unwrap();
    Model::build(ModelConfig::tiny(Variant::AllDas), 10).unwrap().save(&c).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let loaded = Model::load(&a).unwrap();
    let original = Model::build(ModelConfig::tiny(Variant::AllDas), 9).unwrap();
    assert_eq!(loaded, original);
}

#[test]
fn forward_contract() {
    let m = Model::build(ModelConfig::tiny(Variant::AllDas), 2).unwrap();
    let mic = random_spec(20, 41, 1);
    let est = m.forward(&mic, &random_spec(20, 41, 2)).unwrap();
    assert_eq!((est.frames(), est.bins()), (20, 41));
    assert!(est.is_finite());
    assert!(matches!(
        m.forward(&mic, &random_spec(19, 41, 2)),
        Err(Error::Shape(_))
    ));
    let zeros = ComplexSpectrogram::zeros(20, 41);
    assert!(m.forward(&zeros, &zeros).unwrap().is_finite());
    assert!(m.forward(&mic, &zeros).unwrap().is_finite());
}

#[test]
fn future_frames_never_change_the_past() {
    for v in Variant::ALL {
        let m = Model::build(ModelConfig::tiny(v), 3).unwrap();
        let mic = random_spec(24, 41, 4);
        let reference = random_spec(24, 41, 5);
        let base = m.forward(&mic, &reference).unwrap();
        for t in [0, 7, 23] {
            let mut mic2 = mic.clone();
            mic2.data.slice_mut(s![.., t, ..]).mapv_inplace(|x| x * 3.0 + 1.0);
            let mut ref2 = reference.clone();
            ref2.data.slice_mut(s![.., t, ..]).mapv_inplace(|x| -x);
            let out = m.forward(&mic2, &ref2).unwrap();
            assert_eq!(
                out.data.slice(s![.., ..t, ..]),
                base.data.slice(s![.., ..t, ..]),
                "{v} frame {t}"
            );
            assert_ne!(out.data.slice(s![.., t, ..]), base.data.slice(s![.., t, ..]));
        }
    }
}

#[test]
fn streaming_matches_offline_for_every_variant() {
    for v in Variant::ALL {
        let m = Model::build(ModelConfig::tiny(v), 6).unwrap();
        let mic = random_spec(40, 41, 7);
        let reference = random_spec(40, 41, 8);
        let offline = m.forward(&mic, &reference).unwrap();
        let mut state = m.stream_state();
        for t in 0..40 {
            let y = m
                .stream_step(
                    &mut state,
                    mic.data.index_axis(Axis(1), t),
                    reference.data.index_axis(Axis(1), t),
                )
                .unwrap();
            assert_eq!(y, offline.data.index_axis(Axis(1), t), "{v} frame {t}");
            assert!(state.ring_lengths().iter().all(|&n| n <= 10));
        }
        let bad = ndarray::Array2::zeros((2, 40));
        assert!(m.stream_step(&mut state, bad.view(), bad.view()).is_err());
    }
}

#[test]
fn stream_memory_stops_growing() {
    let m = Model::build(ModelConfig::tiny(Variant::AllDas), 6).unwrap();
    let mic = random_spec(30, 41, 1);
    let mut state = m.stream_state();
    let mut sizes = Vec::new();
    for t in 0..30 {
        m.stream_step(&mut state, mic.data.index_axis(Axis(1), t), mic.data.index_axis(Axis(1), t))
            .unwrap();
        sizes.push(state.buffered_values(&m));
    }
    // Rings fill after T_w = 10 frames, the widest TCM history after 17.
    assert!(sizes[16..].iter().all(|&s| s == sizes[16]));
    assert!(sizes[5] < sizes[16]);
}

#[test]
fn backward_needs_a_recorded_forward() {
    let mut m = Model::build(ModelConfig::tiny(Variant::AllDas), 2).unwrap();
    let mut rec = Recording::new();
    assert!(matches!(m.backward(&mut rec, &[]), Err(Error::NoForward)));
    let x = random_spec(12, 41, 1);
    let y = m
        .forward_batch(&[x.clone()], &[x.clone()], Mode::Train, &mut rec)
        .unwrap();
    m.backward(&mut rec, &[y[0].data.clone()]).unwrap();
    assert!(matches!(m.backward(&mut rec, &[y[0].data.clone()]), Err(Error::NoForward)));
}

#[test]
fn model_gradients_match_finite_differences() {
    for v in [Variant::AllDas, Variant::BaselineCat] {
        let mut cfg = ModelConfig::tiny(v);
        cfg.repeated_modules = 2;
        let mut m = Model::build(cfg, 11).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(12);
        // Spread the spans so some keys sit on the mask ramp.
        m.visit_mut("", &mut |name, p| {
            if name.contains("span") && name.ends_with(".b") {
                p.value[0] = dynspan::attention::logit(0.35);
            }
            if name.contains("span") && name.ends_with(".v") {
                for x in &mut p.value {
                    let n: f64 = StandardNormal.sample(&mut r);
                    *x = 0.05 * n;
                }
            }
        });
        let mics = [random_spec(12, 41, 1), random_spec(12, 41, 2)];
        let refs = [random_spec(12, 41, 3), random_spec(12, 41, 4)];
        let w: Vec<Array3<f64>> = (0..2).map(|i| random_spec(12, 41, 10 + i).data).collect();
        let eval = |m: &Model| {
            let mut rec = Recording::new();
            let y = m.forward_batch(&mics, &refs, Mode::Train, &mut rec)?;
            let loss: f64 = y.iter().zip(&w).map(|(y, w)| (&y.data * w).sum()).sum();
            Ok((loss, rec.kink_signature()))
        };
        m.zero_grad();
        let mut rec = Recording::new();
        m.forward_batch(&mics, &refs, Mode::Train, &mut rec).unwrap();
        m.backward(&mut rec, &w).unwrap();
        let report = check_params(&mut m, &mut |m: &Model| eval(m), &GradCheckOptions::default(), &mut r).unwrap();
        assert!(report.passed(), "{v}\n{}", report.to_text());
    }
}

#[test]
fn enhance_handles_missing_reference_and_short_input() {
    let m = Model::build(ModelConfig::default(), 1).unwrap();
    let mic = Waveform::new((0..4000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect());
    let out = dynspan::model::enhance(&m, &mic, None, false).unwrap();
    assert_eq!(out.len(), mic.analyzable_len());
    assert!(out.is_finite());
    let short = Waveform::new(vec![0.1; 319]);
    let err = dynspan::model::enhance(&m, &short, None, false).unwrap_err();
    assert!(err.to_string().contains("input too short"));
    let streamed = dynspan::model::enhance(&m, &mic, Some(&mic), true).unwrap();
    let offline = dynspan::model::enhance(&m, &mic, Some(&mic), false).unwrap();
    let diff = streamed
        .samples
        .iter()
        .zip(&offline.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-4);
}
