use dynspan::attention::{logit, Window};
use dynspan::dsp::{stft, ComplexSpectrogram};
use dynspan::metrics::count_macs;
use dynspan::model::{Model, ModelConfig, Variant};
use dynspan::nn::Params;
use dynspan::scene::{synth_batch, Scenario};

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 4,
        repeated_modules: 2,
        ..ModelConfig::new(variant)
    }
}

fn utterance() -> (ComplexSpectrogram, ComplexSpectrogram) {
    let s = &synth_batch(&Scenario::VariantDelay.spec(24_000), 1, 9).unwrap()[0].signals;
    (stft(&s.mic).unwrap(), stft(&s.reference).unwrap())
}

fn set_spans(model: &mut Model, fraction: f64) {
    model.visit_mut("", &mut |name, p| {
        if name.contains("span") {
            if name.ends_with(".b") {
                p.value[0] = logit(fraction);
            } else {
                p.value.fill(0.0);
            }
        }
    });
}

#[test]
fn fixed_window_frames_cost_two_tw_width() {
    let model = Model::build(config(Variant::BaselineTa), 0).unwrap();
    let (m, r) = utterance();
    let (_, trace) = model.forward_traced(&m, &r, &[]).unwrap();
    for module in &trace.modules {
        let g = &module.groups[0];
        assert!(!module.dynamic);
        for t in 99..trace.frames {
            assert_eq!(g.keys[t], 100);
        }
        let expected: u64 = module
            .groups
            .iter()
            .map(|g| g.keys.iter().map(|&n| 2 * n as u64 * module.width as u64).sum::<u64>())
            .sum();
        assert_eq!(module.attention_macs(), expected);
        let oracle: u64 = (0..trace.frames)
            .map(|t| 2 * (t + 1).min(100) as u64 * module.width as u64)
            .sum::<u64>()
            * module.groups.len() as u64;
        assert_eq!(module.attention_macs(), oracle);
    }
    let ta = trace.module("ta").unwrap();
    assert_eq!(ta.width, model.config.attention_width());
}

#[test]
fn span_of_thirty_scores_thirty_two_keys() {
    let w = Window {
        max_span: 100,
        ramp: 2.0,
    };
    assert_eq!(w.n_keys(Some(30.0), 200), 32);
    assert_eq!(w.n_keys(None, 200), 100);

    let mut model = Model::build(config(Variant::AllDas), 1).unwrap();
    set_spans(&mut model, 0.295);
    let (m, r) = utterance();
    let (_, trace) = model.forward_traced(&m, &r, &[]).unwrap();
    let ta = trace.module("ta").unwrap();
    let width = ta.width as u64;
    for t in 40..trace.frames {
        assert!((ta.groups[0].spans[t] - 29.5).abs() < 1e-9);
        assert_eq!(ta.groups[0].keys[t], 32);
    }
    let report = count_macs(&model, trace.frames, &trace);
    let ta_macs = report.attention.iter().find(|a| a.module == "ta").unwrap();
    let oracle: u64 = (0..trace.frames).map(|t| 2 * (t + 1).min(32) as u64 * width).sum();
    assert_eq!(ta_macs.total(), oracle);
    assert!(ta_macs.total() < ta_macs.full_window);
}

#[test]
fn das_never_costs_more_than_the_fixed_window() {
    let (m, r) = utterance();
    for (seed, fraction) in [(2, 0.9), (3, 0.5), (4, 0.999_999)] {
        let mut model = Model::build(config(Variant::AllDas), seed).unwrap();
        set_spans(&mut model, fraction);
        let (_, trace) = model.forward_traced(&m, &r, &[]).unwrap();
        let das = count_macs(&model, trace.frames, &trace);
        assert!(das.attention_total() <= das.full_window_total());
        let any_short = trace
            .modules
            .iter()
            .flat_map(|m| &m.groups)
            .any(|g| g.spans.iter().any(|&z| z <= 97.0));
        if any_short {
            assert!(das.attention_total() < das.full_window_total());
        }

        let fixed = Model::build(config(Variant::BaselineTa), seed).unwrap();
        let (_, ft) = fixed.forward_traced(&m, &r, &[]).unwrap();
        let fr = count_macs(&fixed, ft.frames, &ft);
        assert!(das.attention_total() <= fr.attention_total());
        assert_eq!(das.full_window_total(), fr.attention_total());
    }
}

#[test]
fn counting_leaves_outputs_unchanged() {
    let (m, r) = utterance();
    for v in Variant::ALL {
        let model = Model::build(config(v), 5).unwrap();
        let plain = model.forward(&m, &r).unwrap();
        let (traced, _) = model.forward_traced(&m, &r, &[10, 60]).unwrap();
        assert_eq!(plain, traced, "{v}");
    }
}
