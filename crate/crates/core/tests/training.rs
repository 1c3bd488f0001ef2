mod common;

use common::*;
use flowvc::features::{SpeakerTable, Utterance};
use flowvc::flow::FlowConfig;
use flowvc::numerics::{FrameMatrix, SeededRng};
use flowvc::priors::EncoderConfig;
use flowvc::training::{
    corpus_bits_per_dim, initial_model, load_model, save_model, train, train_step, AdamConfig, ModelMode, TrainConfig,
    TrainData, TrainState,
};

fn small_setup(mode: ModelMode, seed: u64) -> (flowvc::training::FlowModel, TrainData) {
    let flow = FlowConfig {
        mel_dim: 4,
        n_steps: 4,
        hidden_channels: 6,
        speaker_dim: 3,
        split_channels: 2,
        ..FlowConfig::default()
    };
    let enc = EncoderConfig {
        n_phonemes: 3,
        embed_dim: 4,
        out_dim: 4,
        ..EncoderConfig::default()
    };
    let mut rng = SeededRng::new(seed);
    let speakers = toy_speakers(&mut rng, &["a", "b", "c"], 3);
    let utts: Vec<Utterance> = (0..9)
        .map(|i| toy_utterance(&mut rng, &format!("u{i}"), ["a", "b", "c"][i % 3], 4, 6 + i % 4, 3))
        .collect();
    let pre = (mode == ModelMode::FreePretrain).then(|| flowvc::priors::PhonemeEncoder::new(&enc, true, &mut rng).unwrap());
    let model = initial_model(mode, &flow, &enc, pre, seed).unwrap();
    let data = TrainData::new(utts, &speakers, mode).unwrap();
    (model, data)
}

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        seed: 9,
        optimizer: AdamConfig::default(),
        checkpoint_every: 0,
    }
}

#[test]
fn resumed_training_matches_uninterrupted_run_bitwise() {
    for mode in ModelMode::ALL {
        let (mut straight, data) = small_setup(mode, 1);
        let mut resumed = straight.clone();
        let mut s1 = TrainState::new(&straight);
        train(&mut straight, &mut s1, &data, &cfg(10), |_, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.fckp");
        let mut s2 = TrainState::new(&resumed);
        train(&mut resumed, &mut s2, &data, &cfg(5), |m, s| save_model(&path, m, Some(s))).unwrap();
        let (mut loaded, state) = load_model(&path).unwrap();
        let mut state = state.unwrap();
        assert_eq!(state.step, 5);
        train(&mut loaded, &mut state, &data, &cfg(10), |_, _| Ok(())).unwrap();

        assert_eq!(loaded.trainable_values(), straight.trainable_values(), "{mode}");
        assert_eq!(state.history, s1.history[5..], "{mode}");
        let a = train_step(&mut loaded, &mut state, &data, &cfg(11)).unwrap();
        let b = train_step(&mut straight, &mut s1, &data, &cfg(11)).unwrap();
        assert_eq!(a.nll.to_bits(), b.nll.to_bits());
    }
}

#[test]
fn batch_loss_does_not_depend_on_order() {
    for mode in ModelMode::ALL {
        let (mut model, data) = small_setup(mode, 2);
        let mut state = TrainState::new(&model);
        train_step(&mut model, &mut state, &data, &cfg(1)).unwrap();
        let fwd: Vec<usize> = (0..data.len()).collect();
        let rev: Vec<usize> = fwd.iter().rev().copied().collect();
        let (la, ga) = model.loss_and_gradient(&data.examples(&fwd)).unwrap();
        let (lb, gb) = model.loss_and_gradient(&data.examples(&rev)).unwrap();
        assert!((la.nll - lb.nll).abs() <= 1e-12 * la.nll.abs());
        let worst = ga.iter().zip(&gb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{mode}: {worst}");
    }
}

#[test]
fn frozen_encoder_is_untouched_and_trained_encoder_moves() {
    for mode in ModelMode::ALL {
        let (mut model, data) = small_setup(mode, 3);
        let before = model.encoder.params().hash();
        let mut state = TrainState::new(&model);
        train(&mut model, &mut state, &data, &cfg(5), |_, _| Ok(())).unwrap();
        let after = model.encoder.params().hash();
        assert_eq!(before == after, !mode.trains_encoder(), "{mode}");
    }
}

#[test]
fn likelihood_improves_in_every_mode() {
    for mode in ModelMode::ALL {
        let (mut model, data) = small_setup(mode, 4);
        let mut state = TrainState::new(&model);
        train(&mut model, &mut state, &data, &cfg(150), |_, _| Ok(())).unwrap();
        let h = &state.history;
        let early: f64 = h[..10].iter().map(|r| r.bits_per_dim).sum::<f64>() / 10.0;
        let late: f64 = h[h.len() - 10..].iter().map(|r| r.bits_per_dim).sum::<f64>() / 10.0;
        assert!(late < early - 0.2, "{mode}: {early} -> {late}");
    }
}

/// Correlated 2-D Gaussian frames: held-out bits/dim should approach the
/// differential entropy of the source. Per-frame couplings (kernel 1) keep
/// the model from memorizing training sequences.
#[test]
fn gaussian_source_reaches_entropy_bound() {
    let (a, b, c) = (1.0, 0.8, 0.6);
    let mut rng = SeededRng::new(5);
    let mut speakers = SpeakerTable::new();
    speakers.insert("s", vec![0.0]).unwrap();
    let mut corpus = |rng: &mut SeededRng, n: usize, frames: usize| -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let mut mel = FrameMatrix::zeros(2, frames);
                for t in 0..frames {
                    let (e1, e2) = (rng.standard_normal(), rng.standard_normal());
                    mel.set(0, t, a * e1);
                    mel.set(1, t, b * e1 + c * e2);
                }
                Utterance {
                    id: format!("g{i}"),
                    speaker_id: "s".into(),
                    mel,
                    f0_raw: vec![100.0; frames],
                    vuv: vec![true; frames],
                    phoneme_ids: vec![0; frames],
                    words: vec!["w".into()],
                }
            })
            .collect()
    };
    let train_set = corpus(&mut rng, 50, 40);
    let held_out = corpus(&mut rng, 50, 40);
    let flow = FlowConfig {
        mel_dim: 2,
        n_steps: 4,
        split_every: 0,
        split_channels: 0,
        hidden_channels: 8,
        kernel_width: 1,
        gated_layers: 1,
        speaker_dim: 1,
        ..FlowConfig::default()
    };
    let enc = EncoderConfig {
        n_phonemes: 1,
        embed_dim: 2,
        out_dim: 2,
        kernel_width: 1,
        ..EncoderConfig::default()
    };
    let mut model = initial_model(ModelMode::FreeJoint, &flow, &enc, None, 5).unwrap();
    let data = TrainData::new(train_set, &speakers, ModelMode::FreeJoint).unwrap();
    let mut state = TrainState::new(&model);
    let cfg = TrainConfig {
        steps: 400,
        batch_size: 16,
        optimizer: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        ..cfg(0)
    };
    train(&mut model, &mut state, &data, &cfg, |_, _| Ok(())).unwrap();
    let entropy_bits = {
        let det: f64 = (a * c) * (a * c);
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2() + 0.25 * det.log2()
    };
    let held = TrainData::new(held_out, &speakers, ModelMode::FreeJoint).unwrap();
    let bpd = corpus_bits_per_dim(&model, &held).unwrap();
    assert!((bpd - entropy_bits).abs() < 0.1, "held-out {bpd} vs entropy {entropy_bits}");
}
