mod common;

use common::*;
use flowvc::conversion::{batch_convert, convert, converted_utterance, read_manifest, ConversionRequest, MANIFEST_FILE};
use flowvc::features::{read_corpus, Utterance};
use flowvc::numerics::SeededRng;
use flowvc::priors::EncoderConfig;
use flowvc::training::{FlowModel, ModelMode};

fn setup(mode: ModelMode, seed: u64) -> (FlowModel, Vec<Utterance>, flowvc::features::SpeakerTable) {
    let mut rng = SeededRng::new(seed);
    let flow = tiny_flow(4);
    let enc = EncoderConfig {
        n_phonemes: 4,
        embed_dim: 4,
        out_dim: 4,
        ..EncoderConfig::default()
    };
    let model = random_model(mode, &flow, &enc, &mut rng);
    let speakers = toy_speakers(&mut rng, &["a", "b"], flow.speaker_dim);
    let utts = (0..4)
        .map(|i| toy_utterance(&mut rng, &format!("u{i}"), ["a", "b"][i % 2], 4, 7 + i, 4))
        .collect();
    (model, utts, speakers)
}

#[test]
fn converting_to_own_speaker_reproduces_the_source() {
    for mode in ModelMode::ALL {
        let (model, utts, speakers) = setup(mode, 1);
        for u in &utts {
            let c = convert(&model, u, &u.speaker_id, &speakers).unwrap();
            assert_eq!(c.mel.frames(), model.frames_used(u.frames()));
            assert_eq!(c.trimmed_frames, u.frames() - c.mel.frames());
            assert!(c.mel.max_abs_diff(&u.mel.truncate_frames(c.mel.frames())) < 1e-9, "{mode}");
        }
    }
}

#[test]
fn round_trip_through_another_speaker_returns_home() {
    for mode in ModelMode::ALL {
        let (model, utts, speakers) = setup(mode, 2);
        // Even lengths, so nothing is trimmed and the f0 normalization sees
        // the same frames on the way back.
        for u in utts.iter().filter(|u| u.frames() % 2 == 0) {
            let other = if u.speaker_id == "a" { "b" } else { "a" };
            let there = convert(&model, u, other, &speakers).unwrap();
            assert_eq!(there.trimmed_frames, 0);
            assert!(there.mel.max_abs_diff(&u.mel) > 1e-6);
            let away = converted_utterance(u, other, &there);
            let back = convert(&model, &away, &u.speaker_id, &speakers).unwrap();
            assert!(back.mel.max_abs_diff(&u.mel) < 1e-9, "{mode}");
        }
    }
}

/// Text-free models never read phoneme labels; the text-conditioned one does.
#[test]
fn text_free_output_ignores_phoneme_labels() {
    for mode in ModelMode::ALL {
        let (model, utts, speakers) = setup(mode, 3);
        let u = &utts[1];
        let mut relabelled = u.clone();
        relabelled.phoneme_ids.iter_mut().for_each(|p| *p = (*p + 1) % 4);
        let a = convert(&model, u, "a", &speakers).unwrap();
        let b = convert(&model, &relabelled, "a", &speakers).unwrap();
        let diff = a.mel.max_abs_diff(&b.mel);
        if mode.text_conditioned() {
            assert!(diff > 1e-6, "{mode}");
        } else {
            assert_eq!(diff, 0.0, "{mode}");
        }
    }
}

#[test]
fn batch_convert_records_failures_per_row() {
    let (model, utts, speakers) = setup(ModelMode::FreeJoint, 4);
    let dir = tempfile::tempdir().unwrap();
    let requests = vec![
        ConversionRequest {
            utterance_id: "u0".into(),
            target_speaker: "b".into(),
        },
        ConversionRequest {
            utterance_id: "missing".into(),
            target_speaker: "a".into(),
        },
        ConversionRequest {
            utterance_id: "u1".into(),
            target_speaker: "nobody".into(),
        },
    ];
    let rows = batch_convert(&model, &utts, &speakers, &requests, dir.path()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].status, "ok");
    assert_ne!(rows[1].status, "ok");
    assert_ne!(rows[2].status, "ok");
    assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), rows);
    let written = read_corpus(dir.path()).unwrap();
    assert_eq!(written.len(), 1);
    assert_eq!(written[0].id, "u0_to_b");
    assert_eq!(written[0].speaker_id, "b");
}

#[test]
fn short_utterance_is_rejected() {
    let (model, _, speakers) = setup(ModelMode::FreeJoint, 5);
    let mut rng = SeededRng::new(5);
    let u = toy_utterance(&mut rng, "short", "a", 4, 1, 4);
    assert!(convert(&model, &u, "b", &speakers).is_err());
}
