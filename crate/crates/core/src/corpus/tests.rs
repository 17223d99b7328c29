use proptest::prelude::*;

use super::align::source_index;
use super::*;

fn utt(id: &str, speaker: &str, codec_rate: f64, codec: Vec<Vec<u32>>, content_rate: f64, content: Vec<u32>) -> Utterance {
    let t = content.len();
    Utterance {
        id: id.into(),
        codec: CodecStream {
            name: "toy".into(),
            frame_rate_hz: codec_rate,
            num_scales: codec.len(),
            cardinality: 8,
            tokens: codec,
        },
        attributes: AttributeStreams {
            content: ContentStream { frame_rate_hz: content_rate, cardinality: 100, tokens: content },
            pitch: PitchStream {
                frame_rate_hz: content_rate,
                values_hz: (0..t).map(|i| if i % 3 == 0 { 0.0 } else { 100.0 + i as f64 }).collect(),
            },
            loudness: LoudnessStream {
                frame_rate_hz: content_rate,
                values_db: (0..t).map(|i| -30.0 + (i % 7) as f64).collect(),
            },
            speaker: SpeakerInfo { id: speaker.into(), embedding: Some(vec![0.6, 0.8]) },
        },
    }
}

fn simple(id: &str, t: usize) -> Utterance {
    utt(
        id,
        "spk",
        50.0,
        vec![(0..t as u32).map(|i| i % 8).collect(), (0..t as u32).map(|i| (i * 3) % 8).collect()],
        50.0,
        (0..t as u32).map(|i| i % 100).collect(),
    )
}

#[test]
fn single_record_loads() {
    let c = TokenCorpus::new(vec![simple("a", 10)]).unwrap();
    let back = parse_corpus(&c.to_jsonl(), Parallelism::Sequential).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back, c);
}

#[test]
fn token_equal_to_cardinality_is_rejected_with_line_number() {
    let good = simple("a", 5);
    let mut bad = simple("b", 5);
    bad.codec.tokens[1][2] = 8;
    let text = format!(
        "{}\n{}\n",
        serde_json::to_string(&good).unwrap(),
        serde_json::to_string(&bad).unwrap()
    );
    match parse_corpus(&text, Parallelism::Parallel) {
        Err(Error::Record { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("token out of range"), "{message}");
        }
        other => panic!("expected a record error, got {other:?}"),
    }
}

#[test]
fn duplicate_ids_and_malformed_json_are_errors() {
    let a = serde_json::to_string(&simple("a", 4)).unwrap();
    let err = parse_corpus(&format!("{a}\n{a}\n"), Parallelism::Sequential).unwrap_err();
    assert!(err.to_string().contains("duplicate"), "{err}");
    let err = parse_corpus(&format!("{a}\n{{\"id\": 3}}\n"), Parallelism::Sequential).unwrap_err();
    assert!(matches!(err, Error::Record { line: 2, .. }));
}

#[test]
fn invariant_violations_name_the_invariant() {
    let mut u = simple("a", 4);
    u.attributes.pitch.values_hz[1] = 10.0;
    assert!(u.validate().unwrap_err().contains("outside"));
    let mut u = simple("a", 4);
    u.attributes.speaker.embedding = Some(vec![1.0, 1.0]);
    assert!(u.validate().unwrap_err().contains("norm"));
    let mut u = simple("a", 4);
    u.codec.tokens[1].pop();
    assert!(u.validate().unwrap_err().contains("length"));
    let mut u = simple("a", 4);
    u.attributes.content.tokens[0] = 100;
    assert!(u.validate().unwrap_err().contains("token out of range"));
}

#[test]
fn many_speakers_load() {
    let utts: Vec<Utterance> = (0..720)
        .map(|i| {
            let mut u = simple(&format!("u{i:03}"), 6);
            u.attributes.speaker.id = format!("spk{:02}", i % 24);
            u
        })
        .collect();
    let text = TokenCorpus::new(utts).unwrap().to_jsonl();
    let c = parse_corpus(&text, Parallelism::Parallel).unwrap();
    assert_eq!(c.len(), 720);
    assert_eq!(c.speakers().len(), 24);
}

#[test]
fn aligning_equal_rate_streams_is_identity() {
    let u = simple("a", 12);
    let a = align_streams(&u, 50.0).unwrap();
    assert_eq!(a.len(), 12);
    assert_eq!(a.to_utterance(), u);
}

#[test]
fn decimation_keeps_every_fourth_content_frame() {
    let codec = vec![(0..50).map(|i| i % 8).collect()];
    let content: Vec<u32> = (0..200).map(|i| i % 100).collect();
    let u = utt("a", "s", 12.5, codec, 50.0, content.clone());
    let a = align_streams(&u, 12.5).unwrap();
    assert_eq!(a.len(), 50);
    // index-arithmetic oracle: 50 Hz -> 12.5 Hz keeps 0, 4, 8, ..., 196
    let want: Vec<u32> = (0..50).map(|i| content[4 * i]).collect();
    assert_eq!(a.content, want);
    assert_eq!(a.codec_tokens[0], u.codec.tokens[0]);
}

#[test]
fn longer_stream_loses_its_tail() {
    let codec = vec![(0..200).map(|i| i % 8).collect()];
    let content: Vec<u32> = (0..201).map(|i| i % 100).collect();
    let u = utt("a", "s", 50.0, codec, 50.0, content.clone());
    let a = align_streams(&u, 50.0).unwrap();
    // duration = min(201/50, 200/50) = 4.0 s -> floor(4.0 * 50) = 200
    assert_eq!(a.len(), 200);
    assert_eq!(a.content, content[..200]);
}

#[test]
fn hold_repeat_upsamples_slower_streams() {
    let codec = vec![(0..10).map(|i| i % 8).collect()];
    let content: Vec<u32> = (0..40).map(|i| i % 100).collect();
    let u = utt("a", "s", 12.5, codec, 50.0, content);
    let a = align_streams(&u, 50.0).unwrap();
    assert_eq!(a.len(), 40);
    let want: Vec<u32> = (0..40).map(|i| u.codec.tokens[0][i / 4]).collect();
    assert_eq!(a.codec_tokens[0], want);
}

#[test]
fn alignment_errors() {
    let mut u = simple("a", 4);
    u.attributes.loudness.values_db.clear();
    assert!(align_streams(&u, 50.0).is_err());
    let u = simple("a", 4);
    assert!(align_streams(&u, 0.0).is_err());
    assert!(align_streams(&u, 33.0).is_err(), "undeclared target rate");
}

#[test]
fn pitch_binning_examples() {
    let b = BinningConfig::default();
    assert_eq!(b.pitch_bin(0.0), 0);
    assert_eq!(b.pitch_bin(50.0), 1);
    // 1 + floor(64 * ln(158.1/50) / ln 10); 50-digit evaluation gives 31.9976, so 32
    assert_eq!(b.pitch_bin(158.1), 32);
    assert_eq!(b.pitch_bin(500.0), 64);
    assert_eq!(b.pitch_bin(1500.0), 64);
    assert_eq!(b.pitch_bin(30.0), 1);
    assert_eq!(b.loudness_bin(-60.0), 0);
    assert_eq!(b.loudness_bin(0.0), 31);
    assert_eq!(b.loudness_bin(-100.0), 0);
    assert_eq!(b.loudness_bin(-29.0), 16);
}

#[test]
fn quantize_maps_speaker_and_passes_content() {
    let u = simple("a", 9);
    let a = align_streams(&u, 50.0).unwrap();
    let table = SpeakerTable::from_ids(["other", "spk"]);
    let q = quantize_attributes(&a, &BinningConfig::default(), &table).unwrap();
    assert_eq!(q.speaker, 1);
    assert_eq!(q.content, a.content);
    assert_eq!(q.pitch[0], 0);
    let err = quantize_attributes(&a, &BinningConfig::default(), &SpeakerTable::from_ids(["x"]))
        .unwrap_err();
    assert!(err.to_string().contains("spk"));
}

#[test]
fn codebook_round_trip_and_corruption() {
    let t = EmbeddingTable {
        scales: vec![
            codebook::CodebookScale::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap(),
            codebook::CodebookScale::new(1, 4, vec![0.25; 4]).unwrap(),
        ],
    };
    let bytes = t.to_bytes();
    assert_eq!(&bytes[..4], b"CBK1");
    assert_eq!(EmbeddingTable::from_bytes(&bytes).unwrap(), t);
    assert!(EmbeddingTable::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    assert!(t.scale(2).is_err());
}

fn arb_utterance() -> impl Strategy<Value = Utterance> {
    (1usize..4, 1usize..40, 0u64..1000).prop_map(|(m, t, seed)| {
        let codec = (0..m)
            .map(|s| (0..t).map(|i| ((i as u64 * 7 + s as u64 * 3 + seed) % 8) as u32).collect())
            .collect();
        let content = (0..t).map(|i| ((i as u64 * 13 + seed) % 100) as u32).collect();
        let mut u = utt(&format!("u{seed}"), "s", 50.0, codec, 50.0, content);
        u.attributes.loudness.values_db =
            (0..t).map(|i| -40.0 + (seed as f64).sin() * 3.0 + i as f64 * 0.123456789).collect();
        u
    })
}

proptest! {
    #[test]
    fn serialization_round_trips(us in proptest::collection::vec(arb_utterance(), 1..5)) {
        let mut us = us;
        let m = us[0].codec.num_scales;
        us.retain(|u| u.codec.num_scales == m);
        for (i, u) in us.iter_mut().enumerate() {
            u.id = format!("utt{i}");
        }
        let c = TokenCorpus::new(us).unwrap();
        let back = parse_corpus(&c.to_jsonl(), Parallelism::Parallel).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn resampling_never_invents_tokens(
        len in 1usize..300,
        r in prop_oneof![Just(12.5), Just(25.0), Just(50.0), Just(75.0)],
        g in prop_oneof![Just(12.5), Just(25.0), Just(50.0), Just(75.0)],
    ) {
        let dur = len as f64 / r;
        let out = (dur * g + 1e-9).floor() as usize;
        for i in 0..out {
            let j = source_index(i, r, g, len);
            prop_assert!(j < len);
            prop_assert_eq!(j, ((i as f64) * r / g + 1e-9).floor() as usize);
        }
    }

    #[test]
    fn alignment_is_idempotent(u in arb_utterance(), slow in any::<bool>()) {
        let mut u = u;
        if slow && u.codec.len() >= 2 {
            // content at twice the codec rate
            u.attributes.content.frame_rate_hz = 100.0;
        }
        let a = align_streams(&u, 50.0).unwrap();
        let again = align_streams(&a.to_utterance(), 50.0).unwrap();
        prop_assert_eq!(&again, &a);
        for s in 0..a.num_scales() {
            prop_assert!(a.codec_tokens[s].iter().all(|t| u.codec.tokens[s].contains(t)));
        }
        prop_assert!(a.content.iter().all(|t| u.attributes.content.tokens.contains(t)));
    }

    #[test]
    fn pitch_bins_are_monotone(p1 in 20.5f64..1999.0, p2 in 20.5f64..1999.0) {
        let b = BinningConfig::default();
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(b.pitch_bin(lo) <= b.pitch_bin(hi));
        prop_assert!((1..=64).contains(&b.pitch_bin(lo)));
    }
}
