use vqa_core::features::{ExtractorSpec, RegionFeatures};
use vqa_core::finetune::AnswerSpace;
use vqa_core::model::{
    load_model, save_model, Architecture, ModelArtifact, ModelError, PretrainedInfo, Stream, Vocab, VqaModel,
    FORMAT_VERSION, PAD,
};
use vqa_testkit::gradcheck::{check_gradients, random_ids, random_regions, random_targets, tiny_config};
use vqa_testkit::rng;

const ARCHS: [Architecture; 2] = [Architecture::SingleStream, Architecture::DualStream];
const N_ANSWERS: usize = 5;

fn tiny_model(arch: Architecture, seed: u64) -> VqaModel {
    let mut c = tiny_config(arch);
    c.seed = seed;
    VqaModel::new(c, N_ANSWERS).unwrap()
}

#[test]
fn attention_rows_are_stochastic_and_padding_is_ignored() {
    for arch in ARCHS {
        let model = tiny_model(arch, 1);
        let mut r = rng(11);
        for n_words in 1..=6 {
            let ids = random_ids(&mut r, model.config(), n_words);
            let regions = random_regions(&mut r, 1 + n_words % 4, 6);
            let out = model.forward(&ids, &regions).unwrap();
            let tm = &out.token_map;
            for m in &out.trace.maps {
                for row in m.weights.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-5, "{arch:?} {:?}", m.stream);
                    assert!(row.iter().all(|&w| w >= 0.0));
                }
                for (j, &w) in m.weights.row(0).iter().enumerate() {
                    if tm.is_padding(m.key_offset + j) {
                        assert_eq!(w, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for arch in ARCHS {
        let mut r = rng(5);
        let mut model = tiny_model(arch, 2);
        let config = model.config().clone();
        let ids = random_ids(&mut r, &config, 4);
        let regions = random_regions(&mut r, 3, 6);
        let targets = random_targets(&mut r, N_ANSWERS);
        let probes = check_gradients(&mut model, &ids, &regions, &targets, 20, &mut r);
        for p in probes {
            assert!(p.relative_error() <= 1e-3, "{arch:?}: {p:?} rel {}", p.relative_error());
        }
    }
}

#[test]
fn logits_ignore_padding_amount() {
    for arch in ARCHS {
        let model = tiny_model(arch, 3);
        let mut r = rng(3);
        let regions = random_regions(&mut r, 4, 6);
        let ids: Vec<u32> = vec![4, 7, 9];
        let base = model.forward(&ids, &regions).unwrap().logits;
        for pad in 1..=3 {
            let mut padded = ids.clone();
            padded.resize(ids.len() + pad, PAD);
            let l = model.forward(&padded, &regions).unwrap().logits;
            for (a, b) in base.iter().zip(&l) {
                assert!((a - b).abs() < 1e-9, "{arch:?} pad {pad}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn logits_ignore_region_order() {
    for arch in ARCHS {
        let model = tiny_model(arch, 4);
        let mut r = rng(4);
        let regions = random_regions(&mut r, 4, 6);
        let ids = random_ids(&mut r, model.config(), 3);
        let base = model.forward(&ids, &regions).unwrap();
        let order = [2, 0, 3, 1];
        let permuted = RegionFeatures {
            image_id: regions.image_id.clone(),
            boxes: order.iter().map(|&i| regions.boxes[i]).collect(),
            features: order.iter().map(|&i| regions.features[i].clone()).collect(),
        };
        let out = model.forward(&ids, &permuted).unwrap();
        for (a, b) in base.logits.iter().zip(&out.logits) {
            assert!((a - b).abs() < 1e-9, "{arch:?}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    for arch in ARCHS {
        let (a, b) = (tiny_model(arch, 9), tiny_model(arch, 9));
        let mut r = rng(9);
        let regions = random_regions(&mut r, 3, 6);
        let ids = random_ids(&mut r, a.config(), 2);
        let (oa, ob) = (a.forward(&ids, &regions).unwrap(), b.forward(&ids, &regions).unwrap());
        assert_eq!(oa.logits, ob.logits);
        assert_eq!(oa.trace, ob.trace);
        let c = tiny_model(arch, 10);
        assert_ne!(c.forward(&ids, &regions).unwrap().logits, oa.logits);
    }
}

fn artifact(arch: Architecture) -> ModelArtifact {
    let vocab = Vocab::build(["what color is it", "where is the square"]);
    let mut config = tiny_config(arch);
    config.vocab_size = vocab.len();
    let answers = AnswerSpace::from_labels((0..N_ANSWERS).map(|i| format!("a{i}")).collect(), 1);
    ModelArtifact {
        model: VqaModel::new(config, N_ANSWERS).unwrap(),
        vocab,
        answers,
        extractor: ExtractorSpec::grid(4, 6),
        pretrained: PretrainedInfo { source: Some("random init".into()) },
    }
}

#[test]
fn artifact_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for arch in ARCHS {
        let a = artifact(arch);
        let path = dir.path().join(format!("{arch:?}.vqa"));
        save_model(&a, &path).unwrap();
        let b = load_model(&path).unwrap();
        assert_eq!(a.model.config(), b.model.config());
        assert_eq!(a.answers, b.answers);
        assert_eq!(a.extractor, b.extractor);
        assert_eq!(a.pretrained, b.pretrained);
        for ((_, na, va), (_, nb, vb)) in a.model.params().iter().zip(b.model.params().iter()) {
            assert_eq!(na, nb);
            assert!(va.iter().zip(vb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na}");
        }
        let mut r = rng(1);
        let regions = random_regions(&mut r, 4, 6);
        let ids = a.vocab.tokenize("what color is the square", 6).unwrap();
        let (la, lb) = (a.model.forward(&ids, &regions).unwrap(), b.model.forward(&ids, &regions).unwrap());
        assert!(la.logits.iter().zip(&lb.logits).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(std::fs::read(&path).unwrap(), b.to_bytes().unwrap());
    }
}

#[test]
fn damaged_artifacts_are_rejected() {
    let bytes = artifact(Architecture::SingleStream).to_bytes().unwrap();
    for cut in [0, 3, 10, 48, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(ModelArtifact::from_bytes(&bytes[..cut]), Err(ModelError::CorruptArtifact(_))),
            "cut at {cut}"
        );
    }
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    assert!(matches!(ModelArtifact::from_bytes(&flipped), Err(ModelError::CorruptArtifact(_))));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match ModelArtifact::from_bytes(&future) {
        Err(ModelError::VersionMismatch { found, supported }) => {
            assert_eq!((found, supported), (FORMAT_VERSION + 1, FORMAT_VERSION));
        }
        other => panic!("expected a version mismatch, got {:?}", other.err()),
    }
}

#[test]
fn dual_stream_trace_layout() {
    let model = tiny_model(Architecture::DualStream, 6);
    let mut r = rng(6);
    let regions = random_regions(&mut r, 3, 6);
    let ids = random_ids(&mut r, model.config(), 2);
    let out = model.forward(&ids, &regions).unwrap();
    let count = |s| out.trace.of_stream(s).count();
    // 1 language + 1 vision + 1 cross layer, 2 heads each
    assert_eq!(count(Stream::Language), 2 * 2);
    assert_eq!(count(Stream::Vision), 2 * 2);
    assert_eq!(count(Stream::CrossLangToVision), 2);
    assert_eq!(count(Stream::CrossVisionToLang), 2);
    assert_eq!(count(Stream::Joint), 0);
    let t_lang = 6 + 2;
    assert_eq!(out.token_map.region_positions, t_lang..t_lang + 3);
    for m in out.trace.of_stream(Stream::CrossLangToVision) {
        assert_eq!((m.query_offset, m.key_offset), (0, t_lang));
        assert_eq!(m.weights.dim(), (t_lang, 3));
    }

    let single = tiny_model(Architecture::SingleStream, 6);
    let out = single.forward(&ids, &regions).unwrap();
    assert_eq!(out.trace.of_stream(Stream::Joint).count(), 2 * 2);
    assert_eq!(out.token_map.region_positions, 4..7);
}

#[test]
fn visual_embedding_of_zero_input_is_segment_only() {
    let model = tiny_model(Architecture::SingleStream, 7);
    let zeros = RegionFeatures {
        image_id: "z".into(),
        boxes: vec![[0.0; 4]; 2],
        features: vec![vec![0.0; 6]; 2],
    };
    let terms = model.visual_terms(&zeros).unwrap();
    assert!(terms.feature.iter().all(|&v| v == 0.0));
    assert!(terms.position.iter().all(|&v| v == 0.0));
    let e = model.embed_visual(&zeros).unwrap();
    assert_eq!(e.row(0), e.row(1));
    // layer norm of the segment row alone: zero mean
    assert!(e.row(0).mean().unwrap().abs() < 1e-9);
}

#[test]
fn invalid_inputs_are_reported() {
    let model = tiny_model(Architecture::SingleStream, 8);
    let mut r = rng(8);
    let regions = random_regions(&mut r, 2, 6);
    assert!(matches!(model.forward(&[PAD, PAD], &regions), Err(ModelError::EmptyQuestion)));
    let wrong = random_regions(&mut r, 2, 5);
    assert!(matches!(
        model.forward(&[4], &wrong),
        Err(ModelError::DimensionMismatch { expected: 6, found: 5 })
    ));
    let many = random_regions(&mut r, 5, 6);
    assert!(matches!(model.forward(&[4], &many), Err(ModelError::Shape(_))));
}
