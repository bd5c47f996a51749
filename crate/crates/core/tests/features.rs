use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use vqa_core::features::{
    cache_features, extract_grid_bytes, Extractor, ExtractorKind, ExtractorSpec, FeatureError, FeatureStore,
    RegionFeatures, SpecExtractor,
};
use vqa_core::fixtures::png_bytes_seeded;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grid_regions_are_well_formed(w in 1u32..60, h in 1u32..60, max_regions in 1usize..40, dim in 1usize..64, seed in 0u32..1000) {
        let r = extract_grid_bytes("x", &png_bytes_seeded(w, h, seed), max_regions, dim).unwrap();
        prop_assert!(r.n_regions() >= 1 && r.n_regions() <= max_regions);
        prop_assert_eq!(r.feature_dim(), dim);
        for b in &r.boxes {
            prop_assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(b[0] < b[2] && b[1] < b[3]);
        }
        prop_assert!(r.features.iter().flatten().all(|v| v.is_finite()));
    }
}

/// Counts calls and delegates to the grid extractor.
struct Counting {
    inner: SpecExtractor,
    calls: AtomicUsize,
}

impl Extractor for Counting {
    fn spec(&self) -> &ExtractorSpec {
        self.inner.spec()
    }

    fn extract(&self, id: &str, bytes: &[u8]) -> Result<RegionFeatures, FeatureError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.extract(id, bytes)
    }
}

fn view(imgs: &[(String, Vec<u8>)]) -> Vec<(&str, &[u8])> {
    imgs.iter().map(|(i, b)| (i.as_str(), b.as_slice())).collect()
}

#[test]
fn cache_reuses_until_inputs_change() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::open(dir.path()).unwrap();
    let images: Vec<(String, Vec<u8>)> = (0..5).map(|i| (format!("im/{i}"), png_bytes_seeded(20, 20, i))).collect();
        let ex = Counting { inner: SpecExtractor::new(ExtractorSpec::grid(9, 16)).unwrap(), calls: AtomicUsize::new(0) };
    let progress = |_: usize, _: usize| {};

    let r = cache_features(&store, view(&images), &ex, 3, &progress).unwrap();
    assert_eq!((r.extracted.len(), r.reused.len()), (5, 0));
    let r = cache_features(&store, view(&images), &ex, 3, &progress).unwrap();
    assert_eq!((r.extracted.len(), r.reused.len()), (0, 5));
    assert_eq!(ex.calls.load(Ordering::SeqCst), 5);

    let mut changed = images.clone();
    changed[2].1 = png_bytes_seeded(20, 20, 99);
    let r = cache_features(&store, view(&changed), &ex, 3, &progress).unwrap();
    assert_eq!(r.extracted, vec!["im/2".to_string()]);

    let other = Counting { inner: SpecExtractor::new(ExtractorSpec::grid(4, 16)).unwrap(), calls: AtomicUsize::new(0) };
    let r = cache_features(&store, view(&changed), &other, 2, &progress).unwrap();
    assert_eq!(r.extracted.len(), 5);
    assert_eq!(store.load("im/0").unwrap().n_regions(), 4);
}

#[test]
fn cache_reports_unreadable_images_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::open(dir.path()).unwrap();
    let ex = SpecExtractor::new(ExtractorSpec::grid(4, 8)).unwrap();
    let good = png_bytes_seeded(10, 10, 1);
    let images = vec![("good", good.as_slice()), ("bad", b"nope".as_slice())];
    let seen = AtomicUsize::new(0);
    let r = cache_features(&store, images, &ex, 2, &|done, total| {
        assert_eq!(total, 2);
        seen.fetch_max(done, Ordering::SeqCst);
    })
    .unwrap();
    assert_eq!(r.extracted, vec!["good".to_string()]);
    assert_eq!(r.failed.len(), 1);
    assert!(matches!(r.failed[0].1, FeatureError::UnreadableImage(_)));
    assert_eq!(seen.load(Ordering::SeqCst), 2);
}

/// Serves one canned HTTP response per connection and records request heads.
fn fake_extractor(body: String, status: u16) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = Vec::new();
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end().to_string();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            head.push(line);
        }
        let mut buf = vec![0; len];
        reader.read_exact(&mut buf).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        head
    });
    (addr, handle)
}

#[test]
fn external_extractor_round_trip() {
    let body = serde_json::json!({
        "image": {"width": 200, "height": 100},
        "regions": [
            {"box": [0, 0, 100, 50], "feature": [1.0, 2.0, 3.0]},
            {"box": [50, 50, 200, 100], "feature": [0.5, 0.0, -1.0]},
            {"box": [10, 10, 20, 20], "feature": [0.0, 0.0, 0.0]}
        ]
    })
    .to_string();
    let (addr, server) = fake_extractor(body, 200);
    let spec = ExtractorSpec::external(addr, 2, 3);
    assert_eq!(spec.kind, ExtractorKind::External);
    let ex = SpecExtractor::new(spec).unwrap();
    let r = ex.extract("img", b"raw image bytes").unwrap();
    assert_eq!(r.boxes, vec![[0.0, 0.0, 0.5, 0.5], [0.25, 0.5, 1.0, 1.0]]);
    assert_eq!(r.features[0], vec![1.0, 2.0, 3.0]);
    let head = server.join().unwrap().join("\n").to_ascii_lowercase();
    assert!(head.starts_with("post /extract"));
    assert!(head.contains("x-max-regions: 2"));
    assert!(head.contains("x-feature-dim: 3"));
}

#[test]
fn external_extractor_rejects_bad_payloads() {
    let body = serde_json::json!({
        "image": {"width": 10, "height": 10},
        "regions": [{"box": [0, 0, 5, 5], "feature": [1.0]}]
    })
    .to_string();
    let (addr, server) = fake_extractor(body, 200);
    let ex = SpecExtractor::new(ExtractorSpec::external(addr, 4, 3)).unwrap();
    assert!(matches!(ex.extract("img", b"x"), Err(FeatureError::SchemaViolation(_))));
    server.join().unwrap();

    let (addr, server) = fake_extractor("{}".into(), 500);
    let ex = SpecExtractor::new(ExtractorSpec::external(addr, 4, 3)).unwrap();
    assert!(matches!(ex.extract("img", b"x"), Err(FeatureError::ExtractorUnavailable(_))));
    server.join().unwrap();

    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    let ex = SpecExtractor::new(ExtractorSpec::external(addr, 4, 3)).unwrap();
    assert!(matches!(ex.extract("img", b"x"), Err(FeatureError::ExtractorUnavailable(_))));
}

#[test]
fn store_round_trip_with_awkward_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::open(dir.path()).unwrap();
    let ex = SpecExtractor::new(ExtractorSpec::grid(4, 5)).unwrap();
    for id in ["plain", "with space", "../escape", ".hidden", "ünï"] {
        let r = ex.extract(id, &png_bytes_seeded(8, 8, 3)).unwrap();
        let images = vec![(id, png_bytes_seeded(8, 8, 3))];
        cache_features(&store, images.iter().map(|(i, b)| (*i, b.as_slice())), &ex, 1, &|_, _| {}).unwrap();
        assert_eq!(store.load(id).unwrap(), r);
        assert!(store.path_for(id).starts_with(dir.path()));
    }
}
