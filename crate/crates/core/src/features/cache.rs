use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::store::{content_hash, FeatureRecord, FeatureStore};
use super::{Extractor, FeatureError};

/// Outcome of caching features for a set of images.
#[derive(Debug, Default)]
pub struct CacheReport {
    /// Images sent to the extractor.
    pub extracted: Vec<String>,
    /// Images whose cached record already matched.
    pub reused: Vec<String>,
    /// Images that could not be processed, with the reason.
    pub failed: Vec<(String, FeatureError)>,
}

impl CacheReport {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }
}

fn is_current(record: &FeatureRecord, hash: &str, extractor: &dyn Extractor) -> bool {
    let spec = extractor.spec();
    record.content_hash == hash
        && record.extractor == spec.kind
        && record.max_regions == spec.max_regions
        && record.feature_dim == spec.feature_dim
}

fn cache_one(
    store: &FeatureStore,
    extractor: &dyn Extractor,
    image_id: &str,
    bytes: &[u8],
) -> Result<bool, FeatureError> {
    let hash = content_hash(bytes);
    // an unreadable record is simply recomputed
    if let Ok(Some(record)) = store.read(image_id) {
        if is_current(&record, &hash, extractor) {
            return Ok(false);
        }
    }
    let spec = extractor.spec();
    let regions = extractor.extract(image_id, bytes)?;
    regions.validate(spec.max_regions)?;
    store.write(&FeatureRecord::new(regions, hash, spec.kind, spec.max_regions))?;
    Ok(true)
}

/// Ensures every image has a current record in `store`, extracting with at
/// most `workers` images in flight. `on_progress(done, total)` is called
/// after each image.
pub fn cache_features<'a, I>(
    store: &FeatureStore,
    images: I,
    extractor: &dyn Extractor,
    workers: usize,
    on_progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<CacheReport, FeatureError>
where
    I: IntoIterator<Item = (&'a str, &'a [u8])>,
{
    let images: Vec<(&str, &[u8])> = images.into_iter().collect();
    let total = images.len();
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| FeatureError::Io(std::io::Error::other(e.to_string())))?;
    let results: Vec<(String, Result<bool, FeatureError>)> = pool.install(|| {
        images
            .par_iter()
            .map(|&(id, bytes)| {
                let r = cache_one(store, extractor, id, bytes);
                on_progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
                (id.to_string(), r)
            })
            .collect()
    });
    let mut report = CacheReport::default();
    for (id, r) in results {
        match r {
            Ok(true) => report.extracted.push(id),
            Ok(false) => report.reused.push(id),
            Err(e) => report.failed.push((id, e)),
        }
    }
    Ok(report)
}
