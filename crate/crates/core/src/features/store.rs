use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExtractorKind, FeatureError, RegionFeatures};
use crate::fsutil::write_atomic;

pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One `.feat` file: region features plus what they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_id: String,
    /// SHA-256 of the source image bytes, hex encoded.
    pub content_hash: String,
    pub extractor: ExtractorKind,
    pub max_regions: usize,
    pub n_regions: usize,
    pub feature_dim: usize,
    pub boxes: Vec<[f32; 4]>,
    pub features: Vec<Vec<f32>>,
}

impl FeatureRecord {
    pub fn new(
        regions: RegionFeatures,
        content_hash: String,
        extractor: ExtractorKind,
        max_regions: usize,
    ) -> Self {
        Self {
            image_id: regions.image_id,
            content_hash,
            extractor,
            max_regions,
            n_regions: regions.boxes.len(),
            feature_dim: regions.features.first().map_or(0, Vec::len),
            boxes: regions.boxes,
            features: regions.features,
        }
    }

    pub fn regions(&self) -> RegionFeatures {
        RegionFeatures {
            image_id: self.image_id.clone(),
            boxes: self.boxes.clone(),
            features: self.features.clone(),
        }
    }
}

/// File-name-safe form of an image id; bytes outside `[A-Za-z0-9._-]` are
/// percent-encoded.
fn file_stem(image_id: &str) -> String {
    let mut out = String::with_capacity(image_id.len());
    for b in image_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && !out.is_empty()) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

/// Directory of `<image_id>.feat` records.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
}

impl FeatureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, FeatureError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        self.dir.join(format!("{}.feat", file_stem(image_id)))
    }

    pub fn read(&self, image_id: &str) -> Result<Option<FeatureRecord>, FeatureError> {
        match fs::read(self.path_for(image_id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write(&self, record: &FeatureRecord) -> Result<(), FeatureError> {
        let bytes = serde_json::to_vec(record)?;
        write_atomic(&self.path_for(&record.image_id), &bytes)?;
        Ok(())
    }

    /// Features for `image_id`, or an error if the image was never cached.
    pub fn load(&self, image_id: &str) -> Result<RegionFeatures, FeatureError> {
        self.read(image_id)?
            .map(|r| r.regions())
            .ok_or_else(|| FeatureError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no cached features for `{image_id}`"),
            )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("img_01-a"), "img_01-a");
        assert_eq!(file_stem("../x y"), "%2E.%2Fx%20y");
        assert_eq!(file_stem("a.b"), "a.b");
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
