use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{status_for_size, DatasetError, ImageRecord, ImageStatus, IMAGE_EXTENSIONS};

/// Images read from an upload archive, in archive order.
#[derive(Debug, Clone, Default)]
pub struct ImageArchive {
    pub records: Vec<ImageRecord>,
    /// Raw file bytes keyed by image id.
    pub bytes: BTreeMap<String, Vec<u8>>,
    /// Non-fatal events, such as duplicate image ids.
    pub warnings: Vec<String>,
}

impl ImageArchive {
    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn n_valid(&self) -> usize {
        self.records.iter().filter(|r| r.is_valid()).count()
    }
}

fn image_id_of(name: &str) -> Option<String> {
    let path = Path::new(name);
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    // resource forks and other dotfiles written by archivers
    if stem.is_empty() || stem.starts_with('.') {
        return None;
    }
    Some(stem.to_string())
}

/// Reads every image entry of a ZIP archive. Nested folders are flattened;
/// the image id is the file name without directories or extension.
pub fn ingest_images(archive: &[u8]) -> Result<ImageArchive, DatasetError> {
    let mut zip = zip::ZipArchive::new(Cursor::new(archive))
        .map_err(|e| DatasetError::MalformedArchive(e.to_string()))?;
    let mut out = ImageArchive::default();
    for i in 0..zip.len() {
        let mut entry = zip
            .by_index(i)
            .map_err(|e| DatasetError::MalformedArchive(e.to_string()))?;
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().to_string();
        if name.split('/').any(|part| part == "__MACOSX") {
            continue;
        }
        let Some(image_id) = image_id_of(&name) else {
            continue;
        };
        if out.bytes.contains_key(&image_id) {
            out.warnings.push(format!(
                "Duplicate image id `{image_id}` ({name}); kept the first occurrence."
            ));
            continue;
        }
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut bytes)
            .map_err(|e| DatasetError::MalformedArchive(format!("{name}: {e}")))?;
        let (width, height, status) = match image::load_from_memory(&bytes) {
            Ok(img) => (img.width(), img.height(), status_for_size(img.width(), img.height())),
            Err(_) => (0, 0, ImageStatus::Unreadable),
        };
        out.records.push(ImageRecord {
            image_id: image_id.clone(),
            filename: name,
            width,
            height,
            status,
        });
        out.bytes.insert(image_id, bytes);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{png_bytes, zip_bytes};

    #[test]
    fn full_hd_image_is_valid() {
        let zip = zip_bytes(&[("x.png", png_bytes(1920, 1080))]);
        let a = ingest_images(&zip).unwrap();
        assert_eq!(
            a.records,
            vec![ImageRecord {
                image_id: "x".into(),
                filename: "x.png".into(),
                width: 1920,
                height: 1080,
                status: ImageStatus::Valid
            }]
        );
    }

    #[test]
    fn size_limit_is_inclusive() {
        let zip = zip_bytes(&[
            ("wide.png", png_bytes(2000, 500)),
            ("square.png", png_bytes(1920, 1920)),
            ("tall.png", png_bytes(4, 1921)),
        ]);
        let a = ingest_images(&zip).unwrap();
        let status: Vec<_> = a.records.iter().map(|r| r.status).collect();
        assert_eq!(
            status,
            vec![ImageStatus::Oversized, ImageStatus::Valid, ImageStatus::Oversized]
        );
    }

    #[test]
    fn flattens_folders_and_skips_non_images() {
        let zip = zip_bytes(&[
            ("imgs/", Vec::new()),
            ("imgs/deep/a.JPG", png_bytes(3, 3)),
            ("readme.txt", b"hello".to_vec()),
            ("__MACOSX/imgs/._a.JPG", b"junk".to_vec()),
        ]);
        let a = ingest_images(&zip).unwrap();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].image_id, "a");
        assert_eq!(a.records[0].filename, "imgs/deep/a.JPG");
    }

    #[test]
    fn undecodable_image_is_unreadable() {
        let zip = zip_bytes(&[("bad.png", b"not an image".to_vec())]);
        let a = ingest_images(&zip).unwrap();
        assert_eq!(a.records[0].status, ImageStatus::Unreadable);
        assert_eq!((a.records[0].width, a.records[0].height), (0, 0));
    }

    #[test]
    fn duplicate_ids_keep_first_with_warning() {
        let zip = zip_bytes(&[("a/x.png", png_bytes(5, 5)), ("b/x.bmp", png_bytes(7, 7))]);
        let a = ingest_images(&zip).unwrap();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].width, 5);
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn garbage_is_malformed_archive() {
        assert!(matches!(
            ingest_images(b"definitely not a zip"),
            Err(DatasetError::MalformedArchive(_))
        ));
    }
}
