//! Region scores from attention traces and box annotation of the top regions.

mod aggregate;
mod batch;
mod draw;
mod style;

pub use aggregate::{aggregate_attention, attention_mass, is_included, rank_scores, select_top, RegionScore};
pub use batch::{
    annotate_batch, annotated_file_name, render_item, sanitize_question, AnnotationItem, BatchArchive,
    BatchFailure, ERROR_MANIFEST,
};
pub use draw::{annotate, annotate_rgb, denormalize, encode_png, stroke_pixels, touched_pixels, Annotated, PixelBox};
pub use style::{AnnotationStyle, DEFAULT_OPACITIES, DEFAULT_TOP_K};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error("region {region} lies outside an attention matrix of width {width}")]
    TokenMapMismatch { region: usize, width: usize },
    #[error("box of region {region} exceeds the image and was clamped")]
    OutOfBounds { region: usize },
    #[error("no box for region {region}")]
    MissingBox { region: usize },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("image could not be decoded: {0}")]
    Decode(String),
    #[error("encoding failed: {0}")]
    Encode(String),
    #[error("invalid annotation style: {0}")]
    InvalidStyle(String),
}
