//! Synthetic streams, file formats and window slicing.

mod annotations;
mod features;
mod grammar;
mod jitter;
mod windows;

pub use annotations::{parse_annotations, read_annotations, write_annotations, SegmentAnnotation, ANNOTATION_HEADER};
pub use features::{
    read_feature_file, write_feature_file, write_feature_header, FeatureFile, FeatureHeader, FeatureReader, FEATURE_HEADER_BYTES,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use grammar::{bayes_oracle, gen_split, gen_stream, GeneratedStream, GrammarConfig, OracleCeilings};
pub use jitter::jitter_indices;
pub use windows::{frame_stride, make_windows};
