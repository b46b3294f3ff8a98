//! Data model, file formats and brute-force retrieval.

mod candidates;
pub mod io;
mod manifest;
mod matrix;
mod region;

pub use candidates::{retrieve_topk, Candidate, CandidateList};
pub use manifest::{
    load_bundle, manifest_path, read_candidates_doc, save_bundle, write_candidates_doc,
    CandidateEntry, CandidatesDoc, GroundTruth, ImageRecord, RetrievalBundle, MANIFEST_NAME,
};
pub use matrix::DescriptorMatrix;
pub use region::{RegionBox, RegionSet};

/// Default number of retrieved candidates per query.
pub const DEFAULT_K: usize = 100;
/// Default number of region proposals per image.
pub const DEFAULT_REGIONS: usize = 50;
