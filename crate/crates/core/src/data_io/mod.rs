//! Dataset manifests, annotation aggregation, toy data and persistence.

mod annotation;
pub mod checkpoint;
mod export;
mod manifest;
mod toy;

pub use annotation::{
    acr_to_score, aggregate_mos, aggregate_mos_filtered, qualify_annotator, AcrCategory, AnnotationRecord,
    Qualification, Rating, QUALIFY_MARGIN, QUALIFY_THRESHOLD,
};
pub use export::{export_embeddings, read_embeddings_tsv, write_embeddings_tsv};
pub use manifest::{DatasetManifest, Gender, LoadedDataset, ManifestRecord, SkinTone, Split};
pub use toy::{
    face_mask, generate_toy_dataset, loaded_from_samples, real_style, retrieval_benchmark, toy_samples,
    write_toy_dataset, RetrievalBenchmark, ToyOptions, ToySample, LANDMARK_FILE, MANIFEST_FILE, MIN_TOY_IMAGES,
};
