//! Dataset construction, file formats, and the synthetic generator.

pub mod jsonl;
pub mod manifest;
pub mod split;
pub mod store;
pub mod synthetic;

pub use manifest::{build_dataset, DatasetCounts, DatasetManifest, KnnLists, RawExample, Split};
pub use split::{split_dataset, split_three};
pub use store::FeatureStore;
pub use synthetic::{
    generate_synthetic, GeneratorTruth, SyntheticDataset, SyntheticDims, SyntheticSpec,
};
