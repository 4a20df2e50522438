//! Synthetic data, JSONL persistence, dataset directories and statistics.

pub mod dir;
pub mod jsonl;
pub mod stats;
pub mod synth;

pub use dir::{read_data_dir, write_data_dir, DataDir, DataMeta, SplitStats};
pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, to_jsonl};
pub use stats::{stats, DatasetStats};
pub use synth::{generate, GeneratedData, SyntheticSpec};
