//! On-disk layout of a dataset directory: one JSONL file per split, a
//! `meta.json` with the id-space sizes and augmentation pools, and a
//! `stats.json` summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::Lexicon;
use crate::error::{Error, Result};
use crate::eval::Datasets;
use crate::types::{MultimodalInstance, VocabSizes};

use super::jsonl::{load_jsonl, save_jsonl};
use super::stats::{stats, DatasetStats};
use super::synth::{GeneratedData, SyntheticSpec};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const META_FILE: &str = "meta.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub vocab: VocabSizes,
    pub lexicon: Lexicon,
    /// Generator settings, when the directory was produced by the generator.
    #[serde(default)]
    pub spec: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStats {
    pub train: DatasetStats,
    pub dev: DatasetStats,
    pub test: DatasetStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDir {
    pub train: Vec<MultimodalInstance>,
    pub dev: Vec<MultimodalInstance>,
    pub test: Vec<MultimodalInstance>,
    pub meta: Option<DataMeta>,
}

impl DataDir {
    pub fn datasets(&self) -> Datasets<'_> {
        Datasets {
            train: &self.train,
            dev: &self.dev,
            test: &self.test,
            lexicon: self.meta.as_ref().map(|m| &m.lexicon),
        }
    }

    pub fn vocab(&self) -> Option<VocabSizes> {
        self.meta.as_ref().map(|m| m.vocab)
    }

    pub fn stats(&self) -> SplitStats {
        SplitStats { train: stats(&self.train), dev: stats(&self.dev), test: stats(&self.test) }
    }
}

/// Writes every file of the layout into `dir`, creating it if needed.
pub fn write_data_dir(dir: &Path, data: &GeneratedData, spec: Option<&SyntheticSpec>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_jsonl(&dir.join(TRAIN_FILE), &data.train)?;
    save_jsonl(&dir.join(DEV_FILE), &data.dev)?;
    save_jsonl(&dir.join(TEST_FILE), &data.test)?;
    let meta = DataMeta { vocab: data.vocab, lexicon: data.lexicon.clone(), spec: spec.cloned() };
    write_json(&dir.join(META_FILE), &meta)?;
    let split = SplitStats { train: stats(&data.train), dev: stats(&data.dev), test: stats(&data.test) };
    write_json(&dir.join(STATS_FILE), &split)
}

/// Reads the three splits and, if present, `meta.json`. When the metadata
/// is available every instance is validated against its vocabulary.
pub fn read_data_dir(dir: &Path) -> Result<DataDir> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("data directory {} does not exist", dir.display())));
    }
    let meta_path = dir.join(META_FILE);
    let meta: Option<DataMeta> = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?)
    } else {
        None
    };
    let vocab = meta.as_ref().map(|m| m.vocab);
    let split = |name: &str| -> Result<Vec<MultimodalInstance>> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::Data(format!("missing split file {}", path.display())));
        }
        load_jsonl(&path, vocab.as_ref()).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse { line, message: format!("{name}: {message}") },
            other => other,
        })
    };
    Ok(DataDir { train: split(TRAIN_FILE)?, dev: split(DEV_FILE)?, test: split(TEST_FILE)?, meta })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("records always serialize") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    #[test]
    fn directory_round_trip() {
        let spec = SyntheticSpec { n_instances: 40, seed: 3, ..SyntheticSpec::default() };
        let data = generate(&spec).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_data_dir(tmp.path(), &data, Some(&spec)).unwrap();
        let back = read_data_dir(tmp.path()).unwrap();
        assert_eq!((back.train, back.dev, back.test), (data.train, data.dev, data.test));
        let meta = back.meta.unwrap();
        assert_eq!((meta.vocab, meta.lexicon, meta.spec), (data.vocab, data.lexicon, Some(spec)));
    }

    #[test]
    fn missing_directory_or_split() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(read_data_dir(&tmp.path().join("nope")), Err(Error::Data(_))));
        assert!(matches!(read_data_dir(tmp.path()), Err(Error::Data(_))));
    }
}
