use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{validate_instance, MultimodalInstance, VocabSizes};

/// One compact JSON object per line, each terminated by `\n`.
pub fn to_jsonl(data: &[MultimodalInstance]) -> String {
    let mut out = String::new();
    for inst in data {
        out.push_str(&serde_json::to_string(inst).expect("instances always serialize"));
        out.push('\n');
    }
    out
}

/// Parses JSONL text. Blank lines are skipped; line numbers in errors are
/// one-based. With `vocab`, every instance is also validated.
pub fn parse_jsonl(text: &str, vocab: Option<&VocabSizes>) -> Result<Vec<MultimodalInstance>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: MultimodalInstance =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: k + 1, message: e.to_string() })?;
        if let Some(v) = vocab {
            let violations = validate_instance(&inst, v);
            if !violations.is_empty() {
                return Err(Error::Invalid { id: inst.id, line: k + 1, violations });
            }
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, data: &[MultimodalInstance]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(to_jsonl(data).as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: &Path, vocab: Option<&VocabSizes>) -> Result<Vec<MultimodalInstance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, vocab)
}
