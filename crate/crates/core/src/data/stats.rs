use serde::Serialize;

use crate::types::{MultimodalInstance, SentimentLabel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
    /// Total aspect count.
    pub total: usize,
    pub mean_aspects: f64,
    pub mean_length: f64,
    pub mean_patches: f64,
}

pub fn stats(data: &[MultimodalInstance]) -> DatasetStats {
    let mut s = DatasetStats { instances: data.len(), ..Default::default() };
    if data.is_empty() {
        return s;
    }
    let (mut tokens, mut patches) = (0usize, 0usize);
    for inst in data {
        for a in &inst.aspects {
            match a.sentiment {
                SentimentLabel::Positive => s.positive += 1,
                SentimentLabel::Negative => s.negative += 1,
                SentimentLabel::Neutral => s.neutral += 1,
            }
        }
        s.total += inst.aspects.len();
        tokens += inst.len();
        patches += inst.num_patches();
    }
    let n = data.len() as f64;
    s.mean_aspects = s.total as f64 / n;
    s.mean_length = tokens as f64 / n;
    s.mean_patches = patches as f64 / n;
    s
}

impl DatasetStats {
    /// Aligned two-column table, one labelled row per field.
    pub fn table(&self, title: &str) -> String {
        let rows = [
            ("instances", self.instances.to_string()),
            ("positive", self.positive.to_string()),
            ("negative", self.negative.to_string()),
            ("neutral", self.neutral.to_string()),
            ("total aspects", self.total.to_string()),
            ("aspects/sample", format!("{:.3}", self.mean_aspects)),
            ("mean length", format!("{:.2}", self.mean_length)),
            ("mean patches", format!("{:.2}", self.mean_patches)),
        ];
        let mut out = format!("{title}\n");
        for (k, v) in rows {
            out.push_str(&format!("  {k:<16}{v:>10}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::instance;
    use crate::types::AspectSpan;

    #[test]
    fn empty_dataset_is_all_zero() {
        assert_eq!(stats(&[]), DatasetStats::default());
    }

    #[test]
    fn mean_aspects_per_sample() {
        let a = instance();
        let mut b = instance();
        b.tokens = vec![1; 6];
        b.aspects = vec![
            AspectSpan::new(0, 1, SentimentLabel::Negative),
            AspectSpan::new(2, 3, SentimentLabel::Neutral),
            AspectSpan::new(4, 6, SentimentLabel::Neutral),
        ];
        let s = stats(&[a, b]);
        assert_eq!(s.mean_aspects, 2.0);
        assert_eq!((s.positive, s.negative, s.neutral, s.total), (1, 1, 2, 4));
        assert_eq!(s.mean_length, 4.5);
        assert!(s.table("demo").contains("aspects/sample"));
    }
}
