use std::path::Path;

use crate::error::{Error, Result};
use crate::pruner::FrequencyMatrix;

/// `layer,expert,count` rows, layer-major.
pub fn heatmap_csv(freq: &FrequencyMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "expert", "count"])?;
    for (l, row) in freq.counts.iter().enumerate() {
        for (i, c) in row.iter().enumerate() {
            w.write_record([l.to_string(), i.to_string(), c.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_heatmap(freq: &FrequencyMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, heatmap_csv(freq)?).map_err(|e| Error::io(path, e))
}

pub fn read_heatmap(path: &Path) -> Result<FrequencyMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let mut counts: Vec<Vec<u64>> = Vec::new();
    for rec in r.deserialize() {
        let (l, i, c): (usize, usize, u64) = rec?;
        if counts.len() <= l {
            counts.resize(l + 1, Vec::new());
        }
        if counts[l].len() <= i {
            counts[l].resize(i + 1, 0);
        }
        counts[l][i] = c;
    }
    Ok(FrequencyMatrix { counts })
}
