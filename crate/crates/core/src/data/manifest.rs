//! CSV manifests with header `path,source_class,patient_id`. Image paths are
//! resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{resize, ClassMap, DataError, Image, Label, Result, Sample};

pub const HEADER: [&str; 3] = ["path", "source_class", "patient_id"];

#[derive(Debug, Clone, Default)]
pub struct ManifestLoad {
    pub samples: Vec<Sample>,
    /// Data rows read, header excluded.
    pub rows_in: usize,
    /// Rows whose class is in neither set of the class map.
    pub excluded: usize,
    pub excluded_by_class: BTreeMap<String, usize>,
}

struct Row {
    line: u64,
    path: PathBuf,
    source_class: String,
    patient_id: String,
    label: Label,
}

/// Reads a manifest, maps labels through `class_map`, and decodes every kept
/// image, resizing to `size` (`H x W`) when given.
pub fn load_manifest(path: &Path, class_map: &ClassMap, size: Option<(usize, usize)>) -> Result<ManifestLoad> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
    let csv_err = |e: csv::Error| DataError::Malformed {
        line: e.position().map_or(0, csv::Position::line),
        detail: e.to_string(),
    };

    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(DataError::Malformed {
            line: 1,
            detail: format!("expected header `{}`, found `{}`", HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut out = ManifestLoad::default();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, csv::Position::line);
        out.rows_in += 1;
        if record.len() != 3 {
            return Err(DataError::Malformed { line, detail: format!("expected 3 fields, found {}", record.len()) });
        }
        let (p, class, patient) = (&record[0], &record[1], &record[2]);
        for (field, v) in HEADER.iter().zip([p, class, patient]) {
            if v.is_empty() {
                return Err(DataError::Malformed { line, detail: format!("empty `{field}`") });
            }
        }
        match class_map.map(class) {
            Some(label) => rows.push(Row {
                line,
                path: base.join(p),
                source_class: class.to_string(),
                patient_id: patient.to_string(),
                label,
            }),
            None => {
                out.excluded += 1;
                *out.excluded_by_class.entry(class.to_string()).or_default() += 1;
            }
        }
    }

    out.samples = rows
        .into_par_iter()
        .map(|row| {
            let image = Image::open(&row.path).map_err(|detail| DataError::Image {
                line: row.line,
                path: row.path.clone(),
                detail,
            })?;
            let image = match size {
                Some((h, w)) => resize(&image, h, w),
                None => image,
            };
            Ok(Sample { image, label: row.label, patient_id: row.patient_id, source_class: row.source_class })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out)
}

/// Writes a manifest for `(relative path, source_class, patient_id)` rows.
pub fn write_manifest<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Result<()> {
    let io = |e: csv::Error| DataError::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(HEADER).map_err(io)?;
    for (p, c, id) in rows {
        w.write_record([p, c, id]).map_err(io)?;
    }
    w.flush().map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}
