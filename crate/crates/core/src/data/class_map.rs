use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DataError, Label, Result};

/// Source class name used for frames without a diagnosis.
pub const UNLABELED_CLASS: &str = "unlabeled";

/// Maps dataset class names onto the binary task. Names compare
/// case-insensitively after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub name: String,
    normal: BTreeSet<String>,
    anomaly: BTreeSet<String>,
}

fn key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl ClassMap {
    pub const PRESETS: [&'static str; 3] = ["kvasir", "galar", "synthetic"];

    pub fn new(name: impl Into<String>, normal: &[&str], anomaly: &[&str]) -> Result<Self> {
        let normal: BTreeSet<String> = normal.iter().map(|s| key(s)).collect();
        let anomaly: BTreeSet<String> = anomaly.iter().map(|s| key(s)).collect();
        if let Some(c) = normal.intersection(&anomaly).next() {
            return Err(DataError::ClassMap(format!("class `{c}` is both normal and anomaly")));
        }
        if normal.contains(UNLABELED_CLASS) || anomaly.contains(UNLABELED_CLASS) {
            return Err(DataError::ClassMap(format!("`{UNLABELED_CLASS}` is reserved")));
        }
        Ok(Self { name: name.into(), normal, anomaly })
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "kvasir" => Self::new(
                name,
                &["Pylorus", "Reduced Mucosal View", "Ileo-cecal valve", "Normal Clean Mucosa"],
                &["Angiectasia", "Blood-fresh", "Foreign Bodies", "Ulcer", "Erosion", "Lymphangiectasia"],
            ),
            "galar" => Self::new(
                name,
                &["Normal Clean Mucosa"],
                &["Polyp", "Blood", "Active Bleeding", "Angiectasia", "Erosion", "Erythema", "Ulcer"],
            ),
            "synthetic" => Self::new(name, &["normal"], &["dark_red_lesion", "specular_patch"]),
            other => Err(DataError::ClassMap(format!(
                "unknown class map `{other}` (known: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    /// Binary label for `source_class`, or `None` when the class is in
    /// neither set and the sample should be excluded.
    pub fn map(&self, source_class: &str) -> Option<Label> {
        let k = key(source_class);
        if k == UNLABELED_CLASS {
            Some(Label::Unlabeled)
        } else if self.normal.contains(&k) {
            Some(Label::Normal)
        } else if self.anomaly.contains(&k) {
            Some(Label::Anomaly)
        } else {
            None
        }
    }

    pub fn normal_classes(&self) -> impl Iterator<Item = &str> {
        self.normal.iter().map(String::as_str)
    }

    pub fn anomaly_classes(&self) -> impl Iterator<Item = &str> {
        self.anomaly.iter().map(String::as_str)
    }
}
