//! Patient-wise train/val/test partitions. Membership is decided by patient
//! id alone, so no patient's frames ever straddle two partitions.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, Sample};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    #[serde(default)]
    pub test: BTreeSet<String>,
}

/// Splits `patients` into train and val with `|train| = round(ratio * n)`,
/// clamped so both sides keep at least one patient. Ids listed in
/// `reserved_test` are held out as the test set and never drawn.
pub fn patient_split<S: AsRef<str>>(patients: &[S], reserved_test: &[S], ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Split(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    let test: BTreeSet<String> = reserved_test.iter().map(|s| s.as_ref().to_string()).collect();
    let pool: BTreeSet<String> =
        patients.iter().map(|s| s.as_ref().to_string()).filter(|p| !test.contains(p)).collect();
    let n = pool.len();
    if n < 2 {
        return Err(DataError::Split(format!("need at least 2 patients outside the test set, got {n}")));
    }
    let mut ids: Vec<String> = pool.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "patient_split", 0));
    ids.shuffle(&mut rng);
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let val = ids.split_off(n_train);
    Ok(SplitSpec { seed, train: ids.into_iter().collect(), val: val.into_iter().collect(), test })
}

impl SplitSpec {
    pub fn partition_of(&self, patient_id: &str) -> Option<Partition> {
        if self.train.contains(patient_id) {
            Some(Partition::Train)
        } else if self.val.contains(patient_id) {
            Some(Partition::Val)
        } else if self.test.contains(patient_id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (a, b, name) in [(&self.train, &self.val, "train/val"), (&self.train, &self.test, "train/test"), (&self.val, &self.test, "val/test")] {
            if let Some(p) = a.intersection(b).next() {
                return Err(DataError::Split(format!("patient `{p}` appears in both {name}")));
            }
        }
        Ok(())
    }

    /// Routes samples into (train, val, test); samples of unknown patients
    /// are returned last.
    pub fn apply(&self, samples: Vec<Sample>) -> [Vec<Sample>; 4] {
        let mut out: [Vec<Sample>; 4] = Default::default();
        for s in samples {
            let slot = match self.partition_of(&s.patient_id) {
                Some(Partition::Train) => 0,
                Some(Partition::Val) => 1,
                Some(Partition::Test) => 2,
                None => 3,
            };
            out[slot].push(s);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&json)
    }
}
