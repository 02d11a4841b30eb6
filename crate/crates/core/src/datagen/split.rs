use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::pairs::OdomPair;
use super::record::TrajectoryRecord;
use super::DatagenError;

/// Items that belong to exactly one trajectory.
pub trait Tagged {
    fn trajectory(&self) -> &str;
}

impl Tagged for OdomPair {
    fn trajectory(&self) -> &str {
        &self.trajectory
    }
}

impl Tagged for TrajectoryRecord {
    fn trajectory(&self) -> &str {
        &self.name
    }
}

/// Trajectory names for each side. When `train` is omitted, every
/// trajectory not listed in `test` trains.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default)]
    pub train: Option<Vec<String>>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn holdout(test: &[&str]) -> Self {
        Self {
            train: None,
            test: test.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Holds out the last fifth of `names` (at least one) for testing.
    pub fn last_fifth(names: &[String]) -> Self {
        let k = names.len().div_ceil(5);
        Self {
            train: None,
            test: names[names.len() - k..].to_vec(),
        }
    }
}

/// Partitions whole trajectories; input order is kept on each side.
pub fn split<T: Tagged + Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>), DatagenError> {
    let known: BTreeSet<&str> = items.iter().map(Tagged::trajectory).collect();
    let test: BTreeSet<&str> = spec.test.iter().map(String::as_str).collect();
    let train: Option<BTreeSet<&str>> = spec.train.as_ref().map(|t| t.iter().map(String::as_str).collect());
    let mut unknown: Vec<&str> = test
        .iter()
        .chain(train.iter().flatten())
        .filter(|n| !known.contains(*n))
        .copied()
        .collect();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(DatagenError::Split(format!("unknown trajectories: {}", unknown.join(", "))));
    }
    if let Some(train) = &train {
        let overlap: Vec<&str> = train.intersection(&test).copied().collect();
        if !overlap.is_empty() {
            return Err(DatagenError::Split(format!(
                "trajectories listed for both train and test: {}",
                overlap.join(", ")
            )));
        }
    }
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for it in items {
        let name = it.trajectory();
        if test.contains(name) {
            te.push(it.clone());
        } else if train.as_ref().is_none_or(|t| t.contains(name)) {
            tr.push(it.clone());
        }
    }
    Ok((tr, te))
}
