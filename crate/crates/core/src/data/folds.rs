use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Class proportions preserved per fold, images assigned independently.
    #[default]
    ImageStratified,
    /// All images of one patient land in the same fold.
    PatientGrouped,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::ImageStratified => "image",
            SplitMode::PatientGrouped => "patient",
        })
    }
}

impl FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image" | "image-stratified" => Ok(SplitMode::ImageStratified),
            "patient" | "patient-grouped" => Ok(SplitMode::PatientGrouped),
            _ => Err(format!("unknown split mode '{s}' (expected image or patient)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub mode: SplitMode,
    /// Sorted record indices of each fold.
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Check the folds partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::Folds(format!("{} folds listed, k={}", self.folds.len(), self.k)));
        }
        let mut owner = vec![None; n];
        for (f, fold) in self.folds.iter().enumerate() {
            for &i in fold {
                let slot = owner
                    .get_mut(i)
                    .ok_or_else(|| Error::Folds(format!("index {i} out of range for {n} records")))?;
                if let Some(prev) = slot.replace(f) {
                    return Err(Error::Folds(format!("index {i} in folds {prev} and {f}")));
                }
            }
        }
        if let Some(i) = owner.iter().position(Option::is_none) {
            return Err(Error::Folds(format!("index {i} not assigned to any fold")));
        }
        Ok(())
    }

    /// Text form: a `k=.. mode=..` line, then one line of indices per fold.
    pub fn to_text(&self) -> String {
        let mut s = format!("k={} mode={}\n", self.k, self.mode);
        for fold in &self.folds {
            let line: Vec<String> = fold.iter().map(usize::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Folds("empty fold file".into()))?;
        let mut k = None;
        let mut mode = None;
        for part in header.split_whitespace() {
            match part.split_once('=') {
                Some(("k", v)) => k = v.parse::<usize>().ok(),
                Some(("mode", v)) => mode = v.parse::<SplitMode>().ok(),
                _ => return Err(Error::Folds(format!("bad header field '{part}'"))),
            }
        }
        let (k, mode) = k
            .zip(mode)
            .ok_or_else(|| Error::Folds("header needs k= and mode=".into()))?;
        let folds = lines
            .enumerate()
            .map(|(n, line)| {
                line.split_whitespace()
                    .map(|t| {
                        t.parse()
                            .map_err(|_| Error::Folds(format!("line {}: bad index '{t}'", n + 2)))
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if folds.len() != k {
            return Err(Error::Folds(format!(
                "header says k={k}, found {} fold lines",
                folds.len()
            )));
        }
        Ok(FoldSplit { k, mode, folds })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_text(&text)
    }
}

fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    classes
}

/// Split records into `k` folds. `labels` drives stratification and
/// `patients` grouping; both are indexed by record.
pub fn make_folds(labels: &[usize], patients: &[String], k: usize, mode: SplitMode, seed: u64) -> Result<FoldSplit> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Folds(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Folds(format!("{n} records cannot fill {k} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    match mode {
        SplitMode::ImageStratified => {
            let classes = by_class(labels);
            if let Some((class, members)) = classes.iter().find(|(_, m)| m.len() < k) {
                return Err(Error::Folds(format!(
                    "class {class} has {} members, fewer than k={k}",
                    members.len()
                )));
            }
            // the round-robin cursor continues across classes so fold sizes
            // also stay within one of each other
            let mut cursor = 0;
            for mut members in classes.into_values() {
                members.shuffle(&mut rng);
                for i in members {
                    folds[cursor % k].push(i);
                    cursor += 1;
                }
            }
        }
        SplitMode::PatientGrouped => {
            if patients.len() != n {
                return Err(Error::Folds(format!("{} patient ids for {n} records", patients.len())));
            }
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in patients.iter().enumerate() {
                groups.entry(p).or_default().push(i);
            }
            if groups.len() < k {
                return Err(Error::Folds(format!("{} patients cannot fill {k} folds", groups.len())));
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
            for g in groups {
                let smallest = (0..k).min_by_key(|&f| folds[f].len()).expect("k >= 2");
                folds[smallest].extend(g);
            }
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { k, mode, folds })
}

/// Stratified single split: returns `(train, test)` with roughly
/// `test_fraction` of each class held out.
pub fn holdout_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Folds(format!(
            "holdout fraction {test_fraction} must be in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut members in by_class(labels).into_values() {
        members.shuffle(&mut rng);
        // at least one held out per class, and one kept when possible
        let len = members.len();
        let held = ((len as f64 * test_fraction).round() as usize)
            .min(len.saturating_sub(1))
            .max(1);
        test.extend_from_slice(&members[..held]);
        train.extend_from_slice(&members[held..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Folds("holdout split left one side empty".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
