//! Country-wise spatial cross-validation.
//!
//! Countries are sorted by area (largest first, ties by code) and dealt to
//! folds cyclically, so every fold holds a similar number of countries and a
//! similar total area. Whole countries stay together, which keeps spatially
//! autocorrelated neighbours from straddling a train/test boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{TileGrid, TileSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryRecord {
    pub code: String,
    pub name: String,
    pub area_km2: f64,
}

/// Read `code,name,area_km2` rows.
pub fn read_countries_csv(path: impl AsRef<Path>) -> Result<Vec<CountryRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Country code → fold id in `1..=k`.
    pub assignment: BTreeMap<String, usize>,
    /// Codes in assignment order (largest area first).
    pub order: Vec<String>,
}

impl FoldAssignment {
    pub fn fold_of(&self, code: &str) -> Option<usize> {
        self.assignment.get(code).copied()
    }

    /// Country codes of fold `fold`, in assignment order.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.order
            .iter()
            .filter(|c| self.assignment[*c] == fold)
            .map(String::as_str)
            .collect()
    }
}

pub fn assign_folds(countries: &[CountryRecord], k: usize) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    if countries.len() < k {
        return Err(Error::Data(format!(
            "{} countries cannot fill {k} folds",
            countries.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for c in countries {
        if !seen.insert(c.code.as_str()) {
            return Err(Error::Data(format!("duplicate country code {}", c.code)));
        }
        if !(c.area_km2 > 0.0 && c.area_km2.is_finite()) {
            return Err(Error::Data(format!("country {} has area {}", c.code, c.area_km2)));
        }
    }
    let mut sorted: Vec<&CountryRecord> = countries.iter().collect();
    sorted.sort_by(|a, b| b.area_km2.total_cmp(&a.area_km2).then_with(|| a.code.cmp(&b.code)));
    let assignment = sorted
        .iter()
        .enumerate()
        .map(|(i, c)| (c.code.clone(), i % k + 1))
        .collect();
    Ok(FoldAssignment {
        k,
        assignment,
        order: sorted.iter().map(|c| c.code.clone()).collect(),
    })
}

/// One (train, validation, test) rotation of the folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldConfig {
    pub train: Vec<usize>,
    pub validation: usize,
    pub test: usize,
}

impl fmt::Display for FoldConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let train: String = self.train.iter().map(|t| t.to_string()).collect();
        write!(f, "({train}, {}, {})", self.validation, self.test)
    }
}

/// The `k` cyclic rotations: rotation `i` trains on the `k - 2` folds starting
/// at `i`, validates on the next and tests on the one after.
pub fn fold_configs(k: usize) -> Result<Vec<FoldConfig>> {
    if k < 3 {
        return Err(Error::Config(format!("need at least 3 folds, got {k}")));
    }
    let fold = |i: usize| i % k + 1;
    Ok((0..k)
        .map(|i| FoldConfig {
            train: (0..k - 2).map(|j| fold(i + j)).collect(),
            validation: fold(i + k - 2),
            test: fold(i + k - 1),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<TileSpec>,
    pub validation: Vec<TileSpec>,
    pub test: Vec<TileSpec>,
}

/// Route every tile to the split its country's fold belongs to.
pub fn tiles_for_split(grid: &TileGrid, fa: &FoldAssignment, fc: &FoldConfig) -> Result<Split> {
    let mut split = Split::default();
    for tile in &grid.tiles {
        let fold = fa.fold_of(&tile.country).ok_or_else(|| {
            Error::Coverage(format!(
                "tile {} belongs to {}, which has no fold",
                tile.tile_id, tile.country
            ))
        })?;
        let bucket = if fc.train.contains(&fold) {
            &mut split.train
        } else if fold == fc.validation {
            &mut split.validation
        } else if fold == fc.test {
            &mut split.test
        } else {
            return Err(Error::Coverage(format!(
                "fold {fold} of {} is not part of configuration {fc}",
                tile.country
            )));
        };
        bucket.push(tile.clone());
    }
    Ok(split)
}
