use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::templates::OBJECT_CATEGORIES;

pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub categories: BTreeMap<String, CategoryStats>,
    pub total: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct SceneHeader {
    id: String,
    object: ObjectHeader,
}

#[derive(Deserialize)]
struct ObjectHeader {
    category: String,
}

/// Number of training scenes for a category of `n` scenes (70%, rounded).
pub fn train_size(n: usize) -> usize {
    (7 * n + 5) / 10
}

fn rank_key(id: &str) -> Vec<u8> {
    Sha256::digest(id.as_bytes()).to_vec()
}

/// Splits the ids of one category: ids ranked by SHA-256 of the id, the first
/// `train_size(n)` go to training.
pub fn split_ids(ids: &[String]) -> (Vec<String>, Vec<String>) {
    let mut ranked: Vec<(Vec<u8>, &String)> = ids.iter().map(|id| (rank_key(id), id)).collect();
    ranked.sort();
    let k = train_size(ids.len());
    let train = ranked[..k].iter().map(|(_, id)| (*id).clone()).collect();
    let test = ranked[k..].iter().map(|(_, id)| (*id).clone()).collect();
    (train, test)
}

/// Counts scene files (`*.json`, non-recursive) per object category.
/// Unreadable or malformed files are skipped with a warning.
pub fn manifest_stats(dir: &Path) -> Result<Manifest> {
    let mut ids: BTreeMap<String, Vec<String>> =
        OBJECT_CATEGORIES.iter().map(|c| (c.to_string(), Vec::new())).collect();
    let mut skipped = 0;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let header = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<SceneHeader>(&t).map_err(|e| e.to_string()));
        match header {
            Ok(h) => ids.entry(h.object.category).or_default().push(h.id),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    let categories: BTreeMap<String, CategoryStats> = ids
        .into_iter()
        .map(|(cat, list)| {
            let train = train_size(list.len());
            (
                cat,
                CategoryStats {
                    count: list.len(),
                    train,
                    test: list.len() - train,
                },
            )
        })
        .collect();
    Ok(Manifest {
        total: categories.values().map(|c| c.count).sum(),
        categories,
        train_fraction: TRAIN_FRACTION,
        test_fraction: 1.0 - TRAIN_FRACTION,
        skipped,
    })
}
