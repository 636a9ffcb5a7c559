//! Shared test fixtures: synthetic ranking datasets and on-disk fold layouts.
// each integration test binary compiles this module separately and uses a
// different subset of it
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use marlrank::letor::{render_line, Dataset, DocumentRecord, QueryGroup};

/// Labels are a noisy function of features 0 and 1: thresholds on their mean,
/// with probability `noise` bumped one level up or down.
pub fn synthetic_dataset(
    queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    noise: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = (0..queries)
        .map(|q| {
            let query_id = format!("q{q}");
            let docs = (0..docs_per_query)
                .map(|_| {
                    let features: Vec<f64> = (0..feature_dim).map(|_| rng.gen()).collect();
                    let u = 0.5 * (features[0] + features[1]);
                    let mut label: i32 = if u < 0.45 {
                        0
                    } else if u < 0.65 {
                        1
                    } else {
                        2
                    };
                    if rng.gen::<f64>() < noise {
                        label += if rng.gen::<bool>() { 1 } else { -1 };
                        label = label.clamp(0, 2);
                    }
                    DocumentRecord {
                        label: label as u8,
                        query_id: query_id.clone(),
                        features,
                        comment: None,
                    }
                })
                .collect();
            QueryGroup { query_id, docs }
        })
        .collect();
    Dataset {
        groups,
        feature_dim,
    }
}

/// Labels driven by two features with a class skew: `zero_frac` of the docs
/// are non-relevant with a low feature 0, the rest have a high feature 0 and
/// split into grades 1 and 2 on feature 2. `noise` bumps labels one level.
/// The skew means high action accuracy does not imply good ranking: the
/// grade-1 / grade-2 distinction carries most of the NDCG mass.
pub fn pocket_dataset(
    queries: usize,
    docs_per_query: usize,
    zero_frac: f64,
    noise: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature_dim = 10;
    let groups = (0..queries)
        .map(|q| {
            let query_id = format!("q{q}");
            let docs = (0..docs_per_query)
                .map(|_| {
                    let mut features: Vec<f64> = (0..feature_dim).map(|_| rng.gen()).collect();
                    let mut label: i32;
                    if rng.gen::<f64>() < zero_frac {
                        features[0] = rng.gen_range(0.0..0.3);
                        label = 0;
                    } else {
                        features[0] = rng.gen_range(0.7..1.0);
                        label = if features[2] > 0.6 { 2 } else { 1 };
                    }
                    if rng.gen::<f64>() < noise {
                        label += if rng.gen::<bool>() { 1 } else { -1 };
                        label = label.clamp(0, 2);
                    }
                    DocumentRecord {
                        label: label as u8,
                        query_id: query_id.clone(),
                        features,
                        comment: None,
                    }
                })
                .collect();
            QueryGroup { query_id, docs }
        })
        .collect();
    Dataset {
        groups,
        feature_dim,
    }
}

pub fn dataset_to_lines(ds: &Dataset) -> String {
    let mut out = String::new();
    for g in &ds.groups {
        for d in &g.docs {
            out.push_str(&render_line(d));
            out.push('\n');
        }
    }
    out
}

/// Write a five-fold layout under `root`, rotating queries of one synthetic
/// dataset through the splits.
pub fn write_fold_layout(root: &Path, seed: u64) {
    let ds = synthetic_dataset(10, 8, 5, 0.0, seed);
    let n = ds.groups.len();
    for fold in 1..=5usize {
        let dir = root.join(format!("Fold{fold}"));
        fs::create_dir_all(&dir).unwrap();
        let pick = |role: usize| -> Dataset {
            let groups: Vec<QueryGroup> = ds
                .groups
                .iter()
                .enumerate()
                .filter(|(i, _)| match role {
                    0 => (i + fold) % 5 < 3,
                    1 => (i + fold) % 5 == 3,
                    _ => (i + fold) % 5 == 4,
                })
                .map(|(_, g)| g.clone())
                .collect();
            Dataset {
                groups,
                feature_dim: ds.feature_dim,
            }
        };
        let _ = n;
        fs::write(dir.join("train.txt"), dataset_to_lines(&pick(0))).unwrap();
        fs::write(dir.join("vali.txt"), dataset_to_lines(&pick(1))).unwrap();
        fs::write(dir.join("test.txt"), dataset_to_lines(&pick(2))).unwrap();
    }
}
