use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_dataset, ClassifierKind, Dataset, Hyperparams, TrainedClassifier};
use crate::cohort::{read_json, SubsetFilter};
use crate::error::{Error, Result};
use crate::features::{FeatureName, FeatureTable};
use crate::stats_eval::f1_score;

/// Built-in grid for a classifier, in enumeration order.
pub fn default_grid(kind: ClassifierKind) -> Vec<Hyperparams> {
    match kind {
        ClassifierKind::Logreg => [0.0, 0.01, 0.1, 1.0].map(|lambda| Hyperparams::Logreg { lambda }).to_vec(),
        ClassifierKind::Knn => [1, 3, 5, 7].map(|k| Hyperparams::Knn { k }).to_vec(),
        ClassifierKind::SvmLinear => [0.001, 0.01, 0.1, 1.0].map(|lambda| Hyperparams::SvmLinear { lambda }).to_vec(),
        ClassifierKind::RandomForest => {
            let mut g = Vec::new();
            for n_trees in [50, 200] {
                for max_depth in [Some(3), Some(5), None] {
                    for min_leaf in [1, 3] {
                        g.push(Hyperparams::RandomForest { n_trees, max_depth, min_leaf });
                    }
                }
            }
            g
        }
        ClassifierKind::Perceptron => {
            let mut g = Vec::new();
            for eta in [0.1, 1.0] {
                for epochs in [100, 1000] {
                    g.push(Hyperparams::Perceptron { eta, epochs });
                }
            }
            g
        }
    }
}

/// Grid file: a JSON array of hyperparameter objects, e.g.
/// `[{"kind":"knn","k":3}]`.
pub fn load_grid(path: &Path) -> Result<Vec<Hyperparams>> {
    let g: Vec<Hyperparams> = read_json(path)?;
    if g.is_empty() {
        return Err(Error::Config(format!("{}: empty grid", path.display())));
    }
    for hp in &g {
        hp.validate()?;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLogRow {
    pub kind: ClassifierKind,
    pub feature_set: String,
    pub hyperparams: String,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub model: TrainedClassifier,
    pub val_f1: f64,
    /// Index of the winning cell in the log.
    pub best_index: usize,
    pub log: Vec<SearchLogRow>,
}

/// Train every (feature set × grid point) cell on TRAIN, score F1 on
/// VALIDATION and keep the best. Ties go to fewer features, then to the
/// earlier cell (feature sets outer, grid inner).
pub fn grid_search(
    table: &FeatureTable,
    feature_sets: &[Vec<FeatureName>],
    grid: &[Hyperparams],
    seed: u64,
) -> Result<SearchResult> {
    if feature_sets.is_empty() || grid.is_empty() || feature_sets.iter().any(Vec::is_empty) {
        return Err(Error::Config("grid search needs non-empty feature sets and grid".into()));
    }
    let kinds: Vec<_> = grid.iter().map(Hyperparams::kind).collect();
    if kinds.iter().any(|k| *k != kinds[0]) {
        return Err(Error::Config("grid mixes classifier kinds".into()));
    }
    let data: Vec<(Dataset, Dataset)> = feature_sets
        .iter()
        .map(|fs| {
            let tr = Dataset::from_table(table, fs, SubsetFilter::TRAIN)?;
            let va = Dataset::from_table(table, fs, SubsetFilter::VALIDATION)?;
            if tr.is_empty() {
                return Err(Error::EmptyTrain);
            }
            if va.is_empty() {
                return Err(Error::Config("validation subset is empty".into()));
            }
            Ok((tr, va))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, &Hyperparams)> =
        (0..feature_sets.len()).flat_map(|i| grid.iter().map(move |hp| (i, hp))).collect();
    let results: Vec<(TrainedClassifier, f64)> = cells
        .par_iter()
        .map(|&(i, hp)| {
            let (tr, va) = &data[i];
            let m = train_dataset(hp, &feature_sets[i], tr, seed)?;
            let f1 = f1_score(&m.predict_dataset(va), &va.y)?;
            Ok((m, f1))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (c, (_, f1)) in results.iter().enumerate().skip(1) {
        let (bf1, bsize) = (results[best].1, feature_sets[cells[best].0].len());
        let size = feature_sets[cells[c].0].len();
        if *f1 > bf1 || (*f1 == bf1 && size < bsize) {
            best = c;
        }
    }
    let log = cells
        .iter()
        .zip(&results)
        .map(|(&(i, hp), (_, f1))| SearchLogRow {
            kind: hp.kind(),
            feature_set: feature_sets[i].iter().map(|f| f.as_str()).collect::<Vec<_>>().join("+"),
            hyperparams: hp.to_string(),
            val_f1: *f1,
        })
        .collect();
    let (model, val_f1) = results.into_iter().nth(best).expect("non-empty");
    Ok(SearchResult { model, val_f1, best_index: best, log })
}

pub fn write_search_log<W: std::io::Write>(rows: &[SearchLogRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|e| Error::Io { path: "<search log>".into(), source: e })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Subset;
    use crate::features::{FeatureRow, FeatureVector};

    fn table() -> FeatureTable {
        let mut rows = Vec::new();
        for i in 0..40 {
            let diseased = i % 2 == 0;
            let split = match i % 5 {
                0..=2 => Subset::Train,
                3 => Subset::Validation,
                _ => Subset::Test,
            };
            let base = if diseased { 1100.0 } else { 950.0 } + (i % 7) as f64;
            rows.push(FeatureRow {
                split: Some(split),
                features: FeatureVector {
                    subject_id: format!("s{i:03}"),
                    diseased,
                    t1: Some([base, base - 20.0, base, base + 20.0]),
                    t2: Some([50.0 + (i % 3) as f64; 4]),
                },
            });
        }
        FeatureTable { rows }
    }

    #[test]
    fn default_grid_sizes() {
        let sizes: Vec<usize> = ClassifierKind::ALL.iter().map(|&k| default_grid(k).len()).collect();
        assert_eq!(sizes, [4, 4, 4, 12, 4]);
    }

    #[test]
    fn single_cell_and_size_tie_break() {
        let t = table();
        let hp = [Hyperparams::Knn { k: 1 }];
        let one = grid_search(&t, &[vec![FeatureName::T1A]], &hp, 0).unwrap();
        assert_eq!(one.log.len(), 1);
        // both sets separate perfectly → the two-feature set wins over four
        let big = vec![FeatureName::T1A, FeatureName::T1Lq, FeatureName::T1M, FeatureName::T1Uq];
        let small = vec![FeatureName::T1Lq, FeatureName::T1Uq];
        let r = grid_search(&t, &[big, small.clone()], &hp, 0).unwrap();
        assert_eq!(r.log[0].val_f1, r.log[1].val_f1);
        assert_eq!(r.model.feature_names, small);
        assert_eq!(r.best_index, 1);
    }

    #[test]
    fn log_csv_header() {
        let t = table();
        let r = grid_search(&t, &[vec![FeatureName::T1A]], &default_grid(ClassifierKind::Logreg), 3).unwrap();
        let mut buf = Vec::new();
        write_search_log(&r.log, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("kind,feature_set,hyperparams,val_f1\nlogreg,t1_a,lambda=0,"));
        assert_eq!(s.lines().count(), 5);
    }
}
