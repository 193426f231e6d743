//! From-scratch binary classifiers over patient features.
//!
//! Every trainer is single-threaded and bitwise deterministic given the
//! data, hyperparameters and seed. Linear models and KNN work on
//! standardized features; the forest uses raw values.

mod forest;
mod grid;
mod knn;
mod linear;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{read_json, write_json, SubsetFilter};
use crate::error::{Error, Result};
use crate::features::{FeatureName, FeatureTable};
use crate::roc::CutoffRule;
use crate::stats_eval::SubjectOutcome;

pub use forest::{Node, Tree};
pub use grid::{default_grid, grid_search, load_grid, write_search_log, SearchLogRow, SearchResult};
pub use linear::{logreg_loss_and_grad, svm_objective, LogregTrace};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const SD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logreg,
    Knn,
    SvmLinear,
    RandomForest,
    Perceptron,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::Logreg,
        ClassifierKind::Knn,
        ClassifierKind::SvmLinear,
        ClassifierKind::RandomForest,
        ClassifierKind::Perceptron,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::Knn => "knn",
            ClassifierKind::SvmLinear => "svm_linear",
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::Perceptron => "perceptron",
        }
    }

    pub fn standardizes(self) -> bool {
        self != ClassifierKind::RandomForest
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match k.as_str() {
            "logreg" | "logistic" | "logistic_regression" => ClassifierKind::Logreg,
            "knn" => ClassifierKind::Knn,
            "svm" | "svm_linear" => ClassifierKind::SvmLinear,
            "rf" | "random_forest" => ClassifierKind::RandomForest,
            "perceptron" => ClassifierKind::Perceptron,
            _ => return Err(Error::Config(format!("unknown classifier `{s}`"))),
        })
    }
}

/// One grid point. `max_depth: None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hyperparams {
    Logreg { lambda: f64 },
    Knn { k: usize },
    SvmLinear { lambda: f64 },
    RandomForest { n_trees: usize, max_depth: Option<usize>, min_leaf: usize },
    Perceptron { eta: f64, epochs: usize },
}

impl Hyperparams {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyperparams::Logreg { .. } => ClassifierKind::Logreg,
            Hyperparams::Knn { .. } => ClassifierKind::Knn,
            Hyperparams::SvmLinear { .. } => ClassifierKind::SvmLinear,
            Hyperparams::RandomForest { .. } => ClassifierKind::RandomForest,
            Hyperparams::Perceptron { .. } => ClassifierKind::Perceptron,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.kind())));
        match *self {
            Hyperparams::Logreg { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => bad("lambda must be ≥ 0"),
            Hyperparams::SvmLinear { lambda } if !(lambda > 0.0 && lambda.is_finite()) => bad("lambda must be > 0"),
            Hyperparams::Knn { k: 0 } => bad("k must be ≥ 1"),
            Hyperparams::RandomForest { n_trees, max_depth, min_leaf }
                if n_trees == 0 || min_leaf == 0 || max_depth == Some(0) =>
            {
                bad("n_trees, min_leaf and max_depth must be ≥ 1")
            }
            Hyperparams::Perceptron { eta, epochs } if !(eta > 0.0 && eta.is_finite()) || epochs == 0 => {
                bad("eta must be > 0 and epochs ≥ 1")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparams::Logreg { lambda } | Hyperparams::SvmLinear { lambda } => write!(f, "lambda={lambda}"),
            Hyperparams::Knn { k } => write!(f, "k={k}"),
            Hyperparams::RandomForest { n_trees, max_depth, min_leaf } => {
                let d = max_depth.map_or_else(|| "unlimited".to_string(), |d| d.to_string());
                write!(f, "n_trees={n_trees};max_depth={d};min_leaf={min_leaf}")
            }
            Hyperparams::Perceptron { eta, epochs } => write!(f, "eta={eta};epochs={epochs}"),
        }
    }
}

/// Z-scoring with statistics fixed at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Raw sd fell below the floor; sd was replaced by 1.
    pub floored: Vec<bool>,
}

impl Standardizer {
    /// Sample statistics (n − 1 denominator) of each column.
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::EmptyTrain);
        }
        let d = x[0].len();
        let mut mean = vec![0.0; d];
        let mut sd = vec![0.0; d];
        let mut floored = vec![false; d];
        for j in 0..d {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let ss: f64 = x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum();
            let s = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            mean[j] = m;
            if s < SD_FLOOR {
                sd[j] = 1.0;
                floored[j] = true;
            } else {
                sd[j] = s;
            }
        }
        Ok(Self { mean, sd, floored })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.sd)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn transform(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| self.transform_row(r)).collect()
    }
}

/// Dense design matrix with subject ids and diseased labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(subject_ids: Vec<String>, x: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        if subject_ids.len() != y.len() {
            return Err(Error::LengthMismatch(subject_ids.len(), y.len()));
        }
        Ok(Self { subject_ids, x, y })
    }

    /// Unnamed rows get ids `r00000`, `r00001`, … so sorted order is row order.
    pub fn from_xy(x: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Self> {
        let ids = (0..x.len()).map(|i| format!("r{i:05}")).collect();
        Self::new(ids, x, y)
    }

    pub fn from_table(table: &FeatureTable, features: &[FeatureName], filter: SubsetFilter) -> Result<Self> {
        let rows = table.select(filter)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for r in rows {
            let fv = &r.features;
            let row = features
                .iter()
                .map(|&f| {
                    fv.get(f).ok_or_else(|| Error::MissingFeature {
                        feature: f.to_string(),
                        subject_id: fv.subject_id.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ids.push(fv.subject_id.clone());
            x.push(row);
            y.push(fv.diseased);
        }
        Ok(Self { subject_ids: ids, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Parameters {
    Linear { weights: Vec<f64>, bias: f64 },
    Stored { x: Vec<Vec<f64>>, y: Vec<bool> },
    Forest { trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedClassifier {
    pub version: u32,
    pub toolkit_version: String,
    pub kind: ClassifierKind,
    pub feature_names: Vec<FeatureName>,
    pub hyperparams: Hyperparams,
    pub standardizer: Option<Standardizer>,
    pub parameters: Parameters,
    pub train_seed: u64,
}

/// Train on an in-memory dataset; `feature_names` only labels the columns.
pub fn train_dataset(
    hp: &Hyperparams,
    feature_names: &[FeatureName],
    data: &Dataset,
    seed: u64,
) -> Result<TrainedClassifier> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let d = data.n_features();
    if d == 0 || data.x.iter().any(|r| r.len() != d) {
        return Err(Error::Config("training rows need a consistent, non-zero feature count".into()));
    }
    if !feature_names.is_empty() && feature_names.len() != d {
        return Err(Error::LengthMismatch(feature_names.len(), d));
    }
    if data.y.iter().all(|&v| v) || data.y.iter().all(|&v| !v) {
        return Err(Error::SingleClassTrain);
    }
    let kind = hp.kind();
    let standardizer = if kind.standardizes() { Some(Standardizer::fit(&data.x)?) } else { None };
    let x = match &standardizer {
        Some(s) => s.transform(&data.x),
        None => data.x.clone(),
    };
    let parameters = match *hp {
        Hyperparams::Logreg { lambda } => {
            let (weights, bias) = linear::train_logreg(&x, &data.y, lambda).params();
            Parameters::Linear { weights, bias }
        }
        Hyperparams::SvmLinear { lambda } => {
            let (weights, bias) = linear::train_svm(&x, &data.y, lambda);
            Parameters::Linear { weights, bias }
        }
        Hyperparams::Perceptron { eta, epochs } => {
            let (weights, bias, _) = linear::train_perceptron(&x, &data.y, &data.subject_ids, eta, epochs);
            Parameters::Linear { weights, bias }
        }
        Hyperparams::Knn { .. } => Parameters::Stored { x, y: data.y.clone() },
        Hyperparams::RandomForest { n_trees, max_depth, min_leaf } => {
            Parameters::Forest { trees: forest::train_forest(&x, &data.y, n_trees, max_depth, min_leaf, seed) }
        }
    };
    Ok(TrainedClassifier {
        version: MODEL_FORMAT_VERSION,
        toolkit_version: crate::VERSION.to_string(),
        kind,
        feature_names: feature_names.to_vec(),
        hyperparams: *hp,
        standardizer,
        parameters,
        train_seed: seed,
    })
}

/// Train on the TRAIN subset of a feature table.
pub fn train(
    hp: &Hyperparams,
    table: &FeatureTable,
    features: &[FeatureName],
    seed: u64,
) -> Result<TrainedClassifier> {
    if features.is_empty() {
        return Err(Error::Config("empty feature list".into()));
    }
    let data = Dataset::from_table(table, features, SubsetFilter::TRAIN)?;
    train_dataset(hp, features, &data, seed)
}

impl TrainedClassifier {
    /// Raw (unstandardized) feature row → diseased?
    pub fn predict_row(&self, raw: &[f64]) -> bool {
        let z;
        let row = match &self.standardizer {
            Some(s) => {
                z = s.transform_row(raw);
                &z[..]
            }
            None => raw,
        };
        match (&self.parameters, self.hyperparams) {
            (Parameters::Linear { weights, bias }, Hyperparams::Logreg { .. }) => {
                linear::sigmoid(linear::dot(weights, row) + bias) > 0.5
            }
            (Parameters::Linear { weights, bias }, _) => linear::dot(weights, row) + bias > 0.0,
            (Parameters::Stored { x, y }, Hyperparams::Knn { k }) => knn::predict(x, y, k, row),
            (Parameters::Forest { trees }, _) => forest::predict_forest(trees, row),
            (Parameters::Stored { .. }, _) => unreachable!("checked on load"),
        }
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Vec<bool> {
        data.x.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self, true)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        m.check().map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Ok(m)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(format!("unsupported model version {}", self.version));
        }
        if self.feature_names.is_empty() {
            return Err("empty feature_names".into());
        }
        if self.hyperparams.kind() != self.kind {
            return Err("hyperparams do not match kind".into());
        }
        let d = self.feature_names.len();
        let ok = match (&self.parameters, self.kind) {
            (Parameters::Linear { weights, .. }, ClassifierKind::Logreg | ClassifierKind::SvmLinear | ClassifierKind::Perceptron) => {
                weights.len() == d
            }
            (Parameters::Stored { x, y }, ClassifierKind::Knn) => x.len() == y.len() && x.iter().all(|r| r.len() == d),
            (Parameters::Forest { trees }, ClassifierKind::RandomForest) => !trees.is_empty(),
            _ => false,
        };
        if !ok {
            return Err("parameters inconsistent with kind".into());
        }
        if self.kind.standardizes() != self.standardizer.is_some() {
            return Err("standardizer presence inconsistent with kind".into());
        }
        Ok(())
    }
}

/// Predictions for the selected subjects, in table order.
pub fn predict(model: &TrainedClassifier, table: &FeatureTable, filter: SubsetFilter) -> Result<Vec<SubjectOutcome>> {
    let data = Dataset::from_table(table, &model.feature_names, filter)?;
    Ok(outcomes(&data, &model.predict_dataset(&data)))
}

/// Diseased iff the rule's feature value is strictly above the cutoff.
pub fn apply_cutoff(table: &FeatureTable, rule: &CutoffRule, filter: SubsetFilter) -> Result<Vec<SubjectOutcome>> {
    let f: FeatureName = rule.feature.parse()?;
    let data = Dataset::from_table(table, &[f], filter)?;
    let pred: Vec<bool> = data.x.iter().map(|r| rule.predicts_diseased(r[0])).collect();
    Ok(outcomes(&data, &pred))
}

fn outcomes(data: &Dataset, pred: &[bool]) -> Vec<SubjectOutcome> {
    data.subject_ids
        .iter()
        .zip(pred.iter().zip(&data.y))
        .map(|(id, (&p, &t))| SubjectOutcome { subject_id: id.clone(), predicted: p, truth: t })
        .collect()
}
