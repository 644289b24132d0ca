//! Regression models over feature vectors, their hyperparameters, the model
//! file format and evaluation reports.

pub mod forest;
pub mod linear;
pub mod metrics;
pub mod mlp;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::branch::PredictorState;
use crate::cache::CacheConfig;
use crate::par::Execution;
use crate::trace::{DataError, Dataset, FeatureVector, FEATURE_COUNT};

pub use forest::Forest;
pub use linear::LinearFit;
pub use metrics::{ape, loss_huber, loss_mse, sape};
pub use mlp::Mlp;

const MODEL_FORMAT: &str = "irtime-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("actual time must be positive, got {0}")]
    NonPositiveActual(f64),
    #[error("actual + predicted must be positive")]
    DegenerateDenominator,
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} labeled samples, got {found}")]
    EmptyDataset { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HuberParams {
    /// Threshold between the quadratic and linear regimes.
    pub epsilon: f64,
    pub max_iter: usize,
    pub l2: f64,
}

impl Default for HuberParams {
    fn default() -> Self {
        HuberParams {
            epsilon: 1.35,
            max_iter: 100,
            l2: 1e-4,
        }
    }
}

impl HuberParams {
    pub fn validate(&self) -> Result<(), MlError> {
        if !(self.epsilon > 0.0) || self.max_iter == 0 || !(self.l2 >= 0.0) {
            return Err(MlError::InvalidHyperparameter(format!("huber: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    /// Learning rate.
    pub alpha: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Weight-decay coefficient.
    pub lambda: f64,
    pub hidden: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            alpha: 2e-5,
            batch: 4,
            epochs: 10,
            lambda: 1e-4,
            hidden: 64,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), MlError> {
        if !(self.alpha > 0.0) || self.batch == 0 || self.hidden == 0 || !(self.lambda >= 0.0) {
            return Err(MlError::InvalidHyperparameter(format!("mlp: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_split: usize,
    pub min_leaf: usize,
    /// Fraction of features considered at each split.
    pub max_features: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 64,
            min_split: 2,
            min_leaf: 1,
            max_features: 1.0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), MlError> {
        if self.n_trees == 0
            || self.min_split < 2
            || self.min_leaf == 0
            || !(self.max_features > 0.0 && self.max_features <= 1.0)
        {
            return Err(MlError::InvalidHyperparameter(format!("forest: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub huber: HuberParams,
    pub mlp: MlpParams,
    pub forest: ForestParams,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), MlError> {
        self.huber.validate()?;
        self.mlp.validate()?;
        self.forest.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Huber,
    Forest,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Linear,
        ModelKind::Huber,
        ModelKind::Forest,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Huber => "huber",
            ModelKind::Forest => "forest",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lr" => Ok(ModelKind::Linear),
            "huber" | "hr" => Ok(ModelKind::Huber),
            "forest" | "rf" => Ok(ModelKind::Forest),
            "mlp" => Ok(ModelKind::Mlp),
            _ => Err(format!(
                "unknown model kind '{s}' (linear, huber, forest, mlp)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearFit),
    Forest(Forest),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub hyperparameters: Hyperparameters,
    pub master_seed: u64,
    /// SHA-256 over sample ids, features and labels of the training set.
    pub dataset_fingerprint: String,
    pub training_samples: usize,
    pub label_unit: String,
    /// Simulation settings the training features were produced with.
    pub cache: Option<CacheConfig>,
    pub predictor: Option<PredictorState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub metadata: ModelMetadata,
    pub params: ModelParams,
}

pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(ds.unit.as_bytes());
    for s in &ds.samples {
        h.update((s.id.len() as u64).to_le_bytes());
        h.update(s.id.as_bytes());
        for v in s.features.0 {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(s.label.map_or(u64::MAX, f64::to_bits).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits a model of `kind` to a labeled dataset.
pub fn train(
    kind: ModelKind,
    ds: &Dataset,
    hp: &Hyperparameters,
    master_seed: u64,
    exec: Execution,
) -> Result<TrainedModel, MlError> {
    let x = ds.features();
    let y = ds.labels()?;
    let params = match kind {
        ModelKind::Linear => ModelParams::Linear(linear::fit_least_squares(&x, &y)?),
        ModelKind::Huber => ModelParams::Linear(linear::fit_huber(&x, &y, &hp.huber)?),
        ModelKind::Forest => {
            ModelParams::Forest(forest::fit_forest(&x, &y, &hp.forest, master_seed, exec)?)
        }
        ModelKind::Mlp => ModelParams::Mlp(mlp::fit_mlp(&x, &y, &hp.mlp, master_seed)?.0),
    };
    Ok(TrainedModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        kind,
        metadata: ModelMetadata {
            hyperparameters: *hp,
            master_seed,
            dataset_fingerprint: dataset_fingerprint(ds),
            training_samples: ds.len(),
            label_unit: ds.unit.clone(),
            cache: None,
            predictor: None,
        },
        params,
    })
}

impl TrainedModel {
    /// Predicted time, clamped at zero.
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let raw = match &self.params {
            ModelParams::Linear(f) => f.predict(&x.0),
            ModelParams::Forest(f) => f.predict(&x.0),
            ModelParams::Mlp(m) => m.predict(&x.0),
        };
        raw.max(0.0)
    }

    pub fn predict_slice(&self, values: &[f64]) -> Result<f64, MlError> {
        let v = FeatureVector::from_slice(values).map_err(|_| MlError::DimensionMismatch {
            expected: FEATURE_COUNT,
            found: values.len(),
        })?;
        Ok(self.predict(&v))
    }

    pub fn predict_batch(&self, xs: &[FeatureVector], exec: Execution) -> Vec<f64> {
        exec.map(xs, |x| self.predict(x))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MlError> {
        let m: TrainedModel =
            serde_json::from_str(text).map_err(|e| MlError::ModelFormat(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(MlError::ModelFormat(format!(
                "unexpected format '{}'",
                m.format
            )));
        }
        if m.version != MODEL_VERSION {
            return Err(MlError::ModelFormat(format!(
                "unsupported version {}",
                m.version
            )));
        }
        let consistent = match (&m.kind, &m.params) {
            (ModelKind::Linear | ModelKind::Huber, ModelParams::Linear(f)) => {
                f.weights.len() == FEATURE_COUNT
            }
            (ModelKind::Forest, ModelParams::Forest(f)) => !f.trees.is_empty(),
            (ModelKind::Mlp, ModelParams::Mlp(n)) => {
                n.w1.len() == n.hidden * FEATURE_COUNT && n.x_mean.len() == FEATURE_COUNT
            }
            _ => false,
        };
        if !consistent {
            return Err(MlError::ModelFormat(format!(
                "parameters do not match a {} model over {FEATURE_COUNT} features",
                m.kind
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub sample: String,
    pub group: String,
    pub actual: f64,
    pub predicted: f64,
    pub ape: f64,
    pub sape: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub count: usize,
    pub ape: f64,
    pub sape: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub unit: String,
    pub rows: Vec<EvalRow>,
    /// Sorted by group name.
    pub groups: Vec<GroupSummary>,
    pub overall: GroupSummary,
}

/// Group of a sample id: the part before the first `/`, or the whole id.
pub fn sample_group(id: &str) -> &str {
    id.split_once('/').map_or(id, |(g, _)| g)
}

fn summarize(group: &str, rows: &[&EvalRow]) -> GroupSummary {
    let n = rows.len();
    GroupSummary {
        group: group.to_string(),
        count: n,
        ape: rows.iter().map(|r| r.ape).sum::<f64>() / n as f64,
        sape: rows.iter().map(|r| r.sape).sum::<f64>() / n as f64,
    }
}

pub fn evaluate(
    model: &TrainedModel,
    ds: &Dataset,
    exec: Execution,
) -> Result<EvalReport, MlError> {
    if ds.is_empty() {
        return Err(MlError::EmptyDataset {
            needed: 1,
            found: 0,
        });
    }
    let labels = ds.labels()?;
    let preds = model.predict_batch(&ds.features(), exec);
    report_from_predictions(model.kind, ds, &labels, &preds)
}

pub fn report_from_predictions(
    kind: ModelKind,
    ds: &Dataset,
    labels: &[f64],
    preds: &[f64],
) -> Result<EvalReport, MlError> {
    let mut rows = Vec::with_capacity(ds.len());
    for ((s, &a), &p) in ds.samples.iter().zip(labels).zip(preds) {
        rows.push(EvalRow {
            sample: s.id.clone(),
            group: sample_group(&s.id).to_string(),
            actual: a,
            predicted: p,
            ape: ape(a, p)?,
            sape: sape(a, p)?,
        });
    }
    let mut by_group: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
    for r in &rows {
        by_group.entry(&r.group).or_default().push(r);
    }
    let groups = by_group.iter().map(|(g, rs)| summarize(g, rs)).collect();
    let all: Vec<&EvalRow> = rows.iter().collect();
    let overall = summarize("overall", &all);
    Ok(EvalReport {
        kind,
        unit: ds.unit.clone(),
        groups,
        overall,
        rows,
    })
}

impl EvalReport {
    /// Fixed-width table: one line per sample, then group and overall means.
    pub fn render_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.sample.len())
            .chain([7])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(out, "model: {}  (times in {})", self.kind, self.unit);
        let _ = writeln!(
            out,
            "{:<w$}  {:>14}  {:>14}  {:>9}  {:>9}",
            "sample", "actual", "predicted", "sAPE(%)", "APE(%)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:>14.3}  {:>14.3}  {:>9.2}  {:>9.2}",
                r.sample, r.actual, r.predicted, r.sape, r.ape
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(w + 54));
        for g in self.groups.iter().chain(std::iter::once(&self.overall)) {
            let label = format!("{} (n={})", g.group, g.count);
            let _ = writeln!(
                out,
                "{:<w2$}  {:>9.2}  {:>9.2}",
                label,
                g.sape,
                g.ape,
                w2 = w + 32
            );
        }
        out
    }

    /// Machine-readable rows: `record,name,count,actual,predicted,sape,ape`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>, rec: [String; 7]| {
            w.write_record(&rec).expect("in-memory write");
        };
        write(
            &mut w,
            [
                "record",
                "name",
                "count",
                "actual",
                "predicted",
                "sape",
                "ape",
            ]
            .map(String::from),
        );
        for r in &self.rows {
            write(
                &mut w,
                [
                    "sample".into(),
                    r.sample.clone(),
                    "1".into(),
                    r.actual.to_string(),
                    r.predicted.to_string(),
                    r.sape.to_string(),
                    r.ape.to_string(),
                ],
            );
        }
        for (tag, g) in self
            .groups
            .iter()
            .map(|g| ("group", g))
            .chain(std::iter::once(("overall", &self.overall)))
        {
            write(
                &mut w,
                [
                    tag.into(),
                    g.group.clone(),
                    g.count.to_string(),
                    String::new(),
                    String::new(),
                    g.sape.to_string(),
                    g.ape.to_string(),
                ],
            );
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}
