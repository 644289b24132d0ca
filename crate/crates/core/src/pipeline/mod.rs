//! Stage drivers behind the command-line tool: simulate, features, train,
//! predict, eval and gen-corpus. Every stage reads and writes plain files.

pub mod corpus;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::branch::PredictorState;
use crate::cache::CacheConfig;
use crate::interp::RunLimits;
use crate::ir::{parse_module, ParseError};
use crate::ml::{self, EvalReport, Hyperparameters, MlError, ModelKind, TrainedModel};
use crate::par::{self, Execution};
use crate::trace::{
    self, extract_features, read_features, read_labels, write_features, DataError, Dataset,
    ExecutionTrace, SimError, SimSettings,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("{sample}: {source}")]
    Simulate {
        sample: String,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("unsupported opcode '{0}' for corpus generation")]
    UnsupportedOpcode(String),
    #[error("{0}")]
    InvalidArgument(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cache: CacheConfig,
    pub predictor: PredictorState,
    pub limits: RunLimits,
    pub label_unit: String,
    pub hyperparameters: Hyperparameters,
    pub master_seed: u64,
    /// Simulation and training threads; 0 uses every core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cache: CacheConfig::default(),
            predictor: PredictorState::default(),
            limits: RunLimits::default(),
            label_unit: "ns".to_string(),
            hyperparameters: Hyperparameters::default(),
            master_seed: 42,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.cache
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.limits.validate().map_err(PipelineError::Config)?;
        self.hyperparameters.validate()?;
        if self.label_unit.is_empty() || self.label_unit.contains(['\n', ',']) {
            return Err(PipelineError::Config(format!(
                "bad label unit '{}'",
                self.label_unit
            )));
        }
        Ok(())
    }

    pub fn sim_settings(&self) -> SimSettings {
        SimSettings {
            cache: self.cache,
            predictor: self.predictor,
            limits: self.limits,
        }
    }
}

/// Expands files and directories (recursively) into `(sample_id, path)`
/// pairs for every file with extension `ext`. A directory contributes ids
/// relative to itself, so `corpus/sdiv/n100.ll` under `corpus` is
/// `sdiv/n100`; a file given directly is identified by its stem.
pub fn collect_inputs(
    inputs: &[PathBuf],
    ext: &str,
) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    fn walk(
        dir: &Path,
        root: &Path,
        ext: &str,
        out: &mut Vec<(String, PathBuf)>,
    ) -> Result<(), PipelineError> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, root, ext, out)?;
            } else if p.extension().is_some_and(|e| e == ext) {
                let rel = p.strip_prefix(root).unwrap_or(&p).with_extension("");
                let id = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((id, p));
            }
        }
        Ok(())
    }

    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            walk(input, input, ext, &mut out)?;
        } else {
            let id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| {
                    PipelineError::InvalidArgument(format!("{}: not a file", input.display()))
                })?;
            out.push((id, input.clone()));
        }
    }
    Ok(out)
}

/// Outcome of a batch simulation: traces written and per-sample failures.
#[derive(Debug, Default)]
pub struct SimulateReport {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(String, PipelineError)>,
}

impl SimulateReport {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Parses and simulates one IR file.
pub fn simulate_file(
    path: &Path,
    sample: &str,
    cfg: &PipelineConfig,
) -> Result<ExecutionTrace, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let module =
        parse_module(&text, &path.to_string_lossy()).map_err(|source| PipelineError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    trace::simulate(&module, sample, &cfg.sim_settings()).map_err(|source| {
        PipelineError::Simulate {
            sample: sample.to_string(),
            source,
        }
    })
}

/// Simulates every input into `out_dir/<sample_id>.trace`. Samples run
/// independently; one failure does not stop the others.
pub fn cmd_simulate(
    inputs: &[PathBuf],
    cfg: &PipelineConfig,
    out_dir: &Path,
    exec: Execution,
) -> Result<SimulateReport, PipelineError> {
    cfg.validate()?;
    let jobs = collect_inputs(inputs, "ll")?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let results = par::with_workers(cfg.workers, || {
        exec.map(&jobs, |(id, path)| {
            let t = simulate_file(path, id, cfg)?;
            let out = out_dir.join(format!("{id}.trace"));
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            trace::write_trace(&t, &out)?;
            Ok::<_, PipelineError>(out)
        })
    });
    let mut report = SimulateReport::default();
    for ((id, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(p) => report.written.push(p),
            Err(e) => report.failures.push((id.clone(), e)),
        }
    }
    Ok(report)
}

/// Builds a feature matrix from trace files, sorted by sample id. With a
/// labels file every sample must have a label.
pub fn cmd_features(
    inputs: &[PathBuf],
    labels: Option<&Path>,
    cfg: &PipelineConfig,
    out: Option<&Path>,
) -> Result<Dataset, PipelineError> {
    let files = collect_inputs(inputs, "trace")?;
    let labels = labels.map(read_labels).transpose()?;
    let mut traces = files
        .iter()
        .map(|(_, p)| trace::read_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    traces.sort_by(|a, b| a.sample.cmp(&b.sample));
    if let Some(w) = traces.windows(2).find(|w| w[0].sample == w[1].sample) {
        return Err(PipelineError::InvalidArgument(format!(
            "duplicate sample id '{}'",
            w[0].sample
        )));
    }
    if traces.is_empty() {
        log::warn!("no trace files found; writing an empty feature matrix");
    }
    let mut ds = Dataset::new(&cfg.label_unit);
    for t in &traces {
        let label = match &labels {
            None => None,
            Some(map) => Some(
                *map.get(&t.sample)
                    .ok_or_else(|| DataError::MissingLabel(t.sample.clone()))?,
            ),
        };
        ds.push(&t.sample, extract_features(t), label);
    }
    if let Some(out) = out {
        write_features(&ds, out)?;
    }
    Ok(ds)
}

fn read_model(path: &Path) -> Result<TrainedModel, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(TrainedModel::from_json(&text)?)
}

pub fn cmd_train(
    features: &Path,
    kind: ModelKind,
    cfg: &PipelineConfig,
    out: &Path,
    exec: Execution,
) -> Result<TrainedModel, PipelineError> {
    cfg.validate()?;
    let ds = read_features(features)?;
    let mut model = par::with_workers(cfg.workers, || {
        ml::train(kind, &ds, &cfg.hyperparameters, cfg.master_seed, exec)
    })?;
    model.metadata.cache = Some(cfg.cache);
    model.metadata.predictor = Some(cfg.predictor);
    fs::write(out, model.to_json()).map_err(io_err(out))?;
    Ok(model)
}

/// Writes `sample_id,predicted` rows and returns the predictions.
pub fn cmd_predict(
    model: &Path,
    features: &Path,
    out: Option<&Path>,
    exec: Execution,
) -> Result<Vec<(String, f64)>, PipelineError> {
    let model = read_model(model)?;
    let ds = read_features(features)?;
    if ds.unit != model.metadata.label_unit {
        log::warn!(
            "feature file unit '{}' differs from model unit '{}'",
            ds.unit,
            model.metadata.label_unit
        );
    }
    let preds = model.predict_batch(&ds.features(), exec);
    let rows: Vec<(String, f64)> = ds.samples.iter().map(|s| s.id.clone()).zip(preds).collect();
    if let Some(out) = out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "predicted"])
            .expect("in-memory write");
        for (id, p) in &rows {
            w.write_record([id.as_str(), p.to_string().as_str()])
                .expect("in-memory write");
        }
        fs::write(out, w.into_inner().expect("in-memory flush")).map_err(io_err(out))?;
    }
    Ok(rows)
}

/// Evaluates on labeled features; writes the CSV rows to `out` if given.
pub fn cmd_eval(
    model: &Path,
    features: &Path,
    out: Option<&Path>,
    exec: Execution,
) -> Result<EvalReport, PipelineError> {
    let model = read_model(model)?;
    let ds = read_features(features)?;
    let report = ml::evaluate(&model, &ds, exec)?;
    if let Some(out) = out {
        fs::write(out, report.to_csv()).map_err(io_err(out))?;
    }
    Ok(report)
}

/// Writes `out_dir/<op>/n<count>.ll` for every requested operator and count.
pub fn cmd_gen_corpus(
    ops: &[String],
    counts: &[u64],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    if let Some(bad) = ops
        .iter()
        .find(|o| !corpus::supported_ops().contains(&o.as_str()))
    {
        return Err(PipelineError::UnsupportedOpcode(bad.clone()));
    }
    if counts.is_empty() || counts.iter().any(|&n| n == 0 || n > i32::MAX as u64) {
        return Err(PipelineError::InvalidArgument(
            "iteration counts must be in 1..=2147483647".into(),
        ));
    }
    let mut written = Vec::new();
    for (k, op) in ops.iter().enumerate() {
        let dir = out_dir.join(op);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (j, &n) in counts.iter().enumerate() {
            let file_seed = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((k * counts.len() + j) as u64);
            let src = corpus::generate(op, n, file_seed).expect("validated op and count");
            let path = dir.join(format!("n{n}.ll"));
            fs::write(&path, src).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}
