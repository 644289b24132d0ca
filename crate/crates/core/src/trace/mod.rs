//! Execution traces: collecting them from an interpreter run, and their
//! line-oriented `key<TAB>value` file format.

mod features;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::branch::{BranchPredictorTable, Prediction, PredictorState};
use crate::cache::{AccessKind, CacheConfig, CacheError, CacheModel, ColdInstructionSet};
use crate::interp::{self, Probe, RunError, RunLimits};
use crate::ir::{IrModule, MemIntrinsic, Opcode};

pub use features::{
    extract_features, read_features, read_labels, write_features, Dataset, FeatureVector, Sample,
    FEATURE_COUNT, FEATURE_NAMES,
};

const TRACE_HEADER: &str = "# irtime trace v1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: expected {expected} feature values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("no label for sample '{0}'")]
    MissingLabel(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        DataError::Format {
            line,
            msg: msg.into(),
        }
    }
}

/// Accumulated counters of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub sample: String,
    /// `(function/label, entries)` for every block, in module order.
    pub blocks: Vec<(String, u64)>,
    /// Executed count per opcode, indexed by [`Opcode::index`].
    pub opcodes: [u64; Opcode::COUNT],
    pub load_hit: u64,
    pub load_miss: u64,
    pub store_hit: u64,
    pub store_miss: u64,
    pub br_hit: u64,
    pub br_miss: u64,
    pub br_uncond: u64,
    pub bb_jump: u64,
    pub inst_miss: u64,
    /// Byte volumes in [`MemIntrinsic::ALL`] order.
    pub mem_bytes: [u64; 4],
    pub dirty_evictions: u64,
    pub uninit_loads: u64,
}

impl ExecutionTrace {
    pub fn empty(sample: &str, block_names: Vec<String>) -> Self {
        ExecutionTrace {
            sample: sample.to_string(),
            blocks: block_names.into_iter().map(|b| (b, 0)).collect(),
            opcodes: [0; Opcode::COUNT],
            load_hit: 0,
            load_miss: 0,
            store_hit: 0,
            store_miss: 0,
            br_hit: 0,
            br_miss: 0,
            br_uncond: 0,
            bb_jump: 0,
            inst_miss: 0,
            mem_bytes: [0; 4],
            dirty_evictions: 0,
            uninit_loads: 0,
        }
    }

    pub fn opcode(&self, op: Opcode) -> u64 {
        self.opcodes[op.index()]
    }

    pub fn block(&self, name: &str) -> Option<u64> {
        self.blocks.iter().find(|b| b.0 == name).map(|b| b.1)
    }

    pub fn mem(&self, kind: MemIntrinsic) -> u64 {
        self.mem_bytes[kind as usize]
    }

    pub fn total_instructions(&self) -> u64 {
        self.opcodes.iter().sum()
    }

    fn scalar_fields(&self) -> [(&'static str, u64); 11] {
        [
            ("cache.load_hit", self.load_hit),
            ("cache.load_miss", self.load_miss),
            ("cache.store_hit", self.store_hit),
            ("cache.store_miss", self.store_miss),
            ("cache.dirty_evictions", self.dirty_evictions),
            ("branch.hit", self.br_hit),
            ("branch.miss", self.br_miss),
            ("branch.uncond", self.br_uncond),
            ("flow.bb_jump", self.bb_jump),
            ("flow.inst_miss", self.inst_miss),
            ("diag.uninit_loads", self.uninit_loads),
        ]
    }

    fn scalar_mut(&mut self, key: &str) -> Option<&mut u64> {
        Some(match key {
            "cache.load_hit" => &mut self.load_hit,
            "cache.load_miss" => &mut self.load_miss,
            "cache.store_hit" => &mut self.store_hit,
            "cache.store_miss" => &mut self.store_miss,
            "cache.dirty_evictions" => &mut self.dirty_evictions,
            "branch.hit" => &mut self.br_hit,
            "branch.miss" => &mut self.br_miss,
            "branch.uncond" => &mut self.br_uncond,
            "flow.bb_jump" => &mut self.bb_jump,
            "flow.inst_miss" => &mut self.inst_miss,
            "diag.uninit_loads" => &mut self.uninit_loads,
            _ => {
                let name = key.strip_prefix("mem.")?;
                let k = MemIntrinsic::ALL.iter().position(|m| m.name() == name)?;
                &mut self.mem_bytes[k]
            }
        })
    }

    /// Serializes to the text trace format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRACE_HEADER}");
        let _ = writeln!(out, "sample\t{}", self.sample);
        for (name, n) in &self.blocks {
            let _ = writeln!(out, "block.{name}\t{n}");
        }
        for op in Opcode::ALL {
            let _ = writeln!(out, "op.{}\t{}", op.name(), self.opcode(op));
        }
        for (key, v) in self.scalar_fields() {
            let _ = writeln!(out, "{key}\t{v}");
        }
        for m in MemIntrinsic::ALL {
            let _ = writeln!(out, "mem.{}\t{}", m.name(), self.mem(m));
        }
        out.push_str("end\n");
        out
    }

    /// Parses the text trace format. Every fixed counter must be present and
    /// the file must end with `end`, so truncation is always detected.
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut t = ExecutionTrace::empty("", Vec::new());
        let mut seen: HashSet<String> = HashSet::new();
        let mut sample = None;
        let mut ended = false;
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            if ended {
                return Err(DataError::format(line, "content after 'end'"));
            }
            if raw == "end" {
                ended = true;
                continue;
            }
            let (key, value) = raw
                .split_once('\t')
                .ok_or_else(|| DataError::format(line, "expected key<TAB>value"))?;
            if !seen.insert(key.to_string()) {
                return Err(DataError::format(line, format!("duplicate key '{key}'")));
            }
            if key == "sample" {
                sample = Some(value.to_string());
                continue;
            }
            let n: u64 = value
                .parse()
                .map_err(|_| DataError::format(line, format!("bad count '{value}' for '{key}'")))?;
            if let Some(block) = key.strip_prefix("block.") {
                t.blocks.push((block.to_string(), n));
            } else if let Some(op) = key.strip_prefix("op.") {
                let op = Opcode::from_name(op).ok_or_else(|| {
                    DataError::format(line, format!("unknown counter key '{key}'"))
                })?;
                t.opcodes[op.index()] = n;
            } else if let Some(slot) = t.scalar_mut(key) {
                *slot = n;
            } else {
                return Err(DataError::format(
                    line,
                    format!("unknown counter key '{key}'"),
                ));
            }
        }
        if !ended {
            return Err(DataError::format(
                last_line,
                "truncated trace: missing 'end' line",
            ));
        }
        t.sample = sample.ok_or_else(|| DataError::format(last_line, "missing 'sample' line"))?;
        let required = Opcode::ALL
            .iter()
            .map(|op| format!("op.{}", op.name()))
            .chain(t.scalar_fields().into_iter().map(|(k, _)| k.to_string()))
            .chain(
                MemIntrinsic::ALL
                    .iter()
                    .map(|m| format!("mem.{}", m.name())),
            );
        for key in required {
            if !seen.contains(&key) {
                return Err(DataError::format(
                    last_line,
                    format!("missing counter '{key}'"),
                ));
            }
        }
        Ok(t)
    }
}

pub fn write_trace(t: &ExecutionTrace, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, t.to_text()).map_err(|e| DataError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<ExecutionTrace, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    ExecutionTrace::from_text(&text)
}

/// Probe that drives the cache, predictor and cold-instruction models and
/// accumulates an [`ExecutionTrace`].
pub struct TraceCollector {
    trace: ExecutionTrace,
    cache: CacheModel,
    predictor: BranchPredictorTable,
    cold: ColdInstructionSet,
    cond_branches: u64,
}

impl TraceCollector {
    pub fn new(
        m: &IrModule,
        sample: &str,
        cache: CacheConfig,
        initial: PredictorState,
    ) -> Result<Self, CacheError> {
        Ok(TraceCollector {
            trace: ExecutionTrace::empty(sample, m.block_names()),
            cache: CacheModel::new(cache)?,
            predictor: BranchPredictorTable::new(initial),
            cold: ColdInstructionSet::with_capacity(m.instruction_count()),
            cond_branches: 0,
        })
    }

    pub fn finish(mut self) -> ExecutionTrace {
        self.trace.inst_miss = self.cold.cold_misses();
        self.trace.br_uncond = self.trace.opcode(Opcode::Br) - self.cond_branches;
        self.trace
    }
}

impl Probe for TraceCollector {
    fn block_enter(&mut self, block: u32) {
        self.trace.blocks[block as usize].1 += 1;
    }

    fn instruction(&mut self, static_id: u32, opcode: Opcode) {
        self.trace.opcodes[opcode.index()] += 1;
        self.cold.fetch(static_id);
    }

    fn load(&mut self, addr: u32, _bytes: u32) {
        let o = self.cache.access(addr, AccessKind::Load);
        if o.hit {
            self.trace.load_hit += 1;
        } else {
            self.trace.load_miss += 1;
        }
        self.trace.dirty_evictions += o.evicted_dirty as u64;
    }

    fn store(&mut self, addr: u32, _bytes: u32) {
        let o = self.cache.access(addr, AccessKind::Store);
        if o.hit {
            self.trace.store_hit += 1;
        } else {
            self.trace.store_miss += 1;
        }
        self.trace.dirty_evictions += o.evicted_dirty as u64;
    }

    fn cond_branch(&mut self, site: u32, taken: bool) {
        self.cond_branches += 1;
        match self.predictor.predict_and_update(site, taken) {
            Prediction::Hit => self.trace.br_hit += 1,
            Prediction::Miss => self.trace.br_miss += 1,
        }
    }

    fn block_transition(&mut self, from: u32, to: u32) {
        self.trace.bb_jump += crate::branch::count_bb_jump([(from, to)]);
    }

    fn mem_intrinsic(&mut self, kind: MemIntrinsic, bytes: u64) {
        self.trace.mem_bytes[kind as usize] += bytes;
    }

    fn uninitialized_load(&mut self, _addr: u32) {
        self.trace.uninit_loads += 1;
    }

    fn program_exit(&mut self) {
        self.cache.reset();
        self.predictor.reset();
    }
}

/// Model parameters for one simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimSettings {
    pub cache: CacheConfig,
    pub predictor: PredictorState,
    pub limits: RunLimits,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Runs `main` of `m` with every model attached.
pub fn simulate(m: &IrModule, sample: &str, s: &SimSettings) -> Result<ExecutionTrace, SimError> {
    let mut collector = TraceCollector::new(m, sample, s.cache, s.predictor)?;
    interp::run(m, "main", &mut collector, &s.limits)?;
    Ok(collector.finish())
}
