use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{DataError, ExecutionTrace};
use crate::ir::{MemIntrinsic, Opcode};

pub const FEATURE_COUNT: usize = 42;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "add",
    "fadd",
    "sub",
    "fsub",
    "and",
    "or",
    "xor",
    "shl",
    "lshr",
    "ashr",
    "icmp",
    "fcmp",
    "zext",
    "sext",
    "fptosi",
    "uitofp",
    "sitofp",
    "fneg",
    "sdiv",
    "fdiv",
    "mul",
    "udiv",
    "urem",
    "fmul",
    "srem",
    "br_hit",
    "br_miss",
    "br_uncond",
    "store_miss",
    "store_hit",
    "load_miss",
    "load_hit",
    "switch",
    "getelementptr",
    "phi",
    "alloca",
    "memset",
    "memcpy",
    "calloc",
    "malloc",
    "inst_miss",
    "bb_jump",
];

/// Features that are plain executed-opcode counts.
const OPCODE_FEATURES: [Opcode; 29] = [
    Opcode::Add,
    Opcode::FAdd,
    Opcode::Sub,
    Opcode::FSub,
    Opcode::And,
    Opcode::Or,
    Opcode::Xor,
    Opcode::Shl,
    Opcode::LShr,
    Opcode::AShr,
    Opcode::ICmp,
    Opcode::FCmp,
    Opcode::ZExt,
    Opcode::SExt,
    Opcode::FPToSI,
    Opcode::UIToFP,
    Opcode::SIToFP,
    Opcode::FNeg,
    Opcode::SDiv,
    Opcode::FDiv,
    Opcode::Mul,
    Opcode::UDiv,
    Opcode::URem,
    Opcode::FMul,
    Opcode::SRem,
    Opcode::Switch,
    Opcode::GetElementPtr,
    Opcode::Phi,
    Opcode::Alloca,
];

pub(crate) fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector([0.0; FEATURE_COUNT])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, DataError> {
        let arr: [f64; FEATURE_COUNT] =
            values
                .try_into()
                .map_err(|_| DataError::DimensionMismatch {
                    line: 0,
                    expected: FEATURE_COUNT,
                    found: values.len(),
                })?;
        Ok(FeatureVector(arr))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.0[i])
    }

    pub fn set(&mut self, name: &str, value: f64) {
        let i = feature_index(name).unwrap_or_else(|| panic!("unknown feature '{name}'"));
        self.0[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn extract_features(t: &ExecutionTrace) -> FeatureVector {
    let mut v = FeatureVector::zeros();
    for op in OPCODE_FEATURES {
        v.set(op.name(), t.opcode(op) as f64);
    }
    v.set("br_hit", t.br_hit as f64);
    v.set("br_miss", t.br_miss as f64);
    v.set("br_uncond", t.br_uncond as f64);
    v.set("load_hit", t.load_hit as f64);
    v.set("load_miss", t.load_miss as f64);
    v.set("store_hit", t.store_hit as f64);
    v.set("store_miss", t.store_miss as f64);
    for m in MemIntrinsic::ALL {
        v.set(m.name(), t.mem(m) as f64);
    }
    v.set("inst_miss", crate::cache::cold_instruction_count(t) as f64);
    v.set("bb_jump", t.bb_jump as f64);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: FeatureVector,
    pub label: Option<f64>,
}

/// Feature rows with optional labels, all in one time unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub unit: String,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(unit: &str) -> Self {
        Dataset {
            unit: unit.to_string(),
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, id: &str, features: FeatureVector, label: Option<f64>) {
        self.samples.push(Sample {
            id: id.to_string(),
            features,
            label,
        });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.samples.iter().map(|s| s.features).collect()
    }

    /// All labels, failing on the first unlabeled sample.
    pub fn labels(&self) -> Result<Vec<f64>, DataError> {
        self.samples
            .iter()
            .map(|s| s.label.ok_or_else(|| DataError::MissingLabel(s.id.clone())))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let labeled = self.samples.iter().any(|s| s.label.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id"];
        header.extend(FEATURE_NAMES);
        if labeled {
            header.push("label");
        }
        w.write_record(&header).expect("in-memory write");
        for s in &self.samples {
            let mut row = vec![s.id.clone()];
            row.extend(s.features.0.iter().map(|v| v.to_string()));
            if labeled {
                row.push(s.label.map(|l| l.to_string()).unwrap_or_default());
            }
            w.write_record(&row).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        format!("# unit={}\n{body}", self.unit)
    }

    /// Parses a feature matrix. Columns are matched by name, so any column
    /// order is accepted.
    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let mut unit = "ns".to_string();
        let mut skipped = 0;
        let mut rest = text;
        while let Some(line) = rest.lines().next().filter(|l| l.starts_with('#')) {
            if let Some(u) = line.trim_start_matches('#').trim().strip_prefix("unit=") {
                unit = u.trim().to_string();
            }
            rest = &rest[(line.len() + 1).min(rest.len())..];
            skipped += 1;
        }
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_reader(rest.as_bytes());
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(DataError::format(skipped + 1, "missing header row")),
            Some(r) => r.map_err(|e| DataError::format(skipped + 1, e.to_string()))?,
        };

        let mut id_col = None;
        let mut label_col = None;
        let mut cols = vec![usize::MAX; FEATURE_COUNT];
        let mut seen = HashSet::new();
        for (i, name) in header.iter().enumerate() {
            let name = name.trim();
            if !seen.insert(name.to_string()) {
                return Err(DataError::format(
                    skipped + 1,
                    format!("duplicate column '{name}'"),
                ));
            }
            match name {
                "sample_id" => id_col = Some(i),
                "label" => label_col = Some(i),
                _ => match feature_index(name) {
                    Some(f) => cols[f] = i,
                    None => {
                        return Err(DataError::format(
                            skipped + 1,
                            format!("unknown column '{name}'"),
                        ))
                    }
                },
            }
        }
        let found = cols.iter().filter(|c| **c != usize::MAX).count();
        if found != FEATURE_COUNT {
            return Err(DataError::DimensionMismatch {
                line: skipped + 1,
                expected: FEATURE_COUNT,
                found,
            });
        }
        let id_col =
            id_col.ok_or_else(|| DataError::format(skipped + 1, "missing 'sample_id' column"))?;

        let mut ds = Dataset::new(&unit);
        for (n, rec) in records.enumerate() {
            let line = skipped + n + 2;
            let rec = rec.map_err(|e| DataError::format(line, e.to_string()))?;
            if rec.len() != header.len() {
                return Err(DataError::DimensionMismatch {
                    line,
                    expected: FEATURE_COUNT,
                    found: rec.len().saturating_sub(header.len() - FEATURE_COUNT),
                });
            }
            let mut v = FeatureVector::zeros();
            for (f, &c) in cols.iter().enumerate() {
                let cell = rec[c].trim();
                v.0[f] = cell.parse().map_err(|_| {
                    DataError::format(
                        line,
                        format!("bad value '{cell}' for '{}'", FEATURE_NAMES[f]),
                    )
                })?;
                if !(v.0[f] >= 0.0 && v.0[f].is_finite()) {
                    return Err(DataError::format(
                        line,
                        format!(
                            "feature '{}' must be a finite non-negative number",
                            FEATURE_NAMES[f]
                        ),
                    ));
                }
            }
            let label = match label_col.map(|c| rec[c].trim()) {
                None | Some("") => None,
                Some(cell) => Some(parse_label(cell, line)?),
            };
            ds.push(rec[id_col].trim(), v, label);
        }
        Ok(ds)
    }
}

fn parse_label(cell: &str, line: usize) -> Result<f64, DataError> {
    let v: f64 = cell
        .parse()
        .map_err(|_| DataError::format(line, format!("bad label '{cell}'")))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(DataError::format(
            line,
            format!("label {cell} is not strictly positive"),
        ))
    }
}

pub fn write_features(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, ds.to_csv()).map_err(|e| DataError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Dataset::from_csv(&text)
}

/// Reads `sample_id time` pairs separated by a comma or whitespace. A first
/// line whose time column is not numeric is taken as a header.
pub fn read_labels(path: &Path) -> Result<HashMap<String, f64>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_labels(&text)
}

pub(crate) fn parse_labels(text: &str) -> Result<HashMap<String, f64>, DataError> {
    let mut out = HashMap::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if raw.contains(',') {
            raw.split(',').map(str::trim).collect()
        } else {
            raw.split_whitespace().collect()
        };
        if fields.len() != 2 {
            return Err(DataError::format(
                line,
                "expected two columns: sample_id, time",
            ));
        }
        let is_header = first && fields[1].parse::<f64>().is_err();
        first = false;
        if is_header {
            continue;
        }
        let v = parse_label(fields[1], line)?;
        if out.insert(fields[0].to_string(), v).is_some() {
            return Err(DataError::format(
                line,
                format!("duplicate sample '{}'", fields[0]),
            ));
        }
    }
    Ok(out)
}
