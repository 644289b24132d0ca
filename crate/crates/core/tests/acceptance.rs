//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use irtime::branch::{BranchPredictorTable, Prediction, PredictorState};
use irtime::cache::{AccessKind, CacheConfig, CacheModel};
use irtime::ir::{parse_module, Opcode};
use irtime::ml::linear::{fit_huber, fit_least_squares};
use irtime::ml::metrics::{huber, loss_huber, loss_mse};
use irtime::ml::{self, ape, sape, HuberParams, Hyperparameters, Mlp, ModelKind};
use irtime::par::Execution;
use irtime::pipeline::{self, PipelineConfig};
use irtime::trace::{
    extract_features, simulate, Dataset, FeatureVector, SimSettings, FEATURE_COUNT, FEATURE_NAMES,
};

const EXAMPLE_B: &str = "define i32 @main() {
entry:
  br label %loop
loop:
  %i = phi i32 [ 0, %entry ], [ %inext, %loop ]
  %s = phi i32 [ 0, %entry ], [ %snext, %loop ]
  %snext = add i32 %s, %i
  %inext = add i32 %i, 1
  %c = icmp slt i32 %inext, 10
  br i1 %c, label %loop, label %exit
exit:
  ret i32 %snext
}";

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn samples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn example_b_trace() -> irtime::trace::ExecutionTrace {
    let m = parse_module(EXAMPLE_B, "example_b").unwrap();
    simulate(&m, "example_b", &SimSettings::default()).unwrap()
}

/// Hit iff fewer than `ways` distinct lines of the same set were touched
/// since the previous access to this line.
fn lru_oracle(lines: &[u32], sets: u32, ways: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(lines.len());
    for (i, &line) in lines.iter().enumerate() {
        let set = line % sets;
        let mut seen: Vec<u32> = Vec::new();
        let mut hit = false;
        for &prev in lines[..i].iter().rev() {
            if prev % sets != set {
                continue;
            }
            if prev == line {
                hit = true;
                break;
            }
            if !seen.contains(&prev) {
                seen.push(prev);
                if seen.len() >= ways {
                    break;
                }
            }
        }
        out.push(hit);
    }
    out
}

fn c1_cache_oracle() -> Check {
    let cfg = CacheConfig::default();
    ensure!(
        (cfg.cache_size, cfg.line_size, cfg.associativity) == (16384, 32, 2),
        "unexpected default geometry {cfg:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let accesses: Vec<(u32, AccessKind)> = (0..10_000)
        .map(|_| {
            let addr = if rng.random_bool(0.7) {
                rng.random_range(0..24 * 1024)
            } else {
                0x2000_0000 + rng.random_range(0..96 * 1024)
            };
            let kind = if rng.random_bool(0.3) {
                AccessKind::Store
            } else {
                AccessKind::Load
            };
            (addr, kind)
        })
        .collect();

    let start = Instant::now();
    let mut model = CacheModel::new(cfg).unwrap();
    let got: Vec<bool> = accesses
        .iter()
        .map(|&(a, k)| model.access(a, k).hit)
        .collect();
    let elapsed = start.elapsed();

    let lines: Vec<u32> = accesses.iter().map(|&(a, _)| a / 32).collect();
    let want = lru_oracle(&lines, 256, 2);
    if let Some(i) = (0..got.len()).find(|&i| got[i] != want[i]) {
        return Err(format!(
            "access {i}: model hit={} oracle hit={}",
            got[i], want[i]
        ));
    }
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    let hits = got.iter().filter(|h| **h).count();
    Ok(format!(
        "10000 accesses, {hits} hits, identical sequence, {elapsed:?}"
    ))
}

fn c2_predictor() -> Check {
    use PredictorState::*;
    let table = [
        (StronglyTaken, true, StronglyTaken),
        (StronglyTaken, false, WeaklyTaken),
        (WeaklyTaken, true, StronglyTaken),
        (WeaklyTaken, false, WeaklyNotTaken),
        (WeaklyNotTaken, true, WeaklyTaken),
        (WeaklyNotTaken, false, StronglyNotTaken),
        (StronglyNotTaken, true, WeaklyNotTaken),
        (StronglyNotTaken, false, StronglyNotTaken),
    ];
    for (s, taken, next) in table {
        ensure!(
            s.next(taken) == next,
            "{s:?} on taken={taken} gave {:?}",
            s.next(taken)
        );
        let mut t = BranchPredictorTable::new(s);
        let p = t.predict_and_update(0, taken);
        let expect_hit = matches!(s, StronglyTaken | WeaklyTaken) == taken;
        ensure!(
            (p == Prediction::Hit) == expect_hit,
            "{s:?} on taken={taken} predicted {p:?}"
        );
        ensure!(t.state(0) == next, "table state after {s:?}/{taken}");
    }
    ensure!(
        PredictorState::default() == WeaklyNotTaken,
        "default is not WNT"
    );
    let t = example_b_trace();
    ensure!(
        (t.br_hit, t.br_miss) == (8, 2),
        "example loop hit/miss {} {}",
        t.br_hit,
        t.br_miss
    );
    Ok("8/8 transitions, example loop br_hit=8 br_miss=2".into())
}

fn c3_hand_counts() -> Check {
    let t = example_b_trace();
    let got = (
        t.block("main/entry"),
        t.block("main/loop"),
        t.block("main/exit"),
        t.opcode(Opcode::Add),
        t.opcode(Opcode::ICmp),
        t.opcode(Opcode::Phi),
        t.br_uncond,
        t.bb_jump,
        t.inst_miss,
    );
    let want = (Some(1), Some(10), Some(1), 20, 10, 20, 1, 2, 8);
    ensure!(got == want, "got {got:?}, want {want:?}");
    Ok("blocks 1/10/1, add 20, icmp 10, phi 20, br_uncond 1, bb_jump 2, inst_miss 8".into())
}

fn c4_feature_contract() -> Check {
    let expected = [
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
    ensure!(
        FEATURE_COUNT == 42 && FEATURE_NAMES == expected,
        "feature names differ"
    );

    let mut sources: Vec<(String, String)> = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(samples_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ll"))
        .collect();
    entries.sort();
    for p in entries {
        sources.push((p.display().to_string(), fs::read_to_string(&p).unwrap()));
    }
    for op in pipeline::corpus::supported_ops() {
        for n in [1, 37] {
            sources.push((
                format!("{op}/n{n}"),
                pipeline::corpus::generate(op, n, 9).unwrap(),
            ));
        }
    }
    sources.push(("example_b".into(), EXAMPLE_B.into()));

    let mut loads = 0;
    for (id, src) in &sources {
        let m = parse_module(src, id).map_err(|e| format!("{id}: {e}"))?;
        let t = simulate(&m, id, &SimSettings::default()).map_err(|e| format!("{id}: {e}"))?;
        let f = extract_features(&t);
        ensure!(
            f.as_slice().len() == 42,
            "{id}: {} components",
            f.as_slice().len()
        );
        let executed = t.opcode(Opcode::Load) as f64;
        let counted = f.get("load_hit").unwrap() + f.get("load_miss").unwrap();
        ensure!(
            counted == executed,
            "{id}: load_hit+load_miss={counted}, loads={executed}"
        );
        ensure!(
            f.as_slice().iter().all(|v| *v >= 0.0),
            "{id}: negative component"
        );
        loads += t.opcode(Opcode::Load);
    }
    Ok(format!(
        "{} samples, {loads} loads all classified",
        sources.len()
    ))
}

fn c5_metric_identities() -> Check {
    let s = sape(200.0, 100.0).unwrap();
    ensure!((s - 66.67).abs() <= 0.01, "sAPE(200,100)={s}");
    ensure!(ape(200.0, 100.0).unwrap() == 50.0, "APE(200,100)");
    ensure!(
        huber(1.0, 1.35) == 0.5,
        "huber(1, 1.35)={}",
        huber(1.0, 1.35)
    );
    ensure!(loss_huber(&[1.0], 1.35).unwrap() == 0.5, "mean huber");
    for delta in [0.5f64, 1.35, 10.0] {
        let inner = huber(delta, delta);
        let outer = huber(delta * (1.0 + 1e-15), delta);
        ensure!(
            (inner - outer).abs() < 1e-12,
            "discontinuity at delta={delta}"
        );
        ensure!(
            (inner - 0.5 * delta * delta).abs() < 1e-12,
            "value at delta={delta}"
        );
    }
    ensure!(loss_mse(&[3.0, -4.0]).unwrap() == 12.5, "mse");
    ensure!(
        ape(0.0, 1.0).is_err() && sape(0.0, 0.0).is_err(),
        "degenerate inputs accepted"
    );
    Ok(format!(
        "sAPE(200,100)={s:.4}, huber(1,1.35)=0.5, continuity < 1e-12"
    ))
}

fn synthetic_weights() -> [f64; FEATURE_COUNT] {
    let mut w = [0.0; FEATURE_COUNT];
    for (i, v) in w.iter_mut().enumerate() {
        *v = 0.5 + (i * 7 % 11) as f64;
    }
    w
}

fn c6_linearity() -> Check {
    let start = Instant::now();
    let counts: Vec<u64> = (0..8).map(|k| 2000 + 100 * k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let w = synthetic_weights();
    let mut ds = Dataset::new("ns");
    for (k, op) in pipeline::corpus::supported_ops().iter().enumerate() {
        for &n in &counts {
            let id = format!("{op}/n{n}");
            let src = pipeline::corpus::generate(op, n, k as u64 * 100 + n).unwrap();
            let m = parse_module(&src, &id).map_err(|e| e.to_string())?;
            let t = simulate(&m, &id, &SimSettings::default()).map_err(|e| e.to_string())?;
            let f = extract_features(&t);
            let clean: f64 = f.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum();
            ds.push(&id, f, Some(clean * (1.0 + noise.sample(&mut rng))));
        }
    }
    ensure!(ds.len() >= 200, "only {} samples", ds.len());
    let hp = Hyperparameters::default();
    let lr = ml::train(ModelKind::Linear, &ds, &hp, 1, Execution::Parallel).unwrap();
    let rf = ml::train(ModelKind::Forest, &ds, &hp, 1, Execution::Parallel).unwrap();
    let lr_ape = ml::evaluate(&lr, &ds, Execution::Parallel)
        .unwrap()
        .overall
        .ape;
    let rf_ape = ml::evaluate(&rf, &ds, Execution::Parallel)
        .unwrap()
        .overall
        .ape;
    let elapsed = start.elapsed();
    ensure!(lr_ape < 2.0, "LR APE {lr_ape:.3}%");
    ensure!(rf_ape < 5.0, "RF APE {rf_ape:.3}%");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} samples, LR APE {lr_ape:.3}%, RF APE {rf_ape:.3}%, {elapsed:?}",
        ds.len()
    ))
}

fn coefficient_error(fit: &[f64], truth: &[f64]) -> f64 {
    fit.iter()
        .zip(truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn c7_huber_robustness() -> Check {
    let truth = synthetic_weights();
    let mut wins = 0;
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let x: Vec<FeatureVector> = (0..n)
            .map(|_| {
                let mut v = FeatureVector::zeros();
                for c in v.0.iter_mut() {
                    *c = rng.random_range(0.0..100.0);
                }
                v
            })
            .collect();
        let mut y: Vec<f64> = x
            .iter()
            .map(|v| 20.0 + v.0.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>())
            .map(|c| c + noise.sample(&mut rng))
            .collect();
        let mut rows: Vec<usize> = (0..n).collect();
        for i in 0..n / 20 {
            let j = rng.random_range(i..n);
            rows.swap(i, j);
            y[rows[i]] *= 100.0;
        }
        let lr = fit_least_squares(&x, &y).unwrap();
        let hr = fit_huber(&x, &y, &HuberParams::default()).unwrap();
        let e_lr = coefficient_error(&lr.weights, &truth);
        let e_hr = coefficient_error(&hr.weights, &truth);
        if e_hr < e_lr {
            wins += 1;
        }
        worst_ratio = worst_ratio.max(e_hr / e_lr);
    }
    ensure!(wins == 20, "Huber closer on only {wins}/20 seeds");
    Ok(format!(
        "Huber closer on 20/20 seeds, worst error ratio {worst_ratio:.2e}"
    ))
}

fn c8_mlp_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<FeatureVector> = (0..3)
        .map(|_| {
            let mut v = FeatureVector::zeros();
            for c in v.0.iter_mut() {
                *c = rng.random_range(0.0..1000.0);
            }
            v
        })
        .collect();
    let y: Vec<f64> = x.iter().map(|v| 100.0 + v.0.iter().sum::<f64>()).collect();
    let net = Mlp::init(&x, &y, 64, 3);
    let z: Vec<Vec<f64>> = x.iter().map(|v| net.standardize(v)).collect();
    let t: Vec<f64> = y.iter().map(|&v| net.standardize_target(v)).collect();
    let lambda = 1e-4;
    let analytic = net.gradient(&z, &t, lambda);
    let base = net.params();
    ensure!(analytic.len() == base.len(), "gradient length");
    let mut probe = net.clone();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p);
        let up = probe.objective(&z, &t, lambda);
        p[i] = base[i] - h;
        probe.set_params(&p);
        let down = probe.objective(&z, &t, lambda);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        ensure!(err < 1e-4, "parameter {i}: analytic {a}, numeric {numeric}");
        worst = worst.max(err);
    }
    Ok(format!(
        "{} parameters, worst relative error {worst:.2e}",
        base.len()
    ))
}

/// Runs generate, simulate, features, train (all kinds), predict and eval
/// into `dir`.
fn full_pipeline(dir: &Path, exec: Execution) -> Result<(), String> {
    let cfg = PipelineConfig {
        master_seed: 11,
        ..PipelineConfig::default()
    };
    let e = |e: pipeline::PipelineError| e.to_string();
    let corpus = dir.join("corpus");
    let ops: Vec<String> = ["add", "fmul", "sdiv", "xor", "sitofp"]
        .map(String::from)
        .into();
    pipeline::cmd_gen_corpus(&ops, &[50, 120, 300, 700], cfg.master_seed, &corpus).map_err(e)?;
    let traces = dir.join("traces");
    let rep = pipeline::cmd_simulate(&[corpus, samples_dir()], &cfg, &traces, exec).map_err(e)?;
    ensure!(rep.is_success(), "simulate failures: {:?}", rep.failures);

    let unlabeled =
        pipeline::cmd_features(std::slice::from_ref(&traces), None, &cfg, None).map_err(e)?;
    let w = synthetic_weights();
    let labels: String = unlabeled
        .samples
        .iter()
        .map(|s| {
            let v: f64 = s
                .features
                .as_slice()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum();
            format!("{},{}\n", s.id, v + 10.0)
        })
        .collect();
    let labels_path = dir.join("labels.csv");
    fs::write(&labels_path, labels).unwrap();
    let features = dir.join("features.csv");
    pipeline::cmd_features(&[traces], Some(&labels_path), &cfg, Some(&features)).map_err(e)?;
    for kind in [
        ModelKind::Linear,
        ModelKind::Huber,
        ModelKind::Forest,
        ModelKind::Mlp,
    ] {
        let model = dir.join(format!("{kind}.json"));
        pipeline::cmd_train(&features, kind, &cfg, &model, exec).map_err(e)?;
        pipeline::cmd_predict(
            &model,
            &features,
            Some(&dir.join(format!("{kind}.pred.csv"))),
            exec,
        )
        .map_err(e)?;
        let report = pipeline::cmd_eval(
            &model,
            &features,
            Some(&dir.join(format!("{kind}.eval.csv"))),
            exec,
        )
        .map_err(e)?;
        fs::write(dir.join(format!("{kind}.table.txt")), report.render_table()).unwrap();
    }
    Ok(())
}

fn tree_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap();
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Check {
    let runs = [
        Execution::Parallel,
        Execution::Parallel,
        Execution::Sequential,
    ];
    let mut trees = Vec::new();
    for exec in runs {
        let dir = tempfile::tempdir().unwrap();
        full_pipeline(dir.path(), exec)?;
        trees.push(tree_files(dir.path()));
    }
    let first = &trees[0];
    ensure!(first.len() > 30, "only {} files produced", first.len());
    for (k, other) in trees.iter().enumerate().skip(1) {
        ensure!(other.len() == first.len(), "run {k}: file count differs");
        for ((pa, a), (pb, b)) in first.iter().zip(other) {
            ensure!(pa == pb, "run {k}: {} vs {}", pa.display(), pb.display());
            ensure!(a == b, "run {k}: {} differs", pa.display());
        }
    }
    Ok(format!(
        "{} files byte-identical across 2 parallel runs and 1 sequential run",
        first.len()
    ))
}

fn c10_overhead() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = PipelineConfig::default();
    let e = |e: pipeline::PipelineError| e.to_string();

    // A small trained model to predict with; its training is not timed.
    let mut ds = Dataset::new("ns");
    for (k, op) in ["add", "mul", "fadd"].iter().enumerate() {
        for n in [10, 20, 40] {
            let src = pipeline::corpus::generate(op, n, k as u64).unwrap();
            let m = parse_module(&src, op).unwrap();
            let t = simulate(&m, op, &SimSettings::default()).unwrap();
            ds.push(
                &format!("{op}/n{n}"),
                extract_features(&t),
                Some(n as f64 * (k + 1) as f64),
            );
        }
    }
    let model = ml::train(
        ModelKind::Forest,
        &ds,
        &Hyperparameters::default(),
        1,
        Execution::Parallel,
    )
    .unwrap();
    let model_path = root.join("model.json");
    fs::write(&model_path, model.to_json()).unwrap();
    let corpus = root.join("corpus");
    pipeline::cmd_gen_corpus(&["fdiv".into()], &[100_000], 3, &corpus).map_err(e)?;

    let start = Instant::now();
    let traces = root.join("traces");
    let rep = pipeline::cmd_simulate(&[corpus], &cfg, &traces, Execution::Parallel).map_err(e)?;
    ensure!(
        rep.is_success() && rep.written.len() == 1,
        "simulate failed"
    );
    let features = root.join("features.csv");
    pipeline::cmd_features(&[traces], None, &cfg, Some(&features)).map_err(e)?;
    let preds =
        pipeline::cmd_predict(&model_path, &features, None, Execution::Parallel).map_err(e)?;
    let elapsed = start.elapsed();
    ensure!(preds.len() == 1, "{} predictions", preds.len());
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "100000-iteration sample simulated, featurized and predicted in {elapsed:?}"
    ))
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are accepted and ignored.
    let criteria: [Criterion; 10] = [
        ("cache matches brute-force LRU", c1_cache_oracle),
        ("2-bit predictor transitions", c2_predictor),
        ("interpreter hand counts", c3_hand_counts),
        ("feature contract", c4_feature_contract),
        ("metric and loss identities", c5_metric_identities),
        ("linear labels are learnable", c6_linearity),
        ("huber resists corrupted labels", c7_huber_robustness),
        ("mlp gradient check", c8_mlp_gradient),
        ("pipeline determinism", c9_determinism),
        ("single-sample overhead", c10_overhead),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
