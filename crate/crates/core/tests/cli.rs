use std::fs;
use std::path::Path;
use std::process::{Command, Output};

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
}
";

fn irtime(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irtime"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn irtime")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_file_does_not_stop_others() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir(&src).unwrap();
    fs::write(src.join("a.ll"), EXAMPLE_B).unwrap();
    fs::write(src.join("b.ll"), "define i32 @main() { entry: ret i32 7 }").unwrap();
    fs::write(
        src.join("broken.ll"),
        "define i32 @main() {\nentry:\n  %x = frobnicate i32 1\n",
    )
    .unwrap();

    let o = irtime(&["simulate", "src", "-o", "traces"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("broken"), "{}", stderr(&o));
    let mut written: Vec<_> = fs::read_dir(dir.path().join("traces"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    written.sort();
    assert_eq!(written, ["a.trace", "b.trace"]);
}

#[test]
fn step_limit_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.ll"), EXAMPLE_B).unwrap();
    let o = irtime(
        &["simulate", "b.ll", "-o", "t", "--max-steps", "10"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("step limit"), "{}", stderr(&o));
    assert!(!dir.path().join("t/b.trace").exists());

    let o = irtime(&["simulate", "b.ll", "-o", "t"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("t/b.trace")).unwrap();
    assert!(text.contains("block.main/loop\t10\n"));
}

#[test]
fn end_to_end_and_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = irtime(
        &[
            "gen-corpus",
            "--op",
            "add",
            "--op",
            "fmul",
            "--n",
            "10",
            "--n",
            "20",
            "--n",
            "40",
            "-o",
            "corpus",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("corpus/fmul/n40.ll").exists());

    assert!(irtime(&["simulate", "corpus", "-o", "traces"], d)
        .status
        .success());
    let labels = "sample_id,time\nadd/n10,110\nadd/n20,210\nadd/n40,410\nfmul/n10,320\nfmul/n20,620\nfmul/n40,1220\n";
    fs::write(d.join("labels.csv"), labels).unwrap();
    let o = irtime(
        &[
            "features",
            "traces",
            "--labels",
            "labels.csv",
            "-o",
            "f.csv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let o = irtime(
        &[
            "train",
            "--features",
            "f.csv",
            "--model",
            "lr",
            "-o",
            "m.json",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = irtime(
        &[
            "eval",
            "--model",
            "m.json",
            "--features",
            "f.csv",
            "-o",
            "eval.csv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("fmul (n=3)"), "{table}");
    assert!(table.contains("overall (n=6)"), "{table}");

    let o = irtime(&["predict", "--model", "m.json", "--features", "f.csv"], d);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);

    // Drop the last feature column from every row.
    let text = fs::read_to_string(d.join("f.csv")).unwrap();
    let cut: String = text
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                return format!("{l}\n");
            }
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(cols.len() - 2);
            format!("{}\n", cols.join(","))
        })
        .collect();
    fs::write(d.join("short.csv"), cut).unwrap();
    let o = irtime(
        &["predict", "--model", "m.json", "--features", "short.csv"],
        d,
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("expected 42"), "{}", stderr(&o));
}

#[test]
fn missing_label_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("b.ll"), EXAMPLE_B).unwrap();
    assert!(irtime(&["simulate", "b.ll", "-o", "t"], d).status.success());
    fs::write(d.join("labels.csv"), "other,5\n").unwrap();
    let o = irtime(
        &["features", "t", "--labels", "labels.csv", "-o", "f.csv"],
        d,
    );
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("no label for sample 'b'"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_model_kind_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = irtime(
        &["train", "--features", "x.csv", "--model", "svm", "-o", "m"],
        dir.path(),
    );
    assert!(!o.status.success());
}
