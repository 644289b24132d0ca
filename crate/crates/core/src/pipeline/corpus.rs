//! Generator for single-operator loop programs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace::FEATURE_NAMES;

/// Operators the generator can target: the arithmetic, comparison and cast
/// features.
pub fn supported_ops() -> &'static [&'static str] {
    &FEATURE_NAMES[..25]
}

/// Emits a program that executes `op` exactly `n` times inside a counted
/// loop (for `add` and `icmp`, the loop's own counter adds `n` more).
/// Constants are drawn from `seed`; divisors and shift amounts are always
/// in range.
pub fn generate(op: &str, n: u64, seed: u64) -> Option<String> {
    if !supported_ops().contains(&op) || n == 0 || n > i32::MAX as u64 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let int_init: i32 = rng.random_range(1_000..1_000_000);
    let int_rhs: i32 = match op {
        "shl" | "lshr" | "ashr" => rng.random_range(1..8),
        "sdiv" | "udiv" | "urem" | "srem" | "mul" => rng.random_range(2..10),
        _ => rng.random_range(1..1_000),
    };
    let f_init = rng.random_range(1..64) as f64 + 0.5;
    let f_rhs = rng.random_range(1..16) as f64 * 0.25 + 1.0;
    let fmt_f = |v: f64| format!("{v:.6e}");

    // (sink type, initial phi value if loop-carried, loop body producing %v)
    let (sink_ty, carried, body) = match op {
        "add" | "sub" | "and" | "or" | "xor" | "shl" | "lshr" | "ashr" | "mul" | "sdiv"
        | "udiv" | "urem" | "srem" => (
            "i32",
            Some(int_init.to_string()),
            format!("  %v = {op} i32 %acc, {int_rhs}\n"),
        ),
        "fadd" | "fsub" | "fmul" | "fdiv" => (
            "double",
            Some(fmt_f(f_init)),
            format!("  %v = {op} double %acc, {}\n", fmt_f(f_rhs)),
        ),
        "fneg" => (
            "double",
            Some(fmt_f(f_init)),
            "  %v = fneg double %acc\n".to_string(),
        ),
        "icmp" => ("i1", None, format!("  %v = icmp slt i32 %i, {int_rhs}\n")),
        "fcmp" => (
            "i1",
            None,
            format!(
                "  %v = fcmp olt double {}, {}\n",
                fmt_f(f_init),
                fmt_f(f_rhs)
            ),
        ),
        "zext" => ("i64", None, "  %v = zext i32 %i to i64\n".to_string()),
        "sext" => ("i64", None, "  %v = sext i32 %i to i64\n".to_string()),
        "sitofp" => (
            "double",
            None,
            "  %v = sitofp i32 %i to double\n".to_string(),
        ),
        "uitofp" => (
            "double",
            None,
            "  %v = uitofp i32 %i to double\n".to_string(),
        ),
        "fptosi" => (
            "i32",
            None,
            format!("  %v = fptosi double {} to i32\n", fmt_f(f_init)),
        ),
        _ => return None,
    };
    let zero = match sink_ty {
        "double" => "0.000000e+00",
        "i1" => "false",
        _ => "0",
    };
    let align = match sink_ty {
        "double" | "i64" => 8,
        "i32" => 4,
        _ => 1,
    };

    let mut s = String::new();
    let _ = writeln!(s, "; {op} executed {n} times");
    let _ = writeln!(s, "@sink = global {sink_ty} {zero}, align {align}");
    s.push('\n');
    s.push_str("define i32 @main() {\nentry:\n  br label %loop\n\nloop:\n");
    s.push_str("  %i = phi i32 [ 0, %entry ], [ %inext, %loop ]\n");
    if let Some(init) = carried {
        let _ = writeln!(
            s,
            "  %acc = phi {sink_ty} [ {init}, %entry ], [ %v, %loop ]"
        );
    }
    s.push_str(&body);
    s.push_str("  %inext = add i32 %i, 1\n");
    let _ = writeln!(s, "  %c = icmp slt i32 %inext, {n}");
    s.push_str("  br i1 %c, label %loop, label %exit\n\nexit:\n");
    let _ = writeln!(s, "  store {sink_ty} %v, ptr @sink, align {align}");
    s.push_str("  ret i32 0\n}\n");
    Some(s)
}
