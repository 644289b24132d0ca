//! The curated programs under samples/ compute known results.

use std::fs;
use std::path::Path;

use irtime::interp::{run, NoProbe, RunLimits};
use irtime::ir::{parse_module, Opcode};
use irtime::trace::{simulate, SimSettings};

fn load(name: &str) -> irtime::ir::IrModule {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../samples")
        .join(name);
    let src = fs::read_to_string(&path).unwrap();
    parse_module(&src, name).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn returns(name: &str) -> u64 {
    let m = load(name);
    let out = run(&m, "main", NoProbe, &RunLimits::default()).unwrap();
    out.return_value.unwrap() & 0xffff_ffff
}

#[test]
fn return_values() {
    assert_eq!(returns("bubble_sort.ll"), 93);
    assert_eq!(returns("fib_recursive.ll"), 610 % 256);
    assert_eq!(returns("matmul.ll"), 76);
    assert_eq!(returns("struct_buffers.ll"), 2800 % 251);
    assert_eq!(returns("switch_state.ll"), 1);
    assert_eq!(returns("float_horner.ll"), 12013);
}

#[test]
fn trace_shapes() {
    let sim = |name| simulate(&load(name), name, &SimSettings::default()).unwrap();

    let fib = sim("fib_recursive.ll");
    // fib(15) enters fib 1973 times; main returns once more.
    assert_eq!(fib.opcode(Opcode::Call), 1973);
    assert_eq!(fib.opcode(Opcode::Ret), 1974);

    let sw = sim("switch_state.ll");
    assert_eq!(sw.opcode(Opcode::Switch), 11);

    let mm = sim("matmul.ll");
    assert_eq!(mm.opcode(Opcode::Load), 8 * 8 * 8 * 2 + 1);
    // init writes A and B: 16 lines of 32 bytes, then matmul writes C: 8 lines.
    assert_eq!(mm.store_miss, 24);
    assert_eq!(mm.load_miss, 0);

    let sb = sim("struct_buffers.ll");
    assert_eq!(sb.mem(irtime::ir::MemIntrinsic::Malloc), 256);
    assert_eq!(sb.mem(irtime::ir::MemIntrinsic::Calloc), 64);
    assert_eq!(sb.mem(irtime::ir::MemIntrinsic::Memset), 256);
    assert_eq!(sb.mem(irtime::ir::MemIntrinsic::Memcpy), 24 + 64);
}
