//! Reference interpreter for [`IrModule`]s that reports every
//! timing-relevant event to a [`Probe`].
//!
//! Memory is a synthetic 32-bit image with three disjoint regions: globals at
//! `0x1000_0000`, a stack at `0x2000_0000` reclaimed on return, and a
//! never-freed heap at `0x3000_0000`. Loads of allocated but unwritten bytes
//! return zero and are reported through [`Probe::uninitialized_load`].

mod memory;
mod probe;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::*;
use memory::{MemFault, Memory};

pub use memory::{GLOBAL_BASE, HEAP_BASE, STACK_BASE};
pub use probe::{NoProbe, Probe};

/// Bytes of stack charged per active call frame, so unbounded recursion
/// without allocas still overflows.
const FRAME_OVERHEAD: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunLimits {
    pub max_steps: u64,
    pub max_heap_bytes: u64,
    pub max_stack_bytes: u64,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            max_steps: 100_000_000,
            max_heap_bytes: 64 << 20,
            max_stack_bytes: 8 << 20,
        }
    }
}

impl RunLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps == 0 || self.max_heap_bytes == 0 || self.max_stack_bytes == 0 {
            return Err("run limits must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunErrorKind {
    #[error("step limit of {0} instructions exceeded")]
    StepLimitExceeded(u64),
    #[error("out-of-bounds access at {0:#010x}")]
    OutOfBoundsAccess(u32),
    #[error("division by zero")]
    DivisionByZero,
    #[error("signed division overflow")]
    SignedDivisionOverflow,
    #[error("unsupported operation: {0}")]
    UnsupportedOpcode(String),
    #[error("stack overflow")]
    StackOverflow,
    #[error("heap exhausted")]
    HeapExhausted,
    #[error("entry function @{0} not found")]
    MissingEntry(String),
    #[error("entry function @{0} must take no parameters or (argc, argv)")]
    BadEntrySignature(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{kind} (in @{function}, line {line})")]
pub struct RunError {
    pub kind: RunErrorKind,
    pub function: String,
    pub line: u32,
}

/// Outcome of a completed run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: u64,
    /// Raw bits of the entry function's return value.
    pub return_value: Option<u64>,
}

struct Frame {
    func: usize,
    block: usize,
    ip: usize,
    regs: Vec<u64>,
    stack_mark: (u64, usize),
    /// Caller register receiving the return value.
    ret_to: Option<u32>,
}

struct Machine<'m, P> {
    m: &'m IrModule,
    probes: P,
    mem: Memory,
    global_addrs: Vec<u32>,
    frames: Vec<Frame>,
    steps: u64,
    limits: RunLimits,
}

/// Executes `entry` to completion, reporting events to `probes`.
pub fn run<P: Probe>(
    m: &IrModule,
    entry: &str,
    probes: P,
    limits: &RunLimits,
) -> Result<RunSummary, RunError> {
    let at_top = |kind| RunError {
        kind,
        function: entry.to_string(),
        line: 0,
    };
    let (func_idx, func) = m
        .function(entry)
        .ok_or_else(|| at_top(RunErrorKind::MissingEntry(entry.to_string())))?;
    let args_ok = match func.params.as_slice() {
        [] => true,
        [(_, argc), (_, argv)] => argc.is_int() && *argv == IrType::Ptr,
        _ => false,
    };
    if !args_ok {
        return Err(at_top(RunErrorKind::BadEntrySignature(entry.to_string())));
    }

    let mut machine = Machine {
        m,
        probes,
        mem: Memory::new(limits.max_stack_bytes, limits.max_heap_bytes),
        global_addrs: Vec::new(),
        frames: Vec::new(),
        steps: 0,
        limits: *limits,
    };
    machine
        .layout_globals()
        .map_err(|f| at_top(fault_kind(f, false)))?;
    let regs = vec![0u64; func.registers.len()];
    machine.frames.push(Frame {
        func: func_idx,
        block: 0,
        ip: 0,
        regs,
        stack_mark: machine.mem.stack.mark(),
        ret_to: None,
    });
    machine.probes.block_enter(func.blocks[0].static_id);
    machine.execute()
}

fn fault_kind(f: MemFault, stack: bool) -> RunErrorKind {
    match f {
        MemFault::OutOfBounds(a) => RunErrorKind::OutOfBoundsAccess(a),
        MemFault::Exhausted if stack => RunErrorKind::StackOverflow,
        MemFault::Exhausted => RunErrorKind::HeapExhausted,
    }
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn sext(v: u64, bits: u32) -> i64 {
    if bits >= 64 {
        v as i64
    } else {
        let shift = 64 - bits;
        ((v << shift) as i64) >> shift
    }
}

fn to_f64(ty: &IrType, bits: u64) -> f64 {
    match ty {
        IrType::Float => f32::from_bits(bits as u32) as f64,
        _ => f64::from_bits(bits),
    }
}

fn from_f64(ty: &IrType, v: f64) -> u64 {
    match ty {
        IrType::Float => (v as f32).to_bits() as u64,
        _ => v.to_bits(),
    }
}

impl<'m, P: Probe> Machine<'m, P> {
    fn layout_globals(&mut self) -> Result<(), MemFault> {
        for g in &self.m.globals {
            let addr = self.mem.globals.alloc(g.ty.size(), g.align, true)?;
            self.global_addrs.push(addr);
        }
        for (i, g) in self.m.globals.iter().enumerate() {
            self.write_init(self.global_addrs[i], &g.ty, &g.init)?;
        }
        Ok(())
    }

    fn write_init(&mut self, addr: u32, ty: &IrType, init: &Initializer) -> Result<(), MemFault> {
        match init {
            Initializer::Zero => Ok(()),
            Initializer::Scalar(bits) => self.mem.write(addr, ty.size(), *bits),
            Initializer::Bytes(b) => self.mem.write_bytes(addr, b),
            Initializer::Address(op) => {
                let v = self.operand(&[], op);
                self.mem.write(addr, POINTER_BYTES, v)
            }
            Initializer::Aggregate(items) => {
                for (i, item) in items.iter().enumerate() {
                    let (off, ety) = match ty {
                        IrType::Array(elem, _) => (i as u64 * elem.size(), elem.as_ref()),
                        IrType::Struct(fields) => (ty.field_offset(i).unwrap(), &fields[i]),
                        _ => unreachable!("aggregate initializer for scalar"),
                    };
                    self.write_init(addr + off as u32, ety, item)?;
                }
                Ok(())
            }
        }
    }

    fn operand(&self, regs: &[u64], op: &Operand) -> u64 {
        match op {
            Operand::Local(r) => regs[*r as usize],
            Operand::Global(g) => self.global_addrs[*g as usize] as u64,
            Operand::Imm(bits) => *bits,
            Operand::ConstGep(gep) => {
                let base = self.operand(regs, &gep.base) as u32;
                self.gep(regs, base, &gep.source_ty, &gep.indices) as u64
            }
        }
    }

    fn gep(
        &self,
        regs: &[u64],
        base: u32,
        source_ty: &IrType,
        indices: &[(IrType, Operand)],
    ) -> u32 {
        let mut offset: i64 = 0;
        let mut cur = source_ty;
        for (pos, (ity, idx)) in indices.iter().enumerate() {
            let raw = self.operand(regs, idx);
            let i = sext(raw, ity.int_bits().unwrap_or(64));
            if pos == 0 {
                offset = offset.wrapping_add(i.wrapping_mul(cur.size() as i64));
                continue;
            }
            match cur {
                IrType::Array(elem, _) => {
                    offset = offset.wrapping_add(i.wrapping_mul(elem.size() as i64));
                    cur = elem;
                }
                IrType::Struct(fields) => {
                    offset = offset.wrapping_add(cur.field_offset(i as usize).unwrap() as i64);
                    cur = &fields[i as usize];
                }
                _ => unreachable!("validated getelementptr"),
            }
        }
        (base as i64).wrapping_add(offset) as u32
    }

    fn fail(&self, kind: RunErrorKind, line: u32) -> RunError {
        let function = self
            .frames
            .last()
            .map(|f| self.m.functions[f.func].name.clone())
            .unwrap_or_default();
        RunError {
            kind,
            function,
            line,
        }
    }

    fn tick(&mut self, inst: &IrInstruction) -> Result<(), RunError> {
        if self.steps >= self.limits.max_steps {
            return Err(self.fail(
                RunErrorKind::StepLimitExceeded(self.limits.max_steps),
                inst.line,
            ));
        }
        self.steps += 1;
        self.probes.instruction(inst.static_id, inst.opcode());
        Ok(())
    }

    /// Transfers control along an edge, resolving the target's phis against
    /// the incoming block.
    fn branch_to(&mut self, target: usize) -> Result<(), RunError> {
        let m = self.m;
        let frame = self.frames.last().unwrap();
        let func = &m.functions[frame.func];
        let from = frame.block;
        let block = &func.blocks[target];
        self.probes
            .block_transition(func.blocks[from].static_id, block.static_id);
        self.probes.block_enter(block.static_id);

        let mut resolved: Vec<(u32, u64)> = Vec::new();
        let mut n_phi = 0;
        for inst in &block.instructions {
            let InstKind::Phi { incoming, .. } = &inst.kind else {
                break;
            };
            self.tick(inst)?;
            let regs = &self.frames.last().unwrap().regs;
            let (op, _) = incoming
                .iter()
                .find(|(_, b)| b.index == from)
                .expect("validated phi covers every predecessor");
            resolved.push((inst.result.unwrap(), self.operand(regs, op)));
            n_phi += 1;
        }
        let frame = self.frames.last_mut().unwrap();
        for (r, v) in resolved {
            frame.regs[r as usize] = v;
        }
        frame.block = target;
        frame.ip = n_phi;
        Ok(())
    }

    fn execute(&mut self) -> Result<RunSummary, RunError> {
        let m = self.m;
        loop {
            let (func_idx, block_idx, ip) = {
                let f = self.frames.last().unwrap();
                (f.func, f.block, f.ip)
            };
            let func = &m.functions[func_idx];
            let inst = &func.blocks[block_idx].instructions[ip];
            self.tick(inst)?;
            let line = inst.line;

            let value: Option<u64> = match &inst.kind {
                InstKind::Binary { op, ty, lhs, rhs } => {
                    let regs = &self.frames.last().unwrap().regs;
                    let a = self.operand(regs, lhs);
                    let b = self.operand(regs, rhs);
                    Some(self.binary(*op, ty, a, b).map_err(|k| self.fail(k, line))?)
                }
                InstKind::FNeg { ty, value } => {
                    let v = self.operand(&self.frames.last().unwrap().regs, value);
                    Some(from_f64(ty, -to_f64(ty, v)))
                }
                InstKind::ICmp { pred, ty, lhs, rhs } => {
                    let regs = &self.frames.last().unwrap().regs;
                    let a = self.operand(regs, lhs);
                    let b = self.operand(regs, rhs);
                    let bits = ty.int_bits().unwrap_or(32);
                    Some(icmp(*pred, a, b, bits) as u64)
                }
                InstKind::FCmp { pred, ty, lhs, rhs } => {
                    let regs = &self.frames.last().unwrap().regs;
                    let a = to_f64(ty, self.operand(regs, lhs));
                    let b = to_f64(ty, self.operand(regs, rhs));
                    Some(fcmp(*pred, a, b) as u64)
                }
                InstKind::Cast {
                    op,
                    from,
                    value,
                    to,
                } => {
                    let v = self.operand(&self.frames.last().unwrap().regs, value);
                    Some(cast(*op, from, to, v))
                }
                InstKind::GetElementPtr {
                    source_ty,
                    base,
                    indices,
                } => {
                    let regs = &self.frames.last().unwrap().regs;
                    let b = self.operand(regs, base) as u32;
                    Some(self.gep(regs, b, source_ty, indices) as u64)
                }
                InstKind::Phi { .. } => {
                    // Phis are resolved on block entry; one reached here sits
                    // in an entry block, which validation rules out.
                    unreachable!("phi executed outside block entry")
                }
                InstKind::Alloca { ty, count, align } => {
                    let n = match count {
                        Some((_, c)) => self.operand(&self.frames.last().unwrap().regs, c),
                        None => 1,
                    };
                    let size = ty.size().saturating_mul(n);
                    let addr = self
                        .stack_alloc(size, *align)
                        .map_err(|k| self.fail(k, line))?;
                    Some(addr as u64)
                }
                InstKind::Load { ty, ptr } => {
                    let addr = self.operand(&self.frames.last().unwrap().regs, ptr) as u32;
                    let size = ty.size();
                    let (v, uninit) = self
                        .mem
                        .read(addr, size)
                        .map_err(|f| self.fail(fault_kind(f, false), line))?;
                    self.probes.load(addr, size as u32);
                    if uninit {
                        self.probes.uninitialized_load(addr);
                    }
                    Some(v)
                }
                InstKind::Store { ty, value, ptr } => {
                    let regs = &self.frames.last().unwrap().regs;
                    let v = self.operand(regs, value);
                    let addr = self.operand(regs, ptr) as u32;
                    let size = ty.size();
                    self.mem
                        .write(addr, size, v)
                        .map_err(|f| self.fail(fault_kind(f, false), line))?;
                    self.probes.store(addr, size as u32);
                    None
                }
                InstKind::Call {
                    callee,
                    callee_name,
                    args,
                    ..
                } => {
                    self.probes.call(callee_name);
                    let regs = &self.frames.last().unwrap().regs;
                    let argv: Vec<u64> = args.iter().map(|(_, a)| self.operand(regs, a)).collect();
                    match callee {
                        Callee::Function(target) => {
                            self.enter_call(*target, argv, inst.result, line)?;
                            continue;
                        }
                        Callee::Builtin(b) => {
                            self.builtin(*b, &argv).map_err(|k| self.fail(k, line))?
                        }
                    }
                }
                InstKind::Br { target } => {
                    self.branch_to(target.index)?;
                    continue;
                }
                InstKind::CondBr {
                    cond,
                    if_true,
                    if_false,
                } => {
                    let c = self.operand(&self.frames.last().unwrap().regs, cond) & 1 == 1;
                    self.probes.cond_branch(inst.static_id, c);
                    self.branch_to(if c { if_true.index } else { if_false.index })?;
                    continue;
                }
                InstKind::Switch {
                    ty,
                    value,
                    default,
                    cases,
                } => {
                    let v = self.operand(&self.frames.last().unwrap().regs, value)
                        & mask(ty.int_bits().unwrap_or(64));
                    let target = cases
                        .iter()
                        .find(|(c, _)| *c == v)
                        .map_or(default.index, |(_, b)| b.index);
                    self.branch_to(target)?;
                    continue;
                }
                InstKind::Ret { value } => {
                    let v = value
                        .as_ref()
                        .map(|(_, op)| self.operand(&self.frames.last().unwrap().regs, op));
                    let frame = self.frames.pop().unwrap();
                    self.mem.stack.release(frame.stack_mark);
                    let from = func.blocks[frame.block].static_id;
                    match self.frames.last_mut() {
                        None => {
                            self.probes.program_exit();
                            return Ok(RunSummary {
                                steps: self.steps,
                                return_value: v,
                            });
                        }
                        Some(caller) => {
                            if let (Some(r), Some(v)) = (frame.ret_to, v) {
                                caller.regs[r as usize] = v;
                            }
                            let to = m.functions[caller.func].blocks[caller.block].static_id;
                            self.probes.block_transition(from, to);
                        }
                    }
                    continue;
                }
            };

            let frame = self.frames.last_mut().unwrap();
            if let (Some(r), Some(v)) = (inst.result, value) {
                frame.regs[r as usize] = v;
            }
            frame.ip += 1;
        }
    }

    fn stack_alloc(&mut self, size: u64, align: u64) -> Result<u32, RunErrorKind> {
        let overhead = self.frames.len() as u64 * FRAME_OVERHEAD;
        if self.mem.stack.used() + size + overhead > self.limits.max_stack_bytes {
            return Err(RunErrorKind::StackOverflow);
        }
        self.mem
            .stack
            .alloc(size, align, false)
            .map_err(|f| fault_kind(f, true))
    }

    fn enter_call(
        &mut self,
        target: usize,
        args: Vec<u64>,
        ret_to: Option<u32>,
        line: u32,
    ) -> Result<(), RunError> {
        let callee = &self.m.functions[target];
        let depth = self.frames.len() as u64 + 1;
        if self.mem.stack.used() + depth * FRAME_OVERHEAD > self.limits.max_stack_bytes {
            return Err(self.fail(RunErrorKind::StackOverflow, line));
        }
        let mut regs = vec![0u64; callee.registers.len()];
        regs[..args.len()].copy_from_slice(&args);
        let caller = self.frames.last_mut().unwrap();
        caller.ip += 1;
        let from = self.m.functions[caller.func].blocks[caller.block].static_id;
        let to = callee.blocks[0].static_id;
        self.frames.push(Frame {
            func: target,
            block: 0,
            ip: 0,
            regs,
            stack_mark: self.mem.stack.mark(),
            ret_to,
        });
        self.probes.block_transition(from, to);
        self.probes.block_enter(to);
        Ok(())
    }

    fn builtin(&mut self, b: Builtin, args: &[u64]) -> Result<Option<u64>, RunErrorKind> {
        let oob = |f| fault_kind(f, false);
        match b {
            Builtin::Mem(MemIntrinsic::Memcpy) => {
                let (dst, src, len) = (args[0] as u32, args[1] as u32, args[2]);
                self.mem.copy(dst, src, len).map_err(oob)?;
                self.probes.mem_intrinsic(MemIntrinsic::Memcpy, len);
                Ok(Some(dst as u64))
            }
            Builtin::Mem(MemIntrinsic::Memset) => {
                let (dst, byte, len) = (args[0] as u32, args[1] as u8, args[2]);
                self.mem.fill(dst, byte, len).map_err(oob)?;
                self.probes.mem_intrinsic(MemIntrinsic::Memset, len);
                Ok(Some(dst as u64))
            }
            Builtin::Mem(MemIntrinsic::Calloc) => {
                let len = args[0].saturating_mul(args[1]);
                let p = self.mem.heap.alloc(len, 8, true).map_err(oob)?;
                self.probes.mem_intrinsic(MemIntrinsic::Calloc, len);
                Ok(Some(p as u64))
            }
            Builtin::Mem(MemIntrinsic::Malloc) => {
                let len = args[0];
                let p = self.mem.heap.alloc(len, 8, false).map_err(oob)?;
                self.probes.mem_intrinsic(MemIntrinsic::Malloc, len);
                Ok(Some(p as u64))
            }
            Builtin::Free | Builtin::Lifetime => Ok(None),
        }
    }

    fn binary(&self, op: BinaryOp, ty: &IrType, a: u64, b: u64) -> Result<u64, RunErrorKind> {
        if op.is_float() {
            let (x, y) = (to_f64(ty, a), to_f64(ty, b));
            let r = match (op, ty) {
                // Single precision must round per operation.
                (_, IrType::Float) => {
                    let (x, y) = (x as f32, y as f32);
                    (match op {
                        BinaryOp::FAdd => x + y,
                        BinaryOp::FSub => x - y,
                        BinaryOp::FMul => x * y,
                        _ => x / y,
                    }) as f64
                }
                (BinaryOp::FAdd, _) => x + y,
                (BinaryOp::FSub, _) => x - y,
                (BinaryOp::FMul, _) => x * y,
                _ => x / y,
            };
            return Ok(from_f64(ty, r));
        }
        let bits = ty.int_bits().unwrap_or(32);
        let mk = mask(bits);
        let (a, b) = (a & mk, b & mk);
        let (sa, sb) = (sext(a, bits), sext(b, bits));
        let min = sext(1u64 << (bits - 1), bits);
        let r = match op {
            BinaryOp::Add => a.wrapping_add(b),
            BinaryOp::Sub => a.wrapping_sub(b),
            BinaryOp::Mul => a.wrapping_mul(b),
            BinaryOp::UDiv | BinaryOp::URem if b == 0 => return Err(RunErrorKind::DivisionByZero),
            BinaryOp::UDiv => a / b,
            BinaryOp::URem => a % b,
            BinaryOp::SDiv | BinaryOp::SRem if b == 0 => return Err(RunErrorKind::DivisionByZero),
            BinaryOp::SDiv | BinaryOp::SRem if sa == min && sb == -1 => {
                return Err(RunErrorKind::SignedDivisionOverflow)
            }
            BinaryOp::SDiv => sa.wrapping_div(sb) as u64,
            BinaryOp::SRem => sa.wrapping_rem(sb) as u64,
            BinaryOp::And => a & b,
            BinaryOp::Or => a | b,
            BinaryOp::Xor => a ^ b,
            // Oversized shift amounts yield a defined value rather than poison.
            BinaryOp::Shl => {
                if b >= bits as u64 {
                    0
                } else {
                    a << b
                }
            }
            BinaryOp::LShr => {
                if b >= bits as u64 {
                    0
                } else {
                    a >> b
                }
            }
            BinaryOp::AShr => (sa >> b.min(63)) as u64,
            _ => unreachable!(),
        };
        Ok(r & mk)
    }
}

fn icmp(pred: IntPredicate, a: u64, b: u64, bits: u32) -> bool {
    let mk = mask(bits);
    let (a, b) = (a & mk, b & mk);
    let (sa, sb) = (sext(a, bits), sext(b, bits));
    match pred {
        IntPredicate::Eq => a == b,
        IntPredicate::Ne => a != b,
        IntPredicate::Ugt => a > b,
        IntPredicate::Uge => a >= b,
        IntPredicate::Ult => a < b,
        IntPredicate::Ule => a <= b,
        IntPredicate::Sgt => sa > sb,
        IntPredicate::Sge => sa >= sb,
        IntPredicate::Slt => sa < sb,
        IntPredicate::Sle => sa <= sb,
    }
}

fn fcmp(pred: FloatPredicate, a: f64, b: f64) -> bool {
    let uno = a.is_nan() || b.is_nan();
    match pred {
        FloatPredicate::False => false,
        FloatPredicate::True => true,
        FloatPredicate::Ord => !uno,
        FloatPredicate::Uno => uno,
        FloatPredicate::Oeq => !uno && a == b,
        FloatPredicate::Ogt => !uno && a > b,
        FloatPredicate::Oge => !uno && a >= b,
        FloatPredicate::Olt => !uno && a < b,
        FloatPredicate::Ole => !uno && a <= b,
        FloatPredicate::One => !uno && a != b,
        FloatPredicate::Ueq => uno || a == b,
        FloatPredicate::Ugt => uno || a > b,
        FloatPredicate::Uge => uno || a >= b,
        FloatPredicate::Ult => uno || a < b,
        FloatPredicate::Ule => uno || a <= b,
        FloatPredicate::Une => uno || a != b,
    }
}

fn cast(op: CastOp, from: &IrType, to: &IrType, v: u64) -> u64 {
    let from_bits = from.int_bits().unwrap_or(64);
    let to_bits = to.int_bits().unwrap_or(64);
    match op {
        CastOp::ZExt => v & mask(from_bits),
        CastOp::SExt => (sext(v, from_bits) as u64) & mask(to_bits),
        // Saturating conversion; out-of-range inputs are poison in the source
        // language, this keeps them deterministic.
        CastOp::FPToSI => {
            let hi = (mask(to_bits) >> 1) as i64;
            let x = (to_f64(from, v) as i64).clamp(-hi - 1, hi);
            (x as u64) & mask(to_bits)
        }
        CastOp::UIToFP => from_f64(to, (v & mask(from_bits)) as f64),
        CastOp::SIToFP => from_f64(to, sext(v, from_bits) as f64),
    }
}
