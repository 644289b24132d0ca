use std::fmt;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    MissingTerminator,
    MisplacedTerminator,
    PhiPredecessorMismatch,
    PhiNotAtBlockStart,
    EntryHasPredecessors,
    TypeMismatch(String),
}

/// One broken structural or typing invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    pub block: String,
    /// Offending instruction, when there is one.
    pub static_id: Option<u32>,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            DiagnosticKind::MissingTerminator => "missing terminator".to_string(),
            DiagnosticKind::MisplacedTerminator => "terminator before end of block".to_string(),
            DiagnosticKind::PhiPredecessorMismatch => "phi predecessor mismatch".to_string(),
            DiagnosticKind::PhiNotAtBlockStart => "phi after non-phi instruction".to_string(),
            DiagnosticKind::EntryHasPredecessors => "entry block has predecessors".to_string(),
            DiagnosticKind::TypeMismatch(m) => format!("type mismatch: {m}"),
        };
        write!(f, "@{}/{}: {what}", self.function, self.block)?;
        if let Some(id) = self.static_id {
            write!(f, " (instruction #{id})")?;
        }
        Ok(())
    }
}

/// Checks terminator placement, phi/predecessor agreement and operand types.
/// An empty result means the module is safe to interpret.
pub fn validate_module(m: &IrModule) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for f in &m.functions {
        let preds = f.predecessors();
        if !preds[0].is_empty() {
            out.push(diag(
                f,
                &f.blocks[0],
                None,
                DiagnosticKind::EntryHasPredecessors,
            ));
        }
        for (bi, block) in f.blocks.iter().enumerate() {
            let n = block.instructions.len();
            match block.instructions.last() {
                None => out.push(diag(f, block, None, DiagnosticKind::MissingTerminator)),
                Some(last) if !last.opcode().is_terminator() => out.push(diag(
                    f,
                    block,
                    Some(last.static_id),
                    DiagnosticKind::MissingTerminator,
                )),
                _ => {}
            }
            let mut seen_non_phi = false;
            for (ii, inst) in block.instructions.iter().enumerate() {
                if ii + 1 < n && inst.opcode().is_terminator() {
                    out.push(diag(
                        f,
                        block,
                        Some(inst.static_id),
                        DiagnosticKind::MisplacedTerminator,
                    ));
                }
                if let InstKind::Phi { incoming, .. } = &inst.kind {
                    if seen_non_phi {
                        out.push(diag(
                            f,
                            block,
                            Some(inst.static_id),
                            DiagnosticKind::PhiNotAtBlockStart,
                        ));
                    }
                    let mut listed: Vec<usize> = incoming.iter().map(|(_, b)| b.index).collect();
                    listed.sort_unstable();
                    let unique = listed.windows(2).all(|w| w[0] != w[1]);
                    if !unique || listed != preds[bi] {
                        out.push(diag(
                            f,
                            block,
                            Some(inst.static_id),
                            DiagnosticKind::PhiPredecessorMismatch,
                        ));
                    }
                } else {
                    seen_non_phi = true;
                }
                if let Err(msg) = check_types(m, f, inst) {
                    out.push(diag(
                        f,
                        block,
                        Some(inst.static_id),
                        DiagnosticKind::TypeMismatch(msg),
                    ));
                }
            }
        }
    }
    out
}

fn diag(f: &IrFunction, b: &IrBlock, static_id: Option<u32>, kind: DiagnosticKind) -> Diagnostic {
    Diagnostic {
        function: f.name.clone(),
        block: b.label.clone(),
        static_id,
        kind,
    }
}

fn operand_type<'a>(f: &'a IrFunction, op: &Operand) -> Option<&'a IrType> {
    match op {
        Operand::Local(r) => f.register_type(*r),
        Operand::Global(_) | Operand::ConstGep(_) => Some(&IrType::Ptr),
        Operand::Imm(_) => None,
    }
}

fn expect(f: &IrFunction, op: &Operand, ty: &IrType) -> Result<(), String> {
    match operand_type(f, op) {
        Some(actual) if actual != ty => Err(format!("operand of type {actual}, expected {ty}")),
        _ => Ok(()),
    }
}

fn check_gep(source_ty: &IrType, indices: &[(IrType, Operand)]) -> Result<(), String> {
    let mut cur = source_ty;
    for (pos, (_, idx)) in indices.iter().enumerate().skip(1) {
        cur = match cur {
            IrType::Array(elem, _) => elem,
            IrType::Struct(fields) => match idx {
                Operand::Imm(i) if (*i as usize) < fields.len() => &fields[*i as usize],
                Operand::Imm(i) => return Err(format!("struct index {i} out of range")),
                _ => return Err(format!("non-constant struct index at position {pos}")),
            },
            other => return Err(format!("cannot index into {other}")),
        };
    }
    Ok(())
}

fn check_types(m: &IrModule, f: &IrFunction, inst: &IrInstruction) -> Result<(), String> {
    match &inst.kind {
        InstKind::Binary { op, ty, lhs, rhs } => {
            if op.is_float() != ty.is_float() || !(ty.is_int() || ty.is_float()) {
                return Err(format!("{} on {ty}", op.opcode()));
            }
            expect(f, lhs, ty)?;
            expect(f, rhs, ty)
        }
        InstKind::FNeg { ty, value } => {
            if !ty.is_float() {
                return Err(format!("fneg on {ty}"));
            }
            expect(f, value, ty)
        }
        InstKind::ICmp { ty, lhs, rhs, .. } => {
            if !(ty.is_int() || *ty == IrType::Ptr) {
                return Err(format!("icmp on {ty}"));
            }
            expect(f, lhs, ty)?;
            expect(f, rhs, ty)
        }
        InstKind::FCmp { ty, lhs, rhs, .. } => {
            if !ty.is_float() {
                return Err(format!("fcmp on {ty}"));
            }
            expect(f, lhs, ty)?;
            expect(f, rhs, ty)
        }
        InstKind::Cast {
            op,
            from,
            value,
            to,
        } => {
            let ok = match op {
                CastOp::ZExt | CastOp::SExt => match (from.int_bits(), to.int_bits()) {
                    (Some(a), Some(b)) => a < b,
                    _ => false,
                },
                CastOp::FPToSI => from.is_float() && to.is_int(),
                CastOp::UIToFP | CastOp::SIToFP => from.is_int() && to.is_float(),
            };
            if !ok {
                return Err(format!("{} from {from} to {to}", op.opcode()));
            }
            expect(f, value, from)
        }
        InstKind::GetElementPtr {
            source_ty,
            base,
            indices,
        } => {
            expect(f, base, &IrType::Ptr)?;
            for (ity, idx) in indices {
                expect(f, idx, ity)?;
            }
            check_gep(source_ty, indices)
        }
        InstKind::Phi { ty, incoming } => {
            for (v, _) in incoming {
                expect(f, v, ty)?;
            }
            Ok(())
        }
        InstKind::Alloca { count, .. } => match count {
            Some((cty, c)) if cty.is_int() => expect(f, c, cty),
            Some((cty, _)) => Err(format!("alloca count of type {cty}")),
            None => Ok(()),
        },
        InstKind::Load { ptr, .. } => expect(f, ptr, &IrType::Ptr),
        InstKind::Store { ty, value, ptr } => {
            expect(f, value, ty)?;
            expect(f, ptr, &IrType::Ptr)
        }
        InstKind::Call {
            ret, callee, args, ..
        } => {
            for (ty, v) in args {
                expect(f, v, ty)?;
            }
            match callee {
                Callee::Function(idx) => {
                    let target = &m.functions[*idx];
                    if target.params.len() != args.len() {
                        return Err(format!(
                            "@{} takes {} arguments, {} given",
                            target.name,
                            target.params.len(),
                            args.len()
                        ));
                    }
                    for ((_, pty), (aty, _)) in target.params.iter().zip(args) {
                        if pty != aty {
                            return Err(format!("argument of type {aty}, expected {pty}"));
                        }
                    }
                    if &target.ret != ret {
                        return Err(format!("@{} return type mismatch", target.name));
                    }
                    Ok(())
                }
                Callee::Builtin(b) => check_builtin(*b, args),
            }
        }
        InstKind::Br { .. } => Ok(()),
        InstKind::CondBr { cond, .. } => expect(f, cond, &IrType::I1),
        InstKind::Switch { ty, value, .. } => expect(f, value, ty),
        InstKind::Ret { value } => match (value, &f.ret) {
            (None, None) => Ok(()),
            (Some((ty, v)), Some(rt)) if ty == rt => expect(f, v, ty),
            _ => Err(format!("ret does not match return type of @{}", f.name)),
        },
    }
}

fn check_builtin(b: Builtin, args: &[(IrType, Operand)]) -> Result<(), String> {
    let ok = match b {
        Builtin::Mem(MemIntrinsic::Memcpy) => {
            args.len() >= 3
                && args[0].0 == IrType::Ptr
                && args[1].0 == IrType::Ptr
                && args[2].0.is_int()
        }
        Builtin::Mem(MemIntrinsic::Memset) => {
            args.len() >= 3 && args[0].0 == IrType::Ptr && args[1].0.is_int() && args[2].0.is_int()
        }
        Builtin::Mem(MemIntrinsic::Calloc) => args.len() == 2 && args.iter().all(|a| a.0.is_int()),
        Builtin::Mem(MemIntrinsic::Malloc) => args.len() == 1 && args[0].0.is_int(),
        Builtin::Free => args.len() == 1 && args[0].0 == IrType::Ptr,
        Builtin::Lifetime => true,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("bad arguments to {b:?}"))
    }
}
