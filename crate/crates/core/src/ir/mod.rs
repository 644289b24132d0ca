//! Data model and parser for the supported subset of textual LLVM IR.
//!
//! Only the opcodes that feed the timing features are accepted. Anything else
//! is rejected while parsing, so an unsupported construct can never silently
//! skew a trace.

mod lexer;
mod parser;
mod types;
mod validate;

use std::fmt;

pub use parser::{parse_module, parse_module_unchecked, ParseError};
pub use types::{align_to, IrType, POINTER_BYTES};
pub use validate::{validate_module, Diagnostic, DiagnosticKind};

/// Executable IR opcodes understood by the interpreter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    FAdd,
    Sub,
    FSub,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
    ICmp,
    FCmp,
    ZExt,
    SExt,
    FPToSI,
    UIToFP,
    SIToFP,
    FNeg,
    SDiv,
    FDiv,
    Mul,
    UDiv,
    URem,
    FMul,
    SRem,
    Br,
    Switch,
    GetElementPtr,
    Phi,
    Alloca,
    Load,
    Store,
    Call,
    Ret,
}

impl Opcode {
    pub const COUNT: usize = 34;

    pub const ALL: [Opcode; Opcode::COUNT] = [
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
        Opcode::Br,
        Opcode::Switch,
        Opcode::GetElementPtr,
        Opcode::Phi,
        Opcode::Alloca,
        Opcode::Load,
        Opcode::Store,
        Opcode::Call,
        Opcode::Ret,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::FAdd => "fadd",
            Opcode::Sub => "sub",
            Opcode::FSub => "fsub",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Shl => "shl",
            Opcode::LShr => "lshr",
            Opcode::AShr => "ashr",
            Opcode::ICmp => "icmp",
            Opcode::FCmp => "fcmp",
            Opcode::ZExt => "zext",
            Opcode::SExt => "sext",
            Opcode::FPToSI => "fptosi",
            Opcode::UIToFP => "uitofp",
            Opcode::SIToFP => "sitofp",
            Opcode::FNeg => "fneg",
            Opcode::SDiv => "sdiv",
            Opcode::FDiv => "fdiv",
            Opcode::Mul => "mul",
            Opcode::UDiv => "udiv",
            Opcode::URem => "urem",
            Opcode::FMul => "fmul",
            Opcode::SRem => "srem",
            Opcode::Br => "br",
            Opcode::Switch => "switch",
            Opcode::GetElementPtr => "getelementptr",
            Opcode::Phi => "phi",
            Opcode::Alloca => "alloca",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
        }
    }

    pub fn from_name(name: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.name() == name)
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Br | Opcode::Switch | Opcode::Ret)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Opcodes of the full IR language that this tool recognizes but refuses.
pub(crate) const UNSUPPORTED_OPCODES: &[&str] = &[
    "select",
    "trunc",
    "fptrunc",
    "fpext",
    "fptoui",
    "bitcast",
    "ptrtoint",
    "inttoptr",
    "addrspacecast",
    "frem",
    "unreachable",
    "invoke",
    "callbr",
    "resume",
    "indirectbr",
    "landingpad",
    "catchpad",
    "cleanuppad",
    "catchswitch",
    "catchret",
    "cleanupret",
    "extractvalue",
    "insertvalue",
    "extractelement",
    "insertelement",
    "shufflevector",
    "atomicrmw",
    "cmpxchg",
    "fence",
    "va_arg",
    "freeze",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    SDiv,
    UDiv,
    SRem,
    URem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
    FAdd,
    FSub,
    FMul,
    FDiv,
}

impl BinaryOp {
    pub fn opcode(self) -> Opcode {
        match self {
            BinaryOp::Add => Opcode::Add,
            BinaryOp::Sub => Opcode::Sub,
            BinaryOp::Mul => Opcode::Mul,
            BinaryOp::SDiv => Opcode::SDiv,
            BinaryOp::UDiv => Opcode::UDiv,
            BinaryOp::SRem => Opcode::SRem,
            BinaryOp::URem => Opcode::URem,
            BinaryOp::And => Opcode::And,
            BinaryOp::Or => Opcode::Or,
            BinaryOp::Xor => Opcode::Xor,
            BinaryOp::Shl => Opcode::Shl,
            BinaryOp::LShr => Opcode::LShr,
            BinaryOp::AShr => Opcode::AShr,
            BinaryOp::FAdd => Opcode::FAdd,
            BinaryOp::FSub => Opcode::FSub,
            BinaryOp::FMul => Opcode::FMul,
            BinaryOp::FDiv => Opcode::FDiv,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(
            self,
            BinaryOp::FAdd | BinaryOp::FSub | BinaryOp::FMul | BinaryOp::FDiv
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CastOp {
    ZExt,
    SExt,
    FPToSI,
    UIToFP,
    SIToFP,
}

impl CastOp {
    pub fn opcode(self) -> Opcode {
        match self {
            CastOp::ZExt => Opcode::ZExt,
            CastOp::SExt => Opcode::SExt,
            CastOp::FPToSI => Opcode::FPToSI,
            CastOp::UIToFP => Opcode::UIToFP,
            CastOp::SIToFP => Opcode::SIToFP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntPredicate {
    Eq,
    Ne,
    Ugt,
    Uge,
    Ult,
    Ule,
    Sgt,
    Sge,
    Slt,
    Sle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloatPredicate {
    False,
    Oeq,
    Ogt,
    Oge,
    Olt,
    Ole,
    One,
    Ord,
    Ueq,
    Ugt,
    Uge,
    Ult,
    Ule,
    Une,
    Uno,
    True,
}

/// Memory-management calls modeled by volume instead of by loads and stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemIntrinsic {
    Memset,
    Memcpy,
    Calloc,
    Malloc,
}

impl MemIntrinsic {
    pub const ALL: [MemIntrinsic; 4] = [
        MemIntrinsic::Memset,
        MemIntrinsic::Memcpy,
        MemIntrinsic::Calloc,
        MemIntrinsic::Malloc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MemIntrinsic::Memset => "memset",
            MemIntrinsic::Memcpy => "memcpy",
            MemIntrinsic::Calloc => "calloc",
            MemIntrinsic::Malloc => "malloc",
        }
    }
}

/// External callees that the interpreter implements itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Mem(MemIntrinsic),
    Free,
    /// `llvm.lifetime.*` markers; no semantics.
    Lifetime,
}

impl Builtin {
    pub fn resolve(name: &str) -> Option<Builtin> {
        let base = name.split('.').collect::<Vec<_>>();
        match base.as_slice() {
            ["memcpy"] | ["llvm", "memcpy", ..] => Some(Builtin::Mem(MemIntrinsic::Memcpy)),
            ["memset"] | ["llvm", "memset", ..] => Some(Builtin::Mem(MemIntrinsic::Memset)),
            ["calloc"] => Some(Builtin::Mem(MemIntrinsic::Calloc)),
            ["malloc"] => Some(Builtin::Mem(MemIntrinsic::Malloc)),
            ["free"] => Some(Builtin::Free),
            ["llvm", "lifetime", ..] => Some(Builtin::Lifetime),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Callee {
    Function(usize),
    Builtin(Builtin),
}

/// A value reference inside an instruction.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    /// Virtual register of the enclosing function.
    Local(u32),
    /// Address of a module global.
    Global(u32),
    /// Immediate in its runtime bit representation (ints zero-extended,
    /// floats as IEEE bits, pointers as 32-bit addresses).
    Imm(u64),
    /// Constant address expression.
    ConstGep(Box<ConstGep>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstGep {
    pub source_ty: IrType,
    pub base: Operand,
    pub indices: Vec<(IrType, Operand)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRef {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstKind {
    Binary {
        op: BinaryOp,
        ty: IrType,
        lhs: Operand,
        rhs: Operand,
    },
    FNeg {
        ty: IrType,
        value: Operand,
    },
    ICmp {
        pred: IntPredicate,
        ty: IrType,
        lhs: Operand,
        rhs: Operand,
    },
    FCmp {
        pred: FloatPredicate,
        ty: IrType,
        lhs: Operand,
        rhs: Operand,
    },
    Cast {
        op: CastOp,
        from: IrType,
        value: Operand,
        to: IrType,
    },
    GetElementPtr {
        source_ty: IrType,
        base: Operand,
        indices: Vec<(IrType, Operand)>,
    },
    Phi {
        ty: IrType,
        incoming: Vec<(Operand, BlockRef)>,
    },
    Alloca {
        ty: IrType,
        count: Option<(IrType, Operand)>,
        align: u64,
    },
    Load {
        ty: IrType,
        ptr: Operand,
    },
    Store {
        ty: IrType,
        value: Operand,
        ptr: Operand,
    },
    Call {
        ret: Option<IrType>,
        callee: Callee,
        callee_name: String,
        args: Vec<(IrType, Operand)>,
    },
    Br {
        target: BlockRef,
    },
    CondBr {
        cond: Operand,
        if_true: BlockRef,
        if_false: BlockRef,
    },
    Switch {
        ty: IrType,
        value: Operand,
        default: BlockRef,
        cases: Vec<(u64, BlockRef)>,
    },
    Ret {
        value: Option<(IrType, Operand)>,
    },
}

impl InstKind {
    pub fn opcode(&self) -> Opcode {
        match self {
            InstKind::Binary { op, .. } => op.opcode(),
            InstKind::FNeg { .. } => Opcode::FNeg,
            InstKind::ICmp { .. } => Opcode::ICmp,
            InstKind::FCmp { .. } => Opcode::FCmp,
            InstKind::Cast { op, .. } => op.opcode(),
            InstKind::GetElementPtr { .. } => Opcode::GetElementPtr,
            InstKind::Phi { .. } => Opcode::Phi,
            InstKind::Alloca { .. } => Opcode::Alloca,
            InstKind::Load { .. } => Opcode::Load,
            InstKind::Store { .. } => Opcode::Store,
            InstKind::Call { .. } => Opcode::Call,
            InstKind::Br { .. } | InstKind::CondBr { .. } => Opcode::Br,
            InstKind::Switch { .. } => Opcode::Switch,
            InstKind::Ret { .. } => Opcode::Ret,
        }
    }

    /// Successor blocks of a terminator, in operand order.
    pub fn successors(&self) -> Vec<usize> {
        match self {
            InstKind::Br { target } => vec![target.index],
            InstKind::CondBr {
                if_true, if_false, ..
            } => vec![if_true.index, if_false.index],
            InstKind::Switch { default, cases, .. } => std::iter::once(default.index)
                .chain(cases.iter().map(|(_, b)| b.index))
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrInstruction {
    /// Dense module-wide id, assigned in source order.
    pub static_id: u32,
    /// Register written by this instruction.
    pub result: Option<u32>,
    pub kind: InstKind,
    pub line: u32,
}

impl IrInstruction {
    pub fn opcode(&self) -> Opcode {
        self.kind.opcode()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrBlock {
    pub label: String,
    pub static_id: u32,
    pub instructions: Vec<IrInstruction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrFunction {
    pub name: String,
    pub ret: Option<IrType>,
    pub params: Vec<(String, IrType)>,
    pub blocks: Vec<IrBlock>,
    /// Register names, params first. `None` types mark never-defined names,
    /// which the parser rejects.
    pub registers: Vec<(String, Option<IrType>)>,
}

impl IrFunction {
    pub fn entry(&self) -> &IrBlock {
        &self.blocks[0]
    }

    pub fn register_type(&self, reg: u32) -> Option<&IrType> {
        self.registers
            .get(reg as usize)
            .and_then(|(_, t)| t.as_ref())
    }

    /// Predecessor block indices of every block, deduplicated and sorted.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(term) = block.instructions.last() {
                for succ in term.kind.successors() {
                    if succ < preds.len() && !preds[succ].contains(&i) {
                        preds[succ].push(i);
                    }
                }
            }
        }
        for p in &mut preds {
            p.sort_unstable();
        }
        preds
    }
}

/// Constant initializer of a global.
#[derive(Debug, Clone, PartialEq)]
pub enum Initializer {
    Zero,
    /// Scalar bits, stored little-endian over the type's size.
    Scalar(u64),
    Bytes(Vec<u8>),
    Aggregate(Vec<Initializer>),
    /// Address-valued constant (global or constant GEP).
    Address(Operand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalVar {
    pub name: String,
    pub ty: IrType,
    pub init: Initializer,
    pub constant: bool,
    pub align: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrModule {
    pub source_name: String,
    pub globals: Vec<GlobalVar>,
    pub functions: Vec<IrFunction>,
}

impl IrModule {
    pub fn function(&self, name: &str) -> Option<(usize, &IrFunction)> {
        self.functions
            .iter()
            .enumerate()
            .find(|(_, f)| f.name == name)
    }

    pub fn block_count(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }

    pub fn instruction_count(&self) -> usize {
        self.functions
            .iter()
            .flat_map(|f| &f.blocks)
            .map(|b| b.instructions.len())
            .sum()
    }

    /// Qualified `function/label` names of all blocks, indexed by static id.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.block_count()];
        for f in &self.functions {
            for b in &f.blocks {
                names[b.static_id as usize] = format!("{}/{}", f.name, b.label);
            }
        }
        names
    }
}
