use std::fmt;

/// Pointer width of the modeled target, in bytes.
pub const POINTER_BYTES: u64 = 4;

/// First-class value and aggregate types of the supported IR subset.
///
/// Pointers are opaque: the pointee type is carried by the instructions that
/// dereference them, exactly as in textual IR.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IrType {
    I1,
    I8,
    I16,
    I32,
    I64,
    Float,
    Double,
    Ptr,
    Array(Box<IrType>, u64),
    Struct(Vec<IrType>),
}

impl IrType {
    pub fn int(bits: u32) -> Option<IrType> {
        match bits {
            1 => Some(IrType::I1),
            8 => Some(IrType::I8),
            16 => Some(IrType::I16),
            32 => Some(IrType::I32),
            64 => Some(IrType::I64),
            _ => None,
        }
    }

    /// Bit width for integer types.
    pub fn int_bits(&self) -> Option<u32> {
        match self {
            IrType::I1 => Some(1),
            IrType::I8 => Some(8),
            IrType::I16 => Some(16),
            IrType::I32 => Some(32),
            IrType::I64 => Some(64),
            _ => None,
        }
    }

    pub fn is_int(&self) -> bool {
        self.int_bits().is_some()
    }

    pub fn is_float(&self) -> bool {
        matches!(self, IrType::Float | IrType::Double)
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, IrType::Array(..) | IrType::Struct(_))
    }

    /// Allocation size in bytes, including tail padding.
    pub fn size(&self) -> u64 {
        match self {
            IrType::I1 | IrType::I8 => 1,
            IrType::I16 => 2,
            IrType::I32 | IrType::Float => 4,
            IrType::I64 | IrType::Double => 8,
            IrType::Ptr => POINTER_BYTES,
            IrType::Array(elem, n) => elem.size() * n,
            IrType::Struct(fields) => {
                let (end, align) = fields.iter().fold((0u64, 1u64), |(off, al), f| {
                    (align_to(off, f.align()) + f.size(), al.max(f.align()))
                });
                align_to(end, align)
            }
        }
    }

    /// Natural ABI alignment in bytes.
    pub fn align(&self) -> u64 {
        match self {
            IrType::Array(elem, _) => elem.align(),
            IrType::Struct(fields) => fields.iter().map(IrType::align).max().unwrap_or(1),
            other => other.size(),
        }
    }

    /// Byte offset of field `index` within a struct type.
    pub fn field_offset(&self, index: usize) -> Option<u64> {
        let IrType::Struct(fields) = self else {
            return None;
        };
        if index >= fields.len() {
            return None;
        }
        let mut off = 0;
        for f in &fields[..index] {
            off = align_to(off, f.align()) + f.size();
        }
        Some(align_to(off, fields[index].align()))
    }
}

pub fn align_to(value: u64, align: u64) -> u64 {
    debug_assert!(align.is_power_of_two());
    (value + align - 1) & !(align - 1)
}

impl fmt::Display for IrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrType::I1 => f.write_str("i1"),
            IrType::I8 => f.write_str("i8"),
            IrType::I16 => f.write_str("i16"),
            IrType::I32 => f.write_str("i32"),
            IrType::I64 => f.write_str("i64"),
            IrType::Float => f.write_str("float"),
            IrType::Double => f.write_str("double"),
            IrType::Ptr => f.write_str("ptr"),
            IrType::Array(elem, n) => write!(f, "[{n} x {elem}]"),
            IrType::Struct(fields) => {
                f.write_str("{ ")?;
                for (i, field) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{field}")?;
                }
                f.write_str(" }")
            }
        }
    }
}
