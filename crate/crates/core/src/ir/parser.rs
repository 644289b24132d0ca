use std::collections::HashMap;

use thiserror::Error;

use super::lexer::{tokenize, Tok, Token};
use super::validate::{validate_module, Diagnostic};
use super::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("unsupported opcode '{name}' at line {line}")]
    UnsupportedOpcode { name: String, line: u32 },
    #[error("unsupported construct at line {line}: {what}")]
    Unsupported { what: String, line: u32 },
    #[error("unresolved reference '{name}' at line {line}")]
    UnresolvedReference { name: String, line: u32 },
    #[error("module failed validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Parses textual IR and validates the result.
pub fn parse_module(text: &str, source_name: &str) -> Result<IrModule, ParseError> {
    let module = parse_module_unchecked(text, source_name)?;
    let diags = validate_module(&module);
    if diags.is_empty() {
        Ok(module)
    } else {
        Err(ParseError::Invalid(diags))
    }
}

/// Parses textual IR, resolving names but skipping the structural checks of
/// [`validate_module`].
pub fn parse_module_unchecked(text: &str, source_name: &str) -> Result<IrModule, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        named_types: HashMap::new(),
        globals: HashMap::new(),
        functions: HashMap::new(),
        declared: HashMap::new(),
        next_block_id: 0,
        next_inst_id: 0,
    };
    p.parse(source_name)
}

#[derive(Debug, Clone)]
enum TypeAst {
    Void,
    Opaque,
    Prim(IrType),
    Named(String),
    Array(Box<TypeAst>, u64),
    Struct(Vec<TypeAst>),
    /// A bare function signature; only valid as a call-site type.
    FnSig,
}

struct FunctionHeader {
    name: String,
    ret: TypeAst,
    params: Vec<(TypeAst, Option<String>)>,
    body_start: usize,
    line: u32,
}

struct GlobalDecl {
    name: String,
    start: usize,
}

/// Per-function register and label state.
struct FnScope {
    regs: Vec<(String, Option<IrType>)>,
    reg_map: HashMap<String, u32>,
    /// First line a register was mentioned, for error reporting.
    reg_line: Vec<u32>,
    labels: HashMap<String, usize>,
    /// (label, line) of every referenced block, resolved after the body.
    label_refs: Vec<(String, u32)>,
    next_unnamed: u64,
}

impl FnScope {
    fn reg(&mut self, name: &str, line: u32) -> u32 {
        if let Some(&r) = self.reg_map.get(name) {
            return r;
        }
        let r = self.regs.len() as u32;
        self.regs.push((name.to_string(), None));
        self.reg_line.push(line);
        self.reg_map.insert(name.to_string(), r);
        r
    }

    fn note_numbered(&mut self, name: &str) {
        if let Ok(n) = name.parse::<u64>() {
            self.next_unnamed = self.next_unnamed.max(n + 1);
        }
    }

    fn block_ref(&mut self, label: String, line: u32) -> BlockRef {
        self.label_refs.push((label.clone(), line));
        BlockRef {
            index: usize::MAX,
            label,
        }
    }
}

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    named_types: HashMap<String, TypeAst>,
    globals: HashMap<String, u32>,
    functions: HashMap<String, usize>,
    declared: HashMap<String, u32>,
    next_block_id: u32,
    next_inst_id: u32,
}

const FLAG_WORDS: &[&str] = &[
    "nuw", "nsw", "exact", "disjoint", "inbounds", "nusw", "samesign", "fast", "nnan", "ninf",
    "nsz", "arcp", "contract", "afn", "reassoc", "volatile", "tail", "musttail", "notail",
];

const VALUE_WORDS: &[&str] = &[
    "true",
    "false",
    "null",
    "undef",
    "poison",
    "zeroinitializer",
    "getelementptr",
    "bitcast",
];

impl<'t> Parser<'t> {
    // ----- token helpers -------------------------------------------------

    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, off: usize) -> Option<&'t Tok> {
        self.toks.get(self.pos + off).map(|t| &t.tok)
    }

    fn line(&self) -> u32 {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(1, |t| t.line)
    }

    fn prev_line(&self) -> u32 {
        self.toks
            .get(self.pos.saturating_sub(1))
            .map_or(1, |t| t.line)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = match self.toks.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => self.toks.last().map_or((1, 1), |t| (t.line, t.col + 1)),
        };
        Err(ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn unsupported<T>(&self, what: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Unsupported {
            what: what.into(),
            line: self.line(),
        })
    }

    fn next(&mut self) -> Option<&'t Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Punct(c))
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.is_punct(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.err(format!("expected '{c}', found {}", self.describe()))
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x == w)
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            self.err(format!("expected '{w}', found {}", self.describe()))
        }
    }

    fn expect_int(&mut self) -> Result<i128, ParseError> {
        match self.peek() {
            Some(Tok::Int(i)) => {
                self.pos += 1;
                Ok(*i)
            }
            _ => self.err(format!("expected integer, found {}", self.describe())),
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(Tok::Word(w)) => format!("'{w}'"),
            Some(Tok::Local(n)) => format!("'%{n}'"),
            Some(Tok::Global(n)) => format!("'@{n}'"),
            Some(Tok::Label(n)) => format!("label '{n}:'"),
            Some(Tok::Punct(c)) => format!("'{c}'"),
            Some(t) => format!("{t:?}"),
        }
    }

    fn skip_line(&mut self) {
        let line = self.line();
        while self.toks.get(self.pos).is_some_and(|t| t.line == line) {
            self.pos += 1;
        }
    }

    /// Skips a balanced `(...)` group if one starts here.
    fn skip_paren_group(&mut self) {
        if !self.is_punct('(') {
            return;
        }
        let mut depth = 0;
        while let Some(t) = self.next() {
            match t {
                Tok::Punct('(') => depth += 1,
                Tok::Punct(')') => {
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
                _ => {}
            }
        }
    }

    /// Skips parameter/return attributes: words other than value keywords and
    /// type names, with their optional argument (`align 4`, `dereferenceable(8)`).
    fn skip_attrs(&mut self) {
        loop {
            match self.peek() {
                Some(Tok::Word(w)) if !VALUE_WORDS.contains(&w.as_str()) && !self.at_type() => {
                    self.pos += 1;
                    if (w == "align" || w == "addrspace")
                        && matches!(self.peek(), Some(Tok::Int(_)))
                    {
                        self.pos += 1;
                    }
                    self.skip_paren_group();
                }
                _ => return,
            }
        }
    }

    /// Skips metadata attachments and alignment annotations that trail an
    /// instruction on its own line.
    fn skip_trailing(&mut self, allow_fn_attrs: bool) {
        let line = self.prev_line();
        loop {
            let same_line = self.toks.get(self.pos).is_some_and(|t| t.line == line);
            if !same_line {
                return;
            }
            match (self.peek(), self.peek_at(1)) {
                (Some(Tok::Punct(',')), Some(Tok::Meta(_))) => {
                    self.pos += 2;
                    self.skip_meta_value();
                }
                (Some(Tok::Punct(',')), Some(Tok::Word(w))) if w == "align" => {
                    self.pos += 3;
                }
                (Some(Tok::AttrRef(_)), _) if allow_fn_attrs => self.pos += 1,
                (Some(Tok::Word(_)), _) if allow_fn_attrs => {
                    self.pos += 1;
                    self.skip_paren_group();
                }
                _ => return,
            }
        }
    }

    fn skip_meta_value(&mut self) {
        match self.peek() {
            Some(Tok::Meta(name)) if name.is_empty() => {
                self.pos += 1;
                if self.is_punct('{') {
                    let mut depth = 0;
                    while let Some(t) = self.next() {
                        match t {
                            Tok::Punct('{') => depth += 1,
                            Tok::Punct('}') => {
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                            }
                            _ => {}
                        }
                    }
                }
            }
            Some(Tok::Meta(_)) => self.pos += 1,
            _ => {}
        }
    }

    // ----- types ---------------------------------------------------------

    fn at_type(&self) -> bool {
        match self.peek() {
            Some(Tok::Word(w)) => is_type_word(w),
            Some(Tok::Local(_)) => true,
            Some(Tok::Punct('[' | '{' | '<')) => true,
            _ => false,
        }
    }

    fn parse_type_ast(&mut self) -> Result<TypeAst, ParseError> {
        let mut ty = match self.next() {
            Some(Tok::Word(w)) => match w.as_str() {
                "void" => TypeAst::Void,
                "opaque" => TypeAst::Opaque,
                "ptr" => {
                    if self.eat_word("addrspace") {
                        self.skip_paren_group();
                    }
                    TypeAst::Prim(IrType::Ptr)
                }
                "float" => TypeAst::Prim(IrType::Float),
                "double" => TypeAst::Prim(IrType::Double),
                w if w.starts_with('i') && w[1..].parse::<u32>().is_ok() => {
                    let bits = w[1..].parse::<u32>().unwrap();
                    match IrType::int(bits) {
                        Some(t) => TypeAst::Prim(t),
                        None => {
                            self.pos -= 1;
                            return self.unsupported(format!("integer type {w}"));
                        }
                    }
                }
                other => {
                    self.pos -= 1;
                    if is_type_word(other) {
                        return self.unsupported(format!("type {other}"));
                    }
                    return self.err(format!("expected type, found '{other}'"));
                }
            },
            Some(Tok::Local(name)) => TypeAst::Named(name.clone()),
            Some(Tok::Punct('[')) => {
                let n = self.expect_int()?;
                self.expect_word("x")?;
                let elem = self.parse_type_ast()?;
                self.expect_punct(']')?;
                TypeAst::Array(Box::new(elem), n as u64)
            }
            Some(Tok::Punct('{')) => {
                let mut fields = Vec::new();
                if !self.eat_punct('}') {
                    loop {
                        fields.push(self.parse_type_ast()?);
                        if self.eat_punct('}') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                TypeAst::Struct(fields)
            }
            Some(Tok::Punct('<')) => {
                self.pos -= 1;
                return self.unsupported("vector or packed struct type");
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return self.err(format!("expected type, found {}", self.describe()));
            }
        };
        loop {
            if self.eat_punct('*') {
                ty = TypeAst::Prim(IrType::Ptr);
            } else if self.is_word("addrspace") && self.peek_at(1) == Some(&Tok::Punct('(')) {
                self.pos += 1;
                self.skip_paren_group();
            } else if self.is_punct('(') {
                self.skip_paren_group();
                ty = TypeAst::FnSig;
            } else {
                break;
            }
        }
        Ok(ty)
    }

    fn resolve(&self, ast: &TypeAst, depth: u32) -> Result<IrType, ParseError> {
        if depth > 64 {
            return self.err("recursive type without pointer indirection");
        }
        Ok(match ast {
            TypeAst::Prim(t) => t.clone(),
            TypeAst::Array(elem, n) => IrType::Array(Box::new(self.resolve(elem, depth + 1)?), *n),
            TypeAst::Struct(fields) => IrType::Struct(
                fields
                    .iter()
                    .map(|f| self.resolve(f, depth + 1))
                    .collect::<Result<_, _>>()?,
            ),
            TypeAst::Named(name) => match self.named_types.get(name) {
                Some(inner) => self.resolve(inner, depth + 1)?,
                None => {
                    return Err(ParseError::UnresolvedReference {
                        name: format!("%{name}"),
                        line: self.line(),
                    })
                }
            },
            TypeAst::Void => return self.err("void is not a value type"),
            TypeAst::Opaque => return self.unsupported("opaque type used by value"),
            TypeAst::FnSig => return self.unsupported("function type"),
        })
    }

    fn parse_type(&mut self) -> Result<IrType, ParseError> {
        let ast = self.parse_type_ast()?;
        self.resolve(&ast, 0)
    }

    // ----- module --------------------------------------------------------

    fn parse(&mut self, source_name: &str) -> Result<IrModule, ParseError> {
        let mut headers = Vec::new();
        let mut global_decls = Vec::new();
        let mut source = source_name.to_string();

        while let Some(tok) = self.peek() {
            match tok {
                Tok::Local(name) if self.peek_at(1) == Some(&Tok::Punct('=')) => {
                    let name = name.clone();
                    self.pos += 2;
                    self.expect_word("type")?;
                    let ast = self.parse_type_ast()?;
                    self.named_types.insert(name, ast);
                }
                Tok::Global(name) if self.peek_at(1) == Some(&Tok::Punct('=')) => {
                    if self.globals.contains_key(name) {
                        return self.err(format!("duplicate global @{name}"));
                    }
                    self.globals.insert(name.clone(), global_decls.len() as u32);
                    global_decls.push(GlobalDecl {
                        name: name.clone(),
                        start: self.pos + 2,
                    });
                    self.skip_line();
                }
                Tok::Word(w) if w == "define" => {
                    let header = self.parse_header(true)?;
                    if self.functions.contains_key(&header.name) {
                        return Err(ParseError::Syntax {
                            line: header.line,
                            col: 1,
                            msg: format!("duplicate function @{}", header.name),
                        });
                    }
                    self.functions.insert(header.name.clone(), headers.len());
                    headers.push(header);
                }
                Tok::Word(w) if w == "declare" => {
                    let line = self.line();
                    let header = self.parse_header(false)?;
                    self.declared.insert(header.name, line);
                    while self.toks.get(self.pos).is_some_and(|t| t.line == line) {
                        self.pos += 1;
                    }
                }
                Tok::Word(w) if w == "source_filename" => {
                    if let (Some(Tok::Punct('=')), Some(Tok::Str(s))) =
                        (self.peek_at(1), self.peek_at(2))
                    {
                        source = String::from_utf8_lossy(s).into_owned();
                    }
                    self.skip_line();
                }
                Tok::Word(w) if w == "target" || w == "attributes" || w.starts_with('$') => {
                    self.skip_line()
                }
                Tok::Meta(_) => self.skip_line(),
                _ => return self.err(format!("unexpected {} at top level", self.describe())),
            }
        }

        let mut globals = Vec::with_capacity(global_decls.len());
        for decl in &global_decls {
            self.pos = decl.start;
            globals.push(self.parse_global(&decl.name)?);
        }

        let mut functions = Vec::with_capacity(headers.len());
        for header in &headers {
            functions.push(self.parse_function(header)?);
        }

        Ok(IrModule {
            source_name: source,
            globals,
            functions,
        })
    }

    fn parse_header(&mut self, is_define: bool) -> Result<FunctionHeader, ParseError> {
        let line = self.line();
        self.pos += 1; // define / declare
        self.skip_attrs();
        let ret = self.parse_type_ast()?;
        let name = match self.next() {
            Some(Tok::Global(n)) => n.clone(),
            _ => {
                self.pos -= 1;
                return self.err(format!("expected function name, found {}", self.describe()));
            }
        };
        self.expect_punct('(')?;
        let mut params = Vec::new();
        if !self.eat_punct(')') {
            loop {
                if self.peek() == Some(&Tok::Ellipsis) {
                    if is_define {
                        return self.unsupported("variadic function definition");
                    }
                    self.pos += 1;
                } else {
                    let ty = self.parse_type_ast()?;
                    self.skip_attrs();
                    let pname = match self.peek() {
                        Some(Tok::Local(n)) => {
                            self.pos += 1;
                            Some(n.clone())
                        }
                        _ => None,
                    };
                    params.push((ty, pname));
                }
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        let mut body_start = 0;
        if is_define {
            while !self.is_punct('{') {
                if self.next().is_none() {
                    return self.err("expected function body");
                }
            }
            self.pos += 1;
            body_start = self.pos;
            let mut depth = 1;
            while depth > 0 {
                match self.next() {
                    Some(Tok::Punct('{')) => depth += 1,
                    Some(Tok::Punct('}')) => depth -= 1,
                    Some(_) => {}
                    None => return self.err("unterminated function body"),
                }
            }
        }
        Ok(FunctionHeader {
            name,
            ret,
            params,
            body_start,
            line,
        })
    }

    fn parse_global(&mut self, name: &str) -> Result<GlobalVar, ParseError> {
        let mut external = false;
        let constant = loop {
            match self.next() {
                Some(Tok::Word(w)) if w == "global" => break false,
                Some(Tok::Word(w)) if w == "constant" => break true,
                Some(Tok::Word(w)) if w == "alias" || w == "ifunc" => {
                    self.pos -= 1;
                    return self.unsupported(format!("global {w}"));
                }
                Some(Tok::Word(w)) => {
                    if w == "external" || w == "extern_weak" {
                        external = true;
                    }
                    self.skip_paren_group();
                }
                _ => {
                    self.pos = self.pos.saturating_sub(1);
                    return self.err("expected 'global' or 'constant'");
                }
            }
        };
        let ty = self.parse_type()?;
        if external {
            return Err(ParseError::UnresolvedReference {
                name: format!("@{name}"),
                line: self.line(),
            });
        }
        let init = self.parse_initializer(&ty)?;
        let mut align = ty.align();
        while self.eat_punct(',') {
            match self.next() {
                Some(Tok::Word(w)) if w == "align" => {
                    align = align.max(self.expect_int()? as u64);
                }
                Some(Tok::Word(_)) => {
                    // section "x", comdat, partition ...
                    if matches!(self.peek(), Some(Tok::Str(_))) {
                        self.pos += 1;
                    }
                    self.skip_paren_group();
                }
                Some(Tok::Meta(_)) => self.skip_meta_value(),
                _ => return self.err("unexpected token after global initializer"),
            }
        }
        if !align.is_power_of_two() {
            return self.err(format!("alignment {align} is not a power of two"));
        }
        Ok(GlobalVar {
            name: name.to_string(),
            ty,
            init,
            constant,
            align,
        })
    }

    fn parse_initializer(&mut self, ty: &IrType) -> Result<Initializer, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) if matches!(w.as_str(), "zeroinitializer" | "undef" | "poison") => {
                self.pos += 1;
                return Ok(Initializer::Zero);
            }
            _ => {}
        }
        match ty {
            IrType::Array(elem, n) => {
                if let Some(Tok::Str(bytes)) = self.peek() {
                    if **elem != IrType::I8 || bytes.len() as u64 != *n {
                        return self.err("string initializer does not match array type");
                    }
                    self.pos += 1;
                    return Ok(Initializer::Bytes(bytes.clone()));
                }
                self.expect_punct('[')?;
                let mut items = Vec::new();
                if !self.eat_punct(']') {
                    loop {
                        let ety = self.parse_type()?;
                        if &ety != elem.as_ref() {
                            return self.err(format!("array element type {ety} != {elem}"));
                        }
                        items.push(self.parse_initializer(elem)?);
                        if self.eat_punct(']') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                if items.len() as u64 != *n {
                    return self.err(format!(
                        "array initializer has {} of {n} elements",
                        items.len()
                    ));
                }
                Ok(Initializer::Aggregate(items))
            }
            IrType::Struct(fields) => {
                self.expect_punct('{')?;
                let mut items = Vec::new();
                for (i, fty) in fields.iter().enumerate() {
                    if i > 0 {
                        self.expect_punct(',')?;
                    }
                    let t = self.parse_type()?;
                    if &t != fty {
                        return self.err(format!("struct field type {t} != {fty}"));
                    }
                    items.push(self.parse_initializer(fty)?);
                }
                self.expect_punct('}')?;
                Ok(Initializer::Aggregate(items))
            }
            scalar => match self.parse_const_value(scalar)? {
                Operand::Imm(bits) => Ok(Initializer::Scalar(bits)),
                addr => Ok(Initializer::Address(addr)),
            },
        }
    }

    /// Parses a constant operand (no registers) of type `ty`.
    fn parse_const_value(&mut self, ty: &IrType) -> Result<Operand, ParseError> {
        if let Some(Tok::Local(_)) = self.peek() {
            return self.err("register reference in constant context");
        }
        self.parse_operand(ty, None)
    }

    // ----- operands ------------------------------------------------------

    fn parse_operand(
        &mut self,
        ty: &IrType,
        scope: Option<&mut FnScope>,
    ) -> Result<Operand, ParseError> {
        let line = self.line();
        let tok = match self.next() {
            Some(t) => t,
            None => return self.err("expected value"),
        };
        let op = match tok {
            Tok::Local(name) => match scope {
                Some(scope) => Operand::Local(scope.reg(name, line)),
                None => {
                    self.pos -= 1;
                    return self.err("register reference outside a function");
                }
            },
            Tok::Global(name) => match self.globals.get(name) {
                Some(&g) => Operand::Global(g),
                None if self.functions.contains_key(name) || self.declared.contains_key(name) => {
                    self.pos -= 1;
                    return self.unsupported(format!("function pointer @{name}"));
                }
                None => {
                    return Err(ParseError::UnresolvedReference {
                        name: format!("@{name}"),
                        line,
                    })
                }
            },
            Tok::Int(i) => Operand::Imm(int_bits_for(ty, *i)),
            Tok::Float(f) => match ty {
                IrType::Float => Operand::Imm((*f as f32).to_bits() as u64),
                IrType::Double => Operand::Imm(f.to_bits()),
                _ => {
                    self.pos -= 1;
                    return self.err(format!("float literal for type {ty}"));
                }
            },
            Tok::HexFloat(bits) => match ty {
                IrType::Float => Operand::Imm((f64::from_bits(*bits) as f32).to_bits() as u64),
                IrType::Double => Operand::Imm(*bits),
                _ if ty.is_int() => Operand::Imm(int_bits_for(ty, *bits as i128)),
                _ => {
                    self.pos -= 1;
                    return self.err(format!("hex literal for type {ty}"));
                }
            },
            Tok::Word(w) => match w.as_str() {
                "true" => Operand::Imm(1),
                "false" | "null" | "undef" | "poison" | "zeroinitializer" => Operand::Imm(0),
                "getelementptr" => {
                    self.eat_flags();
                    self.expect_punct('(')?;
                    let gep = self.parse_gep_body(None, true)?;
                    self.expect_punct(')')?;
                    Operand::ConstGep(Box::new(gep))
                }
                "bitcast" => {
                    self.expect_punct('(')?;
                    let from = self.parse_type()?;
                    let inner = self.parse_operand(&from, None)?;
                    self.expect_word("to")?;
                    let to = self.parse_type()?;
                    self.expect_punct(')')?;
                    if from != IrType::Ptr || to != IrType::Ptr {
                        return self.unsupported("non-pointer bitcast constant");
                    }
                    inner
                }
                other => {
                    self.pos -= 1;
                    if UNSUPPORTED_OPCODES.contains(&other) {
                        return self.unsupported(format!("constant expression '{other}'"));
                    }
                    return self.err(format!("expected value, found '{other}'"));
                }
            },
            _ => {
                self.pos -= 1;
                return self.err(format!("expected value, found {}", self.describe()));
            }
        };
        Ok(op)
    }

    fn eat_flags(&mut self) {
        while let Some(Tok::Word(w)) = self.peek() {
            if FLAG_WORDS.contains(&w.as_str()) {
                self.pos += 1;
            } else if w == "inrange" {
                self.pos += 1;
                self.skip_paren_group();
            } else {
                break;
            }
        }
    }

    /// `T, ptr %base, i64 idx, ...` shared by the instruction and the constant
    /// expression.
    fn parse_gep_body(
        &mut self,
        mut scope: Option<&mut FnScope>,
        in_parens: bool,
    ) -> Result<ConstGep, ParseError> {
        let source_ty = self.parse_type()?;
        self.expect_punct(',')?;
        let base_ty = self.parse_type()?;
        if base_ty != IrType::Ptr {
            return self.unsupported(format!("getelementptr over non-pointer base {base_ty}"));
        }
        let base = self.parse_operand(&IrType::Ptr, scope.as_deref_mut())?;
        let mut indices = Vec::new();
        while self.is_punct(',') && !matches!(self.peek_at(1), Some(Tok::Meta(_))) {
            if !in_parens && matches!(self.peek_at(1), Some(Tok::Word(w)) if w == "align") {
                break;
            }
            self.pos += 1;
            self.eat_flags();
            let ity = self.parse_type()?;
            if !ity.is_int() {
                return self.err(format!("getelementptr index of type {ity}"));
            }
            let idx = self.parse_operand(&ity, scope.as_deref_mut())?;
            indices.push((ity, idx));
        }
        Ok(ConstGep {
            source_ty,
            base,
            indices,
        })
    }

    fn parse_label_ref(&mut self, scope: &mut FnScope) -> Result<BlockRef, ParseError> {
        self.expect_word("label")?;
        self.parse_bare_label(scope)
    }

    fn parse_bare_label(&mut self, scope: &mut FnScope) -> Result<BlockRef, ParseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Local(name)) => Ok(scope.block_ref(name.clone(), line)),
            _ => {
                self.pos -= 1;
                self.err(format!("expected block label, found {}", self.describe()))
            }
        }
    }

    // ----- functions -----------------------------------------------------

    fn parse_function(&mut self, header: &FunctionHeader) -> Result<IrFunction, ParseError> {
        self.pos = header.body_start;
        let ret = match &header.ret {
            TypeAst::Void => None,
            other => Some(self.resolve(other, 0)?),
        };
        let mut scope = FnScope {
            regs: Vec::new(),
            reg_map: HashMap::new(),
            reg_line: Vec::new(),
            labels: HashMap::new(),
            label_refs: Vec::new(),
            next_unnamed: 0,
        };
        let mut params = Vec::new();
        for (ast, name) in &header.params {
            let ty = self.resolve(ast, 0)?;
            let name = match name {
                Some(n) => n.clone(),
                None => scope.next_unnamed.to_string(),
            };
            scope.note_numbered(&name);
            if scope.reg_map.contains_key(&name) {
                return self.err(format!("duplicate parameter %{name}"));
            }
            let r = scope.reg(&name, header.line);
            scope.regs[r as usize].1 = Some(ty.clone());
            params.push((name, ty));
        }

        let mut blocks: Vec<IrBlock> = Vec::new();
        let mut terminated = true;
        loop {
            match self.peek() {
                Some(Tok::Punct('}')) => {
                    self.pos += 1;
                    break;
                }
                None => return self.err("unterminated function body"),
                Some(Tok::Label(label)) => {
                    self.pos += 1;
                    let label = label.clone();
                    scope.note_numbered(&label);
                    self.open_block(&mut scope, &mut blocks, label)?;
                    terminated = false;
                }
                Some(_) => {
                    if terminated {
                        let label = scope.next_unnamed.to_string();
                        scope.next_unnamed += 1;
                        self.open_block(&mut scope, &mut blocks, label)?;
                    }
                    let inst = self.parse_instruction(&mut scope)?;
                    terminated = inst.opcode().is_terminator();
                    blocks.last_mut().unwrap().instructions.push(inst);
                }
            }
        }
        if blocks.is_empty() {
            return Err(ParseError::Syntax {
                line: header.line,
                col: 1,
                msg: format!("function @{} has no blocks", header.name),
            });
        }

        for (label, line) in &scope.label_refs {
            if !scope.labels.contains_key(label) {
                return Err(ParseError::UnresolvedReference {
                    name: format!("%{label}"),
                    line: *line,
                });
            }
        }
        for block in &mut blocks {
            for inst in &mut block.instructions {
                resolve_labels(&mut inst.kind, &scope.labels);
            }
        }
        for (i, (name, ty)) in scope.regs.iter().enumerate() {
            if ty.is_none() {
                return Err(ParseError::UnresolvedReference {
                    name: format!("%{name}"),
                    line: scope.reg_line[i],
                });
            }
        }

        Ok(IrFunction {
            name: header.name.clone(),
            ret,
            params,
            blocks,
            registers: scope.regs,
        })
    }

    fn open_block(
        &mut self,
        scope: &mut FnScope,
        blocks: &mut Vec<IrBlock>,
        label: String,
    ) -> Result<(), ParseError> {
        if scope.labels.insert(label.clone(), blocks.len()).is_some() {
            return self.err(format!("duplicate block label %{label}"));
        }
        blocks.push(IrBlock {
            label,
            static_id: self.next_block_id,
            instructions: Vec::new(),
        });
        self.next_block_id += 1;
        Ok(())
    }

    fn parse_instruction(&mut self, scope: &mut FnScope) -> Result<IrInstruction, ParseError> {
        let line = self.line();
        let result_name = match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Local(name)), Some(Tok::Punct('='))) => {
                self.pos += 2;
                Some(name.clone())
            }
            _ => None,
        };
        let word = match self.peek() {
            Some(Tok::Word(w)) => w.clone(),
            _ => return self.err(format!("expected instruction, found {}", self.describe())),
        };
        self.pos += 1;

        let (kind, result_ty): (InstKind, Option<IrType>) = match word.as_str() {
            "add" | "sub" | "mul" | "sdiv" | "udiv" | "srem" | "urem" | "and" | "or" | "xor"
            | "shl" | "lshr" | "ashr" | "fadd" | "fsub" | "fmul" | "fdiv" => {
                let op = binary_op(&word);
                self.eat_flags();
                let ty = self.parse_type()?;
                let lhs = self.parse_operand(&ty, Some(scope))?;
                self.expect_punct(',')?;
                let rhs = self.parse_operand(&ty, Some(scope))?;
                (
                    InstKind::Binary {
                        op,
                        ty: ty.clone(),
                        lhs,
                        rhs,
                    },
                    Some(ty),
                )
            }
            "fneg" => {
                self.eat_flags();
                let ty = self.parse_type()?;
                let value = self.parse_operand(&ty, Some(scope))?;
                (
                    InstKind::FNeg {
                        ty: ty.clone(),
                        value,
                    },
                    Some(ty),
                )
            }
            "icmp" => {
                self.eat_flags();
                let pred = match self.next() {
                    Some(Tok::Word(p)) => int_predicate(p),
                    _ => None,
                };
                let Some(pred) = pred else {
                    self.pos -= 1;
                    return self.err("expected integer comparison predicate");
                };
                let ty = self.parse_type()?;
                let lhs = self.parse_operand(&ty, Some(scope))?;
                self.expect_punct(',')?;
                let rhs = self.parse_operand(&ty, Some(scope))?;
                (InstKind::ICmp { pred, ty, lhs, rhs }, Some(IrType::I1))
            }
            "fcmp" => {
                self.eat_flags();
                let pred = match self.next() {
                    Some(Tok::Word(p)) => float_predicate(p),
                    _ => None,
                };
                let Some(pred) = pred else {
                    self.pos -= 1;
                    return self.err("expected float comparison predicate");
                };
                let ty = self.parse_type()?;
                let lhs = self.parse_operand(&ty, Some(scope))?;
                self.expect_punct(',')?;
                let rhs = self.parse_operand(&ty, Some(scope))?;
                (InstKind::FCmp { pred, ty, lhs, rhs }, Some(IrType::I1))
            }
            "zext" | "sext" | "fptosi" | "uitofp" | "sitofp" => {
                let op = match word.as_str() {
                    "zext" => CastOp::ZExt,
                    "sext" => CastOp::SExt,
                    "fptosi" => CastOp::FPToSI,
                    "uitofp" => CastOp::UIToFP,
                    _ => CastOp::SIToFP,
                };
                self.eat_flags();
                let from = self.parse_type()?;
                let value = self.parse_operand(&from, Some(scope))?;
                self.expect_word("to")?;
                let to = self.parse_type()?;
                (
                    InstKind::Cast {
                        op,
                        from,
                        value,
                        to: to.clone(),
                    },
                    Some(to),
                )
            }
            "getelementptr" => {
                self.eat_flags();
                let gep = self.parse_gep_body(Some(scope), false)?;
                (
                    InstKind::GetElementPtr {
                        source_ty: gep.source_ty,
                        base: gep.base,
                        indices: gep.indices,
                    },
                    Some(IrType::Ptr),
                )
            }
            "phi" => {
                self.eat_flags();
                let ty = self.parse_type()?;
                let mut incoming = Vec::new();
                loop {
                    self.expect_punct('[')?;
                    let v = self.parse_operand(&ty, Some(scope))?;
                    self.expect_punct(',')?;
                    let b = self.parse_bare_label(scope)?;
                    self.expect_punct(']')?;
                    incoming.push((v, b));
                    if !(self.is_punct(',') && self.peek_at(1) == Some(&Tok::Punct('['))) {
                        break;
                    }
                    self.pos += 1;
                }
                (
                    InstKind::Phi {
                        ty: ty.clone(),
                        incoming,
                    },
                    Some(ty),
                )
            }
            "alloca" => {
                self.eat_word("inalloca");
                let ty = self.parse_type()?;
                let mut count = None;
                let mut align = ty.align();
                while self.is_punct(',') {
                    match self.peek_at(1) {
                        Some(Tok::Word(w)) if w == "align" => {
                            self.pos += 2;
                            align = align.max(self.expect_int()? as u64);
                        }
                        Some(Tok::Word(w)) if w == "addrspace" => {
                            self.pos += 2;
                            self.skip_paren_group();
                        }
                        Some(Tok::Meta(_)) => break,
                        _ => {
                            self.pos += 1;
                            let cty = self.parse_type()?;
                            let c = self.parse_operand(&cty, Some(scope))?;
                            count = Some((cty, c));
                        }
                    }
                }
                if !align.is_power_of_two() {
                    return self.err(format!("alignment {align} is not a power of two"));
                }
                (InstKind::Alloca { ty, count, align }, Some(IrType::Ptr))
            }
            "load" => {
                if self.is_word("atomic") {
                    return self.unsupported("atomic load");
                }
                self.eat_flags();
                let ty = self.parse_type()?;
                self.expect_punct(',')?;
                let pty = self.parse_type()?;
                if pty != IrType::Ptr {
                    return self.err(format!("load through non-pointer type {pty}"));
                }
                let ptr = self.parse_operand(&IrType::Ptr, Some(scope))?;
                if !ty.is_scalar() {
                    return self.unsupported(format!("aggregate load of {ty}"));
                }
                (
                    InstKind::Load {
                        ty: ty.clone(),
                        ptr,
                    },
                    Some(ty),
                )
            }
            "store" => {
                if self.is_word("atomic") {
                    return self.unsupported("atomic store");
                }
                self.eat_flags();
                let ty = self.parse_type()?;
                let value = self.parse_operand(&ty, Some(scope))?;
                self.expect_punct(',')?;
                let pty = self.parse_type()?;
                if pty != IrType::Ptr {
                    return self.err(format!("store through non-pointer type {pty}"));
                }
                let ptr = self.parse_operand(&IrType::Ptr, Some(scope))?;
                if !ty.is_scalar() {
                    return self.unsupported(format!("aggregate store of {ty}"));
                }
                (InstKind::Store { ty, value, ptr }, None)
            }
            "tail" | "musttail" | "notail" | "call" => {
                if word != "call" {
                    self.expect_word("call")?;
                }
                self.eat_flags();
                self.skip_attrs();
                let ret = self.parse_call_ret_type()?;
                let callee_name = match self.next() {
                    Some(Tok::Global(n)) => n.clone(),
                    _ => {
                        self.pos -= 1;
                        return self.unsupported("indirect call");
                    }
                };
                let callee = if let Some(&f) = self.functions.get(&callee_name) {
                    Callee::Function(f)
                } else if let Some(b) = Builtin::resolve(&callee_name) {
                    Callee::Builtin(b)
                } else {
                    return Err(ParseError::UnresolvedReference {
                        name: format!("@{callee_name}"),
                        line,
                    });
                };
                self.expect_punct('(')?;
                let mut args = Vec::new();
                if !self.eat_punct(')') {
                    loop {
                        let ty = self.parse_type()?;
                        self.skip_attrs();
                        let v = self.parse_operand(&ty, Some(scope))?;
                        args.push((ty, v));
                        if self.eat_punct(')') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                self.skip_trailing(true);
                (
                    InstKind::Call {
                        ret: ret.clone(),
                        callee,
                        callee_name,
                        args,
                    },
                    ret,
                )
            }
            "br" => {
                if self.is_word("label") {
                    let target = self.parse_label_ref(scope)?;
                    (InstKind::Br { target }, None)
                } else {
                    let ty = self.parse_type()?;
                    if ty != IrType::I1 {
                        return self.err(format!("branch condition of type {ty}"));
                    }
                    let cond = self.parse_operand(&ty, Some(scope))?;
                    self.expect_punct(',')?;
                    let if_true = self.parse_label_ref(scope)?;
                    self.expect_punct(',')?;
                    let if_false = self.parse_label_ref(scope)?;
                    (
                        InstKind::CondBr {
                            cond,
                            if_true,
                            if_false,
                        },
                        None,
                    )
                }
            }
            "switch" => {
                let ty = self.parse_type()?;
                if !ty.is_int() {
                    return self.err(format!("switch on type {ty}"));
                }
                let value = self.parse_operand(&ty, Some(scope))?;
                self.expect_punct(',')?;
                let default = self.parse_label_ref(scope)?;
                self.expect_punct('[')?;
                let mut cases = Vec::new();
                while !self.eat_punct(']') {
                    let cty = self.parse_type()?;
                    let c = match self.parse_const_value(&cty)? {
                        Operand::Imm(bits) => bits,
                        _ => return self.err("switch case must be an integer constant"),
                    };
                    self.expect_punct(',')?;
                    let b = self.parse_label_ref(scope)?;
                    cases.push((c, b));
                }
                (
                    InstKind::Switch {
                        ty,
                        value,
                        default,
                        cases,
                    },
                    None,
                )
            }
            "ret" => {
                if self.eat_word("void") {
                    (InstKind::Ret { value: None }, None)
                } else {
                    let ty = self.parse_type()?;
                    let v = self.parse_operand(&ty, Some(scope))?;
                    (
                        InstKind::Ret {
                            value: Some((ty, v)),
                        },
                        None,
                    )
                }
            }
            other if UNSUPPORTED_OPCODES.contains(&other) => {
                return Err(ParseError::UnsupportedOpcode {
                    name: other.to_string(),
                    line,
                });
            }
            other => {
                self.pos -= 1;
                return self.err(format!("unknown instruction '{other}'"));
            }
        };
        self.skip_trailing(false);

        let result = match (result_name, result_ty) {
            (Some(name), Some(ty)) => {
                let r = scope.reg(&name, line);
                if scope.regs[r as usize].1.is_some() {
                    return Err(ParseError::Syntax {
                        line,
                        col: 1,
                        msg: format!("register %{name} defined twice"),
                    });
                }
                scope.regs[r as usize].1 = Some(ty);
                scope.note_numbered(&name);
                Some(r)
            }
            (Some(name), None) => {
                return Err(ParseError::Syntax {
                    line,
                    col: 1,
                    msg: format!("'{word}' produces no value for %{name}"),
                })
            }
            (None, _) => None,
        };

        let static_id = self.next_inst_id;
        self.next_inst_id += 1;
        Ok(IrInstruction {
            static_id,
            result,
            kind,
            line,
        })
    }

    /// Return type of a call, rejecting explicit (variadic) signatures.
    fn parse_call_ret_type(&mut self) -> Result<Option<IrType>, ParseError> {
        let ast = self.parse_type_ast()?;
        if let TypeAst::FnSig = ast {
            return self.unsupported("call through explicit function signature (varargs)");
        }
        match ast {
            TypeAst::Void => Ok(None),
            other => self.resolve(&other, 0).map(Some),
        }
    }
}

fn is_type_word(w: &str) -> bool {
    matches!(
        w,
        "void"
            | "ptr"
            | "float"
            | "double"
            | "half"
            | "bfloat"
            | "fp128"
            | "x86_fp80"
            | "ppc_fp128"
            | "label"
            | "metadata"
            | "token"
            | "x86_amx"
            | "opaque"
    ) || (w.starts_with('i') && w.len() > 1 && w[1..].bytes().all(|b| b.is_ascii_digit()))
}

fn int_bits_for(ty: &IrType, value: i128) -> u64 {
    match ty.int_bits() {
        Some(64) => value as u64,
        Some(bits) => (value as u64) & ((1u64 << bits) - 1),
        None if ty.is_float() => {
            let f = value as f64;
            if *ty == IrType::Float {
                (f as f32).to_bits() as u64
            } else {
                f.to_bits()
            }
        }
        None => (value as u64) & 0xFFFF_FFFF,
    }
}

fn binary_op(w: &str) -> BinaryOp {
    match w {
        "add" => BinaryOp::Add,
        "sub" => BinaryOp::Sub,
        "mul" => BinaryOp::Mul,
        "sdiv" => BinaryOp::SDiv,
        "udiv" => BinaryOp::UDiv,
        "srem" => BinaryOp::SRem,
        "urem" => BinaryOp::URem,
        "and" => BinaryOp::And,
        "or" => BinaryOp::Or,
        "xor" => BinaryOp::Xor,
        "shl" => BinaryOp::Shl,
        "lshr" => BinaryOp::LShr,
        "ashr" => BinaryOp::AShr,
        "fadd" => BinaryOp::FAdd,
        "fsub" => BinaryOp::FSub,
        "fmul" => BinaryOp::FMul,
        _ => BinaryOp::FDiv,
    }
}

fn int_predicate(p: &str) -> Option<IntPredicate> {
    Some(match p {
        "eq" => IntPredicate::Eq,
        "ne" => IntPredicate::Ne,
        "ugt" => IntPredicate::Ugt,
        "uge" => IntPredicate::Uge,
        "ult" => IntPredicate::Ult,
        "ule" => IntPredicate::Ule,
        "sgt" => IntPredicate::Sgt,
        "sge" => IntPredicate::Sge,
        "slt" => IntPredicate::Slt,
        "sle" => IntPredicate::Sle,
        _ => return None,
    })
}

fn float_predicate(p: &str) -> Option<FloatPredicate> {
    Some(match p {
        "false" => FloatPredicate::False,
        "oeq" => FloatPredicate::Oeq,
        "ogt" => FloatPredicate::Ogt,
        "oge" => FloatPredicate::Oge,
        "olt" => FloatPredicate::Olt,
        "ole" => FloatPredicate::Ole,
        "one" => FloatPredicate::One,
        "ord" => FloatPredicate::Ord,
        "ueq" => FloatPredicate::Ueq,
        "ugt" => FloatPredicate::Ugt,
        "uge" => FloatPredicate::Uge,
        "ult" => FloatPredicate::Ult,
        "ule" => FloatPredicate::Ule,
        "une" => FloatPredicate::Une,
        "uno" => FloatPredicate::Uno,
        "true" => FloatPredicate::True,
        _ => return None,
    })
}

fn resolve_labels(kind: &mut InstKind, labels: &HashMap<String, usize>) {
    let fix = |b: &mut BlockRef| b.index = labels[&b.label];
    match kind {
        InstKind::Br { target } => fix(target),
        InstKind::CondBr {
            if_true, if_false, ..
        } => {
            fix(if_true);
            fix(if_false);
        }
        InstKind::Switch { default, cases, .. } => {
            fix(default);
            cases.iter_mut().for_each(|(_, b)| fix(b));
        }
        InstKind::Phi { incoming, .. } => incoming.iter_mut().for_each(|(_, b)| fix(b)),
        _ => {}
    }
}
