use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// `%name`, `%12`, `%"quoted"`
    Local(String),
    /// `@name`
    Global(String),
    /// `name:` at the start of a block
    Label(String),
    /// Bare word: keywords, types, opcodes.
    Word(String),
    Int(i128),
    /// Decimal float literal.
    Float(f64),
    /// `0x...` float literal in double bit layout.
    HexFloat(u64),
    /// `c"..."` or `"..."`
    Str(Vec<u8>),
    /// `!name`, `!12`, or a bare `!` before `{`
    Meta(String),
    /// `#0`
    AttrRef(u32),
    Punct(char),
    Ellipsis,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer {
        bytes: src.as_bytes(),
        pos: 0,
        line: 1,
        line_start: 0,
    }
    .run()
}

struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    line_start: usize,
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, b'_' | b'.' | b'$' | b'-')
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn col(&self) -> u32 {
        (self.pos - self.line_start) as u32 + 1
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col(),
            msg: msg.into(),
        }
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            match c {
                b'\n' => {
                    self.pos += 1;
                    self.line += 1;
                    self.line_start = self.pos;
                }
                b' ' | b'\t' | b'\r' => self.pos += 1,
                b';' => {
                    while self.peek().is_some_and(|c| c != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => {
                    let (line, col) = (self.line, self.col());
                    let tok = self.token()?;
                    out.push(Token { tok, line, col });
                }
            }
        }
        Ok(out)
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn quoted(&mut self) -> Result<Vec<u8>, ParseError> {
        debug_assert_eq!(self.peek(), Some(b'"'));
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None | Some(b'\n') => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    let hex = |c: Option<u8>| c.and_then(|c| (c as char).to_digit(16));
                    if self.peek_at(1) == Some(b'\\') {
                        out.push(b'\\');
                        self.pos += 2;
                    } else if let (Some(h), Some(l)) = (hex(self.peek_at(1)), hex(self.peek_at(2)))
                    {
                        out.push((h * 16 + l) as u8);
                        self.pos += 3;
                    } else {
                        return Err(self.err("bad escape in string"));
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    /// Name after a `%`, `@`, or `!` sigil.
    fn sigil_name(&mut self) -> Result<String, ParseError> {
        if self.peek() == Some(b'"') {
            let bytes = self.quoted()?;
            Ok(String::from_utf8_lossy(&bytes).into_owned())
        } else {
            let name = self.ident();
            if name.is_empty() {
                Err(self.err("expected name after sigil"))
            } else {
                Ok(name)
            }
        }
    }

    fn label_follows(&self) -> bool {
        self.peek() == Some(b':')
    }

    fn token(&mut self) -> Result<Tok, ParseError> {
        let c = self.peek().unwrap();
        match c {
            b'%' => {
                self.pos += 1;
                Ok(Tok::Local(self.sigil_name()?))
            }
            b'@' => {
                self.pos += 1;
                Ok(Tok::Global(self.sigil_name()?))
            }
            b'!' => {
                self.pos += 1;
                if self.peek().is_some_and(|c| is_ident_char(c) || c == b'"') {
                    Ok(Tok::Meta(self.sigil_name()?))
                } else {
                    Ok(Tok::Meta(String::new()))
                }
            }
            b'#' => {
                self.pos += 1;
                let digits = self.ident();
                digits
                    .parse()
                    .map(Tok::AttrRef)
                    .map_err(|_| self.err("bad attribute reference"))
            }
            b'"' => {
                let s = self.quoted()?;
                if self.label_follows() {
                    self.pos += 1;
                    return Ok(Tok::Label(String::from_utf8_lossy(&s).into_owned()));
                }
                Ok(Tok::Str(s))
            }
            b'c' if self.peek_at(1) == Some(b'"') => {
                self.pos += 1;
                Ok(Tok::Str(self.quoted()?))
            }
            b'.' if self.peek_at(1) == Some(b'.') && self.peek_at(2) == Some(b'.') => {
                self.pos += 3;
                Ok(Tok::Ellipsis)
            }
            b'-' | b'0'..=b'9' => self.number(),
            c if c.is_ascii_alphabetic() || matches!(c, b'_' | b'.' | b'$') => {
                let word = self.ident();
                if self.label_follows() {
                    self.pos += 1;
                    return Ok(Tok::Label(word));
                }
                Ok(Tok::Word(word))
            }
            b'=' | b',' | b'(' | b')' | b'[' | b']' | b'{' | b'}' | b'*' | b'<' | b'>' | b':' => {
                self.pos += 1;
                Ok(Tok::Punct(c as char))
            }
            other => Err(self.err(format!("unexpected character '{}'", other as char))),
        }
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        if self.peek() == Some(b'0') && self.peek_at(1) == Some(b'x') {
            self.pos += 2;
            let digits = self.ident();
            return u64::from_str_radix(&digits, 16)
                .map(Tok::HexFloat)
                .map_err(|_| self.err(format!("unsupported hex literal 0x{digits}")));
        }
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let mut is_float = false;
        if self.peek() == Some(b'.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            is_float = true;
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E'))
            && (self.peek_at(1).is_some_and(|c| c.is_ascii_digit())
                || (matches!(self.peek_at(1), Some(b'+' | b'-'))
                    && self.peek_at(2).is_some_and(|c| c.is_ascii_digit())))
        {
            is_float = true;
            self.pos += 2;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if text == "-" {
            return Err(self.err("stray '-'"));
        }
        if !is_float && self.label_follows() {
            self.pos += 1;
            return Ok(Tok::Label(text.to_string()));
        }
        if is_float {
            text.parse()
                .map(Tok::Float)
                .map_err(|_| self.err(format!("bad float literal {text}")))
        } else {
            text.parse()
                .map(Tok::Int)
                .map_err(|_| self.err(format!("bad integer literal {text}")))
        }
    }
}
