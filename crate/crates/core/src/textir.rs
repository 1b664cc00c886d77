//! Textual surface syntax: parser and canonical emitter.
//!
//! `repeat <n> (%x = init, ...) { ... yield %x_next, ... }` desugars into a
//! counted loop whose header carries `%x` as a phi. Labels and vregs created by
//! the desugaring are prefixed `rep<k>.` so they cannot collide with ordinary
//! identifiers unless the user writes dots deliberately.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ir::*;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {code}: {message} (expected one of: {})", expected.join(", "))]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub code: String,
    pub message: String,
    pub expected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Vreg(String),
    Global(String),
    Int(i64),
    Float(f64),
    Punct(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Vreg(s) => format!("`%{s}`"),
            Tok::Global(s) => format!("`@{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Float(f) => format!("`{f:?}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, code: &str, msg: String| ParseError {
        line,
        col,
        code: code.into(),
        message: msg,
        expected: vec![],
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == ';' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (sl, sc) = (line, col);
        let start = i;
        let tok = if c == '%' || c == '@' {
            i += 1;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            if i == start + 1 {
                return Err(err(sl, sc, "BAD_TOKEN", format!("empty name after `{c}`")));
            }
            let name: String = chars[start + 1..i].iter().collect();
            if c == '%' {
                Tok::Vreg(name)
            } else {
                Tok::Global(name)
            }
        } else if c == '-' && chars.get(i + 1) == Some(&'>') {
            i += 2;
            Tok::Punct("->")
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == 'i')) {
            if c == '-' {
                i += 1;
            }
            if chars.get(i) == Some(&'i') {
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if word != "-inf" {
                    return Err(err(sl, sc, "BAD_NUMBER", format!("invalid number `{word}`")));
                }
                Tok::Float(f64::NEG_INFINITY)
            } else {
                let mut is_float = false;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if matches!(chars.get(i), Some('e') | Some('E')) {
                    let mut j = i + 1;
                    if matches!(chars.get(j), Some('+') | Some('-')) {
                        j += 1;
                    }
                    if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                if i < chars.len() && is_ident_char(chars[i]) {
                    return Err(err(sl, sc, "BAD_NUMBER", format!("invalid number `{text}{}`", chars[i])));
                }
                if is_float {
                    Tok::Float(text.parse().map_err(|_| err(sl, sc, "BAD_NUMBER", format!("invalid float `{text}`")))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| err(sl, sc, "BAD_NUMBER", format!("integer `{text}` out of range")))?)
                }
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else {
            i += 1;
            Tok::Punct(match c {
                '(' => "(",
                ')' => ")",
                '{' => "{",
                '}' => "}",
                '[' => "[",
                ']' => "]",
                ',' => ",",
                ':' => ":",
                '=' => "=",
                _ => return Err(err(sl, sc, "UNEXPECTED_CHAR", format!("unexpected character {c:?}"))),
            })
        };
        col += i - start;
        out.push(Spanned { tok, line: sl, col: sc });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct OpenBlock {
    label: String,
    phis: Vec<Phi>,
    body: Vec<Instruction>,
}

struct RepeatCtx {
    latch: String,
    arity: usize,
    yielded: Option<Vec<Operand>>,
}

struct FnState {
    blocks: Vec<Option<BasicBlock>>,
    cur: Option<OpenBlock>,
    reps: usize,
}

impl FnState {
    fn close(&mut self, t: Terminator) {
        let b = self.cur.take().expect("open block");
        self.blocks.push(Some(BasicBlock {
            label: b.label,
            phis: b.phis,
            body: b.body,
            terminator: t,
        }));
    }

    fn open(&mut self, label: String) {
        self.cur = Some(OpenBlock {
            label,
            phis: vec![],
            body: vec![],
        });
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, code: &str, expected: &[&str]) -> PResult<T> {
        let s = &self.toks[self.pos];
        Err(ParseError {
            line: s.line,
            col: s.col,
            code: code.into(),
            message: format!("unexpected {}", s.tok.describe()),
            expected: expected.iter().map(|e| e.to_string()).collect(),
        })
    }

    fn fail_msg<T>(&self, code: &str, msg: String) -> PResult<T> {
        let s = &self.toks[self.pos];
        Err(ParseError {
            line: s.line,
            col: s.col,
            code: code.into(),
            message: msg,
            expected: vec![],
        })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn punct(&mut self, p: &'static str) -> PResult<()> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            self.fail("EXPECTED_TOKEN", &[p])
        }
    }

    fn kw(&mut self, k: &'static str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.fail("EXPECTED_TOKEN", &[k])
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.fail("EXPECTED_TOKEN", &[what]),
        }
    }

    fn vreg(&mut self) -> PResult<Vreg> {
        match self.peek().clone() {
            Tok::Vreg(s) => {
                self.bump();
                Ok(Vreg(s))
            }
            _ => self.fail("EXPECTED_TOKEN", &["%vreg"]),
        }
    }

    fn global(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Global(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.fail("EXPECTED_TOKEN", &["@name"]),
        }
    }

    fn uint(&mut self) -> PResult<u32> {
        match self.peek().clone() {
            Tok::Int(i) if (0..=u32::MAX as i64).contains(&i) => {
                self.bump();
                Ok(i as u32)
            }
            _ => self.fail("EXPECTED_TOKEN", &["non-negative integer"]),
        }
    }

    fn prefixed_index(&mut self, prefix: char, what: &str) -> PResult<u32> {
        if let Tok::Ident(s) = self.peek() {
            if let Some(rest) = s.strip_prefix(prefix) {
                if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                    if let Ok(n) = rest.parse::<u32>() {
                        self.bump();
                        return Ok(n);
                    }
                }
            }
        }
        self.fail("EXPECTED_TOKEN", &[what])
    }

    fn result_slot(&mut self) -> PResult<u32> {
        self.prefixed_index('r', "result slot rN")
    }

    fn starts_operand(&self) -> bool {
        match self.peek() {
            Tok::Vreg(_) | Tok::Int(_) | Tok::Float(_) => true,
            Tok::Ident(s) => matches!(s.as_str(), "true" | "false" | "inf" | "nan"),
            _ => false,
        }
    }

    fn operand(&mut self) -> PResult<Operand> {
        let op = match self.peek().clone() {
            Tok::Vreg(s) => Operand::Reg(Vreg(s)),
            Tok::Int(i) => Operand::Int(i),
            Tok::Float(f) => Operand::Float(f),
            Tok::Ident(s) if s == "true" => Operand::Bool(true),
            Tok::Ident(s) if s == "false" => Operand::Bool(false),
            Tok::Ident(s) if s == "inf" => Operand::Float(f64::INFINITY),
            Tok::Ident(s) if s == "nan" => Operand::Float(f64::NAN),
            _ => return self.fail("EXPECTED_OPERAND", &["%vreg", "integer", "float", "true", "false"]),
        };
        self.bump();
        Ok(op)
    }

    fn qubit(&mut self) -> PResult<QubitRef> {
        if let Tok::Vreg(s) = self.peek().clone() {
            self.bump();
            return Ok(QubitRef::Param(Vreg(s)));
        }
        Ok(QubitRef::Index(self.prefixed_index('q', "qubit qN or %param")?))
    }

    fn ptype(&mut self) -> PResult<ParamType> {
        let s = self.ident("type")?;
        match ParamType::from_name(&s) {
            Some(t) => Ok(t),
            None => {
                self.pos -= 1;
                self.fail("EXPECTED_TOKEN", &["int", "bool", "float", "qubit"])
            }
        }
    }

    fn module(&mut self) -> PResult<Module> {
        self.kw("module")?;
        let name = self.ident("module name")?;
        let mut attrs = Attrs {
            required_qubits: 0,
            required_results: 0,
        };
        if self.is_kw("attrs") {
            self.bump();
            while let Tok::Ident(k) = self.peek().clone() {
                if k != "required_qubits" && k != "required_results" {
                    break;
                }
                self.bump();
                self.punct("=")?;
                let v = self.uint()?;
                if k == "required_qubits" {
                    attrs.required_qubits = v;
                } else {
                    attrs.required_results = v;
                }
            }
        }
        let mut entry = None;
        if self.is_kw("entry") {
            self.bump();
            entry = Some(self.global()?);
        }
        let mut functions = Vec::new();
        while self.is_kw("func") {
            functions.push(self.function()?);
        }
        if *self.peek() != Tok::Eof {
            return self.fail("EXPECTED_TOKEN", &["func", "end of input"]);
        }
        let entry = match entry {
            Some(e) => e,
            None => match functions.first() {
                Some(f) => f.name.clone(),
                None => return self.fail_msg("NO_FUNCTIONS", "module declares no functions".into()),
            },
        };
        Ok(Module {
            name,
            attrs,
            functions,
            entry,
        })
    }

    fn function(&mut self) -> PResult<Function> {
        self.kw("func")?;
        let name = self.global()?;
        self.punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let v = self.vreg()?;
                self.punct(":")?;
                params.push((v, self.ptype()?));
                if self.is_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.punct(")")?;
        let ret = if self.is_punct("->") {
            self.bump();
            Some(self.ptype()?)
        } else {
            None
        };
        self.punct("{")?;
        let mut st = FnState {
            blocks: vec![],
            cur: None,
            reps: 0,
        };
        if !self.is_kw("block") {
            return self.fail("EXPECTED_TOKEN", &["block"]);
        }
        self.region(&mut st, None)?;
        let blocks = st.blocks.into_iter().map(|b| b.expect("header filled")).collect();
        Ok(Function {
            name,
            params,
            ret,
            blocks,
        })
    }

    /// Parses blocks until the closing `}` (consumed).
    fn region(&mut self, st: &mut FnState, mut rep: Option<&mut RepeatCtx>) -> PResult<()> {
        loop {
            match self.peek().clone() {
                Tok::Punct("}") => {
                    if st.cur.is_some() {
                        match rep.as_deref_mut() {
                            Some(ctx) if ctx.arity == 0 && ctx.yielded.is_none() => {
                                ctx.yielded = Some(vec![]);
                                let latch = ctx.latch.clone();
                                st.close(Terminator::Jump(latch));
                            }
                            _ => return self.fail("MISSING_TERMINATOR", &["br", "jmp", "ret", "yield"]),
                        }
                    }
                    self.bump();
                    return Ok(());
                }
                Tok::Ident(k) if k == "block" => {
                    if st.cur.is_some() {
                        return self.fail("MISSING_TERMINATOR", &["br", "jmp", "ret"]);
                    }
                    self.bump();
                    let label = self.ident("block label")?;
                    self.punct(":")?;
                    st.open(label);
                }
                Tok::Eof => return self.fail("UNEXPECTED_EOF", &["}"]),
                _ => {
                    if st.cur.is_none() {
                        return self.fail("EXPECTED_BLOCK", &["block", "}"]);
                    }
                    self.statement(st, rep.as_deref_mut())?;
                }
            }
        }
    }

    fn statement(&mut self, st: &mut FnState, rep: Option<&mut RepeatCtx>) -> PResult<()> {
        let tok = self.peek().clone();
        match tok {
            Tok::Vreg(_) => {
                let dst = self.vreg()?;
                self.punct("=")?;
                let op = self.ident("opcode")?;
                if op == "phi" {
                    let cur = st.cur.as_mut().unwrap();
                    if !cur.body.is_empty() {
                        self.pos -= 1;
                        return self.fail_msg("PHI_NOT_AT_HEAD", "phi after a non-phi instruction".into());
                    }
                    let mut incoming = Vec::new();
                    loop {
                        self.punct("[")?;
                        let v = self.operand()?;
                        self.punct(",")?;
                        let l = self.ident("block label")?;
                        self.punct("]")?;
                        incoming.push((v, l));
                        if self.is_punct(",") {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    st.cur.as_mut().unwrap().phis.push(Phi { dst, incoming });
                    return Ok(());
                }
                let ins = match op.as_str() {
                    "read_result" => Instruction::ReadResult {
                        dst,
                        result: self.result_slot()?,
                    },
                    "cmp" => {
                        let k = self.ident("comparison")?;
                        let Some(cmp) = CmpKind::from_name(&k) else {
                            self.pos -= 1;
                            return self.fail("EXPECTED_TOKEN", &["eq", "ne", "lt", "le", "gt", "ge"]);
                        };
                        let lhs = self.operand()?;
                        self.punct(",")?;
                        let rhs = self.operand()?;
                        Instruction::Cmp { dst, op: cmp, lhs, rhs }
                    }
                    "select" => {
                        let cond = self.operand()?;
                        self.punct(",")?;
                        let then_val = self.operand()?;
                        self.punct(",")?;
                        let else_val = self.operand()?;
                        Instruction::Select {
                            dst,
                            cond,
                            then_val,
                            else_val,
                        }
                    }
                    "call" => self.call(Some(dst))?,
                    other => match BinOpKind::from_name(other) {
                        Some(b) => {
                            let lhs = self.operand()?;
                            self.punct(",")?;
                            let rhs = self.operand()?;
                            Instruction::BinOp { dst, op: b, lhs, rhs }
                        }
                        None => {
                            self.pos -= 1;
                            return self.fail(
                                "UNKNOWN_OPCODE",
                                &["read_result", "add", "sub", "mul", "and", "or", "xor", "cmp", "select", "phi", "call"],
                            );
                        }
                    },
                };
                st.cur.as_mut().unwrap().body.push(ins);
                Ok(())
            }
            Tok::Ident(k) => {
                match k.as_str() {
                    "br" => {
                        self.bump();
                        let cond = self.operand()?;
                        self.punct(",")?;
                        let then_target = self.ident("block label")?;
                        self.punct(",")?;
                        let else_target = self.ident("block label")?;
                        if then_target == else_target {
                            self.pos -= 1;
                            return self.fail_msg("DUPLICATE_TARGET", format!("both arms target `{then_target}`"));
                        }
                        st.close(Terminator::Branch {
                            cond,
                            then_target,
                            else_target,
                        });
                    }
                    "jmp" => {
                        self.bump();
                        let t = self.ident("block label")?;
                        st.close(Terminator::Jump(t));
                    }
                    "ret" => {
                        self.bump();
                        let v = if self.starts_operand() {
                            Some(self.operand()?)
                        } else {
                            None
                        };
                        st.close(Terminator::Return(v));
                    }
                    "yield" => {
                        let Some(ctx) = rep else {
                            return self.fail_msg("YIELD_OUTSIDE_REPEAT", "`yield` outside a repeat body".into());
                        };
                        self.bump();
                        let mut vals = Vec::new();
                        if self.starts_operand() {
                            loop {
                                vals.push(self.operand()?);
                                if self.is_punct(",") {
                                    self.bump();
                                } else {
                                    break;
                                }
                            }
                        }
                        if ctx.yielded.is_some() {
                            return self.fail_msg("MULTIPLE_YIELD", "a repeat body may yield only once".into());
                        }
                        if vals.len() != ctx.arity {
                            return self.fail_msg(
                                "YIELD_ARITY",
                                format!("yield carries {} values, loop declares {}", vals.len(), ctx.arity),
                            );
                        }
                        ctx.yielded = Some(vals);
                        st.close(Terminator::Jump(ctx.latch.clone()));
                    }
                    "repeat" => {
                        self.bump();
                        self.repeat(st)?;
                    }
                    "mz" | "measure" => {
                        self.bump();
                        let qubit = self.qubit()?;
                        self.punct("->")?;
                        let result = self.result_slot()?;
                        st.cur.as_mut().unwrap().body.push(Instruction::Measure { qubit, result });
                    }
                    "reset" => {
                        self.bump();
                        let qubit = self.qubit()?;
                        st.cur.as_mut().unwrap().body.push(Instruction::Reset { qubit });
                    }
                    "output" => {
                        self.bump();
                        let w = self.ident("output kind")?;
                        let kind = match w.as_str() {
                            "array_start" => OutputKind::ArrayStart,
                            "array_end" => OutputKind::ArrayEnd,
                            "tuple_start" => OutputKind::TupleStart,
                            "tuple_end" => OutputKind::TupleEnd,
                            "result" => OutputKind::Result(self.result_slot()?),
                            "bool" => OutputKind::Bool(self.operand()?),
                            "int" => OutputKind::Int(self.operand()?),
                            _ => {
                                self.pos -= 1;
                                return self.fail(
                                    "EXPECTED_TOKEN",
                                    &["array_start", "array_end", "tuple_start", "tuple_end", "result", "bool", "int"],
                                );
                            }
                        };
                        st.cur.as_mut().unwrap().body.push(Instruction::Output(kind));
                    }
                    "call" => {
                        self.bump();
                        let ins = self.call(None)?;
                        st.cur.as_mut().unwrap().body.push(ins);
                    }
                    _ => {
                        self.bump();
                        let kind = GateKind::from_name(&k);
                        let angle = if self.is_punct("(") {
                            self.bump();
                            let a = self.operand()?;
                            self.punct(")")?;
                            Some(a)
                        } else {
                            None
                        };
                        let mut qubits = vec![self.qubit()?];
                        while self.is_punct(",") {
                            self.bump();
                            qubits.push(self.qubit()?);
                        }
                        st.cur.as_mut().unwrap().body.push(Instruction::Gate { kind, qubits, angle });
                    }
                }
                Ok(())
            }
            _ => self.fail("EXPECTED_INSTRUCTION", &["instruction", "terminator", "block"]),
        }
    }

    fn call(&mut self, dst: Option<Vreg>) -> PResult<Instruction> {
        let callee = self.global()?;
        self.punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                let is_qubit = matches!(self.peek(), Tok::Ident(s) if s.starts_with('q') && s.len() > 1 && s[1..].chars().all(|c| c.is_ascii_digit()));
                if is_qubit {
                    args.push(CallArg::Qubit(self.qubit()?));
                } else {
                    args.push(CallArg::Value(self.operand()?));
                }
                if self.is_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.punct(")")?;
        Ok(Instruction::Call { dst, callee, args })
    }

    fn repeat(&mut self, st: &mut FnState) -> PResult<()> {
        let n = match self.peek().clone() {
            Tok::Int(i) if i >= 0 => {
                self.bump();
                i
            }
            _ => return self.fail("EXPECTED_TOKEN", &["trip count"]),
        };
        let mut carried: Vec<(Vreg, Operand)> = Vec::new();
        if self.is_punct("(") {
            self.bump();
            loop {
                let v = self.vreg()?;
                self.punct("=")?;
                carried.push((v, self.operand()?));
                if self.is_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
            self.punct(")")?;
        }
        self.punct("{")?;
        let k = st.reps;
        st.reps += 1;
        let p = format!("rep{k}");
        let (hdr, body, latch, exit) = (
            format!("{p}.hdr"),
            format!("{p}.body"),
            format!("{p}.latch"),
            format!("{p}.exit"),
        );
        let (iv, inext, cv) = (Vreg(format!("{p}.i")), Vreg(format!("{p}.inext")), Vreg(format!("{p}.c")));
        let pre = st.cur.as_ref().unwrap().label.clone();
        st.close(Terminator::Jump(hdr.clone()));
        let hdr_slot = st.blocks.len();
        st.blocks.push(None);
        st.open(body.clone());
        let mut ctx = RepeatCtx {
            latch: latch.clone(),
            arity: carried.len(),
            yielded: None,
        };
        self.region(st, Some(&mut ctx))?;
        if st.cur.is_some() {
            return self.fail("MISSING_TERMINATOR", &["yield"]);
        }
        let Some(yielded) = ctx.yielded else {
            return self.fail_msg("MISSING_YIELD", "repeat body never yields".into());
        };
        let mut phis = vec![Phi {
            dst: iv.clone(),
            incoming: vec![(Operand::Int(0), pre.clone()), (Operand::Reg(inext.clone()), latch.clone())],
        }];
        for ((v, init), next) in carried.into_iter().zip(yielded) {
            phis.push(Phi {
                dst: v,
                incoming: vec![(init, pre.clone()), (next, latch.clone())],
            });
        }
        st.blocks[hdr_slot] = Some(BasicBlock {
            label: hdr.clone(),
            phis,
            body: vec![Instruction::Cmp {
                dst: cv.clone(),
                op: CmpKind::Lt,
                lhs: Operand::Reg(iv.clone()),
                rhs: Operand::Int(n),
            }],
            terminator: Terminator::Branch {
                cond: Operand::Reg(cv),
                then_target: body,
                else_target: exit.clone(),
            },
        });
        st.blocks.push(Some(BasicBlock::new(
            latch,
            vec![Instruction::BinOp {
                dst: inext,
                op: BinOpKind::Add,
                lhs: Operand::Reg(iv),
                rhs: Operand::Int(1),
            }],
            Terminator::Jump(hdr),
        )));
        st.open(exit);
        Ok(())
    }
}

/// Parses a module from source text.
pub fn parse(src: &str) -> Result<Module, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.module()
}

/// Shortest decimal that parses back to the same float.
pub fn fmt_float(f: f64) -> String {
    if f.is_nan() {
        "nan".into()
    } else if f.is_infinite() {
        if f > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{f:?}")
    }
}

pub fn fmt_operand(o: &Operand) -> String {
    match o {
        Operand::Reg(v) => v.to_string(),
        Operand::Int(i) => i.to_string(),
        Operand::Bool(b) => b.to_string(),
        Operand::Float(f) => fmt_float(*f),
    }
}

pub fn fmt_qubit(q: &QubitRef) -> String {
    match q {
        QubitRef::Index(i) => format!("q{i}"),
        QubitRef::Param(v) => v.to_string(),
    }
}

pub fn fmt_instruction(ins: &Instruction) -> String {
    match ins {
        Instruction::Gate { kind, qubits, angle } => {
            let qs: Vec<String> = qubits.iter().map(fmt_qubit).collect();
            match angle {
                Some(a) => format!("{}({}) {}", kind.name(), fmt_operand(a), qs.join(", ")),
                None => format!("{} {}", kind.name(), qs.join(", ")),
            }
        }
        Instruction::Measure { qubit, result } => format!("mz {} -> r{result}", fmt_qubit(qubit)),
        Instruction::Reset { qubit } => format!("reset {}", fmt_qubit(qubit)),
        Instruction::ReadResult { dst, result } => format!("{dst} = read_result r{result}"),
        Instruction::BinOp { dst, op, lhs, rhs } => {
            format!("{dst} = {} {}, {}", op.name(), fmt_operand(lhs), fmt_operand(rhs))
        }
        Instruction::Cmp { dst, op, lhs, rhs } => {
            format!("{dst} = cmp {} {}, {}", op.name(), fmt_operand(lhs), fmt_operand(rhs))
        }
        Instruction::Select {
            dst,
            cond,
            then_val,
            else_val,
        } => format!(
            "{dst} = select {}, {}, {}",
            fmt_operand(cond),
            fmt_operand(then_val),
            fmt_operand(else_val)
        ),
        Instruction::Output(k) => match k {
            OutputKind::ArrayStart => "output array_start".into(),
            OutputKind::ArrayEnd => "output array_end".into(),
            OutputKind::TupleStart => "output tuple_start".into(),
            OutputKind::TupleEnd => "output tuple_end".into(),
            OutputKind::Result(r) => format!("output result r{r}"),
            OutputKind::Bool(o) => format!("output bool {}", fmt_operand(o)),
            OutputKind::Int(o) => format!("output int {}", fmt_operand(o)),
        },
        Instruction::Call { dst, callee, args } => {
            let a: Vec<String> = args
                .iter()
                .map(|a| match a {
                    CallArg::Qubit(q) => fmt_qubit(q),
                    CallArg::Value(o) => fmt_operand(o),
                })
                .collect();
            match dst {
                Some(d) => format!("{d} = call @{callee}({})", a.join(", ")),
                None => format!("call @{callee}({})", a.join(", ")),
            }
        }
    }
}

pub fn fmt_terminator(t: &Terminator) -> String {
    match t {
        Terminator::Jump(l) => format!("jmp {l}"),
        Terminator::Branch {
            cond,
            then_target,
            else_target,
        } => format!("br {}, {then_target}, {else_target}", fmt_operand(cond)),
        Terminator::Return(None) => "ret".into(),
        Terminator::Return(Some(v)) => format!("ret {}", fmt_operand(v)),
    }
}

pub fn fmt_phi(p: &Phi) -> String {
    let inc: Vec<String> = p
        .incoming
        .iter()
        .map(|(v, l)| format!("[{}, {l}]", fmt_operand(v)))
        .collect();
    format!("{} = phi {}", p.dst, inc.join(", "))
}

fn emit_function(out: &mut String, f: &Function) {
    let params: Vec<String> = f.params.iter().map(|(v, t)| format!("{v}: {}", t.name())).collect();
    let _ = write!(out, "func @{}({})", f.name, params.join(", "));
    if let Some(t) = f.ret {
        let _ = write!(out, " -> {}", t.name());
    }
    out.push_str(" {\n");
    for b in &f.blocks {
        let _ = writeln!(out, "block {}:", b.label);
        for p in &b.phis {
            let _ = writeln!(out, "  {}", fmt_phi(p));
        }
        for i in &b.body {
            let _ = writeln!(out, "  {}", fmt_instruction(i));
        }
        let _ = writeln!(out, "  {}", fmt_terminator(&b.terminator));
    }
    out.push_str("}\n");
}

/// Canonical text for a module. Comments and sugar are not preserved.
pub fn emit(m: &Module) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "module {}", m.name);
    let _ = writeln!(
        out,
        "attrs required_qubits={} required_results={}",
        m.attrs.required_qubits, m.attrs.required_results
    );
    if m.functions.first().map(|f| f.name.as_str()) != Some(m.entry.as_str()) {
        let _ = writeln!(out, "entry @{}", m.entry);
    }
    for f in &m.functions {
        out.push('\n');
        emit_function(&mut out, f);
    }
    out
}
