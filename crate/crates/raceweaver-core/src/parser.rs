//! Text-to-[`Module`] parser for KIR, with full validation: name resolution,
//! layout checks, terminator placement and SSA dominance.
//!
//! The grammar is whitespace-insensitive (newlines are ordinary whitespace,
//! `#` starts a comment that runs to end of line). See `docs/kir.md` in the
//! repository for the surface syntax.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cfg::Cfg;
use crate::ir::*;

/// What went wrong, at the coarsest useful granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error")]
    Syntax,
    #[error("duplicate type")]
    DuplicateType,
    #[error("duplicate global")]
    DuplicateGlobal,
    #[error("duplicate function")]
    DuplicateFunction,
    #[error("duplicate value")]
    DuplicateValue,
    #[error("duplicate block")]
    DuplicateBlock,
    #[error("undefined type")]
    UndefinedType,
    #[error("undefined value")]
    UndefinedValue,
    #[error("undefined block")]
    UndefinedBlock,
    #[error("undefined global")]
    UndefinedGlobal,
    #[error("ill-formed layout")]
    IllFormedLayout,
    #[error("ill-formed block")]
    IllFormedBlock,
    #[error("use before definition")]
    DominanceViolation,
}

/// Parse failure with 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}: {detail}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub kind: ParseErrorKind,
    pub detail: String,
}

type PResult<T> = Result<T, ParseError>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Local(String),
    GlobalRef(String),
    Int(i64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
    Semi,
    Comma,
    Assign,
    Arrow,
    Bang,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Local(s) => format!("`%{s}`"),
            Tok::GlobalRef(s) => format!("`@{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Bang => "`!`".into(),
        }
    }
}

struct Lexed {
    toks: Vec<Tok>,
    pos: Vec<(u32, u32)>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(src: &str) -> PResult<Lexed> {
    let mut toks = Vec::new();
    let mut pos = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut it = src.chars().peekable();

    macro_rules! bump {
        ($c:expr) => {
            if $c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        };
    }

    while let Some(&c) = it.peek() {
        let (tl, tc) = (line, col);
        if c.is_whitespace() {
            it.next();
            bump!(c);
            continue;
        }
        if c == '#' {
            while let Some(&c2) = it.peek() {
                it.next();
                bump!(c2);
                if c2 == '\n' {
                    break;
                }
            }
            continue;
        }
        let tok = match c {
            '{' => {
                it.next();
                bump!(c);
                Tok::LBrace
            }
            '}' => {
                it.next();
                bump!(c);
                Tok::RBrace
            }
            '(' => {
                it.next();
                bump!(c);
                Tok::LParen
            }
            ')' => {
                it.next();
                bump!(c);
                Tok::RParen
            }
            '[' => {
                it.next();
                bump!(c);
                Tok::LBracket
            }
            ']' => {
                it.next();
                bump!(c);
                Tok::RBracket
            }
            ':' => {
                it.next();
                bump!(c);
                Tok::Colon
            }
            ';' => {
                it.next();
                bump!(c);
                Tok::Semi
            }
            ',' => {
                it.next();
                bump!(c);
                Tok::Comma
            }
            '=' => {
                it.next();
                bump!(c);
                Tok::Assign
            }
            '!' => {
                it.next();
                bump!(c);
                Tok::Bang
            }
            '%' | '@' => {
                it.next();
                bump!(c);
                let mut s = String::new();
                while let Some(&c2) = it.peek() {
                    if is_ident_char(c2) {
                        s.push(c2);
                        it.next();
                        bump!(c2);
                    } else {
                        break;
                    }
                }
                if s.is_empty() {
                    return Err(ParseError {
                        line: tl,
                        col: tc,
                        kind: ParseErrorKind::Syntax,
                        detail: format!("dangling `{c}`"),
                    });
                }
                if c == '%' {
                    Tok::Local(s)
                } else {
                    Tok::GlobalRef(s)
                }
            }
            '-' => {
                it.next();
                bump!(c);
                match it.peek() {
                    Some('>') => {
                        it.next();
                        bump!('>');
                        Tok::Arrow
                    }
                    Some(d) if d.is_ascii_digit() => {
                        let mut s = String::from("-");
                        while let Some(&c2) = it.peek() {
                            if c2.is_ascii_digit() {
                                s.push(c2);
                                it.next();
                                bump!(c2);
                            } else {
                                break;
                            }
                        }
                        Tok::Int(s.parse().map_err(|_| ParseError {
                            line: tl,
                            col: tc,
                            kind: ParseErrorKind::Syntax,
                            detail: format!("integer literal `{s}` out of range"),
                        })?)
                    }
                    _ => {
                        return Err(ParseError {
                            line: tl,
                            col: tc,
                            kind: ParseErrorKind::Syntax,
                            detail: "dangling `-`".into(),
                        })
                    }
                }
            }
            d if d.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c2) = it.peek() {
                    if c2.is_ascii_digit() {
                        s.push(c2);
                        it.next();
                        bump!(c2);
                    } else {
                        break;
                    }
                }
                Tok::Int(s.parse().map_err(|_| ParseError {
                    line: tl,
                    col: tc,
                    kind: ParseErrorKind::Syntax,
                    detail: format!("integer literal `{s}` out of range"),
                })?)
            }
            a if is_ident_start(a) => {
                let mut s = String::new();
                while let Some(&c2) = it.peek() {
                    if is_ident_char(c2) {
                        s.push(c2);
                        it.next();
                        bump!(c2);
                    } else {
                        break;
                    }
                }
                Tok::Ident(s)
            }
            other => {
                return Err(ParseError {
                    line: tl,
                    col: tc,
                    kind: ParseErrorKind::Syntax,
                    detail: format!("unexpected character `{other}`"),
                })
            }
        };
        toks.push(tok);
        pos.push((tl, tc));
    }
    Ok(Lexed { toks, pos })
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: &'a [(u32, u32)],
    i: usize,
}

impl<'a> Parser<'a> {
    fn here(&self) -> (u32, u32) {
        if self.i < self.pos.len() {
            self.pos[self.i]
        } else {
            self.pos.last().copied().unwrap_or((1, 1))
        }
    }

    fn err(&self, kind: ParseErrorKind, detail: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError {
            line,
            col,
            kind,
            detail: detail.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.i + 1)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.i);
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> PResult<()> {
        match self.peek() {
            Some(t) if t == want => {
                self.i += 1;
                Ok(())
            }
            Some(t) => {
                let d = format!("expected {} in {what}, found {}", want.describe(), t.describe());
                Err(self.err(ParseErrorKind::Syntax, d))
            }
            None => Err(self.err(
                ParseErrorKind::Syntax,
                format!("expected {} in {what}, found end of input", want.describe()),
            )),
        }
    }

    fn expect_ident(&mut self, what: &str) -> PResult<String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s.clone()),
            Some(t) => {
                let t = t.clone();
                self.i -= 1;
                Err(self.err(
                    ParseErrorKind::Syntax,
                    format!("expected identifier in {what}, found {}", t.describe()),
                ))
            }
            None => Err(self.err(
                ParseErrorKind::Syntax,
                format!("expected identifier in {what}, found end of input"),
            )),
        }
    }

    fn expect_int(&mut self, what: &str) -> PResult<i64> {
        match self.next() {
            Some(Tok::Int(n)) => Ok(*n),
            Some(t) => {
                let t = t.clone();
                self.i -= 1;
                Err(self.err(
                    ParseErrorKind::Syntax,
                    format!("expected integer in {what}, found {}", t.describe()),
                ))
            }
            None => Err(self.err(
                ParseErrorKind::Syntax,
                format!("expected integer in {what}, found end of input"),
            )),
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.i += 1;
            true
        } else {
            false
        }
    }
}

/// Pre-scan: register every type, global and function name so bodies can
/// reference items declared later in the file.
fn prescan(p: &mut Parser<'_>, module: &mut Module) -> PResult<()> {
    while p.i < p.toks.len() {
        if p.eat_keyword("type") {
            let (line, col) = p.here();
            let name = p.expect_ident("type declaration")?;
            p.expect(&Tok::Ident("size".into()), "type declaration").map_err(|mut e| {
                e.detail = format!("expected `size` after type name `{name}`");
                e
            })?;
            let size = p.expect_int("type declaration")?;
            if size < 0 {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::IllFormedLayout,
                    detail: format!("type `{name}` has negative size"),
                });
            }
            let is_lock = p.eat_keyword("lock");
            if module
                .types
                .push(StructLayout {
                    name: name.clone(),
                    size: size as u64,
                    is_lock,
                    fields: Vec::new(),
                })
                .is_none()
            {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::DuplicateType,
                    detail: format!("type `{name}` declared twice"),
                });
            }
            skip_braced(p)?;
        } else if p.eat_keyword("global") {
            let (line, col) = p.here();
            let name = p.expect_ident("global declaration")?;
            p.expect(&Tok::Colon, "global declaration")?;
            // Type name resolved in the main pass; here just skip it.
            p.expect_ident("global declaration")?;
            if module.global_by_name_exists(&name) {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::DuplicateGlobal,
                    detail: format!("global `{name}` declared twice"),
                });
            }
            module.push_global(GlobalDef { name, ty: None });
        } else if p.eat_keyword("func") {
            let (line, col) = p.here();
            let name = p.expect_ident("function declaration")?;
            if module.func_id(&name).is_some() {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::DuplicateFunction,
                    detail: format!("function `{name}` declared twice"),
                });
            }
            module.push_func(Function {
                name,
                params: Vec::new(),
                ret: None,
                blocks: Vec::new(),
                value_names: Vec::new(),
                value_defs: Vec::new(),
            });
            skip_parens(p)?;
            if p.eat(&Tok::Arrow) {
                p.eat_keyword("ref");
                p.expect_ident("return type")?;
            }
            skip_braced(p)?;
        } else {
            let d = match p.peek() {
                Some(t) => format!("expected `type`, `global` or `func`, found {}", t.describe()),
                None => "unexpected end of input".into(),
            };
            return Err(p.err(ParseErrorKind::Syntax, d));
        }
    }
    Ok(())
}

fn skip_braced(p: &mut Parser<'_>) -> PResult<()> {
    p.expect(&Tok::LBrace, "declaration")?;
    let mut depth = 1;
    while depth > 0 {
        match p.next() {
            Some(Tok::LBrace) => depth += 1,
            Some(Tok::RBrace) => depth -= 1,
            Some(_) => {}
            None => {
                return Err(p.err(ParseErrorKind::Syntax, "unclosed `{`"));
            }
        }
    }
    Ok(())
}

fn skip_parens(p: &mut Parser<'_>) -> PResult<()> {
    p.expect(&Tok::LParen, "declaration")?;
    loop {
        match p.next() {
            Some(Tok::RParen) => return Ok(()),
            Some(_) => {}
            None => return Err(p.err(ParseErrorKind::Syntax, "unclosed `(`")),
        }
    }
}

impl Module {
    fn global_by_name_exists(&self, name: &str) -> bool {
        self.global_id(name).is_some()
    }
}

/// Parse and fully validate a KIR module.
pub fn parse_module(src: &str) -> PResult<Module> {
    let lexed = lex(src)?;
    let mut module = Module::default();

    let mut pre = Parser {
        toks: &lexed.toks,
        pos: &lexed.pos,
        i: 0,
    };
    prescan(&mut pre, &mut module)?;

    let mut p = Parser {
        toks: &lexed.toks,
        pos: &lexed.pos,
        i: 0,
    };
    let mut next_type = 0u32;
    let mut next_global = 0u32;
    let mut next_func = 0u32;
    while p.i < p.toks.len() {
        if p.eat_keyword("type") {
            parse_type_body(&mut p, &mut module, TypeId(next_type))?;
            next_type += 1;
        } else if p.eat_keyword("global") {
            parse_global_body(&mut p, &mut module, GlobalId(next_global))?;
            next_global += 1;
        } else if p.eat_keyword("func") {
            parse_func_body(&mut p, &mut module, FuncId(next_func))?;
            next_func += 1;
        } else {
            return Err(p.err(ParseErrorKind::Syntax, "expected top-level item"));
        }
    }

    validate_layouts(&module)?;
    validate_ssa(&mut module)?;
    Ok(module)
}

fn lookup_type(p: &Parser<'_>, module: &Module, name: &str) -> PResult<TypeId> {
    module.types.lookup(name).ok_or_else(|| {
        p.err(
            ParseErrorKind::UndefinedType,
            format!("no type named `{name}`"),
        )
    })
}

fn parse_type_body(p: &mut Parser<'_>, module: &mut Module, id: TypeId) -> PResult<()> {
    p.expect_ident("type declaration")?; // name (validated in prescan)
    p.expect(&Tok::Ident("size".into()), "type declaration")?;
    p.expect_int("type declaration")?;
    p.eat_keyword("lock");
    p.expect(&Tok::LBrace, "type declaration")?;
    let mut fields = Vec::new();
    while !p.eat(&Tok::RBrace) {
        let (line, col) = p.here();
        if !p.eat_keyword("field") {
            return Err(p.err(ParseErrorKind::Syntax, "expected `field` or `}`"));
        }
        let offset = p.expect_int("field declaration")?;
        let size = p.expect_int("field declaration")?;
        if offset < 0 || size <= 0 {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::IllFormedLayout,
                detail: "field offset must be >= 0 and size > 0".into(),
            });
        }
        let elem = if p.eat_keyword("scalar") {
            ElemType::Scalar
        } else if p.eat_keyword("lock") {
            ElemType::Lock
        } else if p.eat_keyword("ref") {
            let t = p.expect_ident("field declaration")?;
            ElemType::Ref(lookup_type(p, module, &t)?)
        } else {
            let t = p.expect_ident("field declaration")?;
            ElemType::Struct(lookup_type(p, module, &t)?)
        };
        p.expect(&Tok::Semi, "field declaration")?;
        fields.push(FieldDef {
            offset: offset as u64,
            size: size as u64,
            elem,
        });
    }
    fields.sort_by_key(|f| f.offset);
    module.types.types[id.0 as usize].fields = fields;
    Ok(())
}

fn parse_global_body(p: &mut Parser<'_>, module: &mut Module, id: GlobalId) -> PResult<()> {
    p.expect_ident("global declaration")?; // name
    p.expect(&Tok::Colon, "global declaration")?;
    let tname = p.expect_ident("global declaration")?;
    let ty = if tname == "scalar" {
        None
    } else {
        Some(lookup_type(p, module, &tname)?)
    };
    module.globals[id.0 as usize].ty = ty;
    Ok(())
}

fn parse_slot_type(p: &mut Parser<'_>, module: &Module) -> PResult<SlotType> {
    if p.eat_keyword("scalar") {
        return Ok(SlotType::Scalar);
    }
    if p.eat_keyword("ref") {
        let t = p.expect_ident("type")?;
        return Ok(SlotType::PtrPtr(lookup_type(p, module, &t)?));
    }
    let t = p.expect_ident("type")?;
    Ok(SlotType::Ptr(lookup_type(p, module, &t)?))
}

/// Names defined inside one function body, collected before instruction
/// parsing so phis and branches can reference values/blocks defined later.
struct FnNames {
    values: BTreeMap<String, ValueId>,
    blocks: BTreeMap<String, BlockId>,
    order: Vec<String>,
}

fn collect_fn_names(p: &mut Parser<'_>, params: &[(String, SlotType)]) -> PResult<FnNames> {
    let mut names = FnNames {
        values: BTreeMap::new(),
        blocks: BTreeMap::new(),
        order: Vec::new(),
    };
    for (pname, _) in params {
        if names
            .values
            .insert(pname.clone(), ValueId(names.order.len() as u32))
            .is_some()
        {
            return Err(p.err(
                ParseErrorKind::DuplicateValue,
                format!("parameter `%{pname}` declared twice"),
            ));
        }
        names.order.push(pname.clone());
    }
    // Scan the body tokens without consuming them.
    let start = p.i;
    let mut depth = 0usize;
    loop {
        match p.toks.get(p.i) {
            Some(Tok::LBrace) => {
                depth += 1;
                p.i += 1;
            }
            Some(Tok::RBrace) => {
                depth -= 1;
                p.i += 1;
                if depth == 0 {
                    break;
                }
            }
            Some(Tok::Ident(s)) if s == "block" && depth == 1 => {
                p.i += 1;
                if let Some(Tok::Ident(b)) = p.toks.get(p.i).cloned() {
                    let id = BlockId(names.blocks.len() as u32);
                    if names.blocks.insert(b.clone(), id).is_some() {
                        return Err(p.err(
                            ParseErrorKind::DuplicateBlock,
                            format!("block `{b}` declared twice"),
                        ));
                    }
                    p.i += 1;
                }
            }
            Some(Tok::Local(v)) if depth == 1 => {
                let v = v.clone();
                p.i += 1;
                if p.toks.get(p.i) == Some(&Tok::Assign) {
                    if names
                        .values
                        .insert(v.clone(), ValueId(names.order.len() as u32))
                        .is_some()
                    {
                        return Err(p.err(
                            ParseErrorKind::DuplicateValue,
                            format!("value `%{v}` defined twice"),
                        ));
                    }
                    names.order.push(v);
                }
            }
            Some(_) => p.i += 1,
            None => return Err(p.err(ParseErrorKind::Syntax, "unclosed function body")),
        }
    }
    p.i = start;
    Ok(names)
}

fn parse_func_body(p: &mut Parser<'_>, module: &mut Module, id: FuncId) -> PResult<()> {
    let fname = p.expect_ident("function declaration")?;
    p.expect(&Tok::LParen, "function declaration")?;
    let mut params = Vec::new();
    if !p.eat(&Tok::RParen) {
        loop {
            let pname = match p.next() {
                Some(Tok::Local(s)) => s.clone(),
                _ => {
                    p.i -= 1;
                    return Err(p.err(ParseErrorKind::Syntax, "expected `%param` name"));
                }
            };
            p.expect(&Tok::Colon, "parameter")?;
            let ty = parse_slot_type(p, module)?;
            params.push((pname, ty));
            if p.eat(&Tok::RParen) {
                break;
            }
            p.expect(&Tok::Comma, "parameter list")?;
        }
    }
    let ret = if p.eat(&Tok::Arrow) {
        Some(parse_slot_type(p, module)?)
    } else {
        None
    };

    let names = collect_fn_names(p, &params)?;
    if names.blocks.is_empty() {
        return Err(p.err(
            ParseErrorKind::IllFormedBlock,
            format!("function `{fname}` has no blocks"),
        ));
    }

    p.expect(&Tok::LBrace, "function body")?;
    let mut blocks: Vec<Block> = Vec::new();
    let mut value_defs = alloc::vec![ValueDef::Param(0); names.order.len()];
    for (i, _) in params.iter().enumerate() {
        value_defs[i] = ValueDef::Param(i);
    }

    while !p.eat(&Tok::RBrace) {
        if !p.eat_keyword("block") {
            return Err(p.err(ParseErrorKind::Syntax, "expected `block` or `}`"));
        }
        let bname = p.expect_ident("block header")?;
        p.expect(&Tok::Colon, "block header")?;
        let bid = BlockId(blocks.len() as u32);
        let mut instrs = Vec::new();
        loop {
            match p.peek() {
                Some(Tok::RBrace) => break,
                Some(Tok::Ident(s)) if s == "block" => break,
                None => return Err(p.err(ParseErrorKind::Syntax, "unclosed function body")),
                _ => {}
            }
            let ins = parse_instr(p, module, &names)?;
            if let Some(v) = ins.def() {
                value_defs[v.0 as usize] = ValueDef::Instr(bid, instrs.len() as u32);
            }
            instrs.push(ins);
        }
        blocks.push(Block {
            name: bname,
            instrs,
        });
    }

    // Terminator discipline: exactly one, at the end of each block.
    for b in &blocks {
        match b.instrs.last() {
            Some(t) if t.is_terminator() => {}
            _ => {
                return Err(p.err(
                    ParseErrorKind::IllFormedBlock,
                    format!("block `{}` does not end in `br` or `ret`", b.name),
                ))
            }
        }
        for ins in &b.instrs[..b.instrs.len() - 1] {
            if ins.is_terminator() {
                return Err(p.err(
                    ParseErrorKind::IllFormedBlock,
                    format!("terminator in the middle of block `{}`", b.name),
                ));
            }
        }
    }

    let f = &mut module.funcs[id.0 as usize];
    f.params = params;
    f.ret = ret;
    f.blocks = blocks;
    f.value_names = names.order;
    f.value_defs = value_defs;
    Ok(())
}

fn parse_operand(p: &mut Parser<'_>, module: &Module, names: &FnNames) -> PResult<Operand> {
    match p.next().cloned() {
        Some(Tok::Local(v)) => match names.values.get(&v) {
            Some(&id) => Ok(Operand::Value(id)),
            None => {
                p.i -= 1;
                Err(p.err(
                    ParseErrorKind::UndefinedValue,
                    format!("no value named `%{v}`"),
                ))
            }
        },
        Some(Tok::GlobalRef(g)) => match module.global_id(&g) {
            Some(id) => Ok(Operand::Global(id)),
            None => {
                p.i -= 1;
                Err(p.err(
                    ParseErrorKind::UndefinedGlobal,
                    format!("no global named `@{g}`"),
                ))
            }
        },
        Some(Tok::Ident(s)) if s == "null" => Ok(Operand::Null),
        Some(Tok::Ident(s)) => Ok(Operand::Func(s)),
        Some(Tok::Int(n)) => Ok(Operand::Const(n)),
        other => {
            if other.is_some() {
                p.i -= 1;
            }
            Err(p.err(ParseErrorKind::Syntax, "expected operand"))
        }
    }
}

fn parse_operand_list(
    p: &mut Parser<'_>,
    module: &Module,
    names: &FnNames,
) -> PResult<Vec<Operand>> {
    let mut ops = alloc::vec![parse_operand(p, module, names)?];
    while p.eat(&Tok::Comma) {
        ops.push(parse_operand(p, module, names)?);
    }
    Ok(ops)
}

fn parse_call_args(
    p: &mut Parser<'_>,
    module: &Module,
    names: &FnNames,
) -> PResult<Vec<Operand>> {
    p.expect(&Tok::LParen, "call")?;
    let mut args = Vec::new();
    if !p.eat(&Tok::RParen) {
        loop {
            args.push(parse_operand(p, module, names)?);
            if p.eat(&Tok::RParen) {
                break;
            }
            p.expect(&Tok::Comma, "call arguments")?;
        }
    }
    Ok(args)
}

fn parse_type_hint(p: &mut Parser<'_>, module: &Module) -> PResult<Option<TypeId>> {
    if p.eat(&Tok::Bang) {
        p.expect(&Tok::Ident("type".into()), "type hint")?;
        let t = p.expect_ident("type hint")?;
        return Ok(Some(lookup_type(p, module, &t)?));
    }
    Ok(None)
}

fn block_ref(p: &Parser<'_>, names: &FnNames, b: &str) -> PResult<BlockId> {
    names.blocks.get(b).copied().ok_or_else(|| {
        p.err(
            ParseErrorKind::UndefinedBlock,
            format!("no block named `{b}`"),
        )
    })
}

fn parse_instr(p: &mut Parser<'_>, module: &Module, names: &FnNames) -> PResult<Instr> {
    // Defining form: `%x = ...`
    if let Some(Tok::Local(v)) = p.peek().cloned() {
        p.next();
        p.expect(&Tok::Assign, "instruction")?;
        let dst = names.values[&v];
        let op = p.expect_ident("instruction")?;
        return match op.as_str() {
            "load" => {
                let addr = parse_operand(p, module, names)?;
                let type_hint = parse_type_hint(p, module)?;
                Ok(Instr::Load {
                    dst,
                    addr,
                    type_hint,
                })
            }
            "addr" => {
                let base = parse_operand(p, module, names)?;
                let decl_ty = if p.eat(&Tok::Colon) {
                    let t = p.expect_ident("address type")?;
                    Some(lookup_type(p, module, &t)?)
                } else {
                    None
                };
                let mut steps = Vec::new();
                while p.eat(&Tok::LBracket) {
                    if p.eat_keyword("byte") {
                        steps.push(AddrStep::Byte(p.expect_int("byte step")?));
                    } else {
                        let off = p.expect_int("field step")?;
                        if off < 0 {
                            return Err(p.err(
                                ParseErrorKind::Syntax,
                                "field step offset must be >= 0 (use `byte` for displacements)",
                            ));
                        }
                        steps.push(AddrStep::Field(off as u64));
                    }
                    p.expect(&Tok::RBracket, "address step")?;
                }
                if steps.is_empty() {
                    return Err(p.err(
                        ParseErrorKind::Syntax,
                        "address computation needs at least one `[...]` step",
                    ));
                }
                Ok(Instr::Addr {
                    dst,
                    base,
                    decl_ty,
                    steps,
                })
            }
            "cast" => {
                let src = parse_operand(p, module, names)?;
                p.expect(&Tok::Ident("to".into()), "cast")?;
                let t = p.expect_ident("cast")?;
                Ok(Instr::Cast {
                    dst,
                    src,
                    to: lookup_type(p, module, &t)?,
                })
            }
            "phi" => Ok(Instr::Phi {
                dst,
                srcs: parse_operand_list(p, module, names)?,
            }),
            "select" => {
                let ops = parse_operand_list(p, module, names)?;
                if ops.len() != 3 {
                    return Err(p.err(ParseErrorKind::Syntax, "select takes three operands"));
                }
                let mut it = ops.into_iter();
                Ok(Instr::Select {
                    dst,
                    cond: it.next().unwrap(),
                    then_v: it.next().unwrap(),
                    else_v: it.next().unwrap(),
                })
            }
            "cmp" => {
                let op = if p.eat_keyword("eq") {
                    CmpOp::Eq
                } else if p.eat_keyword("ne") {
                    CmpOp::Ne
                } else {
                    return Err(p.err(ParseErrorKind::Syntax, "cmp operator must be eq or ne"));
                };
                let lhs = parse_operand(p, module, names)?;
                p.expect(&Tok::Comma, "cmp")?;
                let rhs = parse_operand(p, module, names)?;
                Ok(Instr::Cmp { dst, op, lhs, rhs })
            }
            "call" => {
                let callee = p.expect_ident("call")?;
                Ok(Instr::Call {
                    dst: Some(dst),
                    callee,
                    args: parse_call_args(p, module, names)?,
                })
            }
            "icall" => {
                let fptr = parse_operand(p, module, names)?;
                Ok(Instr::ICall {
                    dst: Some(dst),
                    fptr,
                    args: parse_call_args(p, module, names)?,
                })
            }
            other => Err(p.err(
                ParseErrorKind::Syntax,
                format!("unknown defining instruction `{other}`"),
            )),
        };
    }

    let kw = p.expect_ident("instruction")?;
    match kw.as_str() {
        "store" => {
            let val = parse_operand(p, module, names)?;
            p.expect(&Tok::Comma, "store")?;
            let addr = parse_operand(p, module, names)?;
            let atomic = p.eat_keyword("atomic");
            let type_hint = parse_type_hint(p, module)?;
            Ok(Instr::Store {
                val,
                addr,
                atomic,
                type_hint,
            })
        }
        "acquire" | "acquire_read" | "acquire_write" => {
            let mode = match kw.as_str() {
                "acquire_read" => LockMode::Read,
                "acquire_write" => LockMode::Write,
                _ => LockMode::Exclusive,
            };
            Ok(Instr::Acquire {
                lock: parse_operand(p, module, names)?,
                mode,
            })
        }
        "release" => Ok(Instr::Release {
            lock: parse_operand(p, module, names)?,
        }),
        "assert_held" => Ok(Instr::AssertHeld {
            lock: parse_operand(p, module, names)?,
        }),
        "call" => {
            let callee = p.expect_ident("call")?;
            Ok(Instr::Call {
                dst: None,
                callee,
                args: parse_call_args(p, module, names)?,
            })
        }
        "icall" => {
            let fptr = parse_operand(p, module, names)?;
            Ok(Instr::ICall {
                dst: None,
                fptr,
                args: parse_call_args(p, module, names)?,
            })
        }
        "br" => {
            // Either `br target` or `br %cond, then, else`.
            if let Some(Tok::Ident(b)) = p.peek().cloned() {
                p.next();
                return Ok(Instr::Br {
                    cond: None,
                    then_b: block_ref(p, names, &b)?,
                    else_b: None,
                });
            }
            let cond = parse_operand(p, module, names)?;
            p.expect(&Tok::Comma, "br")?;
            let t = p.expect_ident("br")?;
            p.expect(&Tok::Comma, "br")?;
            let e = p.expect_ident("br")?;
            Ok(Instr::Br {
                cond: Some(cond),
                then_b: block_ref(p, names, &t)?,
                else_b: Some(block_ref(p, names, &e)?),
            })
        }
        "ret" => {
            // A value operand is present unless the next token starts a new
            // instruction/block/end-of-body. Locals, globals, ints and null
            // are unambiguous (a local followed by `=` begins the next
            // instruction); bare identifiers are never return operands to
            // keep the grammar statement-oriented.
            let val = match p.peek() {
                Some(Tok::Local(_)) if matches!(p.peek2(), Some(Tok::Assign)) => None,
                Some(Tok::Local(_)) | Some(Tok::GlobalRef(_)) | Some(Tok::Int(_)) => {
                    Some(parse_operand(p, module, names)?)
                }
                Some(Tok::Ident(s)) if s == "null" => {
                    p.next();
                    Some(Operand::Null)
                }
                _ => None,
            };
            Ok(Instr::Ret { val })
        }
        "data_race" => Ok(Instr::DataRace),
        other => Err(p.err(
            ParseErrorKind::Syntax,
            format!("unknown instruction `{other}`"),
        )),
    }
}

/// Layout sanity: field bounds, overlap, embedded sizes.
fn validate_layouts(module: &Module) -> PResult<()> {
    let fail = |kind, detail: String| ParseError {
        line: 1,
        col: 1,
        kind,
        detail,
    };
    for layout in &module.types.types {
        let mut prev_end = 0u64;
        for f in &layout.fields {
            if f.offset < prev_end {
                return Err(fail(
                    ParseErrorKind::IllFormedLayout,
                    format!("type `{}` has overlapping fields at offset {}", layout.name, f.offset),
                ));
            }
            if f.offset + f.size > layout.size {
                return Err(fail(
                    ParseErrorKind::IllFormedLayout,
                    format!(
                        "type `{}` field at offset {} extends past size {}",
                        layout.name, f.offset, layout.size
                    ),
                ));
            }
            if let ElemType::Struct(inner) = f.elem {
                let it = module.types.get(inner);
                if it.size != f.size {
                    return Err(fail(
                        ParseErrorKind::IllFormedLayout,
                        format!(
                            "type `{}` embeds `{}` with size {} in a field of size {}",
                            layout.name, it.name, it.size, f.size
                        ),
                    ));
                }
            }
            prev_end = f.offset + f.size;
        }
    }
    Ok(())
}

/// SSA discipline: every use is dominated by its definition. Phi operands are
/// exempt (they flow along edges); a stricter per-edge check would need the
/// phi to name its predecessors, which KIR deliberately does not.
fn validate_ssa(module: &mut Module) -> PResult<()> {
    for f in &module.funcs {
        let cfg = Cfg::build(f);
        let fail = |detail: String| ParseError {
            line: 1,
            col: 1,
            kind: ParseErrorKind::DominanceViolation,
            detail,
        };
        for (bid, idx, ins) in f.instrs() {
            // Dead blocks cannot violate SSA at runtime; skip them.
            if !cfg.reachable[bid.0 as usize] {
                continue;
            }
            if matches!(ins, Instr::Phi { .. }) {
                continue;
            }
            for op in ins.operands() {
                let Operand::Value(v) = op else { continue };
                match f.value_defs[v.0 as usize] {
                    ValueDef::Param(_) => {}
                    ValueDef::Instr(db, di) => {
                        let ok = if db == bid {
                            di < idx
                        } else {
                            cfg.dominates(db, bid)
                        };
                        if !ok {
                            return Err(fail(format!(
                                "in `{}`: `%{}` used before definition",
                                f.name,
                                f.value_name(*v)
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
