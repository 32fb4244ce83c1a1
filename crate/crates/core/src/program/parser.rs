//! Recursive-descent parser for the program dialect.
//!
//! A source file holds exactly one function definition. Imports, classes,
//! nested functions, exception handling and attribute assignment are
//! rejected here so the interpreter never sees them.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ErrorLabel, ParseError};

/// Maximum nesting of expressions and blocks.
pub const MAX_NESTING: usize = 60;

const KEYWORDS: &[&str] = &[
    "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del", "elif", "else", "except",
    "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise",
    "return", "try", "while", "with", "yield", "None", "True", "False",
];

const UNSUPPORTED_STATEMENTS: &[&str] = &[
    "import", "from", "class", "try", "except", "finally", "with", "raise", "del", "global", "nonlocal", "assert",
    "yield", "async", "await",
];

pub fn parse(src: &str) -> Result<Module, ParseError> {
    let toks = tokenize(src)?;
    Parser { toks, pos: 0, depth: 0, loops: 0 }.module()
}

/// Parses a single expression (used for f-string fields).
pub fn parse_expression(src: &str, line: u32) -> Result<Expr, ParseError> {
    let toks = tokenize(src).map_err(|mut e| {
        e.line = line;
        e
    })?;
    let mut p = Parser { toks, pos: 0, depth: 0, loops: 0 };
    let e = p.test()?;
    while p.peek() == &Tok::Newline {
        p.pos += 1;
    }
    if p.peek() != &Tok::Eof {
        return Err(p.error("invalid syntax in f-string field"));
    }
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
    loops: usize,
}

type PResult<T> = Result<T, ParseError>;

/// Positional and keyword arguments of a call.
type CallArgs = (Vec<Expr>, Vec<(String, Expr)>);

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_n(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> u32 {
        self.toks[self.pos].line
    }

    fn advance(&mut self) -> &Token {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError { line: t.line, col: t.col, message: message.into(), label: None }
    }

    fn indentation_error(&self, message: &str) -> ParseError {
        ParseError { label: Some(ErrorLabel::IndentationError), ..self.error(message) }
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.is_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{op}'")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{kw}'")))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.advance();
                Ok(n)
            }
            _ => Err(self.error("expected a name")),
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.error("too many nested expressions or blocks"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn skip_newlines(&mut self) {
        while self.peek() == &Tok::Newline {
            self.advance();
        }
    }

    fn module(&mut self) -> PResult<Module> {
        self.skip_newlines();
        if self.peek() == &Tok::Indent {
            return Err(self.indentation_error("unexpected indent"));
        }
        if !self.is_kw("def") {
            return Err(self.error("expected a function definition"));
        }
        let func = self.funcdef()?;
        self.skip_newlines();
        if self.peek() != &Tok::Eof {
            if self.peek() == &Tok::Indent {
                return Err(self.indentation_error("unexpected indent"));
            }
            return Err(self.error("only a single function definition is allowed"));
        }
        Ok(Module { func })
    }

    fn funcdef(&mut self) -> PResult<FunctionDef> {
        let line = self.line();
        self.expect_kw("def")?;
        let name = self.name()?;
        self.expect_op("(")?;
        let mut params = Vec::new();
        while !self.is_op(")") {
            let pname = self.name()?;
            if params.iter().any(|p: &Param| p.name == pname) {
                return Err(self.error(format!("duplicate argument '{pname}'")));
            }
            if self.eat_op(":") {
                self.test()?;
            }
            let default = if self.eat_op("=") { Some(self.test()?) } else { None };
            if default.is_none() && params.iter().any(|p: &Param| p.default.is_some()) {
                return Err(self.error("non-default argument follows default argument"));
            }
            params.push(Param { name: pname, default });
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        let returns = if self.eat_op("->") { Some(self.test()?) } else { None };
        self.expect_op(":")?;
        let body = self.block()?;
        Ok(FunctionDef { name, params, returns, body, line })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.enter()?;
        let result = self.block_inner();
        self.leave();
        result
    }

    fn block_inner(&mut self) -> PResult<Vec<Stmt>> {
        if self.peek() != &Tok::Newline {
            return self.simple_stmts();
        }
        self.advance();
        if self.peek() != &Tok::Indent {
            return Err(self.indentation_error("expected an indented block"));
        }
        self.advance();
        let mut body = Vec::new();
        while !matches!(self.peek(), Tok::Dedent | Tok::Eof) {
            body.extend(self.statement()?);
        }
        if self.peek() == &Tok::Dedent {
            self.advance();
        }
        Ok(body)
    }

    fn statement(&mut self) -> PResult<Vec<Stmt>> {
        let line = self.line();
        match self.peek().clone() {
            Tok::Indent => Err(self.indentation_error("unexpected indent")),
            Tok::Name(kw) => match kw.as_str() {
                "if" => {
                    self.advance();
                    Ok(vec![self.if_rest(line)?])
                }
                "for" => {
                    self.advance();
                    let target = self.target_list()?;
                    self.expect_kw("in")?;
                    let iter = self.testlist()?;
                    self.expect_op(":")?;
                    self.loops += 1;
                    let body = self.block();
                    self.loops -= 1;
                    Ok(vec![Stmt { kind: StmtKind::For { target, iter, body: body? }, line }])
                }
                "while" => {
                    self.advance();
                    let cond = self.test()?;
                    self.expect_op(":")?;
                    self.loops += 1;
                    let body = self.block();
                    self.loops -= 1;
                    Ok(vec![Stmt { kind: StmtKind::While { cond, body: body? }, line }])
                }
                "def" => Err(self.error("nested function definitions are not supported")),
                "elif" | "else" => Err(self.error(format!("'{kw}' without matching 'if'"))),
                k if UNSUPPORTED_STATEMENTS.contains(&k) => {
                    Err(self.error(format!("'{k}' statements are not supported")))
                }
                _ => self.simple_stmts(),
            },
            _ => self.simple_stmts(),
        }
    }

    fn if_rest(&mut self, line: u32) -> PResult<Stmt> {
        let cond = self.test()?;
        self.expect_op(":")?;
        let body = self.block()?;
        let orelse = if self.is_kw("elif") {
            let l = self.line();
            self.advance();
            vec![self.if_rest(l)?]
        } else if self.eat_kw("else") {
            self.expect_op(":")?;
            self.block()?
        } else {
            Vec::new()
        };
        Ok(Stmt { kind: StmtKind::If { cond, body, orelse }, line })
    }

    fn simple_stmts(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = vec![self.simple_stmt()?];
        while self.eat_op(";") {
            if matches!(self.peek(), Tok::Newline | Tok::Eof) {
                break;
            }
            out.push(self.simple_stmt()?);
        }
        match self.peek() {
            Tok::Newline => {
                self.advance();
                Ok(out)
            }
            Tok::Eof | Tok::Dedent => Ok(out),
            _ => Err(self.error("invalid syntax")),
        }
    }

    fn simple_stmt(&mut self) -> PResult<Stmt> {
        let line = self.line();
        let kind = if self.eat_kw("return") {
            if matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Dedent) || self.is_op(";") {
                StmtKind::Return(None)
            } else {
                StmtKind::Return(Some(self.testlist()?))
            }
        } else if self.eat_kw("pass") {
            StmtKind::Pass
        } else if self.is_kw("break") || self.is_kw("continue") {
            if self.loops == 0 {
                return Err(self.error("'break' or 'continue' outside loop"));
            }
            if self.eat_kw("break") {
                StmtKind::Break
            } else {
                self.advance();
                StmtKind::Continue
            }
        } else {
            let first = self.testlist()?;
            if self.is_op("=") {
                let mut targets = vec![to_target(&first).map_err(|m| self.error(m))?];
                let mut value;
                loop {
                    self.expect_op("=")?;
                    value = self.testlist()?;
                    if !self.is_op("=") {
                        break;
                    }
                    targets.push(to_target(&value).map_err(|m| self.error(m))?);
                }
                StmtKind::Assign { targets, value }
            } else if let Some(op) = self.aug_op() {
                self.advance();
                let target = match to_target(&first).map_err(|m| self.error(m))? {
                    Target::Tuple(_) => return Err(self.error("illegal expression for augmented assignment")),
                    t => t,
                };
                let value = self.testlist()?;
                StmtKind::AugAssign { target, op, value }
            } else {
                StmtKind::Expr(first)
            }
        };
        Ok(Stmt { kind, line })
    }

    fn aug_op(&self) -> Option<BinOp> {
        match self.peek() {
            Tok::Op("+=") => Some(BinOp::Add),
            Tok::Op("-=") => Some(BinOp::Sub),
            Tok::Op("*=") => Some(BinOp::Mul),
            Tok::Op("/=") => Some(BinOp::Div),
            Tok::Op("//=") => Some(BinOp::FloorDiv),
            Tok::Op("%=") => Some(BinOp::Mod),
            Tok::Op("**=") => Some(BinOp::Pow),
            _ => None,
        }
    }

    /// `a, b` style lists of targets as used by `for` and comprehensions.
    fn target_list(&mut self) -> PResult<Target> {
        let line = self.line();
        let mut items = vec![self.primary()?];
        let mut tuple = false;
        while self.eat_op(",") {
            tuple = true;
            if self.is_kw("in") {
                break;
            }
            items.push(self.primary()?);
        }
        let e = if tuple { Expr { kind: ExprKind::Tuple(items), line } } else { items.pop().expect("one item") };
        to_target(&e).map_err(|m| self.error(m))
    }

    /// Comma-separated expressions; more than one (or a trailing comma)
    /// forms a tuple.
    fn testlist(&mut self) -> PResult<Expr> {
        let line = self.line();
        let first = self.test()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.starts_expression() {
                items.push(self.test()?);
            } else {
                break;
            }
        }
        Ok(Expr { kind: ExprKind::Tuple(items), line })
    }

    fn starts_expression(&self) -> bool {
        match self.peek() {
            Tok::Name(n) => {
                !KEYWORDS.contains(&n.as_str()) || matches!(n.as_str(), "None" | "True" | "False" | "not" | "lambda")
            }
            Tok::Int(_) | Tok::Float(_) | Tok::Str(_) | Tok::FStr(_) => true,
            Tok::Op(o) => matches!(*o, "(" | "[" | "{" | "-" | "+"),
            _ => false,
        }
    }

    fn test(&mut self) -> PResult<Expr> {
        self.enter()?;
        let result = self.test_inner();
        self.leave();
        result
    }

    fn test_inner(&mut self) -> PResult<Expr> {
        let line = self.line();
        if self.eat_kw("lambda") {
            let mut params = Vec::new();
            while !self.is_op(":") {
                params.push(self.name()?);
                if !self.eat_op(",") {
                    break;
                }
            }
            self.expect_op(":")?;
            let body = self.test()?;
            return Ok(Expr { kind: ExprKind::Lambda { params, body: Box::new(body) }, line });
        }
        let body = self.or_test()?;
        if self.eat_kw("if") {
            let cond = self.or_test()?;
            self.expect_kw("else")?;
            let orelse = self.test()?;
            return Ok(Expr {
                kind: ExprKind::IfExp { cond: Box::new(cond), body: Box::new(body), orelse: Box::new(orelse) },
                line,
            });
        }
        Ok(body)
    }

    fn or_test(&mut self) -> PResult<Expr> {
        let line = self.line();
        let first = self.and_test()?;
        if !self.is_kw("or") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_kw("or") {
            items.push(self.and_test()?);
        }
        Ok(Expr { kind: ExprKind::Bool(BoolOp::Or, items), line })
    }

    fn and_test(&mut self) -> PResult<Expr> {
        let line = self.line();
        let first = self.not_test()?;
        if !self.is_kw("and") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_kw("and") {
            items.push(self.not_test()?);
        }
        Ok(Expr { kind: ExprKind::Bool(BoolOp::And, items), line })
    }

    fn not_test(&mut self) -> PResult<Expr> {
        let line = self.line();
        if self.eat_kw("not") {
            self.enter()?;
            let inner = self.not_test();
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(UnOp::Not, Box::new(inner?)), line });
        }
        self.comparison()
    }

    fn comp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::NotEq,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::LtE,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::GtE,
            Tok::Name(n) if n == "in" => CmpOp::In,
            Tok::Name(n) if n == "not" && matches!(self.peek_n(1), Tok::Name(m) if m == "in") => {
                self.advance();
                CmpOp::NotIn
            }
            Tok::Name(n) if n == "is" => {
                if matches!(self.peek_n(1), Tok::Name(m) if m == "not") {
                    self.advance();
                    CmpOp::IsNot
                } else {
                    CmpOp::Is
                }
            }
            _ => return None,
        };
        self.advance();
        Some(op)
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let line = self.line();
        let first = self.arith()?;
        let mut rest = Vec::new();
        while let Some(op) = self.comp_op() {
            rest.push((op, self.arith()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Expr { kind: ExprKind::Compare(Box::new(first), rest), line })
        }
    }

    fn arith(&mut self) -> PResult<Expr> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op("+") => BinOp::Add,
                Tok::Op("-") => BinOp::Sub,
                _ => return Ok(left),
            };
            let line = self.line();
            self.advance();
            let right = self.term()?;
            left = Expr { kind: ExprKind::Binary(Box::new(left), op, Box::new(right)), line };
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut left = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Op("*") => BinOp::Mul,
                Tok::Op("/") => BinOp::Div,
                Tok::Op("//") => BinOp::FloorDiv,
                Tok::Op("%") => BinOp::Mod,
                _ => return Ok(left),
            };
            let line = self.line();
            self.advance();
            let right = self.factor()?;
            left = Expr { kind: ExprKind::Binary(Box::new(left), op, Box::new(right)), line };
        }
    }

    fn factor(&mut self) -> PResult<Expr> {
        let line = self.line();
        let op = match self.peek() {
            Tok::Op("-") => Some(UnOp::Neg),
            Tok::Op("+") => Some(UnOp::Pos),
            _ => None,
        };
        if let Some(op) = op {
            self.advance();
            self.enter()?;
            let inner = self.factor();
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(op, Box::new(inner?)), line });
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Expr> {
        let line = self.line();
        let base = self.primary()?;
        if self.eat_op("**") {
            self.enter()?;
            let exp = self.factor();
            self.leave();
            return Ok(Expr { kind: ExprKind::Binary(Box::new(base), BinOp::Pow, Box::new(exp?)), line });
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            let line = self.line();
            if self.eat_op("(") {
                let (args, kwargs) = self.call_args()?;
                e = Expr { kind: ExprKind::Call { func: Box::new(e), args, kwargs }, line };
            } else if self.eat_op("[") {
                let index = self.subscript()?;
                self.expect_op("]")?;
                e = Expr { kind: ExprKind::Subscript(Box::new(e), Box::new(index)), line };
            } else if self.eat_op(".") {
                let attr = self.name()?;
                e = Expr { kind: ExprKind::Attribute(Box::new(e), attr), line };
            } else {
                return Ok(e);
            }
        }
    }

    fn call_args(&mut self) -> PResult<CallArgs> {
        let mut args = Vec::new();
        let mut kwargs: Vec<(String, Expr)> = Vec::new();
        while !self.is_op(")") {
            if self.is_op("*") || self.is_op("**") {
                return Err(self.error("argument unpacking is not supported"));
            }
            if matches!(self.peek(), Tok::Name(_)) && matches!(self.peek_n(1), Tok::Op("=")) {
                let key = self.name()?;
                self.expect_op("=")?;
                if kwargs.iter().any(|(k, _)| *k == key) {
                    return Err(self.error(format!("keyword argument repeated: {key}")));
                }
                kwargs.push((key, self.test()?));
            } else {
                if !kwargs.is_empty() {
                    return Err(self.error("positional argument follows keyword argument"));
                }
                let line = self.line();
                let value = self.test()?;
                if self.is_kw("for") {
                    let generators = self.comprehension_clauses()?;
                    args.push(Expr { kind: ExprKind::GeneratorExp { elt: Box::new(value), generators }, line });
                } else {
                    args.push(value);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        Ok((args, kwargs))
    }

    fn subscript(&mut self) -> PResult<Expr> {
        let line = self.line();
        let first = self.slice_item()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.is_op("]") {
                break;
            }
            items.push(self.slice_item()?);
        }
        Ok(Expr { kind: ExprKind::Tuple(items), line })
    }

    fn slice_item(&mut self) -> PResult<Expr> {
        let line = self.line();
        let lower = if self.is_op(":") { None } else { Some(Box::new(self.test()?)) };
        if !self.eat_op(":") {
            return Ok(*lower.expect("non-slice subscript has an expression"));
        }
        let bound = |p: &mut Parser| -> PResult<Option<Box<Expr>>> {
            if p.is_op(":") || p.is_op("]") || p.is_op(",") {
                Ok(None)
            } else {
                Ok(Some(Box::new(p.test()?)))
            }
        };
        let upper = bound(self)?;
        let step = if self.eat_op(":") { bound(self)? } else { None };
        Ok(Expr { kind: ExprKind::Slice { lower, upper, step }, line })
    }

    fn comprehension_clauses(&mut self) -> PResult<Vec<Comprehension>> {
        let mut gens = Vec::new();
        while self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.or_test()?;
            let mut ifs = Vec::new();
            while self.eat_kw("if") {
                ifs.push(self.or_test()?);
            }
            gens.push(Comprehension { target, iter, ifs });
        }
        Ok(gens)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let line = self.line();
        let tok = self.peek().clone();
        let kind = match tok {
            Tok::Int(i) => {
                self.advance();
                ExprKind::Const(Const::Int(i))
            }
            Tok::Float(f) => {
                self.advance();
                ExprKind::Const(Const::Float(f))
            }
            Tok::Str(_) | Tok::FStr(_) => return self.strings(),
            Tok::Name(n) => match n.as_str() {
                "None" => {
                    self.advance();
                    ExprKind::Const(Const::None)
                }
                "True" | "False" => {
                    self.advance();
                    ExprKind::Const(Const::Bool(n == "True"))
                }
                _ => ExprKind::Name(self.name()?),
            },
            Tok::Op("(") => {
                self.advance();
                self.enter()?;
                let r = self.paren_body(line);
                self.leave();
                return r;
            }
            Tok::Op("[") => {
                self.advance();
                self.enter()?;
                let r = self.list_body(line);
                self.leave();
                return r;
            }
            Tok::Op("{") => {
                self.advance();
                self.enter()?;
                let r = self.dict_body(line);
                self.leave();
                return r;
            }
            Tok::Indent => return Err(self.indentation_error("unexpected indent")),
            Tok::Dedent => return Err(self.indentation_error("unexpected unindent")),
            Tok::Newline | Tok::Eof => return Err(self.error("unexpected end of line")),
            Tok::Op(o) => return Err(self.error(format!("invalid syntax at '{o}'"))),
        };
        Ok(Expr { kind, line })
    }

    fn paren_body(&mut self, line: u32) -> PResult<Expr> {
        if self.eat_op(")") {
            return Ok(Expr { kind: ExprKind::Tuple(Vec::new()), line });
        }
        let first = self.test()?;
        if self.is_kw("for") {
            let generators = self.comprehension_clauses()?;
            self.expect_op(")")?;
            return Ok(Expr { kind: ExprKind::GeneratorExp { elt: Box::new(first), generators }, line });
        }
        if self.eat_op(")") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.is_op(")") {
                break;
            }
            items.push(self.test()?);
        }
        self.expect_op(")")?;
        Ok(Expr { kind: ExprKind::Tuple(items), line })
    }

    fn list_body(&mut self, line: u32) -> PResult<Expr> {
        if self.eat_op("]") {
            return Ok(Expr { kind: ExprKind::List(Vec::new()), line });
        }
        let first = self.test()?;
        if self.is_kw("for") {
            let generators = self.comprehension_clauses()?;
            self.expect_op("]")?;
            return Ok(Expr { kind: ExprKind::ListComp { elt: Box::new(first), generators }, line });
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.is_op("]") {
                break;
            }
            items.push(self.test()?);
        }
        self.expect_op("]")?;
        Ok(Expr { kind: ExprKind::List(items), line })
    }

    fn dict_body(&mut self, line: u32) -> PResult<Expr> {
        if self.eat_op("}") {
            return Ok(Expr { kind: ExprKind::Dict(Vec::new()), line });
        }
        let key = self.test()?;
        if !self.eat_op(":") {
            return Err(self.error("set literals are not supported"));
        }
        let value = self.test()?;
        if self.is_kw("for") {
            let generators = self.comprehension_clauses()?;
            self.expect_op("}")?;
            return Ok(Expr {
                kind: ExprKind::DictComp { key: Box::new(key), value: Box::new(value), generators },
                line,
            });
        }
        let mut items = vec![(key, value)];
        while self.eat_op(",") {
            if self.is_op("}") {
                break;
            }
            let k = self.test()?;
            self.expect_op(":")?;
            items.push((k, self.test()?));
        }
        self.expect_op("}")?;
        Ok(Expr { kind: ExprKind::Dict(items), line })
    }

    /// Adjacent string literals concatenate; any f-string makes the result
    /// an f-string.
    fn strings(&mut self) -> PResult<Expr> {
        let line = self.line();
        let mut parts: Vec<FPart> = Vec::new();
        let mut formatted = false;
        loop {
            match self.peek().clone() {
                Tok::Str(s) => {
                    self.advance();
                    parts.push(FPart::Lit(s));
                }
                Tok::FStr(body) => {
                    let tok_line = self.line();
                    self.advance();
                    formatted = true;
                    parts.extend(self.fstring_parts(&body, tok_line)?);
                }
                _ => break,
            }
        }
        if !formatted {
            let s: String = parts
                .into_iter()
                .map(|p| match p {
                    FPart::Lit(s) => s,
                    FPart::Expr { .. } => unreachable!("plain strings have no fields"),
                })
                .collect();
            return Ok(Expr { kind: ExprKind::Const(Const::Str(s)), line });
        }
        Ok(Expr { kind: ExprKind::FString(parts), line })
    }

    fn fstring_parts(&mut self, body: &str, line: u32) -> PResult<Vec<FPart>> {
        let err = |m: &str| ParseError { line, col: 1, message: format!("f-string: {m}"), label: None };
        let chars: Vec<char> = body.chars().collect();
        let mut parts = Vec::new();
        let mut lit = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == '{' && chars.get(i + 1) == Some(&'{') {
                lit.push('{');
                i += 2;
                continue;
            }
            if c == '}' {
                if chars.get(i + 1) == Some(&'}') {
                    lit.push('}');
                    i += 2;
                    continue;
                }
                return Err(err("single '}' is not allowed"));
            }
            if c != '{' {
                lit.push(c);
                i += 1;
                continue;
            }
            // field: scan to the matching close brace
            let start = i + 1;
            let mut depth = 0i32;
            let mut quote: Option<char> = None;
            let mut colon: Option<usize> = None;
            let mut bang: Option<usize> = None;
            let mut j = start;
            let end = loop {
                let Some(&d) = chars.get(j) else { return Err(err("expecting '}'")) };
                match quote {
                    Some(q) if d == q => quote = None,
                    Some(_) => {}
                    None => match d {
                        '\'' | '"' => quote = Some(d),
                        '(' | '[' | '{' => depth += 1,
                        ')' | ']' => depth -= 1,
                        '}' if depth == 0 => break j,
                        '}' => depth -= 1,
                        ':' if depth == 0 && colon.is_none() => colon = Some(j),
                        '!' if depth == 0 && colon.is_none() && chars.get(j + 1) != Some(&'=') && bang.is_none() => {
                            bang = Some(j)
                        }
                        _ => {}
                    },
                }
                j += 1;
            };
            let expr_end = bang.or(colon).unwrap_or(end);
            let src: String = chars[start..expr_end].iter().collect();
            if src.trim().is_empty() {
                return Err(err("empty expression not allowed"));
            }
            let conversion = match bang {
                Some(b) => {
                    let conv_end = colon.unwrap_or(end);
                    let conv: String = chars[b + 1..conv_end].iter().collect();
                    match conv.as_str() {
                        "r" | "s" | "a" => conv.chars().next(),
                        _ => return Err(err("invalid conversion character")),
                    }
                }
                None => None,
            };
            let spec: String = colon.map(|c| chars[c + 1..end].iter().collect()).unwrap_or_default();
            self.enter()?;
            let expr = parse_expression(src.trim(), line);
            self.leave();
            if !lit.is_empty() {
                parts.push(FPart::Lit(std::mem::take(&mut lit)));
            }
            parts.push(FPart::Expr { expr: expr?, conversion, spec });
            i = end + 1;
        }
        if !lit.is_empty() {
            parts.push(FPart::Lit(lit));
        }
        Ok(parts)
    }
}

fn to_target(e: &Expr) -> Result<Target, String> {
    match &e.kind {
        ExprKind::Name(n) => Ok(Target::Name(n.clone())),
        ExprKind::Subscript(obj, idx) => Ok(Target::Subscript(obj.clone(), idx.clone())),
        ExprKind::Tuple(items) | ExprKind::List(items) if !items.is_empty() => {
            items.iter().map(to_target).collect::<Result<_, _>>().map(Target::Tuple)
        }
        ExprKind::Attribute(..) => Err("attribute assignment is not allowed".into()),
        _ => Err("cannot assign to expression".into()),
    }
}
