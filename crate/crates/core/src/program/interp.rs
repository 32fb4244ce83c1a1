//! Tree-walking interpreter.
//!
//! Each execution owns its state. Every evaluated node costs one step and
//! allocations cost one step per element; exhausting the budget, nesting
//! too deeply or overflowing 64-bit integers ends the run with label
//! `Other`. Execution happens on a dedicated thread with a large stack, so
//! the recursion limits are well inside what the stack can hold.

use std::collections::HashMap;
use std::rc::Rc;

use super::ast::*;
use super::value::{compare_values, to_repr, to_str, values_equal, CompareError, Dict, Lambda, Patch, Value};
use super::{ApiVariant, ErrorLabel, ExecConfig};
use crate::backends::{BackendError, BackendSuite};
use crate::instance::Trace;

/// Largest list or string a single operation may build.
pub const MAX_ALLOC: usize = 10_000_000;
/// Nesting limit for expression evaluation (including lambda bodies).
pub const MAX_EVAL_DEPTH: usize = 400;
/// Nesting limit for lambda calls.
pub const MAX_CALL_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct RtError {
    pub label: ErrorLabel,
    pub message: String,
    pub line: u32,
    /// Set when a backend failed at the transport level; such failures are
    /// infrastructure problems, not program faults.
    pub transport: Option<BackendError>,
}

pub type R<T> = Result<T, RtError>;

pub(super) enum Flow {
    Normal,
    Break,
    Continue,
    Return(Value),
}

pub type Scope = HashMap<String, Value>;

pub struct Interpreter<'a> {
    pub(super) suite: &'a BackendSuite,
    pub(super) variant: ApiVariant,
    pub(super) config: &'a ExecConfig,
    pub(super) trace: &'a mut Trace,
    pub(super) steps: u64,
    pub(super) line: u32,
    eval_depth: usize,
    call_depth: usize,
}

impl<'a> Interpreter<'a> {
    pub fn new(suite: &'a BackendSuite, variant: ApiVariant, config: &'a ExecConfig, trace: &'a mut Trace) -> Self {
        Interpreter { suite, variant, config, trace, steps: 0, line: 0, eval_depth: 0, call_depth: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(super) fn err(&self, label: ErrorLabel, message: impl Into<String>) -> RtError {
        RtError { label, message: message.into(), line: self.line, transport: None }
    }

    pub(super) fn type_err(&self, message: impl Into<String>) -> RtError {
        self.err(ErrorLabel::TypeError, message)
    }

    pub(super) fn value_err(&self, message: impl Into<String>) -> RtError {
        self.err(ErrorLabel::ValueError, message)
    }

    pub(super) fn overflow(&self) -> RtError {
        self.err(ErrorLabel::Other, "OverflowError: integer overflow")
    }

    pub(super) fn backend_err(&self, e: BackendError) -> RtError {
        let label = match e {
            BackendError::InvalidRequest(_) => ErrorLabel::ValueError,
            _ => ErrorLabel::Other,
        };
        let transport = e.is_transport().then(|| e.clone());
        RtError { label, message: e.to_string(), line: self.line, transport }
    }

    pub(super) fn tick(&mut self, n: u64) -> R<()> {
        self.steps = self.steps.saturating_add(n);
        if self.steps > self.config.budget {
            self.steps = self.config.budget;
            return Err(self.err(ErrorLabel::Other, format!("step budget of {} exhausted", self.config.budget)));
        }
        Ok(())
    }

    /// Charges for building a collection of `n` elements.
    pub(super) fn alloc(&mut self, n: usize) -> R<()> {
        if n > MAX_ALLOC {
            return Err(self.err(ErrorLabel::Other, "MemoryError: allocation too large"));
        }
        self.tick(n as u64)
    }

    /// Charges for building a string of `bytes` bytes.
    pub(super) fn alloc_str(&mut self, bytes: usize) -> R<()> {
        if bytes > MAX_ALLOC {
            return Err(self.err(ErrorLabel::Other, "MemoryError: string too large"));
        }
        self.tick(bytes as u64 / 16)
    }

    /// Runs the function body with the given arguments.
    pub fn call_function(&mut self, func: &FunctionDef, args: Vec<Value>) -> R<Value> {
        self.line = func.line;
        if args.len() > func.params.len() {
            return Err(self.type_err(format!(
                "{}() takes {} positional arguments but {} were given",
                func.name,
                func.params.len(),
                args.len()
            )));
        }
        let mut scope = Scope::new();
        let mut args = args.into_iter();
        for p in &func.params {
            let value = match (args.next(), &p.default) {
                (Some(v), _) => v,
                (None, Some(default)) => {
                    let mut empty = Scope::new();
                    self.eval(default, &mut empty)?
                }
                (None, None) => {
                    return Err(
                        self.type_err(format!("{}() missing required positional argument: '{}'", func.name, p.name))
                    )
                }
            };
            scope.insert(p.name.clone(), value);
        }
        match self.exec_block(&func.body, &mut scope)? {
            Flow::Return(v) => Ok(v),
            _ => Ok(Value::None),
        }
    }

    pub(super) fn exec_block(&mut self, body: &[Stmt], scope: &mut Scope) -> R<Flow> {
        for stmt in body {
            match self.exec(stmt, scope)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, stmt: &Stmt, scope: &mut Scope) -> R<Flow> {
        self.line = stmt.line;
        self.tick(1)?;
        match &stmt.kind {
            StmtKind::Expr(e) => {
                self.eval(e, scope)?;
            }
            StmtKind::Assign { targets, value } => {
                let v = self.eval(value, scope)?;
                for t in targets {
                    self.assign(t, v.clone(), scope)?;
                }
            }
            StmtKind::AugAssign { target, op, value } => {
                let current = match target {
                    Target::Name(n) => self.lookup(n, scope)?,
                    Target::Subscript(obj, idx) => {
                        let o = self.eval(obj, scope)?;
                        let i = self.eval(idx, scope)?;
                        self.subscript(&o, &i)?
                    }
                    Target::Tuple(_) => unreachable!("rejected by the parser"),
                };
                let rhs = self.eval(value, scope)?;
                let updated = match (*op, &current) {
                    // list += iterable extends in place
                    (BinOp::Add, Value::List(l)) => {
                        let items = self.iterate(&rhs)?;
                        self.alloc(items.len())?;
                        l.borrow_mut().extend(items);
                        current.clone()
                    }
                    _ => self.binary(*op, &current, &rhs)?,
                };
                self.assign(target, updated, scope)?;
            }
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e, scope)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::If { cond, body, orelse } => {
                let branch = if self.eval(cond, scope)?.truthy() { body } else { orelse };
                return self.exec_block(branch, scope);
            }
            StmtKind::For { target, iter, body } => {
                let items = self.eval(iter, scope)?;
                let items = self.iterate(&items)?;
                for item in items {
                    self.line = stmt.line;
                    self.tick(1)?;
                    self.assign(target, item, scope)?;
                    match self.exec_block(body, scope)? {
                        Flow::Break => break,
                        Flow::Normal | Flow::Continue => {}
                        ret @ Flow::Return(_) => return Ok(ret),
                    }
                }
            }
            StmtKind::While { cond, body } => loop {
                self.line = stmt.line;
                self.tick(1)?;
                if !self.eval(cond, scope)?.truthy() {
                    break;
                }
                match self.exec_block(body, scope)? {
                    Flow::Break => break,
                    Flow::Normal | Flow::Continue => {}
                    ret @ Flow::Return(_) => return Ok(ret),
                }
            },
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Pass => {}
        }
        Ok(Flow::Normal)
    }

    fn assign(&mut self, target: &Target, value: Value, scope: &mut Scope) -> R<()> {
        match target {
            Target::Name(n) => {
                scope.insert(n.clone(), value);
                Ok(())
            }
            Target::Subscript(obj, idx) => {
                let o = self.eval(obj, scope)?;
                let i = self.eval(idx, scope)?;
                self.set_item(&o, &i, value)
            }
            Target::Tuple(targets) => {
                let items = self.iterate(&value)?;
                if items.len() != targets.len() {
                    return Err(if items.len() > targets.len() {
                        self.value_err(format!("too many values to unpack (expected {})", targets.len()))
                    } else {
                        self.value_err(format!(
                            "not enough values to unpack (expected {}, got {})",
                            targets.len(),
                            items.len()
                        ))
                    });
                }
                for (t, v) in targets.iter().zip(items) {
                    self.assign(t, v, scope)?;
                }
                Ok(())
            }
        }
    }

    fn set_item(&mut self, obj: &Value, index: &Value, value: Value) -> R<()> {
        match obj {
            Value::List(l) => {
                let len = l.borrow().len();
                let i = self.seq_index(index, len, "list assignment")?;
                l.borrow_mut()[i] = value;
                Ok(())
            }
            Value::Dict(d) => {
                let key =
                    index.key().ok_or_else(|| self.type_err(format!("unhashable type: '{}'", index.type_name())))?;
                d.borrow_mut().entries.insert(key, (index.clone(), value));
                Ok(())
            }
            other => Err(self.type_err(format!("'{}' object does not support item assignment", other.type_name()))),
        }
    }

    pub(super) fn lookup(&self, name: &str, scope: &Scope) -> R<Value> {
        if let Some(v) = scope.get(name) {
            return Ok(v.clone());
        }
        if let Some(v) = self.global(name) {
            return Ok(v);
        }
        Err(self.err(ErrorLabel::NameError, format!("name '{name}' is not defined")))
    }

    pub(super) fn eval(&mut self, e: &Expr, scope: &mut Scope) -> R<Value> {
        self.eval_depth += 1;
        let result = if self.eval_depth > MAX_EVAL_DEPTH {
            Err(self.err(ErrorLabel::Other, "RecursionError: maximum recursion depth exceeded"))
        } else {
            self.eval_inner(e, scope)
        };
        self.eval_depth -= 1;
        result
    }

    fn eval_inner(&mut self, e: &Expr, scope: &mut Scope) -> R<Value> {
        self.tick(1)?;
        match &e.kind {
            ExprKind::Const(c) => Ok(match c {
                Const::None => Value::None,
                Const::Bool(b) => Value::Bool(*b),
                Const::Int(i) => Value::Int(*i),
                Const::Float(f) => Value::Float(*f),
                Const::Str(s) => Value::str(s),
            }),
            ExprKind::Name(n) => self.lookup(n, scope),
            ExprKind::FString(parts) => {
                let mut out = String::new();
                for part in parts {
                    match part {
                        FPart::Lit(s) => out.push_str(s),
                        FPart::Expr { expr, conversion, spec } => {
                            let v = self.eval(expr, scope)?;
                            let v = match conversion {
                                Some('r') | Some('a') => Value::str(&to_repr(&v)),
                                Some(_) => Value::str(&to_str(&v)),
                                None => v,
                            };
                            let rendered = self.format_value(&v, spec)?;
                            self.alloc_str(out.len() + rendered.len())?;
                            out.push_str(&rendered);
                        }
                    }
                }
                Ok(Value::str(&out))
            }
            ExprKind::List(items) => {
                let vals = self.eval_all(items, scope)?;
                self.alloc(vals.len())?;
                Ok(Value::list(vals))
            }
            ExprKind::Tuple(items) => {
                let vals = self.eval_all(items, scope)?;
                self.alloc(vals.len())?;
                Ok(Value::tuple(vals))
            }
            ExprKind::Dict(pairs) => {
                let mut dict = Dict { entries: Default::default() };
                for (k, v) in pairs {
                    let k = self.eval(k, scope)?;
                    let v = self.eval(v, scope)?;
                    let key = k.key().ok_or_else(|| self.type_err(format!("unhashable type: '{}'", k.type_name())))?;
                    dict.entries.insert(key, (k, v));
                }
                self.alloc(dict.entries.len())?;
                Ok(Value::Dict(Rc::new(dict.into())))
            }
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner, scope)?;
                self.unary(*op, &v)
            }
            ExprKind::Binary(l, op, r) => {
                let a = self.eval(l, scope)?;
                let b = self.eval(r, scope)?;
                self.binary(*op, &a, &b)
            }
            ExprKind::Bool(op, items) => {
                let mut last = Value::None;
                for item in items {
                    last = self.eval(item, scope)?;
                    let stop = match op {
                        BoolOp::And => !last.truthy(),
                        BoolOp::Or => last.truthy(),
                    };
                    if stop {
                        break;
                    }
                }
                Ok(last)
            }
            ExprKind::Compare(first, rest) => {
                let mut left = self.eval(first, scope)?;
                for (op, right) in rest {
                    let right = self.eval(right, scope)?;
                    if !self.compare(*op, &left, &right)? {
                        return Ok(Value::Bool(false));
                    }
                    left = right;
                }
                Ok(Value::Bool(true))
            }
            ExprKind::IfExp { cond, body, orelse } => {
                if self.eval(cond, scope)?.truthy() {
                    self.eval(body, scope)
                } else {
                    self.eval(orelse, scope)
                }
            }
            ExprKind::Lambda { params, body } => {
                self.alloc(scope.len())?;
                Ok(Value::Lambda(Rc::new(Lambda {
                    params: params.clone(),
                    body: Rc::new((**body).clone()),
                    captured: scope.clone(),
                })))
            }
            ExprKind::Call { func, args, kwargs } => {
                let f = self.eval(func, scope)?;
                let args = self.eval_all(args, scope)?;
                let mut kw = Vec::with_capacity(kwargs.len());
                for (k, v) in kwargs {
                    kw.push((k.clone(), self.eval(v, scope)?));
                }
                self.line = e.line;
                self.call_value(&f, args, kw)
            }
            ExprKind::Attribute(obj, name) => {
                let o = self.eval(obj, scope)?;
                self.get_attr(&o, name)
            }
            ExprKind::Subscript(obj, index) => {
                let o = self.eval(obj, scope)?;
                if let ExprKind::Slice { lower, upper, step } = &index.kind {
                    let mut bound = |b: &Option<Box<Expr>>, this: &mut Self| -> R<Option<Value>> {
                        match b {
                            Some(x) => Ok(Some(this.eval(x, scope)?)),
                            None => Ok(None),
                        }
                    };
                    let lo = bound(lower, self)?;
                    let hi = bound(upper, self)?;
                    let st = bound(step, self)?;
                    return self.slice(&o, lo, hi, st);
                }
                let i = self.eval(index, scope)?;
                self.subscript(&o, &i)
            }
            ExprKind::Slice { .. } => Err(self.type_err("slices are only valid inside subscripts")),
            ExprKind::ListComp { elt, generators } | ExprKind::GeneratorExp { elt, generators } => {
                let mut out = Vec::new();
                let mut inner = scope.clone();
                self.comprehension(generators, 0, &mut inner, &mut |this, s| {
                    let v = this.eval(elt, s)?;
                    this.alloc(1)?;
                    out.push(v);
                    Ok(())
                })?;
                Ok(Value::list(out))
            }
            ExprKind::DictComp { key, value, generators } => {
                let mut dict = Dict { entries: Default::default() };
                let mut inner = scope.clone();
                self.comprehension(generators, 0, &mut inner, &mut |this, s| {
                    let k = this.eval(key, s)?;
                    let v = this.eval(value, s)?;
                    let hk = k.key().ok_or_else(|| this.type_err(format!("unhashable type: '{}'", k.type_name())))?;
                    this.alloc(1)?;
                    dict.entries.insert(hk, (k, v));
                    Ok(())
                })?;
                Ok(Value::Dict(Rc::new(dict.into())))
            }
        }
    }

    fn eval_all(&mut self, items: &[Expr], scope: &mut Scope) -> R<Vec<Value>> {
        items.iter().map(|x| self.eval(x, scope)).collect()
    }

    fn comprehension(
        &mut self,
        gens: &[Comprehension],
        level: usize,
        scope: &mut Scope,
        emit: &mut dyn FnMut(&mut Self, &mut Scope) -> R<()>,
    ) -> R<()> {
        let Some(g) = gens.get(level) else {
            return emit(self, scope);
        };
        let iterable = self.eval(&g.iter, scope)?;
        'items: for item in self.iterate(&iterable)? {
            self.tick(1)?;
            self.assign(&g.target, item, scope)?;
            for cond in &g.ifs {
                if !self.eval(cond, scope)?.truthy() {
                    continue 'items;
                }
            }
            self.comprehension(gens, level + 1, scope, emit)?;
        }
        Ok(())
    }

    pub(super) fn call_lambda(&mut self, lambda: &Lambda, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        if !kwargs.is_empty() {
            return Err(self.type_err("<lambda>() got an unexpected keyword argument"));
        }
        if args.len() != lambda.params.len() {
            return Err(self.type_err(format!(
                "<lambda>() takes {} positional arguments but {} were given",
                lambda.params.len(),
                args.len()
            )));
        }
        if self.call_depth >= MAX_CALL_DEPTH {
            return Err(self.err(ErrorLabel::Other, "RecursionError: maximum recursion depth exceeded"));
        }
        self.alloc(lambda.captured.len())?;
        let mut scope = lambda.captured.clone();
        for (p, a) in lambda.params.iter().zip(args) {
            scope.insert(p.clone(), a);
        }
        self.call_depth += 1;
        let result = self.eval(&lambda.body, &mut scope);
        self.call_depth -= 1;
        result
    }

    /// Materializes an iterable.
    pub(super) fn iterate(&mut self, v: &Value) -> R<Vec<Value>> {
        let items = match v {
            Value::List(l) => l.borrow().clone(),
            Value::Tuple(t) => t.to_vec(),
            Value::Str(s) => s.chars().map(|c| Value::str(c.encode_utf8(&mut [0; 4]))).collect(),
            Value::Dict(d) => d.borrow().entries.values().map(|(k, _)| k.clone()).collect(),
            other => return Err(self.type_err(format!("'{}' object is not iterable", other.type_name()))),
        };
        self.alloc(items.len())?;
        Ok(items)
    }

    pub(super) fn unary(&mut self, op: UnOp, v: &Value) -> R<Value> {
        match op {
            UnOp::Not => Ok(Value::Bool(!v.truthy())),
            UnOp::Pos => match v {
                Value::Float(f) => Ok(Value::Float(*f)),
                v => v
                    .as_int()
                    .map(Value::Int)
                    .ok_or_else(|| self.type_err(format!("bad operand type for unary +: '{}'", v.type_name()))),
            },
            UnOp::Neg => match v {
                Value::Float(f) => Ok(Value::Float(-f)),
                v => match v.as_int() {
                    Some(i) => i.checked_neg().map(Value::Int).ok_or_else(|| self.overflow()),
                    None => Err(self.type_err(format!("bad operand type for unary -: '{}'", v.type_name()))),
                },
            },
        }
    }

    pub(super) fn binary(&mut self, op: BinOp, a: &Value, b: &Value) -> R<Value> {
        if a.is_number() && b.is_number() {
            return self.arith(op, a, b);
        }
        match (op, a, b) {
            (BinOp::Add, Value::Str(x), Value::Str(y)) => {
                self.alloc_str(x.len() + y.len())?;
                let mut s = String::with_capacity(x.len() + y.len());
                s.push_str(x);
                s.push_str(y);
                Ok(Value::str(&s))
            }
            (BinOp::Mul, Value::Str(s), n) | (BinOp::Mul, n, Value::Str(s)) if n.as_int().is_some() => {
                let times = n.as_int().expect("checked").max(0) as usize;
                let total = s.len().checked_mul(times).ok_or_else(|| self.overflow())?;
                self.alloc_str(total)?;
                Ok(Value::str(&s.repeat(times)))
            }
            (BinOp::Add, Value::List(x), Value::List(y)) => {
                let mut items = x.borrow().clone();
                items.extend(y.borrow().iter().cloned());
                self.alloc(items.len())?;
                Ok(Value::list(items))
            }
            (BinOp::Add, Value::Tuple(x), Value::Tuple(y)) => {
                let mut items = x.to_vec();
                items.extend(y.iter().cloned());
                self.alloc(items.len())?;
                Ok(Value::tuple(items))
            }
            (BinOp::Mul, Value::List(_) | Value::Tuple(_), n) | (BinOp::Mul, n, Value::List(_) | Value::Tuple(_))
                if n.as_int().is_some() =>
            {
                let (seq, n) =
                    if n.as_int().is_some() && !matches!(a, Value::Bool(_) | Value::Int(_)) { (a, n) } else { (b, a) };
                let times = n.as_int().expect("checked").max(0) as usize;
                let items = match seq {
                    Value::List(l) => l.borrow().clone(),
                    Value::Tuple(t) => t.to_vec(),
                    _ => unreachable!("matched above"),
                };
                let total = items.len().checked_mul(times).ok_or_else(|| self.overflow())?;
                self.alloc(total)?;
                let mut out = Vec::with_capacity(total);
                for _ in 0..times {
                    out.extend(items.iter().cloned());
                }
                Ok(if matches!(seq, Value::List(_)) { Value::list(out) } else { Value::tuple(out) })
            }
            _ => Err(self.type_err(format!(
                "unsupported operand type(s) for {}: '{}' and '{}'",
                op.symbol(),
                a.type_name(),
                b.type_name()
            ))),
        }
    }

    fn arith(&mut self, op: BinOp, a: &Value, b: &Value) -> R<Value> {
        if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
            let r = match op {
                BinOp::Add => x.checked_add(y),
                BinOp::Sub => x.checked_sub(y),
                BinOp::Mul => x.checked_mul(y),
                BinOp::Div => {
                    if y == 0 {
                        return Err(self.err(ErrorLabel::ZeroDivisionError, "division by zero"));
                    }
                    return Ok(Value::Float(x as f64 / y as f64));
                }
                BinOp::FloorDiv | BinOp::Mod => {
                    if y == 0 {
                        return Err(self.err(ErrorLabel::ZeroDivisionError, "integer division or modulo by zero"));
                    }
                    let (q, r) = (x.checked_div(y), x.checked_rem(y));
                    let (Some(mut q), Some(mut r)) = (q, r) else { return Err(self.overflow()) };
                    if r != 0 && ((r < 0) != (y < 0)) {
                        q -= 1;
                        r += y;
                    }
                    Some(if op == BinOp::FloorDiv { q } else { r })
                }
                BinOp::Pow => {
                    if y < 0 {
                        if x == 0 {
                            return Err(
                                self.err(ErrorLabel::ZeroDivisionError, "0.0 cannot be raised to a negative power")
                            );
                        }
                        return Ok(Value::Float((x as f64).powf(y as f64)));
                    }
                    u32::try_from(y).ok().and_then(|e| x.checked_pow(e))
                }
            };
            return r.map(Value::Int).ok_or_else(|| self.overflow());
        }
        let (x, y) = (a.as_f64().expect("number"), b.as_f64().expect("number"));
        let r = match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => {
                if y == 0.0 {
                    return Err(self.err(ErrorLabel::ZeroDivisionError, "float division by zero"));
                }
                x / y
            }
            BinOp::FloorDiv => {
                if y == 0.0 {
                    return Err(self.err(ErrorLabel::ZeroDivisionError, "float floor division by zero"));
                }
                (x / y).floor()
            }
            BinOp::Mod => {
                if y == 0.0 {
                    return Err(self.err(ErrorLabel::ZeroDivisionError, "float modulo"));
                }
                let r = x % y;
                if r != 0.0 && ((r < 0.0) != (y < 0.0)) {
                    r + y
                } else {
                    r
                }
            }
            BinOp::Pow => {
                if x == 0.0 && y < 0.0 {
                    return Err(self.err(ErrorLabel::ZeroDivisionError, "0.0 cannot be raised to a negative power"));
                }
                if x < 0.0 && y.fract() != 0.0 {
                    return Err(self.value_err("math domain error"));
                }
                let r = x.powf(y);
                if r.is_infinite() && x.is_finite() && y.is_finite() {
                    return Err(self.err(ErrorLabel::Other, "OverflowError: numerical result out of range"));
                }
                r
            }
        };
        Ok(Value::Float(r))
    }

    pub(super) fn equal(&self, a: &Value, b: &Value) -> R<bool> {
        values_equal(a, b, 0)
            .map_err(|_| self.err(ErrorLabel::Other, "RecursionError: maximum recursion depth exceeded in comparison"))
    }

    pub(super) fn order(&self, a: &Value, b: &Value, symbol: &str) -> R<Option<std::cmp::Ordering>> {
        compare_values(a, b, 0).map_err(|e| match e {
            CompareError::Unorderable => self.type_err(format!(
                "'{symbol}' not supported between instances of '{}' and '{}'",
                a.type_name(),
                b.type_name()
            )),
            CompareError::TooDeep => {
                self.err(ErrorLabel::Other, "RecursionError: maximum recursion depth exceeded in comparison")
            }
        })
    }

    fn compare(&mut self, op: CmpOp, a: &Value, b: &Value) -> R<bool> {
        use std::cmp::Ordering::*;
        Ok(match op {
            CmpOp::Eq => self.equal(a, b)?,
            CmpOp::NotEq => !self.equal(a, b)?,
            CmpOp::Lt => self.order(a, b, "<")? == Some(Less),
            CmpOp::LtE => matches!(self.order(a, b, "<=")?, Some(Less | Equal)),
            CmpOp::Gt => self.order(a, b, ">")? == Some(Greater),
            CmpOp::GtE => matches!(self.order(a, b, ">=")?, Some(Greater | Equal)),
            CmpOp::In => self.contains(b, a)?,
            CmpOp::NotIn => !self.contains(b, a)?,
            CmpOp::Is => identical(a, b),
            CmpOp::IsNot => !identical(a, b),
        })
    }

    pub(super) fn contains(&mut self, container: &Value, item: &Value) -> R<bool> {
        match container {
            Value::Str(s) => {
                match item {
                    Value::Str(sub) => Ok(s.contains(&**sub)),
                    other => Err(self
                        .type_err(format!("'in <string>' requires string as left operand, not {}", other.type_name()))),
                }
            }
            Value::List(l) => {
                let items = l.borrow().clone();
                self.tick(items.len() as u64)?;
                for x in &items {
                    if self.equal(x, item)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Value::Tuple(t) => {
                self.tick(t.len() as u64)?;
                for x in t.iter() {
                    if self.equal(x, item)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Value::Dict(d) => {
                let key =
                    item.key().ok_or_else(|| self.type_err(format!("unhashable type: '{}'", item.type_name())))?;
                Ok(d.borrow().entries.contains_key(&key))
            }
            other => Err(self.type_err(format!("argument of type '{}' is not iterable", other.type_name()))),
        }
    }

    /// Resolves a possibly negative index against a sequence length.
    pub(super) fn seq_index(&self, index: &Value, len: usize, what: &str) -> R<usize> {
        let Some(i) = index.as_int() else {
            return Err(self.type_err(format!(
                "{} indices must be integers or slices, not {}",
                what.split(' ').next().unwrap_or(what),
                index.type_name()
            )));
        };
        let len = len as i64;
        let j = if i < 0 { i + len } else { i };
        if j < 0 || j >= len {
            return Err(self.err(ErrorLabel::IndexError, format!("{what} index out of range")));
        }
        Ok(j as usize)
    }

    pub(super) fn subscript(&mut self, obj: &Value, index: &Value) -> R<Value> {
        match obj {
            Value::List(l) => {
                let l = l.borrow();
                let i = self.seq_index(index, l.len(), "list")?;
                Ok(l[i].clone())
            }
            Value::Tuple(t) => {
                let i = self.seq_index(index, t.len(), "tuple")?;
                Ok(t[i].clone())
            }
            Value::Str(s) => {
                let chars: Vec<char> = s.chars().collect();
                let i = self.seq_index(index, chars.len(), "string")?;
                Ok(Value::str(chars[i].encode_utf8(&mut [0; 4])))
            }
            Value::Dict(d) => {
                let key =
                    index.key().ok_or_else(|| self.type_err(format!("unhashable type: '{}'", index.type_name())))?;
                d.borrow()
                    .entries
                    .get(&key)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| self.err(ErrorLabel::KeyError, to_repr(index)))
            }
            other => Err(self.type_err(format!("'{}' object is not subscriptable", other.type_name()))),
        }
    }

    fn slice(&mut self, obj: &Value, lo: Option<Value>, hi: Option<Value>, step: Option<Value>) -> R<Value> {
        let as_opt_int = |this: &Self, v: Option<Value>| -> R<Option<i64>> {
            match v {
                None | Some(Value::None) => Ok(None),
                Some(v) => v
                    .as_int()
                    .map(Some)
                    .ok_or_else(|| this.type_err("slice indices must be integers or None or have an __index__ method")),
            }
        };
        let (lo, hi, step) = (as_opt_int(self, lo)?, as_opt_int(self, hi)?, as_opt_int(self, step)?);
        let step = step.unwrap_or(1);
        if step == 0 {
            return Err(self.value_err("slice step cannot be zero"));
        }
        let pick = |len: usize| -> Vec<usize> { slice_indices(len, lo, hi, step) };
        match obj {
            Value::List(l) => {
                let l = l.borrow();
                let out: Vec<Value> = pick(l.len()).into_iter().map(|i| l[i].clone()).collect();
                drop(l);
                self.alloc(out.len())?;
                Ok(Value::list(out))
            }
            Value::Tuple(t) => {
                let out: Vec<Value> = pick(t.len()).into_iter().map(|i| t[i].clone()).collect();
                self.alloc(out.len())?;
                Ok(Value::tuple(out))
            }
            Value::Str(s) => {
                let chars: Vec<char> = s.chars().collect();
                let out: String = pick(chars.len()).into_iter().map(|i| chars[i]).collect();
                self.alloc_str(out.len())?;
                Ok(Value::str(&out))
            }
            other => Err(self.type_err(format!("'{}' object is not subscriptable", other.type_name()))),
        }
    }

    pub(super) fn call_value(&mut self, f: &Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        self.tick(1)?;
        match f {
            Value::Builtin(name) => self.call_builtin(name, args, kwargs),
            Value::PatchClass => self.construct_patch(args, kwargs),
            Value::Method(recv, name) => self.call_method(recv, name, args, kwargs),
            Value::Lambda(l) => {
                let l = l.clone();
                self.call_lambda(&l, args, kwargs)
            }
            other => Err(self.type_err(format!("'{}' object is not callable", other.type_name()))),
        }
    }

    pub(super) fn get_attr(&mut self, obj: &Value, name: &str) -> R<Value> {
        if let Value::Patch(p) = obj {
            if let Some(v) = patch_attribute(p, name) {
                return Ok(v);
            }
        }
        match self.method_name(obj, name) {
            Some(m) => Ok(Value::Method(Box::new(obj.clone()), m)),
            None => {
                Err(self
                    .err(ErrorLabel::AttributeError, format!("'{}' object has no attribute '{name}'", obj.type_name())))
            }
        }
    }
}

fn identical(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::None, Value::None) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Float(x), Value::Float(y)) => x.to_bits() == y.to_bits(),
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::List(x), Value::List(y)) => Rc::ptr_eq(x, y),
        (Value::Tuple(x), Value::Tuple(y)) => Rc::ptr_eq(x, y),
        (Value::Dict(x), Value::Dict(y)) => Rc::ptr_eq(x, y),
        (Value::Patch(x), Value::Patch(y)) => Rc::ptr_eq(x, y),
        (Value::Lambda(x), Value::Lambda(y)) => Rc::ptr_eq(x, y),
        (Value::Builtin(x), Value::Builtin(y)) => x == y,
        (Value::PatchClass, Value::PatchClass) => true,
        _ => false,
    }
}

/// Python slice index selection.
pub fn slice_indices(len: usize, lo: Option<i64>, hi: Option<i64>, step: i64) -> Vec<usize> {
    let len = len as i64;
    let clamp = |v: i64, low: i64, high: i64| v.max(low).min(high);
    let norm = |v: i64| if v < 0 { v.saturating_add(len) } else { v };
    let mut out = Vec::new();
    if step > 0 {
        let start = lo.map_or(0, |v| clamp(norm(v), 0, len));
        let stop = hi.map_or(len, |v| clamp(norm(v), 0, len));
        let mut i = start;
        while i < stop {
            out.push(i as usize);
            i = match i.checked_add(step) {
                Some(n) => n,
                None => break,
            };
        }
    } else {
        let start = lo.map_or(len - 1, |v| clamp(norm(v), -1, len - 1));
        let stop = hi.map_or(-1, |v| clamp(norm(v), -1, len - 1));
        let mut i = start;
        while i > stop {
            out.push(i as usize);
            i = match i.checked_add(step) {
                Some(n) => n,
                None => break,
            };
        }
    }
    out
}

fn coord(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        Value::Int(x as i64)
    } else {
        Value::Float(x)
    }
}

fn patch_attribute(p: &Rc<Patch>, name: &str) -> Option<Value> {
    let b = p.bbox;
    Some(match name {
        "left" => coord(b.left),
        "lower" => coord(b.lower),
        "right" => coord(b.right),
        "upper" => coord(b.upper),
        "width" => coord(b.width()),
        "height" => coord(b.height()),
        "horizontal_center" => Value::Float(b.center().0),
        "vertical_center" => Value::Float(b.center().1),
        _ => return None,
    })
}
