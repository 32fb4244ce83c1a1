//! Runtime values of the interpreter.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::rc::Rc;

use indexmap::IndexMap;

use super::ast::Expr;
use crate::backends::BBox;

/// An image region handed to programs. Children always lie inside their
/// parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image_ref: Rc<str>,
    pub bbox: BBox,
    pub parent: Option<Rc<Patch>>,
}

impl Patch {
    pub fn root(image_ref: &str, width: f64, height: f64) -> Patch {
        Patch { image_ref: Rc::from(image_ref), bbox: BBox::new(0.0, 0.0, width, height), parent: None }
    }

    /// Child patch over `bbox` clipped to this patch; `None` when the
    /// intersection is empty.
    pub fn child(self: &Rc<Self>, bbox: BBox) -> Option<Patch> {
        let clipped = self.bbox.intersection(&bbox);
        if !clipped.has_positive_area() {
            return None;
        }
        Some(Patch { image_ref: self.image_ref.clone(), bbox: clipped, parent: Some(self.clone()) })
    }
}

#[derive(Debug, Clone)]
pub struct Lambda {
    pub params: Vec<String>,
    pub body: Rc<Expr>,
    pub captured: HashMap<String, Value>,
}

/// Hashable projection of a value used as a dict key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Key {
    None,
    Int(i64),
    /// Bit pattern of a non-integral float.
    Float(u64),
    Str(Rc<str>),
    Tuple(Vec<Key>),
}

#[derive(Debug, Clone)]
pub struct Dict {
    pub entries: IndexMap<Key, (Value, Value)>,
}

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Rc<str>),
    List(Rc<RefCell<Vec<Value>>>),
    Tuple(Rc<Vec<Value>>),
    Dict(Rc<RefCell<Dict>>),
    Patch(Rc<Patch>),
    /// Builtin or API function looked up by name.
    Builtin(&'static str),
    /// The `ImagePatch` constructor.
    PatchClass,
    Method(Box<Value>, &'static str),
    Lambda(Rc<Lambda>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Rc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    pub fn tuple(items: Vec<Value>) -> Value {
        Value::Tuple(Rc::new(items))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
            Value::Dict(_) => "dict",
            Value::Patch(_) => "ImagePatch",
            Value::Builtin(_) => "builtin_function_or_method",
            Value::PatchClass => "type",
            Value::Method(..) => "method",
            Value::Lambda(_) => "function",
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Float(f) => *f != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::List(l) => !l.borrow().is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            Value::Dict(d) => !d.borrow().entries.is_empty(),
            _ => true,
        }
    }

    /// Numeric view: bools and ints as integers.
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Bool(b) => Some(i64::from(*b)),
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(f) => Some(*f),
            other => other.as_int().map(|i| i as f64),
        }
    }

    pub fn is_number(&self) -> bool {
        matches!(self, Value::Bool(_) | Value::Int(_) | Value::Float(_))
    }

    pub fn key(&self) -> Option<Key> {
        Some(match self {
            Value::None => Key::None,
            Value::Bool(b) => Key::Int(i64::from(*b)),
            Value::Int(i) => Key::Int(*i),
            Value::Float(f) => {
                if f.fract() == 0.0 && f.abs() < 9.2e18 {
                    Key::Int(*f as i64)
                } else {
                    Key::Float(f.to_bits())
                }
            }
            Value::Str(s) => Key::Str(s.clone()),
            Value::Tuple(t) => Key::Tuple(t.iter().map(Value::key).collect::<Option<_>>()?),
            _ => return None,
        })
    }
}

/// Recursion bound for structural equality, ordering and rendering.
pub const MAX_STRUCT_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TooDeep;

pub fn values_equal(a: &Value, b: &Value, depth: usize) -> Result<bool, TooDeep> {
    if depth > MAX_STRUCT_DEPTH {
        return Err(TooDeep);
    }
    Ok(match (a, b) {
        (Value::None, Value::None) => true,
        (Value::Str(x), Value::Str(y)) => x == y,
        (x, y) if x.is_number() && y.is_number() => match (x.as_int(), y.as_int()) {
            (Some(i), Some(j)) => i == j,
            _ => x.as_f64() == y.as_f64(),
        },
        (Value::List(x), Value::List(y)) => {
            if Rc::ptr_eq(x, y) {
                return Ok(true);
            }
            seq_equal(&x.borrow(), &y.borrow(), depth)?
        }
        (Value::Tuple(x), Value::Tuple(y)) => seq_equal(x, y, depth)?,
        (Value::Dict(x), Value::Dict(y)) => {
            if Rc::ptr_eq(x, y) {
                return Ok(true);
            }
            let (x, y) = (x.borrow(), y.borrow());
            if x.entries.len() != y.entries.len() {
                return Ok(false);
            }
            for (k, (_, v)) in &x.entries {
                match y.entries.get(k) {
                    Some((_, w)) if values_equal(v, w, depth + 1)? => {}
                    _ => return Ok(false),
                }
            }
            true
        }
        (Value::Patch(x), Value::Patch(y)) => Rc::ptr_eq(x, y) || (x.image_ref == y.image_ref && x.bbox == y.bbox),
        (Value::Builtin(x), Value::Builtin(y)) => x == y,
        (Value::PatchClass, Value::PatchClass) => true,
        (Value::Lambda(x), Value::Lambda(y)) => Rc::ptr_eq(x, y),
        _ => false,
    })
}

fn seq_equal(x: &[Value], y: &[Value], depth: usize) -> Result<bool, TooDeep> {
    if x.len() != y.len() {
        return Ok(false);
    }
    for (a, b) in x.iter().zip(y) {
        if !values_equal(a, b, depth + 1)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareError {
    /// Operands have no ordering between them.
    Unorderable,
    TooDeep,
}

/// Python ordering. `Ok(None)` means unordered floats (NaN).
pub fn compare_values(a: &Value, b: &Value, depth: usize) -> Result<Option<Ordering>, CompareError> {
    if depth > MAX_STRUCT_DEPTH {
        return Err(CompareError::TooDeep);
    }
    match (a, b) {
        (x, y) if x.is_number() && y.is_number() => Ok(match (x.as_int(), y.as_int()) {
            (Some(i), Some(j)) => Some(i.cmp(&j)),
            _ => x.as_f64().expect("number").partial_cmp(&y.as_f64().expect("number")),
        }),
        (Value::Str(x), Value::Str(y)) => Ok(Some(x.cmp(y))),
        (Value::List(x), Value::List(y)) => seq_compare(&x.borrow().clone(), &y.borrow().clone(), depth),
        (Value::Tuple(x), Value::Tuple(y)) => seq_compare(x, y, depth),
        _ => Err(CompareError::Unorderable),
    }
}

fn seq_compare(x: &[Value], y: &[Value], depth: usize) -> Result<Option<Ordering>, CompareError> {
    for (a, b) in x.iter().zip(y) {
        if !values_equal(a, b, depth + 1).map_err(|_| CompareError::TooDeep)? {
            return compare_values(a, b, depth + 1);
        }
    }
    Ok(Some(x.len().cmp(&y.len())))
}

/// Python `repr` of a float: shortest round-trip digits, exponent form
/// outside `1e-4 <= |x| < 1e16`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent digits");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if !(-4..16).contains(&exp) {
        let mut m = digits[..1].to_string();
        if digits.len() > 1 {
            m.push('.');
            m.push_str(&digits[1..]);
        }
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{m}e{esign}{:02}", exp.abs());
    }
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}

pub fn repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => out.push_str(&format!("\\x{:02x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

fn format_coord(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format_float(x)
    }
}

/// Python `str`.
pub fn to_str(v: &Value) -> String {
    match v {
        Value::Str(s) => s.to_string(),
        other => to_repr(other),
    }
}

/// Python `repr`.
pub fn to_repr(v: &Value) -> String {
    let mut out = String::new();
    repr_into(v, &mut out, &mut Vec::new());
    out
}

/// Renderings longer than this are cut short (shared sub-lists can make
/// the full text exponentially long).
pub const MAX_REPR_LEN: usize = 1 << 20;

fn repr_into(v: &Value, out: &mut String, open: &mut Vec<*const ()>) {
    if out.len() > MAX_REPR_LEN {
        return;
    }
    let ptr = match v {
        Value::List(l) => Some(Rc::as_ptr(l) as *const ()),
        Value::Dict(d) => Some(Rc::as_ptr(d) as *const ()),
        _ => None,
    };
    if let Some(p) = ptr {
        if open.contains(&p) || open.len() > MAX_STRUCT_DEPTH {
            out.push_str(if matches!(v, Value::List(_)) { "[...]" } else { "{...}" });
            return;
        }
        open.push(p);
    }
    repr_value(v, out, open);
    if ptr.is_some() {
        open.pop();
    }
}

fn repr_value(v: &Value, out: &mut String, open: &mut Vec<*const ()>) {
    match v {
        Value::None => out.push_str("None"),
        Value::Bool(true) => out.push_str("True"),
        Value::Bool(false) => out.push_str("False"),
        Value::Int(i) => out.push_str(&i.to_string()),
        Value::Float(f) => out.push_str(&format_float(*f)),
        Value::Str(s) => out.push_str(&repr_str(s)),
        Value::List(l) => {
            out.push('[');
            seq_into(&l.borrow(), out, open);
            out.push(']');
        }
        Value::Tuple(t) => {
            out.push('(');
            seq_into(t, out, open);
            if t.len() == 1 {
                out.push(',');
            }
            out.push(')');
        }
        Value::Dict(d) => {
            out.push('{');
            for (i, (k, v)) in d.borrow().entries.values().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                repr_into(k, out, open);
                out.push_str(": ");
                repr_into(v, out, open);
            }
            out.push('}');
        }
        Value::Patch(p) => {
            let b = p.bbox;
            out.push_str(&format!(
                "ImagePatch({}, {}, {}, {})",
                format_coord(b.left),
                format_coord(b.lower),
                format_coord(b.right),
                format_coord(b.upper)
            ));
        }
        Value::Builtin(name) => out.push_str(&format!("<built-in function {name}>")),
        Value::PatchClass => out.push_str("<class 'ImagePatch'>"),
        Value::Method(_, name) => out.push_str(&format!("<bound method {name}>")),
        Value::Lambda(_) => out.push_str("<function <lambda>>"),
    }
}

fn seq_into(items: &[Value], out: &mut String, open: &mut Vec<*const ()>) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        repr_into(item, out, open);
    }
}

/// Renders a program result under the `-> str` contract: strings verbatim,
/// booleans as yes/no, numbers in Python notation, everything else by repr.
pub fn coerce_result(v: &Value) -> String {
    match v {
        Value::Bool(true) => "yes".into(),
        Value::Bool(false) => "no".into(),
        other => to_str(other),
    }
}
