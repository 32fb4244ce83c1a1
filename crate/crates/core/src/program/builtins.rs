//! Builtin functions, string/list/dict methods and format specs.

use std::cmp::Ordering;
use std::rc::Rc;

use super::interp::{Interpreter, R};
use super::value::{format_float, to_repr, to_str, Dict, Value};
use super::ErrorLabel;

pub const BUILTINS: &[&str] = &[
    "len",
    "range",
    "enumerate",
    "sorted",
    "min",
    "max",
    "abs",
    "sum",
    "str",
    "int",
    "float",
    "round",
    "list",
    "any",
    "all",
    "zip",
    "bool",
    "dict",
    "tuple",
    "print",
    "reversed",
];

const STR_METHODS: &[&str] = &[
    "lower",
    "upper",
    "strip",
    "lstrip",
    "rstrip",
    "split",
    "join",
    "replace",
    "startswith",
    "endswith",
    "find",
    "index",
    "count",
    "capitalize",
    "title",
    "isdigit",
    "isalpha",
    "isnumeric",
    "isalnum",
    "islower",
    "isupper",
    "isspace",
    "splitlines",
    "format",
];
const LIST_METHODS: &[&str] =
    &["append", "extend", "insert", "pop", "remove", "index", "count", "sort", "reverse", "copy", "clear"];
const TUPLE_METHODS: &[&str] = &["index", "count"];
const DICT_METHODS: &[&str] = &["get", "keys", "values", "items", "pop", "update", "setdefault", "copy", "clear"];

/// Positional and keyword arguments bound to declared parameter names.
pub(super) type Bound = Vec<Option<Value>>;

impl Interpreter<'_> {
    pub(super) fn global(&self, name: &str) -> Option<Value> {
        if name == "ImagePatch" {
            return Some(Value::PatchClass);
        }
        if let Some(b) = BUILTINS.iter().find(|b| **b == name) {
            return Some(Value::Builtin(b));
        }
        self.variant.functions().iter().find(|f| **f == name).map(|f| Value::Builtin(f))
    }

    pub(super) fn method_name(&self, obj: &Value, name: &str) -> Option<&'static str> {
        let table: &[&'static str] = match obj {
            Value::Str(_) => STR_METHODS,
            Value::List(_) => LIST_METHODS,
            Value::Tuple(_) => TUPLE_METHODS,
            Value::Dict(_) => DICT_METHODS,
            Value::Patch(_) => self.variant.methods(),
            _ => &[],
        };
        table.iter().find(|m| **m == name).copied()
    }

    /// Binds arguments to `names`; the first `required` are mandatory.
    pub(super) fn bind(
        &self,
        fname: &str,
        names: &[&str],
        required: usize,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Bound> {
        if args.len() > names.len() {
            return Err(self.type_err(format!(
                "{fname}() takes at most {} arguments ({} given)",
                names.len(),
                args.len()
            )));
        }
        let mut out: Bound = vec![None; names.len()];
        for (i, a) in args.into_iter().enumerate() {
            out[i] = Some(a);
        }
        for (k, v) in kwargs {
            let Some(i) = names.iter().position(|n| *n == k) else {
                return Err(self.type_err(format!("{fname}() got an unexpected keyword argument '{k}'")));
            };
            if out[i].is_some() {
                return Err(self.type_err(format!("{fname}() got multiple values for argument '{k}'")));
            }
            out[i] = Some(v);
        }
        if let Some(i) = out[..required].iter().position(Option::is_none) {
            return Err(self.type_err(format!("{fname}() missing required argument: '{}'", names[i])));
        }
        Ok(out)
    }

    fn positional_only(&self, fname: &str, kwargs: &[(String, Value)]) -> R<()> {
        match kwargs.first() {
            Some((k, _)) => Err(self.type_err(format!("{fname}() got an unexpected keyword argument '{k}'"))),
            None => Ok(()),
        }
    }

    pub(super) fn expect_str(&self, v: &Value, what: &str) -> R<Rc<str>> {
        match v {
            Value::Str(s) => Ok(s.clone()),
            other => Err(self.type_err(format!("{what} must be str, not {}", other.type_name()))),
        }
    }

    pub(super) fn expect_int(&self, v: &Value, what: &str) -> R<i64> {
        v.as_int().ok_or_else(|| self.type_err(format!("{what} must be an integer, not {}", v.type_name())))
    }

    pub(super) fn expect_f64(&self, v: &Value, what: &str) -> R<f64> {
        v.as_f64().ok_or_else(|| self.type_err(format!("{what} must be a number, not {}", v.type_name())))
    }

    pub(super) fn call_builtin(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        match name {
            "len" => {
                let a = self.bind("len", &["obj"], 1, args, kwargs)?;
                let n = match a[0].as_ref().expect("required") {
                    Value::Str(s) => s.chars().count(),
                    Value::List(l) => l.borrow().len(),
                    Value::Tuple(t) => t.len(),
                    Value::Dict(d) => d.borrow().entries.len(),
                    other => return Err(self.type_err(format!("object of type '{}' has no len()", other.type_name()))),
                };
                Ok(Value::Int(n as i64))
            }
            "range" => {
                self.positional_only("range", &kwargs)?;
                if args.is_empty() || args.len() > 3 {
                    return Err(self.type_err(format!("range expected 1 to 3 arguments, got {}", args.len())));
                }
                let ints: Vec<i64> = args.iter().map(|a| self.expect_int(a, "range() argument")).collect::<R<_>>()?;
                let (start, stop, step) = match ints.as_slice() {
                    [stop] => (0, *stop, 1),
                    [start, stop] => (*start, *stop, 1),
                    [start, stop, step] => (*start, *stop, *step),
                    _ => unreachable!("checked arity"),
                };
                if step == 0 {
                    return Err(self.value_err("range() arg 3 must not be zero"));
                }
                let span = i128::from(stop) - i128::from(start);
                let count = if (step > 0 && span > 0) || (step < 0 && span < 0) {
                    let step = i128::from(step);
                    (span + step - step.signum()) / step
                } else {
                    0
                };
                if count > super::interp::MAX_ALLOC as i128 {
                    return Err(self.err(ErrorLabel::Other, "MemoryError: range too large"));
                }
                self.alloc(count as usize)?;
                let items = (0..count as i64).map(|k| Value::Int(start + k * step)).collect();
                Ok(Value::list(items))
            }
            "enumerate" => {
                let a = self.bind("enumerate", &["iterable", "start"], 1, args, kwargs)?;
                let start = match &a[1] {
                    Some(v) => self.expect_int(v, "enumerate() start")?,
                    None => 0,
                };
                let items = self.iterate(a[0].as_ref().expect("required"))?;
                self.alloc(items.len())?;
                let mut out = Vec::with_capacity(items.len());
                for (i, v) in items.into_iter().enumerate() {
                    let idx = start.checked_add(i as i64).ok_or_else(|| self.overflow())?;
                    out.push(Value::tuple(vec![Value::Int(idx), v]));
                }
                Ok(Value::list(out))
            }
            "sorted" => {
                let a = self.bind("sorted", &["iterable", "key", "reverse"], 1, args, kwargs)?;
                let items = self.iterate(a[0].as_ref().expect("required"))?;
                let reverse = a[2].as_ref().is_some_and(Value::truthy);
                let sorted = self.sort_values(items, a[1].clone(), reverse)?;
                Ok(Value::list(sorted))
            }
            "min" | "max" => self.min_max(name, args, kwargs),
            "abs" => {
                let a = self.bind("abs", &["x"], 1, args, kwargs)?;
                match a[0].as_ref().expect("required") {
                    Value::Float(f) => Ok(Value::Float(f.abs())),
                    v => match v.as_int() {
                        Some(i) => i.checked_abs().map(Value::Int).ok_or_else(|| self.overflow()),
                        None => Err(self.type_err(format!("bad operand type for abs(): '{}'", v.type_name()))),
                    },
                }
            }
            "sum" => {
                let a = self.bind("sum", &["iterable", "start"], 1, args, kwargs)?;
                let mut acc = a[1].clone().unwrap_or(Value::Int(0));
                if matches!(acc, Value::Str(_)) {
                    return Err(self.type_err("sum() can't sum strings [use ''.join(seq) instead]"));
                }
                for v in self.iterate(a[0].as_ref().expect("required"))? {
                    acc = self.binary(super::ast::BinOp::Add, &acc, &v)?;
                }
                Ok(acc)
            }
            "str" => {
                let a = self.bind("str", &["object"], 0, args, kwargs)?;
                let s = a[0].as_ref().map(to_str).unwrap_or_default();
                self.alloc_str(s.len())?;
                Ok(Value::str(&s))
            }
            "int" => {
                let a = self.bind("int", &["x", "base"], 0, args, kwargs)?;
                self.int_of(a[0].as_ref(), a[1].as_ref())
            }
            "float" => {
                let a = self.bind("float", &["x"], 0, args, kwargs)?;
                match a[0].as_ref() {
                    None => Ok(Value::Float(0.0)),
                    Some(Value::Str(s)) => parse_float(s).map(Value::Float).ok_or_else(|| {
                        self.value_err(format!(
                            "could not convert string to float: {}",
                            to_repr(&Value::Str(s.clone()))
                        ))
                    }),
                    Some(v) => v.as_f64().map(Value::Float).ok_or_else(|| {
                        self.type_err(format!(
                            "float() argument must be a string or a real number, not '{}'",
                            v.type_name()
                        ))
                    }),
                }
            }
            "round" => {
                let a = self.bind("round", &["number", "ndigits"], 1, args, kwargs)?;
                self.round(a[0].as_ref().expect("required"), a[1].as_ref())
            }
            "list" | "tuple" => {
                let a = self.bind(name, &["iterable"], 0, args, kwargs)?;
                let items = match &a[0] {
                    Some(v) => self.iterate(v)?,
                    None => Vec::new(),
                };
                Ok(if name == "list" { Value::list(items) } else { Value::tuple(items) })
            }
            "any" | "all" => {
                let a = self.bind(name, &["iterable"], 1, args, kwargs)?;
                let items = self.iterate(a[0].as_ref().expect("required"))?;
                Ok(Value::Bool(if name == "any" {
                    items.iter().any(Value::truthy)
                } else {
                    items.iter().all(Value::truthy)
                }))
            }
            "zip" => {
                self.positional_only("zip", &kwargs)?;
                let seqs: Vec<Vec<Value>> = args.iter().map(|a| self.iterate(a)).collect::<R<_>>()?;
                let n = seqs.iter().map(Vec::len).min().unwrap_or(0);
                self.alloc(n)?;
                let out = (0..n).map(|i| Value::tuple(seqs.iter().map(|s| s[i].clone()).collect())).collect();
                Ok(Value::list(out))
            }
            "bool" => {
                let a = self.bind("bool", &["x"], 0, args, kwargs)?;
                Ok(Value::Bool(a[0].as_ref().is_some_and(Value::truthy)))
            }
            "dict" => {
                if args.len() > 1 {
                    return Err(self.type_err(format!("dict expected at most 1 argument, got {}", args.len())));
                }
                let mut dict = Dict { entries: Default::default() };
                if let Some(src) = args.first() {
                    self.update_dict(&mut dict, src)?;
                }
                for (k, v) in kwargs {
                    let kv = Value::str(&k);
                    dict.entries.insert(kv.key().expect("str is hashable"), (kv, v));
                }
                Ok(Value::Dict(Rc::new(dict.into())))
            }
            "print" => Ok(Value::None),
            "reversed" => {
                let a = self.bind("reversed", &["sequence"], 1, args, kwargs)?;
                let mut items = self.iterate(a[0].as_ref().expect("required"))?;
                items.reverse();
                Ok(Value::list(items))
            }
            _ => self.call_api_function(name, args, kwargs),
        }
    }

    fn update_dict(&mut self, dict: &mut Dict, src: &Value) -> R<()> {
        if let Value::Dict(d) = src {
            let entries: Vec<_> = d.borrow().entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            self.alloc(entries.len())?;
            dict.entries.extend(entries);
            return Ok(());
        }
        for (i, item) in self.iterate(src)?.into_iter().enumerate() {
            let pair = self.iterate(&item)?;
            let [k, v]: [Value; 2] = pair.try_into().map_err(|p: Vec<Value>| {
                self.value_err(format!("dictionary update sequence element #{i} has length {}; 2 is required", p.len()))
            })?;
            let key = k.key().ok_or_else(|| self.type_err(format!("unhashable type: '{}'", k.type_name())))?;
            dict.entries.insert(key, (k, v));
        }
        Ok(())
    }

    fn int_of(&mut self, x: Option<&Value>, base: Option<&Value>) -> R<Value> {
        let Some(x) = x else { return Ok(Value::Int(0)) };
        if let Some(b) = base {
            let b = self.expect_int(b, "int() base")?;
            let Value::Str(s) = x else {
                return Err(self.type_err("int() can't convert non-string with explicit base"));
            };
            if !(2..=36).contains(&b) {
                return Err(self.value_err("int() base must be >= 2 and <= 36, or 0"));
            }
            return parse_int(s, b as u32)
                .map(Value::Int)
                .ok_or_else(|| self.value_err(format!("invalid literal for int() with base {b}: {}", to_repr(x))));
        }
        match x {
            Value::Float(f) => {
                if f.is_nan() {
                    Err(self.value_err("cannot convert float NaN to integer"))
                } else if f.is_infinite() || f.trunc().abs() >= 9.223_372_036_854_776e18 {
                    Err(self.err(ErrorLabel::Other, "OverflowError: cannot convert float to integer"))
                } else {
                    Ok(Value::Int(f.trunc() as i64))
                }
            }
            Value::Str(s) => parse_int(s, 10)
                .map(Value::Int)
                .ok_or_else(|| self.value_err(format!("invalid literal for int() with base 10: {}", to_repr(x)))),
            v => v.as_int().map(Value::Int).ok_or_else(|| {
                self.type_err(format!("int() argument must be a string or a real number, not '{}'", v.type_name()))
            }),
        }
    }

    fn round(&mut self, x: &Value, ndigits: Option<&Value>) -> R<Value> {
        let nd = match ndigits {
            None | Some(Value::None) => None,
            Some(v) => Some(self.expect_int(v, "round() ndigits")?),
        };
        match (x, nd) {
            (Value::Float(f), None) => {
                let r = f.round_ties_even();
                if r.is_nan() {
                    Err(self.value_err("cannot convert float NaN to integer"))
                } else if r.is_infinite() || r.abs() >= 9.223_372_036_854_776e18 {
                    Err(self.err(ErrorLabel::Other, "OverflowError: cannot convert float infinity to integer"))
                } else {
                    Ok(Value::Int(r as i64))
                }
            }
            (Value::Float(f), Some(n)) => Ok(Value::Float(round_float(*f, n))),
            (v, _) if v.as_int().is_some() => Ok(Value::Int(v.as_int().expect("checked"))),
            (v, _) => Err(self.type_err(format!("type {} doesn't define __round__ method", v.type_name()))),
        }
    }

    fn min_max(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let mut key = None;
        let mut default = None;
        for (k, v) in kwargs {
            match k.as_str() {
                "key" => key = Some(v),
                "default" => default = Some(v),
                _ => return Err(self.type_err(format!("{name}() got an unexpected keyword argument '{k}'"))),
            }
        }
        let items = match args.len() {
            0 => return Err(self.type_err(format!("{name} expected at least 1 argument, got 0"))),
            1 => self.iterate(&args[0])?,
            _ => args,
        };
        if items.is_empty() {
            return default.ok_or_else(|| self.value_err(format!("{name}() arg is an empty sequence")));
        }
        let key = key.filter(|k| !matches!(k, Value::None));
        let want = if name == "max" { Ordering::Greater } else { Ordering::Less };
        let symbol = if name == "max" { ">" } else { "<" };
        let mut best = items[0].clone();
        let mut best_key = self.apply_key(&key, &best)?;
        for item in items.into_iter().skip(1) {
            let k = self.apply_key(&key, &item)?;
            if self.order(&k, &best_key, symbol)? == Some(want) {
                best = item;
                best_key = k;
            }
        }
        Ok(best)
    }

    fn apply_key(&mut self, key: &Option<Value>, v: &Value) -> R<Value> {
        match key {
            Some(f) => self.call_value(f, vec![v.clone()], Vec::new()),
            None => Ok(v.clone()),
        }
    }

    /// Stable merge sort with a fallible comparator. Reversal keeps equal
    /// elements in their original order.
    pub(super) fn sort_values(&mut self, items: Vec<Value>, key: Option<Value>, reverse: bool) -> R<Vec<Value>> {
        let key = key.filter(|k| !matches!(k, Value::None));
        let mut keyed = Vec::with_capacity(items.len());
        for v in items {
            let k = self.apply_key(&key, &v)?;
            keyed.push((k, v));
        }
        let n = keyed.len();
        self.tick((n as u64).saturating_mul(64 - (n as u64).leading_zeros() as u64))?;
        let sorted = self.merge_sort(keyed, reverse)?;
        Ok(sorted.into_iter().map(|(_, v)| v).collect())
    }

    fn merge_sort(&mut self, mut v: Vec<(Value, Value)>, reverse: bool) -> R<Vec<(Value, Value)>> {
        if v.len() <= 1 {
            return Ok(v);
        }
        let right = v.split_off(v.len() / 2);
        let left = self.merge_sort(v, reverse)?;
        let right = self.merge_sort(right, reverse)?;
        let mut out = Vec::with_capacity(left.len() + right.len());
        let mut l = left.into_iter().peekable();
        let mut r = right.into_iter().peekable();
        while let (Some(a), Some(b)) = (l.peek(), r.peek()) {
            // take from the right only when it must come strictly first
            let right_first = if reverse {
                self.order(&b.0, &a.0, ">")? == Some(Ordering::Greater)
            } else {
                self.order(&b.0, &a.0, "<")? == Some(Ordering::Less)
            };
            out.push(if right_first { r.next() } else { l.next() }.expect("peeked"));
        }
        out.extend(l);
        out.extend(r);
        Ok(out)
    }

    pub(super) fn call_method(
        &mut self,
        recv: &Value,
        name: &str,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        match recv {
            Value::Str(s) => self.str_method(s, name, args, kwargs),
            Value::List(_) => self.list_method(recv, name, args, kwargs),
            Value::Tuple(t) => {
                let items = t.to_vec();
                self.seq_query("tuple", &items, name, args, kwargs)
            }
            Value::Dict(_) => self.dict_method(recv, name, args, kwargs),
            Value::Patch(p) => self.patch_method(p, name, args, kwargs),
            other => Err(self
                .err(ErrorLabel::AttributeError, format!("'{}' object has no attribute '{name}'", other.type_name()))),
        }
    }

    fn seq_query(
        &mut self,
        tname: &str,
        items: &[Value],
        name: &str,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        let a = self.bind(name, &["value"], 1, args, kwargs)?;
        let target = a[0].as_ref().expect("required");
        self.tick(items.len() as u64)?;
        let mut count = 0;
        for (i, x) in items.iter().enumerate() {
            if self.equal(x, target)? {
                if name == "index" {
                    return Ok(Value::Int(i as i64));
                }
                count += 1;
            }
        }
        if name == "index" {
            return Err(self.value_err(format!("{tname}.index(x): x not in {tname}")));
        }
        Ok(Value::Int(count))
    }

    fn list_method(&mut self, recv: &Value, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let Value::List(l) = recv else { unreachable!("list receiver") };
        match name {
            "append" => {
                let a = self.bind("append", &["object"], 1, args, kwargs)?;
                self.alloc(1)?;
                l.borrow_mut().push(a[0].clone().expect("required"));
                Ok(Value::None)
            }
            "extend" => {
                let a = self.bind("extend", &["iterable"], 1, args, kwargs)?;
                let items = self.iterate(a[0].as_ref().expect("required"))?;
                self.alloc(l.borrow().len() + items.len())?;
                l.borrow_mut().extend(items);
                Ok(Value::None)
            }
            "insert" => {
                let a = self.bind("insert", &["index", "object"], 2, args, kwargs)?;
                let i = self.expect_int(a[0].as_ref().expect("required"), "insert() index")?;
                let len = l.borrow().len() as i64;
                let i = if i < 0 { (i + len).max(0) } else { i.min(len) };
                self.alloc(1)?;
                l.borrow_mut().insert(i as usize, a[1].clone().expect("required"));
                Ok(Value::None)
            }
            "pop" => {
                let a = self.bind("pop", &["index"], 0, args, kwargs)?;
                let len = l.borrow().len();
                if len == 0 {
                    return Err(self.err(ErrorLabel::IndexError, "pop from empty list"));
                }
                let i = match &a[0] {
                    Some(v) => self.seq_index(v, len, "pop")?,
                    None => len - 1,
                };
                Ok(l.borrow_mut().remove(i))
            }
            "remove" => {
                let a = self.bind("remove", &["value"], 1, args, kwargs)?;
                let items = l.borrow().clone();
                let target = a[0].as_ref().expect("required");
                for (i, x) in items.iter().enumerate() {
                    if self.equal(x, target)? {
                        l.borrow_mut().remove(i);
                        return Ok(Value::None);
                    }
                }
                Err(self.value_err("list.remove(x): x not in list"))
            }
            "index" | "count" => {
                let items = l.borrow().clone();
                self.seq_query("list", &items, name, args, kwargs)
            }
            "sort" => {
                if !args.is_empty() {
                    return Err(self.type_err("sort() takes no positional arguments"));
                }
                let a = self.bind("sort", &["key", "reverse"], 0, args, kwargs)?;
                let items = l.borrow().clone();
                let sorted = self.sort_values(items, a[0].clone(), a[1].as_ref().is_some_and(Value::truthy))?;
                *l.borrow_mut() = sorted;
                Ok(Value::None)
            }
            "reverse" => {
                self.bind("reverse", &[], 0, args, kwargs)?;
                l.borrow_mut().reverse();
                Ok(Value::None)
            }
            "copy" => {
                self.bind("copy", &[], 0, args, kwargs)?;
                let items = l.borrow().clone();
                self.alloc(items.len())?;
                Ok(Value::list(items))
            }
            "clear" => {
                self.bind("clear", &[], 0, args, kwargs)?;
                l.borrow_mut().clear();
                Ok(Value::None)
            }
            _ => unreachable!("method table and dispatch agree"),
        }
    }

    fn dict_method(&mut self, recv: &Value, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let Value::Dict(d) = recv else { unreachable!("dict receiver") };
        let hash = |this: &Self, v: &Value| {
            v.key().ok_or_else(|| this.type_err(format!("unhashable type: '{}'", v.type_name())))
        };
        match name {
            "get" => {
                let a = self.bind("get", &["key", "default"], 1, args, kwargs)?;
                let k = hash(self, a[0].as_ref().expect("required"))?;
                let found = d.borrow().entries.get(&k).map(|(_, v)| v.clone());
                Ok(found.or_else(|| a[1].clone()).unwrap_or(Value::None))
            }
            "keys" | "values" | "items" => {
                self.bind(name, &[], 0, args, kwargs)?;
                let out: Vec<Value> = d
                    .borrow()
                    .entries
                    .values()
                    .map(|(k, v)| match name {
                        "keys" => k.clone(),
                        "values" => v.clone(),
                        _ => Value::tuple(vec![k.clone(), v.clone()]),
                    })
                    .collect();
                self.alloc(out.len())?;
                Ok(Value::list(out))
            }
            "pop" => {
                let a = self.bind("pop", &["key", "default"], 1, args, kwargs)?;
                let kv = a[0].as_ref().expect("required");
                let k = hash(self, kv)?;
                let removed = d.borrow_mut().entries.shift_remove(&k);
                match (removed, &a[1]) {
                    (Some((_, v)), _) => Ok(v),
                    (None, Some(default)) => Ok(default.clone()),
                    (None, None) => Err(self.err(ErrorLabel::KeyError, to_repr(kv))),
                }
            }
            "update" => {
                if args.len() > 1 {
                    return Err(self.type_err(format!("update expected at most 1 argument, got {}", args.len())));
                }
                let mut staged = Dict { entries: Default::default() };
                if let Some(src) = args.first() {
                    self.update_dict(&mut staged, src)?;
                }
                for (k, v) in kwargs {
                    let kv = Value::str(&k);
                    staged.entries.insert(kv.key().expect("str is hashable"), (kv, v));
                }
                d.borrow_mut().entries.extend(staged.entries);
                Ok(Value::None)
            }
            "setdefault" => {
                let a = self.bind("setdefault", &["key", "default"], 1, args, kwargs)?;
                let kv = a[0].clone().expect("required");
                let k = hash(self, &kv)?;
                let default = a[1].clone().unwrap_or(Value::None);
                let mut dict = d.borrow_mut();
                Ok(dict.entries.entry(k).or_insert((kv, default)).1.clone())
            }
            "copy" => {
                self.bind("copy", &[], 0, args, kwargs)?;
                let copy = d.borrow().clone();
                self.alloc(copy.entries.len())?;
                Ok(Value::Dict(Rc::new(copy.into())))
            }
            "clear" => {
                self.bind("clear", &[], 0, args, kwargs)?;
                d.borrow_mut().entries.clear();
                Ok(Value::None)
            }
            _ => unreachable!("method table and dispatch agree"),
        }
    }

    fn str_method(&mut self, s: &Rc<str>, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        self.tick(s.len() as u64 / 16)?;
        let text = |v: String| Value::str(&v);
        match name {
            "lower" | "upper" | "capitalize" | "title" => {
                self.bind(name, &[], 0, args, kwargs)?;
                Ok(text(match name {
                    "lower" => s.to_lowercase(),
                    "upper" => s.to_uppercase(),
                    "capitalize" => {
                        let mut cs = s.chars();
                        match cs.next() {
                            Some(c) => c.to_uppercase().chain(cs.as_str().to_lowercase().chars()).collect(),
                            None => String::new(),
                        }
                    }
                    _ => title_case(s),
                }))
            }
            "strip" | "lstrip" | "rstrip" => {
                let a = self.bind(name, &["chars"], 0, args, kwargs)?;
                let chars: Option<Vec<char>> = match &a[0] {
                    None | Some(Value::None) => None,
                    Some(v) => Some(self.expect_str(v, "strip arg")?.chars().collect()),
                };
                let pred = |c: char| match &chars {
                    Some(set) => set.contains(&c),
                    None => c.is_whitespace(),
                };
                Ok(Value::str(match name {
                    "strip" => s.trim_matches(pred),
                    "lstrip" => s.trim_start_matches(pred),
                    _ => s.trim_end_matches(pred),
                }))
            }
            "split" => {
                let a = self.bind("split", &["sep", "maxsplit"], 0, args, kwargs)?;
                let maxsplit = match &a[1] {
                    Some(v) => self.expect_int(v, "maxsplit")?,
                    None => -1,
                };
                let limit = if maxsplit < 0 { usize::MAX } else { maxsplit as usize };
                let parts: Vec<Value> = match &a[0] {
                    None | Some(Value::None) => split_whitespace(s, limit).into_iter().map(Value::str).collect(),
                    Some(v) => {
                        let sep = self.expect_str(v, "separator")?;
                        if sep.is_empty() {
                            return Err(self.value_err("empty separator"));
                        }
                        s.splitn(limit.saturating_add(1), &*sep).map(Value::str).collect()
                    }
                };
                self.alloc(parts.len())?;
                Ok(Value::list(parts))
            }
            "splitlines" => {
                self.bind("splitlines", &[], 0, args, kwargs)?;
                let parts: Vec<Value> = s.lines().map(Value::str).collect();
                self.alloc(parts.len())?;
                Ok(Value::list(parts))
            }
            "join" => {
                let a = self.bind("join", &["iterable"], 1, args, kwargs)?;
                let items = self.iterate(a[0].as_ref().expect("required"))?;
                let mut parts = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match item {
                        Value::Str(p) => parts.push(p.clone()),
                        other => {
                            return Err(self.type_err(format!(
                                "sequence item {i}: expected str instance, {} found",
                                other.type_name()
                            )))
                        }
                    }
                }
                let total: usize = parts.iter().map(|p| p.len()).sum::<usize>() + s.len() * parts.len();
                self.alloc_str(total)?;
                let joined = parts.iter().map(|p| &**p).collect::<Vec<&str>>().join(s);
                Ok(text(joined))
            }
            "replace" => {
                let a = self.bind("replace", &["old", "new", "count"], 2, args, kwargs)?;
                let old = self.expect_str(a[0].as_ref().expect("required"), "replace() arg 1")?;
                let new = self.expect_str(a[1].as_ref().expect("required"), "replace() arg 2")?;
                let count = match &a[2] {
                    Some(v) => self.expect_int(v, "count")?,
                    None => -1,
                };
                let occurrences = if old.is_empty() { s.chars().count() + 1 } else { s.matches(&*old).count() };
                let n = if count < 0 { occurrences } else { occurrences.min(count as usize) };
                let size = s.len().saturating_add(n.saturating_mul(new.len()));
                self.alloc_str(size)?;
                Ok(text(if count < 0 { s.replace(&*old, &new) } else { s.replacen(&*old, &new, n) }))
            }
            "startswith" | "endswith" => {
                let a = self.bind(name, &["prefix"], 1, args, kwargs)?;
                let candidates: Vec<Value> = match a[0].as_ref().expect("required") {
                    Value::Tuple(t) => t.to_vec(),
                    v => vec![v.clone()],
                };
                for c in &candidates {
                    let c = self.expect_str(c, &format!("{name} arg"))?;
                    let hit = if name == "startswith" { s.starts_with(&*c) } else { s.ends_with(&*c) };
                    if hit {
                        return Ok(Value::Bool(true));
                    }
                }
                Ok(Value::Bool(false))
            }
            "find" | "index" => {
                let a = self.bind(name, &["sub"], 1, args, kwargs)?;
                let sub = self.expect_str(a[0].as_ref().expect("required"), "substring")?;
                match s.find(&*sub) {
                    Some(byte) => Ok(Value::Int(s[..byte].chars().count() as i64)),
                    None if name == "find" => Ok(Value::Int(-1)),
                    None => Err(self.value_err("substring not found")),
                }
            }
            "count" => {
                let a = self.bind("count", &["sub"], 1, args, kwargs)?;
                let sub = self.expect_str(a[0].as_ref().expect("required"), "substring")?;
                let n = if sub.is_empty() { s.chars().count() + 1 } else { s.matches(&*sub).count() };
                Ok(Value::Int(n as i64))
            }
            "isdigit" | "isnumeric" | "isalpha" | "isalnum" | "isspace" => {
                self.bind(name, &[], 0, args, kwargs)?;
                let test: fn(char) -> bool = match name {
                    "isdigit" => |c| c.is_ascii_digit(),
                    "isnumeric" => char::is_numeric,
                    "isalpha" => char::is_alphabetic,
                    "isalnum" => char::is_alphanumeric,
                    _ => char::is_whitespace,
                };
                Ok(Value::Bool(!s.is_empty() && s.chars().all(test)))
            }
            "islower" | "isupper" => {
                self.bind(name, &[], 0, args, kwargs)?;
                let cased: Vec<char> = s.chars().filter(|c| c.is_lowercase() || c.is_uppercase()).collect();
                let want: fn(&char) -> bool =
                    if name == "islower" { |c| c.is_lowercase() } else { |c| c.is_uppercase() };
                Ok(Value::Bool(!cased.is_empty() && cased.iter().all(want)))
            }
            "format" => self.str_format(s, args, kwargs),
            _ => unreachable!("method table and dispatch agree"),
        }
    }

    /// `str.format` with `{}`, `{0}`, `{name}` fields and optional specs.
    fn str_format(&mut self, s: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let mut out = String::new();
        let mut auto = 0usize;
        let mut chars = s.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    out.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    out.push('}');
                }
                '{' => {
                    let mut field = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => field.push(ch),
                            None => return Err(self.value_err("expected '}' before end of string")),
                        }
                    }
                    let (name, spec) = field.split_once(':').unwrap_or((&field, ""));
                    let value = if name.is_empty() {
                        auto += 1;
                        args.get(auto - 1).cloned()
                    } else if let Ok(i) = name.parse::<usize>() {
                        args.get(i).cloned()
                    } else {
                        kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone())
                    };
                    let Some(value) = value else {
                        return Err(if name.is_empty() || name.parse::<usize>().is_ok() {
                            self.err(ErrorLabel::IndexError, "Replacement index out of range for positional args tuple")
                        } else {
                            self.err(ErrorLabel::KeyError, to_repr(&Value::str(name)))
                        });
                    };
                    let rendered = self.format_value(&value, spec)?;
                    self.alloc_str(out.len() + rendered.len())?;
                    out.push_str(&rendered);
                }
                '}' => return Err(self.value_err("Single '}' encountered in format string")),
                c => out.push(c),
            }
        }
        Ok(Value::str(&out))
    }

    /// Applies a format spec of the form `[[fill]align][sign][width][,][.precision][type]`.
    pub(super) fn format_value(&mut self, v: &Value, spec: &str) -> R<String> {
        if spec.is_empty() {
            return Ok(to_str(v));
        }
        let bad =
            || self.value_err(format!("Invalid format specifier '{spec}' for object of type '{}'", v.type_name()));
        let cs: Vec<char> = spec.chars().collect();
        let mut i = 0;
        let mut fill = ' ';
        let mut align = None;
        if cs.len() >= 2 && matches!(cs[1], '<' | '>' | '^') {
            fill = cs[0];
            align = Some(cs[1]);
            i = 2;
        } else if matches!(cs.first(), Some('<' | '>' | '^')) {
            align = Some(cs[0]);
            i = 1;
        }
        let mut sign = None;
        if matches!(cs.get(i), Some('+' | '-' | ' ')) {
            sign = Some(cs[i]);
            i += 1;
        }
        if cs.get(i) == Some(&'0') && align.is_none() {
            fill = '0';
            align = Some('=');
            i += 1;
        }
        let mut width = 0usize;
        while let Some(d) = cs.get(i).and_then(|c| c.to_digit(10)) {
            width = width.checked_mul(10).and_then(|w| w.checked_add(d as usize)).ok_or_else(bad)?;
            i += 1;
        }
        let grouping = cs.get(i) == Some(&',');
        if grouping {
            i += 1;
        }
        let mut precision = None;
        if cs.get(i) == Some(&'.') {
            i += 1;
            let mut p = 0usize;
            let start = i;
            while let Some(d) = cs.get(i).and_then(|c| c.to_digit(10)) {
                p = p.checked_mul(10).and_then(|w| w.checked_add(d as usize)).ok_or_else(bad)?;
                i += 1;
            }
            if i == start {
                return Err(bad());
            }
            precision = Some(p);
        }
        let ty = cs.get(i).copied();
        if i + usize::from(ty.is_some()) != cs.len() {
            return Err(bad());
        }
        if width > 10_000 || precision.is_some_and(|p| p > 1000) {
            return Err(self.value_err("format width or precision too large"));
        }
        let body = match (ty, v) {
            (None | Some('s'), Value::Str(s)) => match precision {
                Some(p) => s.chars().take(p).collect(),
                None => s.to_string(),
            },
            (Some('d'), v) if v.as_int().is_some() && !matches!(v, Value::Float(_)) => {
                group(&v.as_int().expect("checked").to_string(), grouping)
            }
            (Some('f' | 'F' | '%' | 'e' | 'E' | 'g' | 'G'), v) | (None, v @ Value::Float(_)) if v.is_number() => {
                let x = v.as_f64().expect("number");
                let p = precision.unwrap_or(6);
                let formatted = match ty {
                    Some('f' | 'F') => format!("{x:.p$}"),
                    Some('%') => format!("{:.p$}%", x * 100.0),
                    Some('e') => python_exp(&format!("{x:.p$e}")),
                    Some('E') => python_exp(&format!("{x:.p$E}")),
                    _ => match precision {
                        Some(p) => format_general(x, p.max(1)),
                        None => format_float(x),
                    },
                };
                group(&formatted, grouping)
            }
            (None, v) if v.as_int().is_some() && !matches!(v, Value::Str(_)) => match precision {
                Some(_) => return Err(bad()),
                None => group(&to_str(v), grouping),
            },
            (None, v) if precision.is_none() && !grouping => to_str(v),
            _ => return Err(bad()),
        };
        let body = match sign {
            Some('+') if !body.starts_with('-') && v.is_number() => format!("+{body}"),
            Some(' ') if !body.starts_with('-') && v.is_number() => format!(" {body}"),
            _ => body,
        };
        let len = body.chars().count();
        if len >= width {
            return Ok(body);
        }
        let pad = width - len;
        let default_align = if v.is_number() { '>' } else { '<' };
        Ok(match align.unwrap_or(default_align) {
            '<' => format!("{body}{}", fill.to_string().repeat(pad)),
            '^' => format!("{}{body}{}", fill.to_string().repeat(pad / 2), fill.to_string().repeat(pad - pad / 2)),
            '=' => {
                let (sign, digits) = match body.chars().next() {
                    Some(c @ ('-' | '+' | ' ')) => (c.to_string(), body[1..].to_string()),
                    _ => (String::new(), body.clone()),
                };
                format!("{sign}{}{digits}", fill.to_string().repeat(pad))
            }
            _ => format!("{}{body}", fill.to_string().repeat(pad)),
        })
    }
}

fn title_case(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev_cased = false;
    for c in s.chars() {
        if prev_cased {
            out.extend(c.to_lowercase());
        } else {
            out.extend(c.to_uppercase());
        }
        prev_cased = c.is_alphabetic();
    }
    out
}

fn split_whitespace(s: &str, limit: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = s.trim_start();
    while !rest.is_empty() {
        if out.len() == limit {
            out.push(rest);
            break;
        }
        match rest.find(char::is_whitespace) {
            Some(i) => {
                out.push(&rest[..i]);
                rest = rest[i..].trim_start();
            }
            None => {
                out.push(rest);
                break;
            }
        }
    }
    out
}

fn group(number: &str, grouping: bool) -> String {
    if !grouping {
        return number.to_string();
    }
    let (sign, rest) = match number.strip_prefix('-') {
        Some(r) => ("-", r),
        None => ("", number),
    };
    let split = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    let (int, frac) = rest.split_at(split);
    let mut grouped = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    format!("{sign}{grouped}{frac}")
}

/// Rust renders `1.5e2`; Python renders `1.5e+02`.
fn python_exp(s: &str) -> String {
    let Some(pos) = s.find(['e', 'E']) else { return s.to_string() };
    let (mantissa, exp) = s.split_at(pos);
    let marker = &exp[..1];
    let digits = &exp[1..];
    let (sign, digits) = match digits.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', digits),
    };
    format!("{mantissa}{marker}{sign}{digits:0>2}")
}

/// `%g`-style formatting with `p` significant digits.
fn format_general(x: f64, p: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format_float(x);
    }
    let exp = x.abs().log10().floor() as i64;
    let rendered = if exp < -4 || exp >= p as i64 {
        python_exp(&format!("{:.*e}", p - 1, x))
    } else {
        let decimals = (p as i64 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    };
    // %g drops trailing zeros
    if let Some(epos) = rendered.find('e') {
        let (m, e) = rendered.split_at(epos);
        let m = if m.contains('.') { m.trim_end_matches('0').trim_end_matches('.') } else { m };
        format!("{m}{e}")
    } else if rendered.contains('.') {
        rendered.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        rendered
    }
}

pub(super) fn round_float(x: f64, ndigits: i64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if ndigits >= 0 {
        if ndigits > 300 {
            return x;
        }
        let s = format!("{x:.*}", ndigits as usize);
        s.parse().unwrap_or(x)
    } else {
        if ndigits < -308 {
            return 0.0 * x.signum();
        }
        let factor = 10f64.powi((-ndigits) as i32);
        (x / factor).round_ties_even() * factor
    }
}

pub(super) fn parse_int(s: &str, base: u32) -> Option<i64> {
    let t = s.trim();
    let (neg, digits) = match t.as_bytes().first() {
        Some(b'-') => (true, &t[1..]),
        Some(b'+') => (false, &t[1..]),
        _ => (false, t),
    };
    if digits.is_empty() || digits.starts_with('_') || digits.ends_with('_') || digits.contains("__") {
        return None;
    }
    let clean: String = digits.chars().filter(|c| *c != '_').collect();
    if !clean.chars().all(|c| c.is_digit(base)) {
        return None;
    }
    let magnitude = i128::from_str_radix(&clean, base).ok()?;
    let v = if neg { -magnitude } else { magnitude };
    i64::try_from(v).ok()
}

pub(super) fn parse_float(s: &str) -> Option<f64> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let body = lower.trim_start_matches(['+', '-']);
    if matches!(body, "inf" | "infinity" | "nan") {
        let neg = lower.starts_with('-');
        let v = if body == "nan" { f64::NAN } else { f64::INFINITY };
        return Some(if neg { -v } else { v });
    }
    if t.is_empty() || !t.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-' | '_')) {
        return None;
    }
    t.replace('_', "").parse().ok()
}
