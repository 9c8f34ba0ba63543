//! Traces: finite maps from choice names to ground values.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::value::{GroundType, Real, Smoothness, Value};

/// Choice name. Copying is free; literals are used as they are and names
/// built at run time are interned, so each distinct name is stored once.
#[derive(Clone, Copy, Eq, PartialOrd, Ord)]
pub struct Name(&'static str);

impl PartialEq for Name {
    fn eq(&self, other: &Name) -> bool {
        std::ptr::eq(self.0, other.0) || self.0 == other.0
    }
}

impl std::hash::Hash for Name {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        self.0.hash(h)
    }
}

impl Name {
    pub fn intern(s: &str) -> Name {
        static TABLE: OnceLock<Mutex<HashSet<&'static str>>> = OnceLock::new();
        let mut table = TABLE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
        if let Some(&k) = table.get(s) {
            return Name(k);
        }
        let k: &'static str = Box::leak(s.to_owned().into_boxed_str());
        table.insert(k);
        Name(k)
    }

    pub fn as_str(self) -> &'static str {
        self.0
    }
}

impl Deref for Name {
    type Target = str;

    fn deref(&self) -> &str {
        self.0
    }
}

impl AsRef<str> for Name {
    fn as_ref(&self) -> &str {
        self.0
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self.0, f)
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl From<&'static str> for Name {
    fn from(s: &'static str) -> Name {
        Name(s)
    }
}

impl From<String> for Name {
    fn from(s: String) -> Name {
        Name::intern(&s)
    }
}

impl From<&String> for Name {
    fn from(s: &String) -> Name {
        Name::intern(s)
    }
}

/// Insertion-ordered map with unique names. Equality ignores order.
///
/// Traces are small, so a vector with linear lookup beats hashing.
#[derive(Clone, Debug)]
pub struct Trace<S> {
    entries: Vec<(Name, Value<S>)>,
}

impl<S> Default for Trace<S> {
    fn default() -> Self {
        Trace { entries: Vec::new() }
    }
}

impl<S: Scalar> PartialEq for Trace<S> {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.entries.iter().all(|(k, v)| other.get(k).is_some_and(|w| v.same(w)))
    }
}

impl<S: Scalar> Trace<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Trace { entries: Vec::with_capacity(n) }
    }

    pub fn from_pairs<I, K>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, Value<S>)>,
        K: Into<Name>,
    {
        let mut t = Trace::new();
        for (k, v) in pairs {
            t.insert(k, v)?;
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(k, _)| std::ptr::eq(k.as_str(), name) || &**k == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn get(&self, name: &str) -> Option<&Value<S>> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| &**k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value<S>)> {
        self.entries.iter().map(|(k, v)| (&**k, v))
    }

    pub fn insert(&mut self, name: impl Into<Name>, v: Value<S>) -> Result<()> {
        let name = name.into();
        if self.contains(&name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        self.entries.push((name, v));
        Ok(())
    }

    /// In-place lookup-and-remove; `None` when absent or of the wrong type.
    pub fn take(&mut self, name: &str, expected: &GroundType) -> Option<Value<S>> {
        match self.position(name) {
            Some(i) if &self.entries[i].1.ground_type() == expected => Some(self.entries.remove(i).1),
            _ => None,
        }
    }

    /// `(value, 1, rest)` when `name` holds a value of type `expected`,
    /// otherwise `(default, 0, empty)`.
    pub fn pop(&self, name: &str, expected: &GroundType) -> (Value<S>, f64, Trace<S>) {
        let mut rest = self.clone();
        match rest.take(name, expected) {
            Some(v) => (v, 1.0, rest),
            None => (expected.default_value(), 0.0, Trace::new()),
        }
    }

    /// Union of two disjoint traces; the first clashing name is reported.
    pub fn concat(&self, other: &Trace<S>) -> Result<Trace<S>> {
        let mut out = self.clone();
        for (k, v) in &other.entries {
            if out.contains(k) {
                return Err(Error::Disjointness(k.to_string()));
            }
            out.entries.push((*k, v.clone()));
        }
        Ok(out)
    }

    /// Split into the entries named in `consumed` and everything else.
    pub fn subtrace_remainder<T: AsRef<str>>(&self, consumed: &[T]) -> (Trace<S>, Trace<S>) {
        let mut keep = Trace::new();
        let mut rest = Trace::new();
        for (k, v) in &self.entries {
            let target = if consumed.iter().any(|c| c.as_ref() == &**k) { &mut keep } else { &mut rest };
            target.entries.push((*k, v.clone()));
        }
        (keep, rest)
    }

    pub fn map_scalar<T: Scalar>(&self, f: &impl Fn(S) -> T) -> Trace<T> {
        Trace { entries: self.entries.iter().map(|(k, v)| (*k, v.map_scalar(f))).collect() }
    }

    pub fn detach(&self) -> Trace<S> {
        self.map_scalar(&|s: S| s.detach())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::to_value(encode(v)).expect("plain data")))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    pub fn from_json(json: &serde_json::Value) -> Result<Trace<S>> {
        let obj = json.as_object().ok_or_else(|| Error::TypeMismatch("trace JSON must be an object".into()))?;
        let mut t = Trace::new();
        for (k, v) in obj {
            let repr: Repr = serde_json::from_value(v.clone())
                .map_err(|e| Error::TypeMismatch(format!("trace entry `{k}`: {e}")))?;
            t.insert(Name::intern(k), decode(repr))?;
        }
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
enum Repr {
    Unit,
    Bool { v: bool },
    Int { v: i64 },
    Str { v: String },
    Real { v: f64, smooth: bool },
    Tuple { v: Vec<Repr> },
}

fn encode<S: Scalar>(v: &Value<S>) -> Repr {
    match v {
        Value::Unit => Repr::Unit,
        Value::Bool(b) => Repr::Bool { v: *b },
        Value::Int(i) => Repr::Int { v: *i },
        Value::Str(s) => Repr::Str { v: s.clone() },
        Value::Real(r) => Repr::Real { v: r.value(), smooth: r.is_smooth() },
        Value::Tuple(vs) => Repr::Tuple { v: vs.iter().map(encode).collect() },
    }
}

fn decode<S: Scalar>(r: Repr) -> Value<S> {
    match r {
        Repr::Unit => Value::Unit,
        Repr::Bool { v } => Value::Bool(v),
        Repr::Int { v } => Value::Int(v),
        Repr::Str { v } => Value::Str(v),
        Repr::Real { v, smooth } => {
            let tag = if smooth { Smoothness::Smooth } else { Smoothness::Star };
            Value::Real(Real { val: S::constant(v), tag, origin: None })
        }
        Repr::Tuple { v } => Value::Tuple(v.into_iter().map(decode).collect()),
    }
}
