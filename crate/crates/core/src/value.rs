//! Ground values and the smooth/non-smooth real tags.

use crate::trace::Name;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `Smooth` reals may carry derivative information and only flow into
/// smooth primitives. `Star` reals may be used anywhere but carry none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Smoothness {
    Smooth,
    Star,
}

impl Smoothness {
    pub fn join(self, other: Smoothness) -> Smoothness {
        if self == Smoothness::Smooth || other == Smoothness::Smooth {
            Smoothness::Smooth
        } else {
            Smoothness::Star
        }
    }
}

/// Consumers that are not smooth in their input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonSmoothOp {
    Compare,
    Floor,
    ToString,
    Branch,
    /// Support test inside a density that is discontinuous in its location.
    SupportTest,
    /// Extracting the raw number into host code.
    Extract,
}

impl fmt::Display for NonSmoothOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NonSmoothOp::Compare => "comparison",
            NonSmoothOp::Floor => "floor",
            NonSmoothOp::ToString => "string conversion",
            NonSmoothOp::Branch => "branch",
            NonSmoothOp::SupportTest => "support test",
            NonSmoothOp::Extract => "extraction",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Real<S> {
    pub val: S,
    pub tag: Smoothness,
    /// Name of the random choice this value was derived from, if any.
    pub origin: Option<Name>,
}

impl<S: Scalar> Real<S> {
    pub fn smooth(val: S) -> Self {
        Real { val, tag: Smoothness::Smooth, origin: None }
    }

    pub fn star(x: f64) -> Self {
        Real { val: S::constant(x), tag: Smoothness::Star, origin: None }
    }

    pub fn with_origin(mut self, name: impl Into<Name>) -> Self {
        self.origin = Some(name.into());
        self
    }

    pub fn is_smooth(&self) -> bool {
        self.tag == Smoothness::Smooth
    }

    pub fn value(&self) -> f64 {
        self.val.value()
    }

    pub fn promote(mut self) -> Self {
        self.tag = Smoothness::Smooth;
        self
    }

    fn check(&self, op: NonSmoothOp) -> Result<()> {
        if self.is_smooth() {
            return Err(Error::Smoothness {
                origin: self.origin.as_deref().unwrap_or("<anonymous>").to_string(),
                consumer: op.to_string(),
            });
        }
        Ok(())
    }

    /// The raw number, for Star values only.
    pub fn get(&self) -> Result<f64> {
        self.check(NonSmoothOp::Extract)?;
        Ok(self.value())
    }

    pub fn lt(&self, rhs: f64) -> Result<bool> {
        self.check(NonSmoothOp::Compare)?;
        Ok(self.value() < rhs)
    }

    pub fn gt(&self, rhs: f64) -> Result<bool> {
        self.check(NonSmoothOp::Compare)?;
        Ok(self.value() > rhs)
    }

    pub fn floor(&self) -> Result<i64> {
        self.check(NonSmoothOp::Floor)?;
        Ok(self.value().floor() as i64)
    }

    pub fn to_string_value(&self) -> Result<String> {
        self.check(NonSmoothOp::ToString)?;
        Ok(self.value().to_string())
    }

    /// Apply a smooth unary function, keeping tag and origin.
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Real { val: f(self.val), tag: self.tag, origin: self.origin }
    }

    fn combine(&self, rhs: &Real<S>, val: S) -> Real<S> {
        let origin = match (self.is_smooth(), rhs.is_smooth()) {
            (true, _) => self.origin,
            (false, true) => rhs.origin,
            _ => self.origin.or(rhs.origin),
        };
        Real { val, tag: self.tag.join(rhs.tag), origin }
    }
}

macro_rules! real_binop {
    ($tr:ident, $m:ident) => {
        impl<S: Scalar> $tr for Real<S> {
            type Output = Real<S>;
            fn $m(self, rhs: Real<S>) -> Real<S> {
                let v = self.val.$m(rhs.val);
                self.combine(&rhs, v)
            }
        }
        impl<S: Scalar> $tr<f64> for Real<S> {
            type Output = Real<S>;
            fn $m(self, rhs: f64) -> Real<S> {
                let v = self.val.$m(rhs);
                Real { val: v, tag: self.tag, origin: self.origin }
            }
        }
    };
}

real_binop!(Add, add);
real_binop!(Sub, sub);
real_binop!(Mul, mul);
real_binop!(Div, div);

impl<S: Scalar> Neg for Real<S> {
    type Output = Real<S>;
    fn neg(self) -> Real<S> {
        Real { val: -self.val, tag: self.tag, origin: self.origin }
    }
}

#[derive(Clone, Debug)]
pub enum Value<S> {
    Unit,
    Bool(bool),
    Int(i64),
    Str(String),
    Real(Real<S>),
    Tuple(Vec<Value<S>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroundType {
    Unit,
    Bool,
    Int,
    Str,
    Real,
    Tuple(Vec<GroundType>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseMeasure {
    Counting,
    Lebesgue,
}

impl GroundType {
    pub fn base_measure(&self) -> BaseMeasure {
        match self {
            GroundType::Real => BaseMeasure::Lebesgue,
            GroundType::Tuple(ts) if ts.iter().any(|t| t.base_measure() == BaseMeasure::Lebesgue) => {
                BaseMeasure::Lebesgue
            }
            _ => BaseMeasure::Counting,
        }
    }

    /// Placeholder returned by a failed lookup.
    pub fn default_value<S: Scalar>(&self) -> Value<S> {
        match self {
            GroundType::Unit => Value::Unit,
            GroundType::Bool => Value::Bool(false),
            GroundType::Int => Value::Int(0),
            GroundType::Str => Value::Str(String::new()),
            GroundType::Real => Value::Real(Real::star(0.0)),
            GroundType::Tuple(ts) => Value::Tuple(ts.iter().map(|t| t.default_value()).collect()),
        }
    }
}

impl<S: Scalar> Value<S> {
    pub fn real(x: Real<S>) -> Self {
        Value::Real(x)
    }

    pub fn star(x: f64) -> Self {
        Value::Real(Real::star(x))
    }

    pub fn ground_type(&self) -> GroundType {
        match self {
            Value::Unit => GroundType::Unit,
            Value::Bool(_) => GroundType::Bool,
            Value::Int(_) => GroundType::Int,
            Value::Str(_) => GroundType::Str,
            Value::Real(_) => GroundType::Real,
            Value::Tuple(vs) => GroundType::Tuple(vs.iter().map(|v| v.ground_type()).collect()),
        }
    }

    pub fn as_bool(&self) -> Result<bool> {
        match self {
            Value::Bool(b) => Ok(*b),
            other => Err(Error::TypeMismatch(format!("expected bool, got {:?}", other.ground_type()))),
        }
    }

    pub fn as_int(&self) -> Result<i64> {
        match self {
            Value::Int(i) => Ok(*i),
            other => Err(Error::TypeMismatch(format!("expected int, got {:?}", other.ground_type()))),
        }
    }

    pub fn as_real(&self) -> Result<&Real<S>> {
        match self {
            Value::Real(r) => Ok(r),
            other => Err(Error::TypeMismatch(format!("expected real, got {:?}", other.ground_type()))),
        }
    }

    /// Same value with every real replaced by its detached primal.
    pub fn map_scalar<T: Scalar>(&self, f: &impl Fn(S) -> T) -> Value<T> {
        match self {
            Value::Unit => Value::Unit,
            Value::Bool(b) => Value::Bool(*b),
            Value::Int(i) => Value::Int(*i),
            Value::Str(s) => Value::Str(s.clone()),
            Value::Real(r) => Value::Real(Real { val: f(r.val), tag: r.tag, origin: r.origin }),
            Value::Tuple(vs) => Value::Tuple(vs.iter().map(|v| v.map_scalar(f)).collect()),
        }
    }

    /// Structural equality on primal values and tags.
    pub fn same(&self, other: &Value<S>) -> bool {
        match (self, other) {
            (Value::Unit, Value::Unit) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.value() == b.value() && a.tag == b.tag,
            (Value::Tuple(a), Value::Tuple(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same(y)),
            _ => false,
        }
    }
}

/// Fails when a smooth real anywhere inside `v` would reach `consumer`.
pub fn smoothness_check<S: Scalar>(v: &Value<S>, consumer: NonSmoothOp) -> Result<()> {
    match v {
        Value::Real(r) => r.check(consumer),
        Value::Tuple(vs) => vs.iter().try_for_each(|x| smoothness_check(x, consumer)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;

    #[test]
    fn star_promotes_to_smooth_under_arithmetic() {
        let a: Real<Dual> = Real::star(1.0);
        let b = Real::smooth(Dual::new(2.0, 1.0)).with_origin("x");
        let c = a + b;
        assert!(c.is_smooth());
        assert_eq!(c.origin.as_deref(), Some("x"));
        assert_eq!(c.val, Dual::new(3.0, 1.0));
    }

    #[test]
    fn smooth_comparison_is_rejected() {
        let x = Real::smooth(Dual::new(0.3, 1.0)).with_origin("x");
        let err = x.lt(1.0).unwrap_err();
        assert_eq!(err, Error::Smoothness { origin: "x".into(), consumer: "comparison".into() });
        assert!(Real::<Dual>::star(0.3).lt(1.0).unwrap());
    }

    #[test]
    fn check_descends_into_tuples() {
        let v: Value<f64> = Value::Tuple(vec![Value::Bool(true), Value::Real(Real::smooth(1.0))]);
        assert!(smoothness_check(&v, NonSmoothOp::Branch).is_err());
        let w: Value<f64> = Value::Tuple(vec![Value::star(1.0)]);
        assert!(smoothness_check(&w, NonSmoothOp::Branch).is_ok());
    }

    #[test]
    fn defaults_and_measures() {
        assert!(matches!(GroundType::Bool.default_value::<f64>(), Value::Bool(false)));
        match GroundType::Real.default_value::<f64>() {
            Value::Real(r) => assert!(r.value() == 0.0 && r.tag == Smoothness::Star),
            _ => panic!(),
        }
        assert_eq!(GroundType::Int.base_measure(), BaseMeasure::Counting);
        assert_eq!(GroundType::Real.base_measure(), BaseMeasure::Lebesgue);
    }
}
