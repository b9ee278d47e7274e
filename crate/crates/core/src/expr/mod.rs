//! Scalar expressions over complex states `x1..xd`, the input `u` and named
//! real parameters.
//!
//! Expressions are parsed once into an immutable [`Expr`] tree and evaluated
//! with exact complex arithmetic. Fractional powers are only accepted on `u`
//! and are evaluated through a [`Phasor`] carrying the continuous phase of the
//! input, so `u^(1/n)` stays single-valued along a trajectory.

mod eval;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

pub use eval::{eval, eval_grad, Gradient};
pub use parse::parse;

/// Parameter bindings, name to real value.
pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("bad exponent at offset {offset}: {message}")]
    BadExponent { offset: usize, message: String },
}

impl ParseError {
    /// Character offset into the source the error refers to.
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::BadExponent { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),
    #[error("expected {expected} state components, got {got}")]
    StateDimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Rational exponent `num/den` in lowest terms with `den >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Exponent {
    pub num: i64,
    pub den: u32,
}

impl Exponent {
    pub fn integer(n: i64) -> Self {
        Exponent { num: n, den: 1 }
    }

    /// Builds `num/den` reduced to lowest terms. Returns `None` for `den == 0`.
    pub fn rational(num: i64, den: i64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i64;
        let sign = if den < 0 { -1 } else { 1 };
        let den = u32::try_from(den.abs() / g).ok()?;
        Some(Exponent {
            num: sign * num / g,
            den,
        })
    }

    pub fn is_integer(self) -> bool {
        self.den == 1
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Expression tree.
///
/// Parsed trees only contain non-negative `Num` literals; a leading minus is
/// kept as `Neg`. Trees built in code may hold negative literals, which print
/// as `(-c)` and reparse as `Neg(Num(c))`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// The imaginary unit `i`.
    Imag,
    Param(String),
    /// State component, zero-based (`x1` is `State(0)`).
    State(usize),
    Input,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Exponent),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Real constant in canonical form (negative values become `Neg(Num)`).
    pub fn real(v: f64) -> Expr {
        if v.is_sign_negative() && v != 0.0 {
            Expr::Neg(Box::new(Expr::Num(-v)))
        } else {
            Expr::Num(v)
        }
    }

    /// Complex constant `re + im*i` in canonical form.
    pub fn complex(c: Complex64) -> Expr {
        if c.im == 0.0 {
            return Expr::real(c.re);
        }
        let imag = if c.im == 1.0 {
            Expr::Imag
        } else {
            Expr::Num(c.im.abs()) * Expr::Imag
        };
        match (c.re == 0.0, c.im < 0.0) {
            (true, false) => imag,
            (true, true) => -imag,
            (false, false) => Expr::real(c.re) + imag,
            (false, true) => Expr::real(c.re) - imag,
        }
    }

    pub fn state(index: usize) -> Expr {
        Expr::State(index)
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn powi(self, n: i64) -> Expr {
        Expr::Pow(Box::new(self), Exponent::integer(n))
    }

    pub fn pow(self, exp: Exponent) -> Expr {
        Expr::Pow(Box::new(self), exp)
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    /// Largest zero-based state index referenced, if any.
    pub fn max_state_index(&self) -> Option<usize> {
        let mut best = None;
        self.visit(&mut |e| {
            if let Expr::State(k) = e {
                best = Some(best.map_or(*k, |b: usize| b.max(*k)));
            }
        });
        best
    }

    /// Names of all parameters referenced.
    pub fn param_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                out.insert(p.clone());
            }
        });
        out
    }

    pub fn uses_input(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Input));
        found
    }

    /// Replaces every parameter by its value.
    pub fn bind(&self, params: &Params) -> Result<Expr, EvalError> {
        Ok(match self {
            Expr::Param(p) => Expr::Num(
                *params
                    .get(p)
                    .ok_or_else(|| EvalError::UnboundParameter(p.clone()))?,
            ),
            Expr::Num(_) | Expr::Imag | Expr::State(_) | Expr::Input => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.bind(params)?)),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.bind(params)?), Box::new(b.bind(params)?))
            }
            Expr::Pow(a, e) => Expr::Pow(Box::new(a.bind(params)?), *e),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.bind(params)?)),
        })
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::Binary($op, Box::new(self), Box::new(rhs))
            }
        }
    };
}

impl_binop!(Add, add, BinOp::Add);
impl_binop!(Sub, sub, BinOp::Sub);
impl_binop!(Mul, mul, BinOp::Mul);
impl_binop!(Div, div, BinOp::Div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

struct Paren<'a>(&'a Expr, bool);

impl fmt::Display for Paren<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if v.is_sign_negative() => write!(f, "(-{})", -v),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Imag => f.write_str("i"),
            Expr::Param(p) => f.write_str(p),
            Expr::State(k) => write!(f, "x{}", k + 1),
            Expr::Input => f.write_str("u"),
            Expr::Neg(a) => write!(f, "-{}", Paren(a, a.precedence() < 3)),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                write!(
                    f,
                    "{} {} {}",
                    Paren(a, a.precedence() < p),
                    op.symbol(),
                    Paren(b, b.precedence() <= p)
                )
            }
            Expr::Pow(a, e) => {
                write!(f, "{}^", Paren(a, a.precedence() < 5))?;
                if e.den == 1 && e.num >= 0 {
                    write!(f, "{}", e.num)
                } else if e.den == 1 {
                    write!(f, "({})", e.num)
                } else {
                    write!(f, "({}/{})", e.num, e.den)
                }
            }
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), a),
        }
    }
}

/// Input value `modulus * e^{i phase}` with the phase tracked continuously.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phasor {
    pub modulus: f64,
    pub phase: f64,
}

impl Phasor {
    pub fn new(modulus: f64, phase: f64) -> Self {
        Phasor { modulus, phase }
    }

    /// Principal-branch phasor, `arg` in `(-pi, pi]`.
    pub fn from_complex(c: Complex64) -> Self {
        Phasor {
            modulus: c.norm(),
            phase: c.arg(),
        }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::from_polar(self.modulus, self.phase)
    }

    /// `u^(num/den)` along the tracked phase.
    pub fn pow(&self, exp: Exponent) -> Complex64 {
        if exp.is_integer() && exp.num >= 0 {
            return powi(self.value(), exp.num as u64);
        }
        let r = exp.as_f64();
        Complex64::from_polar(self.modulus.powf(r), self.phase * r)
    }

    /// Advances the phase by `dphi`.
    pub fn rotated(&self, dphi: f64) -> Self {
        Phasor {
            modulus: self.modulus,
            phase: self.phase + dphi,
        }
    }
}

impl From<Complex64> for Phasor {
    fn from(c: Complex64) -> Self {
        Phasor::from_complex(c)
    }
}

pub(crate) fn powi(base: Complex64, mut n: u64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    let mut b = base;
    while n > 0 {
        if n & 1 == 1 {
            acc *= b;
        }
        b *= b;
        n >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_reduces() {
        assert_eq!(Exponent::rational(2, 4), Some(Exponent { num: 1, den: 2 }));
        assert_eq!(Exponent::rational(3, -6), Some(Exponent { num: -1, den: 2 }));
        assert_eq!(Exponent::rational(1, 0), None);
    }

    #[test]
    fn complex_constant_prints_and_reparses() {
        let c = Complex64::new(-0.4, 0.2);
        let e = Expr::complex(c);
        let back = parse(&e.to_string(), 1, &BTreeSet::new()).unwrap();
        assert_eq!(back, e);
        let v = eval(&e, &[Complex64::new(0.0, 0.0)], Complex64::new(1.0, 0.0), &Params::new())
            .unwrap();
        assert_eq!(v, c);
    }

    #[test]
    fn bind_replaces_params() {
        let names: BTreeSet<String> = ["a1".to_string()].into();
        let e = parse("a1*x1", 1, &names).unwrap();
        let mut p = Params::new();
        assert!(matches!(e.bind(&p), Err(EvalError::UnboundParameter(_))));
        p.insert("a1".into(), -2.0);
        let b = e.bind(&p).unwrap();
        assert!(b.param_names().is_empty());
    }

    #[test]
    fn phasor_branch_follows_phase() {
        let half = Exponent::rational(1, 2).unwrap();
        let u = Phasor::new(1.0, 2.0 * std::f64::consts::PI);
        let v = u.pow(half);
        assert!((v - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }
}
