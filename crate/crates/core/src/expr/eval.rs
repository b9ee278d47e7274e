use num_complex::Complex64;

use super::{powi, BinOp, EvalError, Exponent, Expr, Func, Params, Phasor};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Evaluates `e` at state `x` and input `u`.
///
/// `u` may be a plain complex number (principal branch for fractional
/// powers) or a [`Phasor`] with a tracked phase.
pub fn eval(
    e: &Expr,
    x: &[Complex64],
    u: impl Into<Phasor>,
    params: &Params,
) -> Result<Complex64, EvalError> {
    let u = u.into();
    Evaluator { x, u, params }.value(e)
}

/// Gradient of an expression with respect to the state and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub value: Complex64,
    pub dx: Vec<Complex64>,
    pub du: Complex64,
}

/// Forward-mode derivative of `e` at `(x, u)`.
pub fn eval_grad(
    e: &Expr,
    x: &[Complex64],
    u: impl Into<Phasor>,
    params: &Params,
) -> Result<Gradient, EvalError> {
    let u = u.into();
    let ev = Evaluator { x, u, params };
    let d = ev.dual(e)?;
    let n = x.len();
    Ok(Gradient {
        value: d.v,
        dx: d.d[..n].to_vec(),
        du: d.d[n],
    })
}

struct Evaluator<'a> {
    x: &'a [Complex64],
    u: Phasor,
    params: &'a Params,
}

fn checked_div(a: Complex64, b: Complex64) -> Result<Complex64, EvalError> {
    if b == ZERO {
        Err(EvalError::DivisionByZero)
    } else {
        Ok(a / b)
    }
}

fn apply(f: Func, z: Complex64) -> Complex64 {
    match f {
        Func::Sin => z.sin(),
        Func::Cos => z.cos(),
        Func::Exp => z.exp(),
        Func::Sqrt => z.sqrt(),
    }
}

impl Evaluator<'_> {
    fn state(&self, k: usize) -> Result<Complex64, EvalError> {
        self.x.get(k).copied().ok_or(EvalError::StateDimension {
            expected: k + 1,
            got: self.x.len(),
        })
    }

    fn param(&self, p: &str) -> Result<Complex64, EvalError> {
        self.params
            .get(p)
            .map(|v| Complex64::new(*v, 0.0))
            .ok_or_else(|| EvalError::UnboundParameter(p.to_string()))
    }

    fn power(&self, base: &Expr, exp: Exponent) -> Result<Complex64, EvalError> {
        if matches!(base, Expr::Input) {
            if self.u.modulus == 0.0 && exp.num < 0 {
                return Err(EvalError::DivisionByZero);
            }
            return Ok(self.u.pow(exp));
        }
        let b = self.value(base)?;
        if exp.is_integer() {
            let p = powi(b, exp.num.unsigned_abs());
            return if exp.num >= 0 { Ok(p) } else { checked_div(ONE, p) };
        }
        // only reachable for trees built in code; principal branch
        Ok(b.powf(exp.as_f64()))
    }

    fn value(&self, e: &Expr) -> Result<Complex64, EvalError> {
        Ok(match e {
            Expr::Num(v) => Complex64::new(*v, 0.0),
            Expr::Imag => Complex64::new(0.0, 1.0),
            Expr::Param(p) => self.param(p)?,
            Expr::State(k) => self.state(*k)?,
            Expr::Input => self.u.value(),
            Expr::Neg(a) => -self.value(a)?,
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.value(a)?, self.value(b)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => checked_div(a, b)?,
                }
            }
            Expr::Pow(a, exp) => self.power(a, *exp)?,
            Expr::Call(f, a) => apply(*f, self.value(a)?),
        })
    }

    fn dual(&self, e: &Expr) -> Result<Dual, EvalError> {
        let n = self.x.len() + 1;
        Ok(match e {
            Expr::Num(_) | Expr::Imag | Expr::Param(_) => Dual::constant(self.value(e)?, n),
            Expr::State(k) => Dual::seed(self.state(*k)?, n, *k),
            Expr::Input => Dual::seed(self.u.value(), n, n - 1),
            Expr::Neg(a) => self.dual(a)?.map(|v| -v, |d| -d),
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.dual(a)?, self.dual(b)?);
                match op {
                    BinOp::Add => a.zip(&b, a.v + b.v, |x, y| x + y),
                    BinOp::Sub => a.zip(&b, a.v - b.v, |x, y| x - y),
                    BinOp::Mul => a.zip(&b, a.v * b.v, |x, y| x * b.v + a.v * y),
                    BinOp::Div => {
                        let q = checked_div(a.v, b.v)?;
                        let bb = b.v * b.v;
                        a.zip(&b, q, |x, y| (x * b.v - a.v * y) / bb)
                    }
                }
            }
            Expr::Pow(base, exp) => {
                let v = self.power(base, *exp)?;
                if matches!(**base, Expr::Input) {
                    // d/du u^r = r u^r / u
                    let du = if exp.num == 0 {
                        ZERO
                    } else {
                        checked_div(v * exp.as_f64(), self.u.value())?
                    };
                    let mut d = vec![ZERO; n];
                    d[n - 1] = du;
                    Dual { v, d }
                } else {
                    let b = self.dual(base)?;
                    let slope = if exp.num == 0 {
                        ZERO
                    } else if exp.is_integer() && exp.num > 0 {
                        powi(b.v, (exp.num - 1) as u64) * exp.num as f64
                    } else {
                        checked_div(v * exp.as_f64(), b.v)?
                    };
                    b.map(|_| v, |d| d * slope)
                }
            }
            Expr::Call(f, a) => {
                let a = self.dual(a)?;
                let v = apply(*f, a.v);
                let slope = match f {
                    Func::Sin => a.v.cos(),
                    Func::Cos => -a.v.sin(),
                    Func::Exp => v,
                    Func::Sqrt => checked_div(ONE, v * 2.0)?,
                };
                a.map(|_| v, |d| d * slope)
            }
        })
    }
}

struct Dual {
    v: Complex64,
    d: Vec<Complex64>,
}

impl Dual {
    fn constant(v: Complex64, n: usize) -> Self {
        Dual { v, d: vec![ZERO; n] }
    }

    fn seed(v: Complex64, n: usize, k: usize) -> Self {
        let mut d = vec![ZERO; n];
        d[k] = ONE;
        Dual { v, d }
    }

    fn map(self, fv: impl Fn(Complex64) -> Complex64, fd: impl Fn(Complex64) -> Complex64) -> Self {
        Dual {
            v: fv(self.v),
            d: self.d.into_iter().map(fd).collect(),
        }
    }

    fn zip(&self, other: &Dual, v: Complex64, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        Dual {
            v,
            d: self.d.iter().zip(&other.d).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    use super::*;
    use crate::expr::parse;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn p(src: &str, dim: usize, names: &[&str]) -> Expr {
        let names: BTreeSet<String> = names.iter().map(|s| s.to_string()).collect();
        parse(src, dim, &names).unwrap()
    }

    #[test]
    fn evaluates_arithmetic() {
        let e = p("x1 + x2^2", 2, &[]);
        let v = eval(&e, &[c(1.0, 0.0), c(2.0, 0.0)], c(0.0, 0.0), &Params::new()).unwrap();
        assert_eq!(v, c(5.0, 0.0));
    }

    #[test]
    fn identity_observable() {
        let e = p("u", 1, &[]);
        let u = Phasor::new(1.0, PI / 2.0);
        let v = eval(&e, &[c(0.0, 0.0)], u, &Params::new()).unwrap();
        assert!((v - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn square_root_of_input_follows_tracked_phase() {
        // analytic continuation of sqrt(e^{i theta}) along theta in [0, 2pi]
        let e = p("u^(1/2)", 1, &[]);
        let steps = 64;
        let mut prev = c(1.0, 0.0);
        for k in 1..=steps {
            let theta = 2.0 * PI * k as f64 / steps as f64;
            let v = eval(&e, &[c(0.0, 0.0)], Phasor::new(1.0, theta), &Params::new()).unwrap();
            // continuity: consecutive values stay close
            assert!((v - prev).norm() < 0.1);
            prev = v;
        }
        assert!((prev - c(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn division_by_zero_and_unbound() {
        let e = p("1/x1", 1, &[]);
        assert_eq!(
            eval(&e, &[c(0.0, 0.0)], c(1.0, 0.0), &Params::new()),
            Err(EvalError::DivisionByZero)
        );
        let e = p("k*x1", 1, &["k"]);
        assert_eq!(
            eval(&e, &[c(1.0, 0.0)], c(1.0, 0.0), &Params::new()),
            Err(EvalError::UnboundParameter("k".into()))
        );
    }

    #[test]
    fn gradient_examples() {
        let mut params = Params::new();
        params.insert("a1".into(), -1.0);
        let g = eval_grad(
            &p("a1*x1 + x2^2", 2, &["a1"]),
            &[c(3.0, 0.0), c(2.0, 0.0)],
            c(0.0, 0.0),
            &params,
        )
        .unwrap();
        assert_eq!(g.dx, vec![c(-1.0, 0.0), c(4.0, 0.0)]);
        assert_eq!(g.du, c(0.0, 0.0));

        let g = eval_grad(&p("u^2", 1, &[]), &[c(0.0, 0.0)], c(1.0, 1.0), &Params::new()).unwrap();
        assert!((g.du - c(2.0, 2.0)).norm() < 1e-15);

        let g = eval_grad(
            &p("x2*u", 2, &[]),
            &[c(0.0, 0.0), c(5.0, 0.0)],
            c(0.0, 2.0),
            &Params::new(),
        )
        .unwrap();
        assert_eq!(g.dx[0], c(0.0, 0.0));
        assert!((g.dx[1] - c(0.0, 2.0)).norm() < 1e-15);
        assert!((g.du - c(5.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn gradient_of_functions() {
        let e = p("sin(x1)*exp(u) + sqrt(x1) + cos(u)", 1, &[]);
        let x = c(0.7, -0.2);
        let u = c(0.3, 0.4);
        let g = eval_grad(&e, &[x], u, &Params::new()).unwrap();
        let want_dx = x.cos() * u.exp() + 0.5 / x.sqrt();
        let want_du = x.sin() * u.exp() - u.sin();
        assert!((g.dx[0] - want_dx).norm() < 1e-14);
        assert!((g.du - want_du).norm() < 1e-14);
    }
}
