use std::collections::BTreeSet;

use super::{BinOp, Exponent, Expr, Func, ParseError};

/// Parses `source` against a plant of dimension `dim` with the given
/// parameter names.
///
/// Precedence, loosest first: `+ -`, `* /`, unary `-`, `^`. Exponents are
/// integer literals, or parenthesised rationals `(p/q)` on `u` only.
pub fn parse(source: &str, dim: usize, params: &BTreeSet<String>) -> Result<Expr, ParseError> {
    let mut p = Parser {
        chars: source.chars().collect(),
        pos: 0,
        dim,
        params,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(p.syntax("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.syntax(&format!("unexpected `{}`", p.chars[p.pos])));
    }
    Ok(e)
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    dim: usize,
    params: &'a BTreeSet<String>,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        self.skip_ws();
        if !self.eat('^') {
            return Ok(base);
        }
        let at = self.pos;
        let exp = self.exponent()?;
        self.skip_ws();
        if self.peek() == Some('^') {
            return Err(ParseError::BadExponent {
                offset: self.pos,
                message: "chained powers are not supported".into(),
            });
        }
        let is_input = matches!(base, Expr::Input);
        if !is_input && !(exp.is_integer() && exp.num >= 0) {
            return Err(ParseError::BadExponent {
                offset: at,
                message: "only `u` may carry negative or fractional exponents".into(),
            });
        }
        Ok(Expr::Pow(Box::new(base), exp))
    }

    fn exponent(&mut self) -> Result<Exponent, ParseError> {
        self.skip_ws();
        let at = self.pos;
        let bad = |message: &str| ParseError::BadExponent {
            offset: at,
            message: message.to_string(),
        };
        if self.eat('(') {
            let neg = self.eat('-');
            let num = self.integer().ok_or_else(|| bad("expected an integer"))?;
            let den = if self.eat('/') {
                self.integer().ok_or_else(|| bad("expected an integer denominator"))?
            } else {
                1
            };
            if !self.eat(')') {
                return Err(bad("expected `)` after exponent"));
            }
            let num = if neg { -num } else { num };
            Exponent::rational(num, den).ok_or_else(|| bad("zero denominator"))
        } else {
            let neg = self.eat('-');
            let n = self
                .integer()
                .ok_or_else(|| bad("exponent must be an integer or a parenthesised rational"))?;
            Ok(Exponent::integer(if neg { -n } else { n }))
        }
    }

    fn integer(&mut self) -> Option<i64> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        // a decimal point or exponent marker means this is not an integer
        if matches!(self.peek(), Some('.') | Some('e') | Some('E')) {
            self.pos = start;
            return None;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse().ok()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let Some(c) = self.peek() else {
            return Err(self.syntax("unexpected end of input"));
        };
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c.is_alphabetic() || c == '_' {
            return self.identifier();
        }
        Err(self.syntax(&format!("unexpected `{c}`")))
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.peek().is_some_and(|c| c.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.peek() == Some('.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+') | Some('-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = mark;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        let unknown = || ParseError::UnknownIdentifier {
            name: name.clone(),
            offset: start,
        };

        if let Some(f) = Func::from_name(&name) {
            let save = self.pos;
            if self.eat('(') {
                let arg = self.expr()?;
                self.expect(')')?;
                return Ok(Expr::Call(f, Box::new(arg)));
            }
            self.pos = save;
        }
        match name.as_str() {
            "u" => return Ok(Expr::Input),
            "i" => return Ok(Expr::Imag),
            _ => {}
        }
        if let Some(idx) = name.strip_prefix('x') {
            if !idx.is_empty() && idx.chars().all(|c| c.is_ascii_digit()) {
                return match idx.parse::<usize>() {
                    Ok(k) if k >= 1 && k <= self.dim => Ok(Expr::State(k - 1)),
                    _ => Err(unknown()),
                };
            }
        }
        if self.params.contains(&name) {
            return Ok(Expr::Param(name));
        }
        Err(unknown())
    }
}
