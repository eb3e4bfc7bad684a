//! Arithmetic expression language used to define model coefficients in
//! configuration files.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! number  := digits ('.' digits?)? (('e' | 'E') ('+' | '-')? digits)?
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-x1^2`
//! is `-(x1^2)`. Variables are `t`, `x1`, `x2`, `b1`, `b2`, `e1`, `e2`, `y`,
//! `z1`, `z2`; functions are `sin cos exp log sqrt abs tanh` (one argument)
//! and `min max pow` (two arguments).

use std::collections::HashMap;
use std::fmt;

/// Maximum state dimension supported by the variable set.
pub const MAX_DIM: usize = 2;

/// Number of variable slots (`t`, `x1..2`, `b1..2`, `e1..2`, `y`, `z1..2`).
pub const SLOT_COUNT: usize = 10;

/// A variable of the coefficient language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X(usize),
    B(usize),
    E(usize),
    Y,
    Z(usize),
}

impl Var {
    /// Every variable name accepted by the parser.
    pub const ALL: [Var; SLOT_COUNT] = [
        Var::T,
        Var::X(0),
        Var::X(1),
        Var::B(0),
        Var::B(1),
        Var::E(0),
        Var::E(1),
        Var::Y,
        Var::Z(0),
        Var::Z(1),
    ];

    pub fn slot(self) -> usize {
        match self {
            Var::T => 0,
            Var::X(k) => 1 + k,
            Var::B(k) => 3 + k,
            Var::E(k) => 5 + k,
            Var::Y => 7,
            Var::Z(k) => 8 + k,
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        Var::ALL.iter().copied().find(|v| v.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X(0) => "x1",
            Var::X(_) => "x2",
            Var::B(0) => "b1",
            Var::B(_) => "b2",
            Var::E(0) => "e1",
            Var::E(_) => "e2",
            Var::Y => "y",
            Var::Z(0) => "z1",
            Var::Z(_) => "z2",
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFn {
    Min,
    Max,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

impl UnaryFn {
    fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Log => "log",
            UnaryFn::Sqrt => "sqrt",
            UnaryFn::Abs => "abs",
            UnaryFn::Tanh => "tanh",
        }
    }
}

impl BinaryFn {
    fn name(self) -> &'static str {
        match self {
            BinaryFn::Min => "min",
            BinaryFn::Max => "max",
            BinaryFn::Pow => "pow",
        }
    }
}

/// Parsed expression tree. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call1(UnaryFn, Box<Expr>),
    Call2(BinaryFn, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown identifier `{name}` at offset {offset}; allowed: {allowed}")]
    UnknownIdentifier {
        offset: usize,
        name: String,
        allowed: String,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("missing binding for variable `{0}`")]
    MissingBinding(Var),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Variable values indexed by [`Var::slot`].
pub type Slots = [f64; SLOT_COUNT];

fn allowed_names() -> String {
    let vars: Vec<&str> = Var::ALL.iter().map(|v| v.name()).collect();
    format!(
        "variables {}; functions sin, cos, exp, log, sqrt, abs, tanh, min, max, pow",
        vars.join(", ")
    )
}

/// Parses `source` into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src: source.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.pos >= p.src.len() {
        return Err(p.expected("expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.expected("operator or end of input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expected(&self, what: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            expected: what.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'+' => BinOp::Add,
                b'-' => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'*' => BinOp::Mul,
                b'/' => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name_or_call(),
            _ => Err(self.expected("number, variable, function call or '('")),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.expected(&format!("'{}'", c as char)))
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.expected("digits"));
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save + 1;
                return Err(self.expected("exponent digits"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                expected: "number".into(),
            })
    }

    fn name_or_call(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii name");
        if self.peek() == Some(b'(') {
            let unary = match name {
                "sin" => Some(UnaryFn::Sin),
                "cos" => Some(UnaryFn::Cos),
                "exp" => Some(UnaryFn::Exp),
                "log" => Some(UnaryFn::Log),
                "sqrt" => Some(UnaryFn::Sqrt),
                "abs" => Some(UnaryFn::Abs),
                "tanh" => Some(UnaryFn::Tanh),
                _ => None,
            };
            let binary = match name {
                "min" => Some(BinaryFn::Min),
                "max" => Some(BinaryFn::Max),
                "pow" => Some(BinaryFn::Pow),
                _ => None,
            };
            if unary.is_none() && binary.is_none() {
                return Err(ParseError::UnknownIdentifier {
                    offset: start,
                    name: name.to_string(),
                    allowed: allowed_names(),
                });
            }
            self.pos += 1;
            let first = self.expr()?;
            if let Some(func) = unary {
                self.expect(b')')?;
                return Ok(Expr::Call1(func, Box::new(first)));
            }
            self.expect(b',')?;
            let second = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::Call2(binary.unwrap(), Box::new(first), Box::new(second)));
        }
        match Var::from_name(name) {
            Some(v) => Ok(Expr::Var(v)),
            None => Err(ParseError::UnknownIdentifier {
                offset: start,
                name: name.to_string(),
                allowed: allowed_names(),
            }),
        }
    }
}

fn checked(value: f64, what: &str) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::Domain(format!("{what} produced a non-finite value")))
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    /// Evaluates against a name → value map.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let mut slots = [f64::NAN; SLOT_COUNT];
        for v in self.variables() {
            match bindings.get(v.name()) {
                Some(&x) => slots[v.slot()] = x,
                None => return Err(EvalError::MissingBinding(v)),
            }
        }
        self.eval_slots(&slots)
    }

    /// Evaluates against pre-filled variable slots. Slots of variables that
    /// do not occur in the tree are ignored.
    pub fn eval_slots(&self, s: &Slots) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => Ok(s[v.slot()]),
            Expr::Neg(a) => Ok(-a.eval_slots(s)?),
            Expr::Binary(op, a, b) => {
                let x = a.eval_slots(s)?;
                let y = b.eval_slots(s)?;
                match op {
                    BinOp::Add => checked(x + y, "addition"),
                    BinOp::Sub => checked(x - y, "subtraction"),
                    BinOp::Mul => checked(x * y, "multiplication"),
                    BinOp::Div => {
                        if y == 0.0 {
                            Err(EvalError::Domain("division by zero".into()))
                        } else {
                            checked(x / y, "division")
                        }
                    }
                    BinOp::Pow => checked(x.powf(y), "power"),
                }
            }
            Expr::Call1(func, a) => {
                let x = a.eval_slots(s)?;
                match func {
                    UnaryFn::Sin => Ok(x.sin()),
                    UnaryFn::Cos => Ok(x.cos()),
                    UnaryFn::Exp => checked(x.exp(), "exp"),
                    UnaryFn::Log => {
                        if x <= 0.0 {
                            Err(EvalError::Domain(format!("log of non-positive value {x}")))
                        } else {
                            Ok(x.ln())
                        }
                    }
                    UnaryFn::Sqrt => {
                        if x < 0.0 {
                            Err(EvalError::Domain(format!("sqrt of negative value {x}")))
                        } else {
                            Ok(x.sqrt())
                        }
                    }
                    UnaryFn::Abs => Ok(x.abs()),
                    UnaryFn::Tanh => Ok(x.tanh()),
                }
            }
            Expr::Call2(func, a, b) => {
                let x = a.eval_slots(s)?;
                let y = b.eval_slots(s)?;
                match func {
                    BinaryFn::Min => Ok(x.min(y)),
                    BinaryFn::Max => Ok(x.max(y)),
                    BinaryFn::Pow => checked(x.powf(y), "pow"),
                }
            }
        }
    }

    /// Distinct variables occurring in the tree, in slot order.
    pub fn variables(&self) -> Vec<Var> {
        let mut seen = [false; SLOT_COUNT];
        self.visit_vars(&mut |v| seen[v.slot()] = true);
        Var::ALL.iter().copied().filter(|v| seen[v.slot()]).collect()
    }

    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) | Expr::Call1(_, a) => a.visit_vars(f),
            Expr::Binary(_, a, b) | Expr::Call2(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    /// Replaces every occurrence of `var` by `with`.
    pub fn substitute(&self, var: Var, with: &Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) if *v == var => with.clone(),
            Expr::Var(v) => Expr::Var(*v),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(var, with))),
            Expr::Call1(func, a) => Expr::Call1(*func, Box::new(a.substitute(var, with))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(var, with)),
                Box::new(b.substitute(var, with)),
            ),
            Expr::Call2(func, a, b) => Expr::Call2(
                *func,
                Box::new(a.substitute(var, with)),
                Box::new(b.substitute(var, with)),
            ),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.variables().is_empty()
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            // negative literals print with a sign, so they need the same
            // protection as a negation
            Expr::Const(c) if c.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints with the minimal parentheses needed to reparse into the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_child(f, 3)
            }
            Expr::Binary(op, a, b) => {
                let (left, right) = match op {
                    BinOp::Add | BinOp::Sub => (1, 2),
                    BinOp::Mul | BinOp::Div => (2, 3),
                    BinOp::Pow => (5, 3),
                };
                a.write_child(f, left)?;
                write!(f, " {} ", op.symbol())?;
                b.write_child(f, right)
            }
            Expr::Call1(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Call2(func, a, b) => write!(f, "{}({a}, {b})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(name: &str) -> Box<Expr> {
        Box::new(Expr::Var(Var::from_name(name).unwrap()))
    }

    fn c(x: f64) -> Box<Expr> {
        Box::new(Expr::Const(x))
    }

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn precedence_of_add_and_mul() {
        let e = parse("x1 + 2*t").unwrap();
        assert_eq!(
            e,
            Expr::Binary(
                BinOp::Add,
                var("x1"),
                Box::new(Expr::Binary(BinOp::Mul, c(2.0), var("t")))
            )
        );
    }

    #[test]
    fn unary_minus_is_looser_than_pow() {
        let e = parse("-x1^2").unwrap();
        assert_eq!(
            e,
            Expr::Neg(Box::new(Expr::Binary(BinOp::Pow, var("x1"), c(2.0))))
        );
    }

    #[test]
    fn pow_is_right_associative_and_sub_left() {
        let e = parse("2^3^2").unwrap();
        assert_eq!(e.eval_slots(&[0.0; SLOT_COUNT]).unwrap(), 512.0);
        let e = parse("10 - 4 - 3").unwrap();
        assert_eq!(e.eval_slots(&[0.0; SLOT_COUNT]).unwrap(), 3.0);
        let e = parse("12 / 3 / 2").unwrap();
        assert_eq!(e.eval_slots(&[0.0; SLOT_COUNT]).unwrap(), 2.0);
    }

    #[test]
    fn unbalanced_call_reports_offset() {
        let err = parse("min(1, max(x1,").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 14, .. }), "{err}");
    }

    #[test]
    fn unknown_identifier_lists_allowed_names() {
        let err = parse("x1 + w").unwrap_err();
        match err {
            ParseError::UnknownIdentifier { offset, name, allowed } => {
                assert_eq!(offset, 5);
                assert_eq!(name, "w");
                assert!(allowed.contains("x1") && allowed.contains("tanh"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("foo(1)"),
            Err(ParseError::UnknownIdentifier { offset: 0, .. })
        ));
    }

    #[test]
    fn whitespace_is_insignificant() {
        assert_eq!(parse(" x1+ 2 *t ").unwrap(), parse("x1+2*t").unwrap());
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Const(1.5e-3));
        assert_eq!(parse("2E+2").unwrap(), Expr::Const(200.0));
        assert_eq!(parse(".5").unwrap(), Expr::Const(0.5));
        assert!(parse("1e").is_err());
        // no implicit multiplication
        assert!(parse("2 x1").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn eval_examples() {
        let e = parse("x1 + 2*sin(t)").unwrap();
        assert_eq!(e.eval(&env(&[("t", 0.0), ("x1", 3.0)])).unwrap(), 3.0);
        let e = parse("max(abs(x1), 1)").unwrap();
        assert_eq!(e.eval(&env(&[("x1", -0.25)])).unwrap(), 1.0);
        let e = parse("pow(x1, 3) - min(x1, 0)").unwrap();
        assert_eq!(e.eval(&env(&[("x1", 2.0)])).unwrap(), 8.0);
    }

    #[test]
    fn eval_domain_errors() {
        let e = parse("log(x1)").unwrap();
        assert!(matches!(e.eval(&env(&[("x1", -1.0)])), Err(EvalError::Domain(_))));
        let e = parse("sqrt(x1)").unwrap();
        assert!(matches!(e.eval(&env(&[("x1", -1.0)])), Err(EvalError::Domain(_))));
        let e = parse("1 / x1").unwrap();
        assert!(matches!(e.eval(&env(&[("x1", 0.0)])), Err(EvalError::Domain(_))));
        let e = parse("exp(x1)").unwrap();
        assert!(matches!(e.eval(&env(&[("x1", 1e6)])), Err(EvalError::Domain(_))));
    }

    #[test]
    fn eval_missing_binding() {
        let e = parse("x1 + t").unwrap();
        assert_eq!(
            e.eval(&env(&[("x1", 1.0)])),
            Err(EvalError::MissingBinding(Var::T))
        );
    }

    #[test]
    fn substitute_replaces_variable() {
        let e = parse("y * 2 + x1").unwrap();
        let s = e.substitute(Var::Y, &parse("exp(-t) * y").unwrap());
        assert_eq!(s, parse("exp(-t) * y * 2 + x1").unwrap());
        assert_eq!(s.variables(), vec![Var::T, Var::X(0), Var::Y]);
    }

    #[test]
    fn display_reparses() {
        for src in [
            "-x1^2",
            "(-x1)^2",
            "a",
            "2^-x1^2",
            "x1 - (t - 1)",
            "x1 / (t * 2)",
            "-(x1 + 1) * 3",
            "min(x1, -t) ^ (2 + t)",
        ] {
            let Ok(e) = parse(src) else { continue };
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }
}
