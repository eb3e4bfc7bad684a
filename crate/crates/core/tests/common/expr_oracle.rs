//! Reference expression trees with their own printer and evaluator.

use std::collections::HashMap;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use qvi_lab::expr::parse;

pub const VARS: [&str; 10] = ["t", "x1", "x2", "b1", "b2", "e1", "e2", "y", "z1", "z2"];
const UNARY: [&str; 7] = ["sin", "cos", "exp", "log", "sqrt", "abs", "tanh"];
const CALL2: [&str; 3] = ["min", "max", "pow"];
const OPS: [char; 5] = ['+', '-', '*', '/', '^'];

#[derive(Debug, Clone)]
pub enum T {
    Num(f64),
    Var(usize),
    Neg(Box<T>),
    Op(char, Box<T>, Box<T>),
    F1(&'static str, Box<T>),
    F2(&'static str, Box<T>, Box<T>),
}

impl T {
    /// Fully parenthesized source text.
    pub fn source(&self) -> String {
        match self {
            T::Num(c) => format!("{c:?}"),
            T::Var(k) => VARS[*k].to_string(),
            T::Neg(a) => format!("(-{})", a.source()),
            T::Op(op, a, b) => format!("({} {op} {})", a.source(), b.source()),
            T::F1(f, a) => format!("{f}({})", a.source()),
            T::F2(f, a, b) => format!("{f}({}, {})", a.source(), b.source()),
        }
    }

    /// `None` on domain errors: division by zero, log of a non-positive
    /// value, sqrt of a negative value, or a non-finite result.
    pub fn eval(&self, env: &[f64; 10]) -> Option<f64> {
        let fin = |v: f64| v.is_finite().then_some(v);
        match self {
            T::Num(c) => Some(*c),
            T::Var(k) => Some(env[*k]),
            T::Neg(a) => Some(-a.eval(env)?),
            T::Op(op, a, b) => {
                let (x, y) = (a.eval(env)?, b.eval(env)?);
                match op {
                    '+' => fin(x + y),
                    '-' => fin(x - y),
                    '*' => fin(x * y),
                    '/' if y == 0.0 => None,
                    '/' => fin(x / y),
                    _ => fin(x.powf(y)),
                }
            }
            T::F1(f, a) => {
                let x = a.eval(env)?;
                match *f {
                    "sin" => Some(x.sin()),
                    "cos" => Some(x.cos()),
                    "exp" => fin(x.exp()),
                    "log" if x <= 0.0 => None,
                    "log" => Some(x.ln()),
                    "sqrt" if x < 0.0 => None,
                    "sqrt" => Some(x.sqrt()),
                    "abs" => Some(x.abs()),
                    _ => Some(x.tanh()),
                }
            }
            T::F2(f, a, b) => {
                let (x, y) = (a.eval(env)?, b.eval(env)?);
                match *f {
                    "min" => Some(x.min(y)),
                    "max" => Some(x.max(y)),
                    _ => fin(x.powf(y)),
                }
            }
        }
    }
}

pub fn tree() -> impl Strategy<Value = T> {
    let leaf = prop_oneof![
        (0u32..4000, 0u32..3).prop_map(|(m, s)| T::Num(m as f64 / [1.0, 8.0, 1000.0][s as usize])),
        (0..VARS.len()).prop_map(T::Var),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| T::Neg(Box::new(a))),
            (0..OPS.len(), inner.clone(), inner.clone())
                .prop_map(|(k, a, b)| T::Op(OPS[k], Box::new(a), Box::new(b))),
            (0..UNARY.len(), inner.clone()).prop_map(|(k, a)| T::F1(UNARY[k], Box::new(a))),
            (0..CALL2.len(), inner.clone(), inner)
                .prop_map(|(k, a, b)| T::F2(CALL2[k], Box::new(a), Box::new(b))),
        ]
    })
}

pub fn env() -> impl Strategy<Value = [f64; 10]> {
    prop::array::uniform10(-3.0f64..3.0)
}

/// Parses the reference text, checks print/parse round trip and compares
/// the library's value with the reference evaluator.
pub fn check(t: &T, env: &[f64; 10]) -> Result<(), TestCaseError> {
    let src = t.source();
    let e = parse(&src).map_err(|err| TestCaseError::fail(format!("{src}: {err}")))?;
    let printed = e.to_string();
    let again = parse(&printed).map_err(|err| TestCaseError::fail(format!("{printed}: {err}")))?;
    prop_assert_eq!(&again, &e, "round trip of {} via {}", src, printed);
    prop_assert_eq!(again.to_string(), printed.clone());

    let bindings: HashMap<String, f64> = VARS.iter().zip(env).map(|(k, v)| (k.to_string(), *v)).collect();
    match (e.eval(&bindings), t.eval(env)) {
        (Ok(a), Some(b)) => prop_assert!(a.to_bits() == b.to_bits(), "{src}: {a} vs {b}"),
        (Err(_), None) => {}
        (got, want) => prop_assert!(false, "{src}: library {got:?}, reference {want:?}"),
    }
    Ok(())
}
