//! Parse, print, substitute and evaluate coefficient expressions.
//!
//! ```text
//! cargo run --example expressions
//! ```

use std::collections::HashMap;

use qvi_lab::expr::{parse, Var};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = parse("x1^2 - 0.5*y + max(0, t - 0.25) * exp(-x1)")?;
    println!("f           = {f}");
    println!("variables   = {:?}", f.variables().iter().map(|v| v.name()).collect::<Vec<_>>());

    let bindings: HashMap<String, f64> = [("t", 0.5), ("x1", 1.5), ("y", 2.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    println!("f(0.5, 1.5, y = 2) = {}", f.eval(&bindings)?);

    // Printing and re-parsing gives the same tree.
    let again = parse(&f.to_string())?;
    assert_eq!(again, f);

    // Freeze y at 0 to get a state-only reward.
    let frozen = f.substitute(Var::Y, &parse("0")?);
    println!("f(y = 0)    = {frozen}");

    for bad in ["x1 +", "x3 * 2", "sqrt(-1)"] {
        match parse(bad).map(|e| e.eval(&bindings)) {
            Err(e) => println!("{bad:>10}: parse error: {e}"),
            Ok(Err(e)) => println!("{bad:>10}: eval error: {e}"),
            Ok(Ok(v)) => println!("{bad:>10}: {v}"),
        }
    }
    Ok(())
}
