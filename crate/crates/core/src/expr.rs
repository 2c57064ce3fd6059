//! Thin helpers around `meval` so that expressions are evaluated with the
//! builtin functions (`sqrt`, `sin`, `exp`, ...) without rebuilding the
//! builtin table on every call.

use crate::error::{Error, Result};

thread_local! {
    static BUILTINS: meval::Context<'static> = meval::Context::new();
}

pub fn parse(src: &str, what: &str) -> Result<meval::Expr> {
    src.parse()
        .map_err(|e| Error::Config(format!("cannot parse {what} {src:?}: {e}")))
}

/// Evaluate with one bound variable. Evaluation errors and non-finite values
/// are returned as `None`.
pub fn eval1(expr: &meval::Expr, name: &str, value: f64) -> Option<f64> {
    BUILTINS
        .with(|ctx| expr.eval_with_context(((name, value), ctx)))
        .ok()
        .filter(|v| v.is_finite())
}

pub fn eval2(expr: &meval::Expr, names: [&str; 2], values: [f64; 2]) -> Option<f64> {
    BUILTINS
        .with(|ctx| expr.eval_with_context((((names[0], values[0]), (names[1], values[1])), ctx)))
        .ok()
        .filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_available() {
        let e = parse("sqrt(x)+sin(0)", "test").unwrap();
        assert_eq!(eval1(&e, "x", 4.0), Some(2.0));
        assert_eq!(eval1(&e, "x", -1.0), None);
        let e = parse("z1*z2", "test").unwrap();
        assert_eq!(eval2(&e, ["z1", "z2"], [2.0, 3.0]), Some(6.0));
        assert_eq!(eval1(&parse("y", "t").unwrap(), "x", 1.0), None);
    }
}
