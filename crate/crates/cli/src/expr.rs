//! Scalar expressions in x, y, z, t for inline problem data.

use std::sync::Arc;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use majorant_core::mesh::Point;

use crate::error::CliError;

const FUNCTIONS: [&str; 16] = [
    "sin", "cos", "tan", "asin", "acos", "atan", "sinh", "cosh", "tanh", "exp", "ln", "log", "sqrt", "abs", "pow", "hypot",
];

/// Rewrites bare function names to the `math::` namespace and integer
/// literals to floats (so that `1/2` is one half).
fn normalize(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 16);
    let mut i = 0;
    let ident = |c: char| c.is_alphanumeric() || c == '_' || c == ':';
    while i < chars.len() {
        let c = chars[i];
        let prev_ident = i > 0 && (ident(chars[i - 1]) || chars[i - 1] == '.');
        if c.is_ascii_digit() && !prev_ident {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut float = false;
            if i < chars.len() && chars[i] == '.' {
                float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let mantissa: String = chars[start..i].iter().collect();
            out.push_str(&mantissa);
            if !float {
                out.push_str(".0");
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let exp_start = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                out.extend(&chars[exp_start..i]);
            }
            continue;
        }
        if c.is_alphabetic() && !prev_ident {
            let start = i;
            while i < chars.len() && ident(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if FUNCTIONS.contains(&word.as_str()) {
                out.push_str("math::");
            }
            out.push_str(&word);
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

/// A compiled expression.
#[derive(Clone)]
pub struct Expr {
    source: String,
    node: Arc<Node<DefaultNumericTypes>>,
}

impl std::fmt::Debug for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, CliError> {
        let node = build_operator_tree::<DefaultNumericTypes>(&normalize(src))
            .map_err(|e| CliError::Config(format!("cannot parse expression '{src}': {e}")))?;
        let expr = Self { source: src.to_string(), node: Arc::new(node) };
        // catch unknown names and non-numeric results up front
        expr.try_eval(&Point::new(0.25, 0.25, 0.25), 0.5)?;
        Ok(expr)
    }

    fn try_eval(&self, x: &Point, t: f64) -> Result<f64, CliError> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (name, v) in [("x", x.x), ("y", x.y), ("z", x.z), ("t", t), ("pi", std::f64::consts::PI)] {
            ctx.set_value(name.into(), Value::Float(v)).expect("hash map context is mutable");
        }
        self.node
            .eval_number_with_context(&ctx)
            .map_err(|e| CliError::Config(format!("cannot evaluate '{}': {e}", self.source)))
    }

    /// Value at (x, t). Expressions are checked when parsed; a later failure
    /// (e.g. a domain error inside a branch) gives NaN, which the pipeline
    /// rejects.
    pub fn eval(&self, x: &Point, t: f64) -> f64 {
        self.try_eval(x, t).unwrap_or(f64::NAN)
    }
}
