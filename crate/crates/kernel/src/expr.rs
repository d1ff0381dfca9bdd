//! Expressions `e ::= v | x | f(e...)` and their evaluation against a
//! per-process view of the variable store.
//!
//! Functions come from a registry of named pure total functions over
//! the value domain; evaluation is deterministic and never blocks.
//! Unbound variables evaluate to unit because the store is total.

use crate::state::{ProcName, VarName, VarStore};
use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Expr {
    Lit(Value),
    Var(VarName),
    Call(String, Vec<Expr>),
}

impl Expr {
    pub fn lit(v: Value) -> Expr {
        Expr::Lit(v)
    }

    pub fn int(n: i64) -> Expr {
        Expr::Lit(Value::Int(n))
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(VarName::new(name))
    }

    pub fn call(f: &str, args: Vec<Expr>) -> Expr {
        Expr::Call(f.to_owned(), args)
    }

    /// Every function name mentioned anywhere in the expression.
    pub fn function_names(&self, out: &mut Vec<String>) {
        match self {
            Expr::Lit(_) | Expr::Var(_) => {}
            Expr::Call(f, args) => {
                out.push(f.clone());
                for a in args {
                    a.function_names(out);
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(x) => write!(f, "{x}"),
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
}

type NamedFn = Arc<dyn Fn(&[Value]) -> Value + Send + Sync>;

/// Registry of named pure total functions over the value domain.
///
/// Totality is by convention: a builtin applied to values outside its
/// natural domain returns unit instead of failing, so evaluation only
/// errors on names that are not registered at all.
#[derive(Clone, Default)]
pub struct FnRegistry {
    fns: BTreeMap<String, NamedFn>,
}

impl FnRegistry {
    pub fn empty() -> Self {
        FnRegistry::default()
    }

    /// Registry with the standard builtins: `add`, `sub`, `mul`, `eq`,
    /// `lt`, `not`, `and`, `or`, `concat`.
    pub fn with_builtins() -> Self {
        let mut reg = FnRegistry::default();
        reg.register("add", |args| int_op(args, |a, b| a.wrapping_add(b)));
        reg.register("sub", |args| int_op(args, |a, b| a.wrapping_sub(b)));
        reg.register("mul", |args| int_op(args, |a, b| a.wrapping_mul(b)));
        reg.register("eq", |args| match args {
            [a, b] => Value::Bool(a == b),
            _ => Value::Unit,
        });
        reg.register("lt", |args| match args {
            [Value::Int(a), Value::Int(b)] => Value::Bool(a < b),
            _ => Value::Unit,
        });
        reg.register("not", |args| match args {
            [Value::Bool(b)] => Value::Bool(!b),
            _ => Value::Unit,
        });
        reg.register("and", |args| match args {
            [Value::Bool(a), Value::Bool(b)] => Value::Bool(*a && *b),
            _ => Value::Unit,
        });
        reg.register("or", |args| match args {
            [Value::Bool(a), Value::Bool(b)] => Value::Bool(*a || *b),
            _ => Value::Unit,
        });
        reg.register("concat", |args| match args {
            [Value::Str(a), Value::Str(b)] => Value::Str(format!("{a}{b}")),
            _ => Value::Unit,
        });
        reg
    }

    pub fn register(
        &mut self,
        name: &str,
        f: impl Fn(&[Value]) -> Value + Send + Sync + 'static,
    ) {
        self.fns.insert(name.to_owned(), Arc::new(f));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name)
    }

    pub fn apply(&self, name: &str, args: &[Value]) -> Result<Value, EvalError> {
        let f = self
            .fns
            .get(name)
            .ok_or_else(|| EvalError::UnknownFunction(name.to_owned()))?;
        Ok(f(args))
    }
}

impl fmt::Debug for FnRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnRegistry")
            .field("names", &self.fns.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Evaluate `e` under process `p`'s view of the store.
pub fn eval_expr(
    store: &VarStore,
    p: &ProcName,
    e: &Expr,
    fns: &FnRegistry,
) -> Result<Value, EvalError> {
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Var(x) => Ok(store.get(p, x)),
        Expr::Call(f, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_expr(store, p, a, fns)?);
            }
            fns.apply(f, &vals)
        }
    }
}

fn int_op(args: &[Value], op: impl Fn(i64, i64) -> i64) -> Value {
    match args {
        [Value::Int(a), Value::Int(b)] => Value::Int(op(*a, *b)),
        _ => Value::Unit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(p: &ProcName, pairs: &[(&str, Value)]) -> VarStore {
        let mut s = VarStore::default();
        for (x, v) in pairs {
            s.set(p, &VarName::new(*x), v.clone());
        }
        s
    }

    #[test]
    fn variable_lookup() {
        let p = ProcName::new("p");
        let s = store_with(&p, &[("x", Value::Int(3))]);
        let fns = FnRegistry::with_builtins();
        assert_eq!(eval_expr(&s, &p, &Expr::var("x"), &fns).unwrap(), Value::Int(3));
    }

    #[test]
    fn literal() {
        let p = ProcName::new("p");
        let fns = FnRegistry::empty();
        assert_eq!(
            eval_expr(&VarStore::default(), &p, &Expr::int(7), &fns).unwrap(),
            Value::Int(7)
        );
    }

    #[test]
    fn registered_function_application() {
        let p = ProcName::new("p");
        let s = store_with(&p, &[("x", Value::Int(2)), ("y", Value::Int(5))]);
        let fns = FnRegistry::with_builtins();
        let e = Expr::call("add", vec![Expr::var("x"), Expr::var("y")]);
        assert_eq!(eval_expr(&s, &p, &e, &fns).unwrap(), Value::Int(7));
    }

    #[test]
    fn unknown_function_errors() {
        let p = ProcName::new("p");
        let fns = FnRegistry::empty();
        let e = Expr::call("mystery", vec![]);
        assert_eq!(
            eval_expr(&VarStore::default(), &p, &e, &fns),
            Err(EvalError::UnknownFunction("mystery".into()))
        );
    }

    #[test]
    fn unbound_variable_is_unit() {
        let p = ProcName::new("p");
        let fns = FnRegistry::empty();
        assert_eq!(
            eval_expr(&VarStore::default(), &p, &Expr::var("ghost"), &fns).unwrap(),
            Value::Unit
        );
    }
}
