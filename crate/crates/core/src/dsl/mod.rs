//! Arithmetic expression DSL for dynamics, outputs, gains, and Lyapunov
//! candidates.
//!
//! Expressions are infix arithmetic over IEEE doubles with function-call
//! syntax, 1-based state variables `x1..xn`, input variables `u1..um`, and
//! the reserved scalars `s` and `t`. There are no conditionals or loops;
//! piecewise needs are covered by `min`, `max`, and `abs`. Evaluation is
//! pure and total: every result is finite or a [`DomainFault`] is reported.

mod parser;

pub use parser::parse;

use crate::error::{DomainFault, Error, Result};

/// A variable reference inside an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// `x<k>`, zero-based index.
    State(usize),
    /// `u<k>`, zero-based index.
    Input(usize),
    /// The reserved scalar `s` (gain argument / size).
    S,
    /// The reserved scalar `t` (time).
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
}

/// Declared variable dimensions an expression is parsed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub n_states: usize,
    pub n_inputs: usize,
}

impl Scope {
    pub fn new(n_states: usize, n_inputs: usize) -> Self {
        Scope { n_states, n_inputs }
    }

    /// Scope of a pure scalar function (gains, weights): only `s` and `t`.
    pub fn scalar() -> Self {
        Scope::new(0, 0)
    }
}

/// Which variable groups an expression actually references.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VarUse {
    pub states: bool,
    pub inputs: bool,
    pub s: bool,
    pub t: bool,
}

/// Bindings for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub s: f64,
    pub t: f64,
}

impl<'a> EvalContext<'a> {
    pub fn state(x: &'a [f64]) -> Self {
        EvalContext {
            x,
            u: &[],
            s: 0.0,
            t: 0.0,
        }
    }

    pub fn state_input(x: &'a [f64], u: &'a [f64]) -> Self {
        EvalContext {
            x,
            u,
            s: 0.0,
            t: 0.0,
        }
    }

    pub fn scalar_s(s: f64) -> Self {
        EvalContext {
            x: &[],
            u: &[],
            s,
            t: 0.0,
        }
    }

    pub fn scalar_t(t: f64) -> Self {
        EvalContext {
            x: &[],
            u: &[],
            s: 0.0,
            t,
        }
    }

    pub fn scalar_st(s: f64, t: f64) -> Self {
        EvalContext {
            x: &[],
            u: &[],
            s,
            t,
        }
    }
}

/// A parsed, immutable expression tied to the scope it was declared in.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    ast: Ast,
    scope: Scope,
}

impl Expression {
    pub(crate) fn new(ast: Ast, scope: Scope) -> Self {
        Expression { ast, scope }
    }

    /// Constant expression, scope-free.
    pub fn constant(value: f64) -> Self {
        Expression {
            ast: Ast::Const(value),
            scope: Scope::scalar(),
        }
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    pub fn var_use(&self) -> VarUse {
        let mut use_ = VarUse::default();
        collect_var_use(&self.ast, &mut use_);
        use_
    }

    /// Evaluate with the given bindings. The context must supply at least as
    /// many states/inputs as the declared scope; this is enforced by the
    /// types that own expressions.
    pub fn eval(&self, ctx: &EvalContext) -> std::result::Result<f64, DomainFault> {
        eval_ast(&self.ast, ctx)
    }

    /// Central finite-difference gradient with respect to the state vector.
    ///
    /// `h_step` is the per-coordinate step; see [`default_fd_step`].
    pub fn fd_gradient(&self, x: &[f64], h_step: f64) -> Result<Vec<f64>> {
        let mut grad = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h_step;
            let hi = self
                .eval(&EvalContext::state(&xp))
                .map_err(|fault| Error::Evaluation {
                    location: xp[i],
                    fault,
                })?;
            xp[i] = x[i] - h_step;
            let lo = self
                .eval(&EvalContext::state(&xp))
                .map_err(|fault| Error::Evaluation {
                    location: xp[i],
                    fault,
                })?;
            xp[i] = x[i];
            grad.push((hi - lo) / (2.0 * h_step));
        }
        Ok(grad)
    }

    /// Canonical textual form; parses back to a structurally identical AST.
    pub fn unparse(&self) -> String {
        let mut out = String::new();
        unparse_ast(&self.ast, 0, &mut out);
        out
    }
}

impl std::fmt::Display for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.unparse())
    }
}

/// Default finite-difference step: `1e-5 * max(1, |x|)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-5 * norm.max(1.0)
}

fn collect_var_use(ast: &Ast, use_: &mut VarUse) {
    match ast {
        Ast::Const(_) => {}
        Ast::Var(Var::State(_)) => use_.states = true,
        Ast::Var(Var::Input(_)) => use_.inputs = true,
        Ast::Var(Var::S) => use_.s = true,
        Ast::Var(Var::T) => use_.t = true,
        Ast::Unary(_, a) => collect_var_use(a, use_),
        Ast::Binary(_, a, b) => {
            collect_var_use(a, use_);
            collect_var_use(b, use_);
        }
    }
}

fn finite(op: &'static str, operand: f64, value: f64) -> std::result::Result<f64, DomainFault> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DomainFault { op, operand })
    }
}

fn eval_ast(ast: &Ast, ctx: &EvalContext) -> std::result::Result<f64, DomainFault> {
    match ast {
        Ast::Const(c) => Ok(*c),
        Ast::Var(Var::State(i)) => Ok(ctx.x[*i]),
        Ast::Var(Var::Input(j)) => Ok(ctx.u[*j]),
        Ast::Var(Var::S) => Ok(ctx.s),
        Ast::Var(Var::T) => Ok(ctx.t),
        Ast::Unary(op, a) => {
            let v = eval_ast(a, ctx)?;
            match op {
                UnaryOp::Neg => Ok(-v),
                UnaryOp::Abs => Ok(v.abs()),
                UnaryOp::Exp => finite("exp", v, v.exp()),
                UnaryOp::Ln => {
                    if v <= 0.0 {
                        Err(DomainFault {
                            op: "ln",
                            operand: v,
                        })
                    } else {
                        finite("ln", v, v.ln())
                    }
                }
                UnaryOp::Sqrt => {
                    if v < 0.0 {
                        Err(DomainFault {
                            op: "sqrt",
                            operand: v,
                        })
                    } else {
                        Ok(v.sqrt())
                    }
                }
                UnaryOp::Sin => Ok(v.sin()),
                UnaryOp::Cos => Ok(v.cos()),
                UnaryOp::Tanh => Ok(v.tanh()),
            }
        }
        Ast::Binary(op, a, b) => {
            let va = eval_ast(a, ctx)?;
            let vb = eval_ast(b, ctx)?;
            match op {
                BinOp::Add => finite("add", va, va + vb),
                BinOp::Sub => finite("sub", va, va - vb),
                BinOp::Mul => finite("mul", va, va * vb),
                BinOp::Div => {
                    if vb == 0.0 {
                        Err(DomainFault {
                            op: "div",
                            operand: vb,
                        })
                    } else {
                        finite("div", vb, va / vb)
                    }
                }
                BinOp::Pow => {
                    let r = va.powf(vb);
                    if r.is_nan() {
                        Err(DomainFault {
                            op: "pow",
                            operand: va,
                        })
                    } else {
                        finite("pow", va, r)
                    }
                }
                BinOp::Min => Ok(va.min(vb)),
                BinOp::Max => Ok(va.max(vb)),
            }
        }
    }
}

// Precedence levels for minimal parenthesization: additive 1, multiplicative
// 2, unary minus 3, pow 4 (right associative). Function calls never need
// parens around themselves.
fn unparse_ast(ast: &Ast, parent_prec: u8, out: &mut String) {
    use std::fmt::Write;
    match ast {
        Ast::Const(c) => {
            if *c < 0.0 {
                // keep a single token; parenthesize inside tighter contexts
                if parent_prec > 1 {
                    let _ = write!(out, "({})", c);
                } else {
                    let _ = write!(out, "{}", c);
                }
            } else {
                let _ = write!(out, "{}", c);
            }
        }
        Ast::Var(Var::State(i)) => {
            let _ = write!(out, "x{}", i + 1);
        }
        Ast::Var(Var::Input(j)) => {
            let _ = write!(out, "u{}", j + 1);
        }
        Ast::Var(Var::S) => out.push('s'),
        Ast::Var(Var::T) => out.push('t'),
        Ast::Unary(UnaryOp::Neg, a) => {
            let wrap = parent_prec > 3;
            if wrap {
                out.push('(');
            }
            out.push('-');
            unparse_ast(a, 3, out);
            if wrap {
                out.push(')');
            }
        }
        Ast::Unary(op, a) => {
            let name = match op {
                UnaryOp::Abs => "abs",
                UnaryOp::Exp => "exp",
                UnaryOp::Ln => "ln",
                UnaryOp::Sqrt => "sqrt",
                UnaryOp::Sin => "sin",
                UnaryOp::Cos => "cos",
                UnaryOp::Tanh => "tanh",
                UnaryOp::Neg => unreachable!(),
            };
            out.push_str(name);
            out.push('(');
            unparse_ast(a, 0, out);
            out.push(')');
        }
        Ast::Binary(op @ (BinOp::Min | BinOp::Max), a, b) => {
            out.push_str(if *op == BinOp::Min { "min" } else { "max" });
            out.push('(');
            unparse_ast(a, 0, out);
            out.push_str(", ");
            unparse_ast(b, 0, out);
            out.push(')');
        }
        Ast::Binary(op, a, b) => {
            let (prec, sym): (u8, _) = match op {
                BinOp::Add => (1, " + "),
                BinOp::Sub => (1, " - "),
                BinOp::Mul => (2, "*"),
                BinOp::Div => (2, "/"),
                BinOp::Pow => (4, "^"),
                BinOp::Min | BinOp::Max => unreachable!(),
            };
            let wrap = parent_prec > prec;
            if wrap {
                out.push('(');
            }
            match op {
                // left operand of pow must bind tighter (right associative)
                BinOp::Pow => {
                    unparse_ast(a, prec + 1, out);
                    out.push_str(sym);
                    unparse_ast(b, prec, out);
                }
                // subtraction and division: right operand needs the next level
                BinOp::Sub | BinOp::Div => {
                    unparse_ast(a, prec, out);
                    out.push_str(sym);
                    unparse_ast(b, prec + 1, out);
                }
                _ => {
                    unparse_ast(a, prec, out);
                    out.push_str(sym);
                    unparse_ast(b, prec, out);
                }
            }
            if wrap {
                out.push(')');
            }
        }
    }
}
