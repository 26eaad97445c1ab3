//! Signal temporal logic over discrete, finite, uniformly sampled traces.
//!
//! Formulas are built programmatically or parsed from the ASCII grammar in
//! [`parse`]. [`eval_bool`] implements the qualitative semantics and
//! [`robustness`] the quantitative (min/max) semantics. Windows are inclusive
//! step ranges; a window that runs past the end of the trace is an error.

mod eval;
mod formula;
mod parse;
mod trace;

pub(crate) use eval::{bind_predicate, BoundPredicate};
pub use eval::{eval_bool, robustness, EvalError, Monitor};
pub use formula::{Atom, Cmp, Formula, InvertedWindow, LinAtom, Predicate, Window};
pub use parse::{parse, ParseError};
pub use trace::{value_scale, Schema, Trace, TraceError};
