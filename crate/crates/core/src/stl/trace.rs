use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace must have at least one step")]
    Empty,
    #[error("trace schema is empty")]
    NoVariables,
    #[error("duplicate variable `{0}` in schema")]
    DuplicateVariable(String),
    #[error("row {row} has {got} values, schema has {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value at step {step}, variable `{var}`")]
    NonFinite { step: usize, var: String },
    #[error("suffix offset {offset} is past the end of a trace of length {len}")]
    SuffixOutOfRange { offset: usize, len: usize },
}

/// Ordered list of signal variable names shared by every trace drawn from
/// the same source.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Schema(Arc<[String]>);

impl Schema {
    pub fn new<I, S>(names: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(TraceError::NoVariables);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(TraceError::DuplicateVariable(n.clone()));
            }
        }
        Ok(Schema(names.into()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }
}

impl fmt::Debug for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// A finite, uniformly sampled multivariate signal. Data is row-major:
/// `data[step * n_vars + var]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    schema: Schema,
    data: Vec<f64>,
}

impl Trace {
    pub fn new(schema: Schema, data: Vec<f64>) -> Result<Self, TraceError> {
        let width = schema.len();
        if data.is_empty() {
            return Err(TraceError::Empty);
        }
        if !data.len().is_multiple_of(width) {
            return Err(TraceError::Ragged {
                row: data.len() / width,
                got: data.len() % width,
                expected: width,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TraceError::NonFinite {
                step: i / width,
                var: schema.names()[i % width].clone(),
            });
        }
        Ok(Trace { schema, data })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<f64>]) -> Result<Self, TraceError> {
        let width = schema.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != width {
                return Err(TraceError::Ragged {
                    row,
                    got: values.len(),
                    expected: width,
                });
            }
            data.extend_from_slice(values);
        }
        Trace::new(schema, data)
    }

    /// Single-variable trace named `var`.
    pub fn univariate(var: &str, values: &[f64]) -> Result<Self, TraceError> {
        Trace::new(Schema::new([var])?, values.to_vec())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_vars(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, step: usize, var: usize) -> f64 {
        self.data[step * self.schema.len() + var]
    }

    pub fn row(&self, step: usize) -> &[f64] {
        let w = self.schema.len();
        &self.data[step * w..(step + 1) * w]
    }

    pub fn column(&self, var: usize) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .skip(var)
            .step_by(self.schema.len())
            .copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Replaces the data in place. Length must match and values be finite.
    pub fn with_values(&self, data: Vec<f64>) -> Result<Self, TraceError> {
        if data.len() != self.data.len() {
            return Err(TraceError::Ragged {
                row: 0,
                got: data.len(),
                expected: self.data.len(),
            });
        }
        Trace::new(self.schema.clone(), data)
    }

    /// The trace restricted to steps `offset..`.
    pub fn suffix(&self, offset: usize) -> Result<Self, TraceError> {
        if offset >= self.len() {
            return Err(TraceError::SuffixOutOfRange {
                offset,
                len: self.len(),
            });
        }
        let w = self.schema.len();
        Ok(Trace {
            schema: self.schema.clone(),
            data: self.data[offset * w..].to_vec(),
        })
    }

    /// Steps `start..start + len`, panicking if out of range.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let w = self.schema.len();
        Trace {
            schema: self.schema.clone(),
            data: self.data[start * w..(start + len) * w].to_vec(),
        }
    }

    /// `(min, max)` over every value of variable `var`.
    pub fn range_of(&self, var: usize) -> (f64, f64) {
        self.column(var)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Range of every value across `traces`, or `max(|v|, 1)` when all values
/// are equal. Used to scale tolerances and strictness margins.
pub fn value_scale(traces: &[Trace]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for tr in traces {
        for &v in tr.values() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = hi - lo;
    if range.is_finite() && range > 0.0 {
        range
    } else if lo.is_finite() {
        lo.abs().max(1.0)
    } else {
        1.0
    }
}
