//! Synthetic heterogeneous client data, windowing and CSV I/O.
//!
//! Each client belongs to one of `K` groups. A group fixes a level, a
//! sinusoid (amplitude and period) and a noise scale; clients draw their own
//! phase and noise. The first variable carries the signal. With a planted gap
//! `a`, every other variable sits strictly below it by more than `a`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::models::Batch;
use crate::stl::{Schema, Trace, TraceError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("planted gap violated for client {client} at step {step}")]
    GapViolated { client: usize, step: usize },
    #[error("series of {len} steps is too short for windows of {needed} steps")]
    TooShort { len: usize, needed: usize },
    #[error("csv row {row}: {got} cells, header has {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("csv row {row}, column `{column}`: `{cell}` is not a finite number")]
    NonNumeric {
        row: usize,
        column: String,
        cell: String,
    },
    #[error(
        "csv column `{column}` has a missing value at its {edge} edge that cannot be interpolated"
    )]
    MissingEdge { column: String, edge: &'static str },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Signal family shared by the clients of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFamily {
    pub level: f64,
    pub amplitude: f64,
    pub period: f64,
    /// Standard deviation of the Gaussian noise (clamped to 3 sigma).
    pub noise: f64,
    /// Per-variable offsets; entry 0 is ignored for the signal variable.
    pub offsets: Vec<f64>,
}

impl GroupFamily {
    /// Well-separated default family `k` of `groups`: levels spread over
    /// `[0.3, 1.7]`, periods cycling through five values.
    pub fn default_for(k: usize, groups: usize, n_vars: usize) -> Self {
        const PERIODS: [f64; 5] = [24.0, 12.0, 36.0, 8.0, 18.0];
        let level = if groups > 1 {
            0.3 + 1.4 * k as f64 / (groups - 1) as f64
        } else {
            1.0
        };
        GroupFamily {
            level,
            amplitude: 0.08 + 0.04 * (k % 2) as f64,
            period: PERIODS[k % PERIODS.len()],
            noise: 0.01,
            offsets: (0..n_vars).map(|v| 0.05 * v as f64).collect(),
        }
    }

    /// `[lo, hi]` that every value of the signal variable lies in.
    pub fn signal_range(&self) -> (f64, f64) {
        let r = self.amplitude + 3.0 * self.noise;
        (self.level - r, self.level + r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n_clients: usize,
    pub groups: Vec<GroupFamily>,
    pub n_vars: usize,
    pub series_len: usize,
    pub input_len: usize,
    pub output_len: usize,
    /// Planted gap `a` with `x1 - xv > a` for every other variable.
    pub gap: Option<f64>,
    /// Number of leading training windows in the desensitized sample.
    pub sample_size: usize,
    pub seed: u64,
}

impl GenSpec {
    /// Spec with `groups` default families.
    pub fn new(n_clients: usize, groups: usize, n_vars: usize, seed: u64) -> Self {
        GenSpec {
            n_clients,
            groups: (0..groups)
                .map(|k| GroupFamily::default_for(k, groups, n_vars))
                .collect(),
            n_vars,
            series_len: 720,
            input_len: 120,
            output_len: 24,
            gap: if n_vars > 1 { Some(0.1) } else { None },
            sample_size: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        if self.groups.len() > self.n_clients {
            return bad(format!(
                "{} groups but only {} clients",
                self.groups.len(),
                self.n_clients
            ));
        }
        if self.n_vars == 0 {
            return bad("n_vars must be at least 1".into());
        }
        if self.input_len == 0 || self.output_len == 0 {
            return bad("input_len and output_len must be positive".into());
        }
        if let Some(a) = self.gap {
            if !(a >= 0.0) || self.n_vars < 2 {
                return bad("gap needs n_vars >= 2 and a >= 0".into());
            }
        }
        for (k, g) in self.groups.iter().enumerate() {
            if g.offsets.len() != self.n_vars {
                return bad(format!(
                    "group {k} has {} offsets for {} vars",
                    g.offsets.len(),
                    self.n_vars
                ));
            }
            if !(g.noise >= 0.0 && g.noise < g.amplitude / 4.0) {
                return bad(format!(
                    "group {k}: noise {} must be below amplitude/4",
                    g.noise
                ));
            }
            if !(g.period > 0.0) {
                return bad(format!("group {k}: period must be positive"));
            }
            if self.gap.is_some() && g.offsets[1..].iter().any(|&o| !(o > 0.0) && g.noise == 0.0) {
                return bad(format!(
                    "group {k}: with a gap and no noise, offsets must be positive"
                ));
            }
        }
        // every split keeps at least one window after the overlap drop
        if self.windows_per_client() < 10 * self.output_len {
            return Err(DataError::TooShort {
                len: self.series_len,
                needed: self.input_len + 11 * self.output_len - 1,
            });
        }
        Ok(())
    }

    fn windows_per_client(&self) -> usize {
        (self.series_len + 1).saturating_sub(self.input_len + self.output_len)
    }

    pub fn schema(&self) -> Schema {
        Schema::new((1..=self.n_vars).map(|v| format!("x{v}"))).expect("distinct names")
    }
}

/// Train/val/test windows of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub series: Trace,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
    /// Leading training windows shared for clustering.
    pub sample: Batch,
}

/// All stride-1 (input, target) windows of `series`.
pub fn windows(series: &Trace, input_len: usize, output_len: usize) -> Result<Batch, DataError> {
    let need = input_len + output_len;
    if series.len() < need {
        return Err(DataError::TooShort {
            len: series.len(),
            needed: need,
        });
    }
    let count = series.len() - need + 1;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        inputs.push(series.slice(i, input_len));
        targets.push(series.slice(i + input_len, output_len));
    }
    Ok(Batch::new(inputs, targets).expect("aligned"))
}

/// Windows `series` and splits 80/10/10 by window index. The first
/// `output_len - 1` windows of the validation and test parts are dropped so
/// no target step appears in two splits.
pub fn split_client(
    id: usize,
    series: Trace,
    input_len: usize,
    output_len: usize,
    sample_size: usize,
) -> Result<ClientData, DataError> {
    let all = windows(&series, input_len, output_len)?;
    let n = all.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let gap = output_len - 1;
    let range = |a: usize, b: usize| (a.min(n)..b.min(n)).collect::<Vec<_>>();
    let train = all.subset(&range(0, n_train));
    let val = all.subset(&range(n_train + gap, n_train + n_val));
    let test = all.subset(&range(n_train + n_val + gap, n));
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(DataError::TooShort {
            len: series.len(),
            needed: input_len + 11 * output_len - 1,
        });
    }
    let sample = train.subset(&range(0, sample_size.min(train.len())));
    Ok(ClientData {
        id,
        series,
        train,
        val,
        test,
        sample,
    })
}

fn gen_series(spec: &GenSpec, client: usize, group: &GroupFamily) -> Result<Trace, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(client as u64 + 1);
    let phase = rng.random_range(0.0..group.period);
    let normal = Normal::new(0.0, group.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let noise = |rng: &mut ChaCha8Rng| {
        if group.noise == 0.0 {
            0.0
        } else {
            let c = 3.0 * group.noise;
            normal.sample(rng).clamp(-c, c)
        }
    };
    let v = spec.n_vars;
    let mut data = Vec::with_capacity(spec.series_len * v);
    for t in 0..spec.series_len {
        let angle = std::f64::consts::TAU * (t as f64 + phase) / group.period;
        let x = group.level + group.amplitude * angle.sin() + noise(&mut rng);
        data.push(x);
        for k in 1..v {
            let e = noise(&mut rng);
            data.push(match spec.gap {
                Some(a) => x - (a + group.offsets[k] + e.abs()),
                None => {
                    group.level + group.offsets[k] + group.amplitude * (angle + k as f64).sin() + e
                }
            });
        }
    }
    let tr = Trace::new(spec.schema(), data)?;
    if let Some(a) = spec.gap {
        for t in 0..tr.len() {
            for k in 1..v {
                if !(tr.get(t, 0) - tr.get(t, k) > a) {
                    return Err(DataError::GapViolated { client, step: t });
                }
            }
        }
    }
    Ok(tr)
}

/// Generates every client's data and the ground-truth group of each client.
/// Clients are assigned to groups round-robin.
pub fn generate(spec: &GenSpec) -> Result<(Vec<ClientData>, Vec<usize>), DataError> {
    spec.validate()?;
    let k = spec.groups.len();
    let labels: Vec<usize> = (0..spec.n_clients).map(|i| i % k).collect();
    let clients = (0..spec.n_clients)
        .into_par_iter()
        .map(|i| {
            let series = gen_series(spec, i, &spec.groups[labels[i]])?;
            split_client(i, series, spec.input_len, spec.output_len, spec.sample_size)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((clients, labels))
}

/// Reads a CSV with a header of variable names and one row per step.
/// Interior empty cells are filled by linear interpolation.
pub fn read_csv(reader: impl Read) -> Result<Trace, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let schema = Schema::new(header.clone())?;
    let w = header.len();
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); w];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != w {
            return Err(DataError::Ragged {
                row: row + 1,
                got: rec.len(),
                expected: w,
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            cols[c].push(if cell.is_empty() {
                None
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Some(v),
                    _ => {
                        return Err(DataError::NonNumeric {
                            row: row + 1,
                            column: header[c].clone(),
                            cell: cell.to_string(),
                        })
                    }
                }
            });
        }
    }
    let len = cols[0].len();
    if len == 0 {
        return Err(TraceError::Empty.into());
    }
    let mut filled = Vec::with_capacity(w);
    for (c, col) in cols.iter().enumerate() {
        filled.push(interpolate(col).map_err(|edge| DataError::MissingEdge {
            column: header[c].clone(),
            edge,
        })?);
    }
    let data = (0..len)
        .flat_map(|t| filled.iter().map(move |col| col[t]))
        .collect();
    Ok(Trace::new(schema, data)?)
}

fn interpolate(col: &[Option<f64>]) -> Result<Vec<f64>, &'static str> {
    if col.first().is_some_and(Option::is_none) {
        return Err("leading");
    }
    if col.last().is_some_and(Option::is_none) {
        return Err("trailing");
    }
    let mut out: Vec<f64> = Vec::with_capacity(col.len());
    let mut t = 0;
    while t < col.len() {
        match col[t] {
            Some(v) => {
                out.push(v);
                t += 1;
            }
            None => {
                let left = out[t - 1];
                let end = (t..col.len())
                    .find(|&s| col[s].is_some())
                    .expect("trailing checked");
                let right = col[end].unwrap();
                let span = (end - t + 1) as f64;
                for s in t..end {
                    let f = (s - t + 1) as f64 / span;
                    out.push(left + f * (right - left));
                }
                t = end;
            }
        }
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Trace, DataError> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes a header and one row per step; values round-trip exactly.
pub fn write_csv(trace: &Trace, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trace.schema().names())?;
    for t in 0..trace.len() {
        w.write_record(trace.row(t).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_examples() {
        let t = read_csv("a,b\n1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!((t.len(), t.n_vars()), (3, 2));
        let t = read_csv("x\n2\n\n4\n".replace("\n\n", "\n \n").as_bytes()).unwrap();
        assert_eq!(t.values(), &[2.0, 3.0, 4.0]);
        let t = read_csv("x,y\n0,1\n,1\n,1\n3,1\n".as_bytes()).unwrap();
        assert_eq!(t.column(0).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            read_csv("x,y\n,1\n2,3\n".as_bytes()),
            Err(DataError::MissingEdge {
                edge: "leading",
                ..
            })
        ));
        assert!(matches!(
            read_csv("x\n1\n\"\"\n".as_bytes()),
            Err(DataError::MissingEdge {
                edge: "trailing",
                ..
            })
        ));
        assert!(matches!(
            read_csv("x,y\n1,2\n3\n".as_bytes()),
            Err(DataError::Ragged { row: 2, .. })
        ));
        assert!(matches!(
            read_csv("x\n1\nabc\n".as_bytes()),
            Err(DataError::NonNumeric { row: 2, .. })
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let s = Schema::new(["x1", "x2"]).unwrap();
        let t = Trace::new(s, vec![0.1, 1.0 / 3.0, -2.5e-7, 12345.678]).unwrap();
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn splits_do_not_share_targets() {
        let s = Trace::univariate("x", &(0..100).map(f64::from).collect::<Vec<_>>()).unwrap();
        let c = split_client(0, s, 10, 5, 4).unwrap();
        let last_train = c
            .train
            .targets
            .last()
            .unwrap()
            .values()
            .last()
            .copied()
            .unwrap();
        let first_val = c.val.targets[0].values()[0];
        let last_val = c
            .val
            .targets
            .last()
            .unwrap()
            .values()
            .last()
            .copied()
            .unwrap();
        let first_test = c.test.targets[0].values()[0];
        assert!(first_val > last_train && first_test > last_val);
        assert_eq!(c.sample.len(), 4);
        assert_eq!(c.sample.inputs[3], c.train.inputs[3]);
    }

    #[test]
    fn spec_validation() {
        let mut s = GenSpec::new(3, 4, 2, 0);
        assert!(matches!(s.validate(), Err(DataError::Spec(_))));
        s = GenSpec::new(4, 2, 2, 0);
        s.groups[1].noise = 1.0;
        assert!(matches!(s.validate(), Err(DataError::Spec(_))));
        s = GenSpec::new(4, 2, 2, 0);
        s.series_len = 150;
        assert!(matches!(s.validate(), Err(DataError::TooShort { .. })));
    }
}
