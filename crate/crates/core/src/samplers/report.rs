use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖𝒜x_k − y‖`
    pub residual: f64,
    pub tv: f64,
    /// Cumulative prior evaluations.
    pub nfe: usize,
    /// Cumulative wall time.
    pub ms: f64,
    /// Splitting residual `‖Dx − v‖` for ADMM.
    pub primal: Option<f64>,
}

/// Per-run record. Text form: `#`-prefixed header fields, then one
/// `k=… residual=… tv=… nfe=… ms=…` line per iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub sampler: String,
    pub init: String,
    pub initial_residual: f64,
    pub iterations: Vec<IterationRecord>,
    pub nfe: usize,
    pub wall_ms: f64,
}

impl RunReport {
    pub fn new(sampler: &str, init: &str, initial_residual: f64) -> Self {
        RunReport {
            sampler: sampler.into(),
            init: init.into(),
            initial_residual,
            ..Default::default()
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.iterations
            .last()
            .map_or(self.initial_residual, |r| r.residual)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::InvalidArgument(format!("malformed report line: {line}"));
        let mut r = RunReport::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest.trim().split_once(' ').ok_or_else(|| bad(line))?;
                let value = value.trim();
                match key {
                    "sampler" => r.sampler = value.into(),
                    "init" => r.init = value.into(),
                    "initial_residual" => r.initial_residual = value.parse().map_err(|_| bad(line))?,
                    "nfe" => r.nfe = value.parse().map_err(|_| bad(line))?,
                    "wall_ms" => r.wall_ms = value.parse().map_err(|_| bad(line))?,
                    _ => return Err(bad(line)),
                }
                continue;
            }
            let mut rec = IterationRecord {
                k: 0,
                residual: 0.0,
                tv: 0.0,
                nfe: 0,
                ms: 0.0,
                primal: None,
            };
            for field in line.split_whitespace() {
                let (key, value) = field.split_once('=').ok_or_else(|| bad(line))?;
                let f = || value.parse::<f64>().map_err(|_| bad(line));
                match key {
                    "k" => rec.k = value.parse().map_err(|_| bad(line))?,
                    "residual" => rec.residual = f()?,
                    "tv" => rec.tv = f()?,
                    "nfe" => rec.nfe = value.parse().map_err(|_| bad(line))?,
                    "ms" => rec.ms = f()?,
                    "primal" => rec.primal = Some(f()?),
                    _ => return Err(bad(line)),
                }
            }
            r.iterations.push(rec);
        }
        Ok(r)
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "# sampler {}", self.sampler)?;
        writeln!(s, "# init {}", self.init)?;
        writeln!(s, "# initial_residual {:e}", self.initial_residual)?;
        for r in &self.iterations {
            write!(
                s,
                "k={} residual={:e} tv={:e} nfe={} ms={:.3}",
                r.k, r.residual, r.tv, r.nfe, r.ms
            )?;
            if let Some(p) = r.primal {
                write!(s, " primal={p:e}")?;
            }
            s.push('\n');
        }
        writeln!(s, "# nfe {}", self.nfe)?;
        writeln!(s, "# wall_ms {:.3}", self.wall_ms)?;
        f.write_str(&s)
    }
}
