//! Long-format plot data: one row per (variant, round) with mean and std.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use osnr_core::metrics::RunningMoments;

use crate::error::{BenchError, Result};
use crate::runner::{fmt_float, Manifest, AGGREGATE_DIR, TIMINGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Dynamic regret where round optima were recorded, root-finding regret otherwise.
    Regret,
    Violation,
    /// Mean per-round step time.
    StepTime,
}

impl FromStr for Quantity {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regret" => Ok(Quantity::Regret),
            "violation" => Ok(Quantity::Violation),
            "steptime" => Ok(Quantity::StepTime),
            other => Err(BenchError::InvalidArgument(format!(
                "unknown quantity {other:?} (expected regret, violation or steptime)"
            ))),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Regret => "regret",
            Quantity::Violation => "violation",
            Quantity::StepTime => "steptime",
        })
    }
}

pub const HEADER: &str = "round,algorithm,rho,mean,std";

type Rows = Vec<(usize, f64, f64)>;

fn read_columns(path: &Path, prefix: &str) -> Result<Option<Rows>> {
    let file = fs::File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (Some(mean), Some(std)) = (find(&format!("{prefix}_mean")), find(&format!("{prefix}_std"))) else {
        return Ok(None);
    };
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let (m, s) = (&record[mean], &record[std]);
        if m.is_empty() {
            return Ok(None);
        }
        let parse = |v: &str| v.parse::<f64>().map_err(|e| BenchError::InvalidArgument(format!("{}: {e}", path.display())));
        rows.push((record[0].parse().unwrap_or(rows.len() + 1), parse(m)?, parse(s)?));
    }
    Ok(Some(rows))
}

fn step_times(bundle: &Path) -> Result<BTreeMap<(String, usize), RunningMoments>> {
    let path = bundle.join(TIMINGS);
    let file = fs::File::open(&path).map_err(|e| BenchError::io(&path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut acc: BTreeMap<(String, usize), RunningMoments> = BTreeMap::new();
    for record in rdr.records() {
        let r = record?;
        let round: usize = r[4].parse().map_err(|_| BenchError::InvalidArgument(format!("bad round in {}", path.display())))?;
        let secs: f64 = r[5].parse().map_err(|_| BenchError::InvalidArgument(format!("bad time in {}", path.display())))?;
        acc.entry((r[0].to_string(), round)).or_default().push(secs);
    }
    Ok(acc)
}

/// Writes `round,algorithm,rho,mean,std` rows for `quantity`. A bundle
/// without the quantity gets the header and a `#` warning line.
pub fn emit_plotdata(bundle: &Path, quantity: Quantity, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(bundle)?;
    let io = |e| BenchError::io(bundle, e);
    writeln!(out, "{HEADER}").map_err(io)?;
    let times = if quantity == Quantity::StepTime { Some(step_times(bundle)?) } else { None };
    let mut any = false;
    for v in &manifest.variants {
        let path = bundle.join(AGGREGATE_DIR).join(format!("{}.csv", v.label));
        let rows = match quantity {
            Quantity::Regret => match read_columns(&path, "dynamic_regret")? {
                Some(rows) => Some(rows),
                None => read_columns(&path, "root_regret")?,
            },
            Quantity::Violation => read_columns(&path, "violation")?,
            Quantity::StepTime => {
                let times = times.as_ref().expect("loaded above");
                let rows: Rows = times
                    .range((v.label.clone(), 0)..=(v.label.clone(), usize::MAX))
                    .map(|((_, round), m)| (*round, m.mean(), m.std()))
                    .collect();
                (!rows.is_empty()).then_some(rows)
            }
        };
        let Some(rows) = rows else { continue };
        any = true;
        let rho = match (v.rho, v.algorithm) {
            (Some(r), _) => r.to_string(),
            (None, osnr_core::Algorithm::Onm) => "1".into(),
            (None, _) => String::new(),
        };
        for (round, mean, std) in rows {
            writeln!(out, "{round},{},{rho},{},{}", v.algorithm, fmt_float(mean), fmt_float(std)).map_err(io)?;
        }
    }
    if !any {
        writeln!(out, "# warning: bundle has no {quantity} data ({} experiment)", manifest.config.experiment)
            .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantities_parse() {
        assert_eq!("regret".parse::<Quantity>().unwrap(), Quantity::Regret);
        assert_eq!("steptime".parse::<Quantity>().unwrap(), Quantity::StepTime);
        assert!(matches!("latency".parse::<Quantity>(), Err(BenchError::InvalidArgument(_))));
    }
}
