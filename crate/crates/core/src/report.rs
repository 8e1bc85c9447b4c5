//! CSV and text artifacts. Floats are written in shortest round-trip form,
//! so reading a file back reproduces the values bit for bit.

use std::io::{Read, Write};

use crate::diagnostics::{BalanceTable, HistogramBin};
use crate::error::{Error, Result};
use crate::estimators::{Flags, Method, RieEstimate};
use crate::simulation::SimStudyResult;
use crate::superlearner::WeightRow;

pub const ESTIMATE_COLUMNS: [&str; 9] =
    ["method", "intervention", "psi", "se", "ci_low", "ci_high", "binding_share", "n", "flags"];
pub const WEIGHT_COLUMNS: [&str; 4] = ["intervention", "candidate", "cv_risk", "weight"];
pub const BALANCE_COLUMNS: [&str; 6] = ["intervention", "covariate", "smd", "ci_low", "ci_high", "adjusted"];
pub const HISTOGRAM_COLUMNS: [&str; 4] = ["intervention", "bin_lower", "bin_upper", "count"];
pub const SIMSTUDY_COLUMNS: [&str; 5] = ["method", "noise_dims", "bias", "se", "rmse"];
pub const SIM_RAW_COLUMNS: [&str; 5] = ["run", "noise_dims", "true_rie", "method", "estimate"];

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

pub fn write_estimates<W: Write>(out: W, estimates: &[RieEstimate]) -> Result<()> {
    let mut w = writer(out, &ESTIMATE_COLUMNS)?;
    for e in estimates {
        w.write_record([
            e.method.to_string(),
            e.intervention.clone(),
            e.psi.to_string(),
            e.se.to_string(),
            e.ci_low.to_string(),
            e.ci_high.to_string(),
            e.binding_share.to_string(),
            e.n.to_string(),
            e.flags.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read an estimates file. Intervals are taken from the file; `alpha` is
/// recorded on each estimate since the file does not carry it.
pub fn read_estimates<R: Read>(input: R, alpha: f64) -> Result<Vec<RieEstimate>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ESTIMATE_COLUMNS {
        return Err(Error::Schema(format!(
            "estimates file must have columns {}, found {}",
            ESTIMATE_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c).parse().map_err(|_| Error::Data {
                row: row + 1,
                column: ESTIMATE_COLUMNS[c].to_string(),
                message: format!("not a number: '{}'", field(c)),
            })
        };
        let data_err = |c: usize, e: Error| Error::Data { row: row + 1, column: ESTIMATE_COLUMNS[c].into(), message: e.to_string() };
        let method: Method = field(0).parse().map_err(|e| data_err(0, e))?;
        let flags: Flags = field(8).parse().map_err(|e| data_err(8, e))?;
        let n: usize = field(7).parse().map_err(|_| Error::Data {
            row: row + 1,
            column: "n".into(),
            message: format!("not a count: '{}'", field(7)),
        })?;
        out.push(RieEstimate {
            method,
            intervention: field(1).to_string(),
            psi: num(2)?,
            se: num(3)?,
            ci_low: num(4)?,
            ci_high: num(5)?,
            alpha,
            binding_share: num(6)?,
            n,
            flags,
        });
    }
    Ok(out)
}

pub fn write_weights<W: Write>(out: W, rows: &[WeightRow]) -> Result<()> {
    let mut w = writer(out, &WEIGHT_COLUMNS)?;
    for r in rows {
        w.write_record([r.intervention.clone(), r.candidate.clone(), r.cv_risk.to_string(), r.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Balance rows for one or more interventions. Skipped covariates are not
/// written; callers report them separately.
pub fn write_balance<W: Write>(out: W, tables: &[(String, BalanceTable)]) -> Result<()> {
    let mut w = writer(out, &BALANCE_COLUMNS)?;
    for (iv, table) in tables {
        for r in &table.rows {
            w.write_record([
                iv.clone(),
                r.covariate.clone(),
                r.smd.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.adjusted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(out: W, hists: &[(String, Vec<HistogramBin>)]) -> Result<()> {
    let mut w = writer(out, &HISTOGRAM_COLUMNS)?;
    for (iv, bins) in hists {
        for b in bins {
            w.write_record([iv.clone(), b.lower.to_string(), b.upper.to_string(), b.count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_simstudy<W: Write>(out: W, result: &SimStudyResult) -> Result<()> {
    let mut w = writer(out, &SIMSTUDY_COLUMNS)?;
    for c in &result.cells {
        w.write_record([
            c.method.to_string(),
            c.noise_dims.to_string(),
            c.bias.to_string(),
            c.se.to_string(),
            c.rmse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run raw estimates (unstandardized); failed runs have an empty estimate.
pub fn write_sim_raw<W: Write>(out: W, result: &SimStudyResult) -> Result<()> {
    let mut w = writer(out, &SIM_RAW_COLUMNS)?;
    for r in &result.runs {
        for (m, est) in result.methods.iter().zip(&r.estimates) {
            w.write_record([
                r.run.to_string(),
                r.noise_dims.to_string(),
                r.truth.to_string(),
                m.to_string(),
                est.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
