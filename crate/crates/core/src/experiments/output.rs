use std::io::Write;

use super::runner::ExperimentResult;
use crate::error::Result;

const HEADER: &str = "scenario,design,N,L,snr_db,mean_min_rate,stderr,trials,failures";

/// One line per row; `with_bound` appends the relaxation-bound column pair.
pub fn write_csv(result: &ExperimentResult, with_bound: bool, mut out: impl Write) -> Result<()> {
    write!(out, "{HEADER}")?;
    if with_bound {
        write!(out, ",mean_sdr_rate,sdr_stderr")?;
    }
    writeln!(out)?;
    for r in &result.rows {
        write!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{},{}",
            result.config.name,
            r.design.as_str(),
            r.antennas,
            r.paths,
            r.snr_db,
            r.mean_min_rate,
            r.stderr,
            r.trials,
            r.failures
        )?;
        if with_bound {
            write!(out, ",{:.6},{:.6}", r.mean_sdr_rate, r.sdr_stderr)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Full result, including the scenario, per-row diagnostics and the failure log.
pub fn write_json(result: &ExperimentResult, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, result)?;
    writeln!(out)?;
    Ok(())
}
