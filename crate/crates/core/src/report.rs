//! Serialization of run results: the CSV estimate table and the structured
//! text form of a fitted policy.

use std::io::Write;

use crate::error::Result;
use crate::evaluator::EstimateReport;
use crate::solver::PolicyTable;

pub const CSV_HEADER: &str =
    "problem,basis,M,N,seed,p1,p1_stderr,p2,p2_stderr,mid,runtime_s,ref_value";

/// One CSV row per report; `ref_value` stays empty when no reference exists.
pub fn write_csv_header(out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    Ok(())
}

pub fn write_csv_row(out: &mut dyn Write, r: &EstimateReport) -> Result<()> {
    let ref_value = r.ref_value.map(|v| v.to_string()).unwrap_or_default();
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.problem,
        r.basis,
        r.paths,
        r.steps,
        r.seed,
        r.p1,
        r.p1_stderr,
        r.p2,
        r.p2_stderr,
        r.mid,
        r.runtime_s,
        ref_value
    )?;
    Ok(())
}

/// Structured text form of a policy: one block per time step with the basis
/// name, the argmax strategy tag and the fitted coefficients.
pub fn write_policy(out: &mut dyn Write, policy: &PolicyTable) -> Result<()> {
    writeln!(out, "problem: {}", policy.problem_name)?;
    writeln!(out, "basis: {}", policy.basis.name)?;
    writeln!(out, "strategy: {:?}", policy.basis.control_structure)?;
    writeln!(out, "steps: {}", policy.steps.len())?;
    for (i, step) in policy.steps.iter().enumerate() {
        writeln!(out, "step {i} t={}", policy.grid.knots()[i])?;
        write!(out, "  y:")?;
        for c in &step.y_fit.coefficients {
            write!(out, " {c:.12e}")?;
        }
        writeln!(out)?;
        if let Some(z_fits) = &step.z_fits {
            for (k, f) in z_fits.iter().enumerate() {
                write!(out, "  z{k}:")?;
                for c in &f.coefficients {
                    write!(out, " {c:.12e}")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_with_and_without_reference() {
        let mut r = EstimateReport {
            problem: "uv_callspread".into(),
            basis: "callspread_sigmoid".into(),
            paths: 1024,
            steps: 8,
            seed: 7,
            p1: 11.3,
            p1_stderr: 0.01,
            p2: 11.1,
            p2_stderr: 0.02,
            mid: 11.2,
            runtime_s: 0.5,
            ref_value: Some(11.2),
        };
        let mut buf = Vec::new();
        write_csv_header(&mut buf).unwrap();
        write_csv_row(&mut buf, &r).unwrap();
        r.ref_value = None;
        write_csv_row(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].ends_with(",11.2"));
        assert!(lines[2].ends_with(",0.5,"));
        assert_eq!(lines[1].split(',').count(), 12);
    }
}
