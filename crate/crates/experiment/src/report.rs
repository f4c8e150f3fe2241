//! Machine-readable CSV outputs and the human summary table.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dsfl_core::sequential::write_trace_csv;

use crate::runner::{compute_bias_table, summarize, ExperimentOutput, MeanSd, SummaryRow};
use crate::HarnessError;

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

/// `mean(sd)` with three decimals.
pub fn mean_sd(m: &MeanSd) -> String {
    format!("{:.3}({:.3})", m.mean, m.sd)
}

/// Writes `summary.csv`, `reps.csv`, `sites.csv`, `failures.csv`,
/// `summary.txt`, plus `bias.csv` when θ₀ is known and `trace.csv` when
/// traces were recorded. Returns the paths written.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let summary = summarize(output);
    let mut written = Vec::new();
    let m = output.sites;
    let p0 = output.p0;

    let mut w = writer(dir, "summary.csv")?;
    let mut header: Vec<String> = [
        "design",
        "sampler",
        "d1",
        "d2",
        "completed",
        "failures",
        "N_hat_mean",
        "N_hat_sd",
    ]
    .map(String::from)
    .to_vec();
    for j in 1..=m {
        header.push(format!("N_{j}_mean"));
        header.push(format!("N_{j}_sd"));
    }
    header.extend(["coverage", "auc_mean", "auc_sd", "efficiency_ratio"].map(String::from));
    w.write_record(&header)?;
    for row in &summary {
        let mut rec = vec![
            row.design.clone(),
            row.cell.sampler.to_string(),
            num(row.cell.d1),
            num(row.cell.d2),
            row.completed.to_string(),
            row.failures.to_string(),
            num(row.n_hat.mean),
            num(row.n_hat.sd),
        ];
        for s in &row.n_site {
            rec.push(num(s.mean));
            rec.push(num(s.sd));
        }
        rec.push(row.coverage.map_or_else(String::new, num));
        rec.push(num(row.auc.mean));
        rec.push(num(row.auc.sd));
        rec.push(row.efficiency_ratio.map_or_else(String::new, num));
        w.write_record(&rec)?;
    }
    w.flush()?;
    written.push(dir.join("summary.csv"));

    let mut w = writer(dir, "reps.csv")?;
    let mut header: Vec<String> = ["sampler", "d1", "d2", "rep", "N_hat"].map(String::from).to_vec();
    header.extend((1..=m).map(|j| format!("N_{j}")));
    header.extend((1..=p0).map(|k| format!("theta_hat_{k}")));
    header.extend(["covered", "wald", "auc_mean"].map(String::from));
    w.write_record(&header)?;
    for c in &output.cells {
        for r in &c.records {
            let mut rec = vec![
                c.cell.sampler.to_string(),
                num(c.cell.d1),
                num(c.cell.d2),
                r.rep.to_string(),
                r.n_hat.to_string(),
            ];
            rec.extend(r.n_per_site.iter().map(|n| n.to_string()));
            rec.extend(r.theta_hat.iter().map(|&t| num(t)));
            rec.push(r.covered.map_or_else(String::new, |b| u8::from(b).to_string()));
            rec.push(num(r.wald));
            rec.push(num(r.auc_mean));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    written.push(dir.join("reps.csv"));

    let mut w = writer(dir, "sites.csv")?;
    let mut header: Vec<String> = ["sampler", "d1", "d2", "rep", "site", "N"].map(String::from).to_vec();
    header.extend((1..=p0).map(|k| format!("theta_{k}")));
    header.push("auc".into());
    w.write_record(&header)?;
    for c in &output.cells {
        for r in &c.records {
            for (j, theta) in r.site_theta.iter().enumerate() {
                let mut rec = vec![
                    c.cell.sampler.to_string(),
                    num(c.cell.d1),
                    num(c.cell.d2),
                    r.rep.to_string(),
                    (j + 1).to_string(),
                    r.n_per_site[j].to_string(),
                ];
                rec.extend(theta.iter().map(|&t| num(t)));
                rec.push(num(r.site_auc[j]));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    written.push(dir.join("sites.csv"));

    let mut w = writer(dir, "failures.csv")?;
    w.write_record(["sampler", "d1", "d2", "rep", "site", "reason", "message"])?;
    for c in &output.cells {
        for f in &c.failures {
            w.write_record([
                c.cell.sampler.to_string(),
                num(c.cell.d1),
                num(c.cell.d2),
                f.rep.to_string(),
                f.site.map_or_else(String::new, |s| (s + 1).to_string()),
                f.reason.code().to_string(),
                f.message.clone(),
            ])?;
        }
    }
    w.flush()?;
    written.push(dir.join("failures.csv"));

    if let Some(theta0) = &output.theta0 {
        let mut w = writer(dir, "bias.csv")?;
        w.write_record([
            "design",
            "sampler",
            "d1",
            "d2",
            "estimator",
            "component",
            "abs_bias_mean",
            "abs_bias_sd",
        ])?;
        for c in &output.cells {
            for b in compute_bias_table(&c.records, theta0) {
                w.write_record([
                    output.label.clone(),
                    c.cell.sampler.to_string(),
                    num(c.cell.d1),
                    num(c.cell.d2),
                    b.estimator,
                    b.component.to_string(),
                    num(b.abs_bias.mean),
                    num(b.abs_bias.sd),
                ])?;
            }
        }
        w.flush()?;
        written.push(dir.join("bias.csv"));
    }

    if output.cells.iter().any(|c| !c.trace.is_empty()) {
        let mut out = BufWriter::new(File::create(dir.join("trace.csv"))?);
        writeln!(out, "sampler,d1,d2,site,step,k,mu_jk,v_A,stopped")?;
        for c in &output.cells {
            for (site, rows) in &c.trace {
                let mut buf = Vec::new();
                write_trace_csv(&mut buf, site + 1, rows, false)?;
                for line in String::from_utf8_lossy(&buf).lines() {
                    writeln!(out, "{},{},{},{line}", c.cell.sampler, num(c.cell.d1), num(c.cell.d2))?;
                }
            }
        }
        out.flush()?;
        written.push(dir.join("trace.csv"));
    }

    let text = human_table(output, &summary);
    std::fs::write(dir.join("summary.txt"), text)?;
    written.push(dir.join("summary.txt"));
    Ok(written)
}

/// Stopping times, coverage and AUC per cell, then absolute biases.
pub fn human_table(output: &ExperimentOutput, summary: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "design {}  replications {}", output.label, output.replications);
    for row in summary {
        let _ = writeln!(
            s,
            "\n{} d1={} d2={}  completed {} failed {}",
            row.cell.sampler, row.cell.d1, row.cell.d2, row.completed, row.failures
        );
        let _ = writeln!(s, "  N_hat    {}", mean_sd(&row.n_hat));
        for (j, n) in row.n_site.iter().enumerate() {
            let _ = writeln!(s, "  N_{:<6} {}", j + 1, mean_sd(n));
        }
        if let Some(cf) = row.coverage {
            let _ = writeln!(s, "  CF       {cf:.3}");
        }
        let _ = writeln!(s, "  AUC      {}", mean_sd(&row.auc));
        if let Some(r) = row.efficiency_ratio {
            let _ = writeln!(s, "  ratio    {r:.3}");
        }
    }
    if let Some(theta0) = &output.theta0 {
        for c in &output.cells {
            let rows = compute_bias_table(&c.records, theta0);
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                "\nabsolute bias, {} d1={} d2={}",
                c.cell.sampler, c.cell.d1, c.cell.d2
            );
            for k in 1..=theta0.len() {
                let line: Vec<String> = rows
                    .iter()
                    .filter(|b| b.component == k)
                    .map(|b| format!("{} {}", b.estimator, mean_sd(&b.abs_bias)))
                    .collect();
                let _ = writeln!(s, "  theta_{k}: {}", line.join("  "));
            }
        }
    }
    s
}
