//! Plain-text summary tables rendered from a results directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ingestion::results::Summary;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results in {0}")]
    Missing(String),
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
}

type Table = (Vec<String>, Vec<BTreeMap<String, String>>);

fn read_table(dir: &Path, name: &str) -> Result<Option<Table>, ReportError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Ok(None);
    }
    let parse = |e: csv::Error| ReportError::Parse {
        file: name.to_string(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(&path).map_err(parse)?;
    let header: Vec<String> = r
        .headers()
        .map_err(parse)?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(parse)?;
        rows.push(
            header
                .iter()
                .cloned()
                .zip(rec.iter().map(String::from))
                .collect(),
        );
    }
    Ok(Some((header, rows)))
}

fn pounds(mgbp: i64) -> f64 {
    mgbp as f64 / 1000.0
}

fn cell_pounds(row: &BTreeMap<String, String>, key: &str) -> String {
    match row.get(key).and_then(|v| v.parse::<i64>().ok()) {
        Some(m) => format!("{:.0}", pounds(m)),
        None => "-".into(),
    }
}

/// Restoration ratios binned in steps of 0.1 from 0 to 1.2; the last bin
/// collects everything above.
pub fn restoration_histogram(ratios: &[f64]) -> Vec<(String, usize)> {
    let mut bins = vec![0usize; 13];
    for r in ratios {
        let k = ((r / 0.1).floor().max(0.0) as usize).min(12);
        bins[k] += 1;
    }
    bins.into_iter()
        .enumerate()
        .map(|(k, n)| {
            let label = if k == 12 {
                ">=1.2".to_string()
            } else {
                format!("{:.1}-{:.1}", k as f64 * 0.1, (k + 1) as f64 * 0.1)
            };
            (label, n)
        })
        .collect()
}

/// Renders the run summary, monthly table, surplus distribution, policy
/// restoration and SEB figures.
pub fn render_report(dir: &Path) -> Result<String, ReportError> {
    let summary_path = dir.join("summary.json");
    let text = fs::read_to_string(&summary_path)
        .map_err(|_| ReportError::Missing(dir.display().to_string()))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        file: "summary.json".into(),
        message: e.to_string(),
    })?;
    let mut out = String::new();
    let m = &summary.meta;
    let w = &summary.warnings;
    writeln!(
        out,
        "run {} .. {}  days {}  markup {}  seed {}",
        m.from, m.to, summary.days, m.markup, m.seed
    )
    .ok();
    writeln!(
        out,
        "warnings: stack exhausted {}, calibration not converged {}, grid fallback {}, policy {}, failed days {}",
        w.stack_exhausted, w.calibration_not_converged, w.calibration_grid_fallback, w.policy, w.failed_days
    )
    .ok();
    for note in &summary.conventions {
        writeln!(out, "convention: {note}").ok();
    }

    writeln!(out, "\nconsumer cost stack (GBP)").ok();
    writeln!(
        out,
        "{:<9} {:>16} {:>14} {:>14} {:>14} {:>14} {:>16} {:>9}",
        "design", "wholesale", "balancing", "ro", "cfd", "rent", "total", "GBP/MWh"
    )
    .ok();
    for d in &summary.designs {
        let c = &d.consumer;
        writeln!(
            out,
            "{:<9} {:>16.0} {:>14.0} {:>14.0} {:>14.0} {:>14.0} {:>16.0} {:>9.2}",
            d.design.as_str(),
            pounds(c.wholesale_mgbp),
            pounds(c.bm_mgbp),
            pounds(c.ro_mgbp),
            pounds(c.cfd_mgbp),
            pounds(c.rent_mgbp),
            pounds(c.total_mgbp),
            d.consumer_per_mwh
        )
        .ok();
    }
    if let (Some(s), Some(p)) = (
        summary.consumer_saving_mgbp,
        summary.consumer_saving_per_mwh,
    ) {
        writeln!(
            out,
            "consumer saving zonal vs national: {:.0} GBP ({p:.3} GBP/MWh)",
            pounds(s)
        )
        .ok();
    }

    if let Some((_, rows)) = read_table(dir, "monthly.csv")? {
        writeln!(out, "\nmonthly").ok();
        writeln!(
            out,
            "{:<8} {:>4} {:>16} {:>16} {:>14} {:>14} {:>14}",
            "month", "days", "national", "zonal", "seb_bottom_up", "seb_top_down", "curtail_mwh"
        )
        .ok();
        for r in &rows {
            writeln!(
                out,
                "{:<8} {:>4} {:>16} {:>16} {:>14} {:>14} {:>14}",
                r["month"],
                r["days"],
                cell_pounds(r, "national_total_mgbp"),
                cell_pounds(r, "zonal_total_mgbp"),
                cell_pounds(r, "seb_bottom_up_mgbp"),
                cell_pounds(r, "seb_top_down_mgbp"),
                r.get("national_wind_curtailment_mwh")
                    .map_or("-", |s| s.as_str())
            )
            .ok();
        }
    }

    if let Some((_, rows)) = read_table(dir, "surplus.csv")? {
        if !rows.is_empty() {
            writeln!(out, "\nproducer surplus by technology (GBP)").ok();
            let mut by_tech: BTreeMap<String, (usize, i64, i64)> = BTreeMap::new();
            for r in &rows {
                let e = by_tech.entry(r["tech"].clone()).or_default();
                e.0 += 1;
                e.1 += r["national_mgbp"].parse::<i64>().unwrap_or(0);
                e.2 += r["zonal_mgbp"].parse::<i64>().unwrap_or(0);
            }
            writeln!(
                out,
                "{:<14} {:>5} {:>16} {:>16} {:>9}",
                "tech", "units", "national", "zonal", "change%"
            )
            .ok();
            for (tech, (n, ns, zs)) in by_tech {
                let pct = if ns != 0 {
                    format!("{:.2}", 100.0 * (zs - ns) as f64 / (ns as f64).abs())
                } else {
                    "-".into()
                };
                writeln!(
                    out,
                    "{tech:<14} {n:>5} {:>16.0} {:>16.0} {pct:>9}",
                    pounds(ns),
                    pounds(zs)
                )
                .ok();
            }
        }
    }

    if let Some(p) = &summary.policy {
        writeln!(
            out,
            "\npolicy {}  covered units {}  scale {:.6}  rent used {:.0} of {:.0} GBP  saving {:.0} GBP ({:.3} GBP/MWh)",
            p.policy.number(),
            p.covered_units,
            p.scale,
            pounds(p.rent_used_mgbp),
            pounds(p.rent_available_mgbp),
            pounds(p.consumer_saving_mgbp),
            p.consumer_saving_per_mwh
        )
        .ok();
        writeln!(out, "depressed zones: {}", p.depressed_zones.join(",")).ok();
        if let Some((_, rows)) = read_table(dir, "policy.csv")? {
            writeln!(
                out,
                "{:<12} {:<6} {:<10} {:>12}",
                "unit", "zone", "tech", "restoration"
            )
            .ok();
            let mut ratios = Vec::new();
            for r in &rows {
                let ratio = r.get("restoration").cloned().unwrap_or_default();
                if let Ok(x) = ratio.parse::<f64>() {
                    ratios.push(x);
                }
                let shown = if ratio.is_empty() {
                    "-".to_string()
                } else {
                    ratio
                };
                writeln!(
                    out,
                    "{:<12} {:<6} {:<10} {:>12}",
                    r["unit"], r["zone"], r["tech"], shown
                )
                .ok();
            }
            writeln!(out, "restoration histogram").ok();
            for (label, n) in restoration_histogram(&ratios) {
                writeln!(out, "  {label:<8} {n}").ok();
            }
        }
    }

    if let Some(s) = &summary.seb {
        writeln!(out, "\nsocioeconomic benefit (GBP)").ok();
        for (name, v) in [
            ("export revenue", s.export_mgbp),
            ("import cost", s.import_mgbp),
            ("ic rent (GB half)", s.ic_rent_mgbp),
            ("thermal balancing", s.thermal_balancing_mgbp),
            ("thermal wholesale", s.thermal_wholesale_mgbp),
            ("bottom-up total", s.bottom_up_mgbp),
            ("top-down total", s.top_down_mgbp),
        ] {
            writeln!(out, "  {name:<20} {:>16.0}", pounds(v)).ok();
        }
    }
    if let Some(c) = &summary.wind_cases {
        writeln!(
            out,
            "wind cases: low {}  high {}  extreme {}",
            c.low, c.high, c.extreme
        )
        .ok();
    }
    if let (Some(e), Some(t)) = (summary.unlocked_wind_mwh, summary.avoided_co2_t) {
        writeln!(out, "unlocked wind {e:.1} MWh, avoided CO2 {t:.1} t").ok();
    }
    match &summary.regression {
        Some(r) => writeln!(
            out,
            "regression: seb = {:.4} * curtailment + {:.0}  R2 {:.4}  projected annual {:.0} GBP",
            r.slope, r.intercept, r.r_squared, r.projected_annual
        ),
        None => writeln!(
            out,
            "regression: needs at least 3 months with curtailment variance"
        ),
    }
    .ok();
    Ok(out)
}
