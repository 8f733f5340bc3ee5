//! Run outputs.
//!
//! ```text
//! <out>/day-<YYYY-MM-DD>.json   one document per settled day
//! <out>/monthly.csv             consumer stacks and SEB components per calendar month
//! <out>/units.csv               run totals per design and unit
//! <out>/surplus.csv             producer surplus national vs zonal
//! <out>/policy.csv              per-unit restoration of the selected policy
//! <out>/summary.json            run settings, warnings, failures and headline figures
//! ```
//!
//! Money is written as integer milli-pounds (`*_mgbp`). Energy is MWh with
//! three decimals in tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::clearing::MarketDesign;
use crate::pipeline::{DayFailure, DayResult, DesignDay, RunResults, WarningSummary};
use crate::policy::PolicyId;
use crate::settlement::{accumulate_units, ConsumerCostStack};
use crate::welfare::{curtailment_regression, unlocked_wind, Regression, SebComponents};

pub const MONTHLY_HEADER: [&str; 25] = [
    "month",
    "days",
    "served_mwh",
    "national_wholesale_mgbp",
    "national_bm_mgbp",
    "national_ro_mgbp",
    "national_cfd_mgbp",
    "national_rent_mgbp",
    "national_total_mgbp",
    "zonal_wholesale_mgbp",
    "zonal_bm_mgbp",
    "zonal_ro_mgbp",
    "zonal_cfd_mgbp",
    "zonal_rent_mgbp",
    "zonal_total_mgbp",
    "seb_export_mgbp",
    "seb_import_mgbp",
    "seb_ic_rent_mgbp",
    "seb_thermal_balancing_mgbp",
    "seb_thermal_wholesale_mgbp",
    "seb_bottom_up_mgbp",
    "seb_top_down_mgbp",
    "national_wind_curtailment_mwh",
    "national_balancing_mwh",
    "zonal_balancing_mwh",
];

pub const UNITS_HEADER: [&str; 12] = [
    "design",
    "unit",
    "tech",
    "scheduled_mwh",
    "actual_mwh",
    "up_mwh",
    "down_mwh",
    "wholesale_revenue_mgbp",
    "balancing_revenue_mgbp",
    "ro_mgbp",
    "cfd_mgbp",
    "surplus_mgbp",
];

pub const SURPLUS_HEADER: [&str; 5] = ["unit", "tech", "national_mgbp", "zonal_mgbp", "change_pct"];

pub const POLICY_HEADER: [&str; 8] = [
    "unit",
    "zone",
    "tech",
    "national_revenue_mgbp",
    "zonal_revenue_mgbp",
    "payout_mgbp",
    "post_revenue_mgbp",
    "restoration",
];

/// Run settings recorded next to the results. Parallelism is deliberately
/// absent so that outputs do not depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub from: String,
    pub to: String,
    pub designs: Vec<MarketDesign>,
    pub policy: Option<PolicyId>,
    pub rent_share: f64,
    pub markup: f64,
    pub seed: u64,
    /// Multiplier on mean monthly curtailment for the SEB projection.
    pub curtailment_scale: f64,
}

/// GBP to integer milli-pounds.
pub fn mgbp(gbp: f64) -> i64 {
    (gbp * 1000.0).round() as i64
}

fn mwh(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerDocument {
    pub wholesale_mgbp: i64,
    pub bm_mgbp: i64,
    pub ro_mgbp: i64,
    pub cfd_mgbp: i64,
    pub rent_mgbp: i64,
    pub total_mgbp: i64,
}

impl From<&ConsumerCostStack> for ConsumerDocument {
    fn from(c: &ConsumerCostStack) -> Self {
        Self {
            wholesale_mgbp: mgbp(c.wholesale_cost),
            bm_mgbp: mgbp(c.bm_cost),
            ro_mgbp: mgbp(c.ro_payments),
            cfd_mgbp: mgbp(c.cfd_payments),
            rent_mgbp: mgbp(c.congestion_rent_income),
            total_mgbp: mgbp(c.total()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDocument {
    pub design: MarketDesign,
    pub objective_mgbp: i64,
    pub average_price: f64,
    pub served_mwh: f64,
    pub consumer: ConsumerDocument,
    pub consumer_per_mwh: f64,
    pub load_payment_mgbp: i64,
    pub producer_revenue_mgbp: i64,
    pub intra_rent_mgbp: i64,
    pub ic_rent_mgbp: i64,
    pub balancing_volume_mwh: f64,
    pub bm_offer_cost_mgbp: i64,
    pub bm_bid_receipt_mgbp: i64,
    pub bm_stack_exhausted: usize,
    pub wind_curtailment_mwh: f64,
}

impl From<&DesignDay> for DesignDocument {
    fn from(d: &DesignDay) -> Self {
        let s = &d.settlement;
        Self {
            design: d.design,
            objective_mgbp: mgbp(d.objective),
            average_price: d.average_price,
            served_mwh: s.consumer.served_energy,
            consumer: (&s.consumer).into(),
            consumer_per_mwh: s.consumer.per_mwh(),
            load_payment_mgbp: mgbp(s.load_payment.iter().sum()),
            producer_revenue_mgbp: mgbp(s.producer_revenue.iter().sum()),
            intra_rent_mgbp: mgbp(s.intra_rent.iter().sum()),
            ic_rent_mgbp: mgbp(s.ic_rent.iter().sum()),
            balancing_volume_mwh: d.balancing_volume,
            bm_offer_cost_mgbp: mgbp(d.balancing.offer_cost),
            bm_bid_receipt_mgbp: mgbp(d.balancing.bid_receipt),
            bm_stack_exhausted: d.balancing.warnings,
            wind_curtailment_mwh: d.wind_curtailment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SebDocument {
    pub export_mgbp: i64,
    pub import_mgbp: i64,
    pub ic_rent_mgbp: i64,
    pub thermal_balancing_mgbp: i64,
    pub thermal_wholesale_mgbp: i64,
    pub bottom_up_mgbp: i64,
    pub top_down_mgbp: i64,
}

impl SebDocument {
    fn new(c: &SebComponents, top_down: f64) -> Self {
        Self {
            export_mgbp: mgbp(c.export_revenue_delta),
            import_mgbp: mgbp(c.import_cost_delta),
            ic_rent_mgbp: mgbp(c.ic_rent_delta),
            thermal_balancing_mgbp: mgbp(c.prevented_thermal_balancing),
            thermal_wholesale_mgbp: mgbp(c.prevented_thermal_wholesale),
            bottom_up_mgbp: mgbp(c.total_bottom_up()),
            top_down_mgbp: mgbp(top_down),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindCaseCounts {
    pub low: usize,
    pub high: usize,
    pub extreme: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayDocument {
    pub date: String,
    pub tau: f64,
    pub calibration_iterations: usize,
    pub calibration_converged: bool,
    pub calibration_grid_fallback: bool,
    pub achieved_volume_mwh: f64,
    pub target_volume_mwh: f64,
    pub mean_kappa: f64,
    pub designs: Vec<DesignDocument>,
    pub seb: Option<SebDocument>,
    pub wind_cases: Option<WindCaseCounts>,
}

impl From<&DayResult> for DayDocument {
    fn from(d: &DayResult) -> Self {
        let c = &d.calibration;
        Self {
            date: d.date.to_string(),
            tau: c.tau,
            calibration_iterations: c.iterations,
            calibration_converged: c.converged,
            calibration_grid_fallback: c.grid_fallback,
            achieved_volume_mwh: c.achieved_volume,
            target_volume_mwh: c.target_volume,
            mean_kappa: d.mean_kappa,
            designs: d.designs.iter().map(DesignDocument::from).collect(),
            seb: d
                .seb
                .as_ref()
                .zip(d.seb_top_down)
                .map(|(c, td)| SebDocument::new(c, td)),
            wind_cases: d.wind_cases.map(|[low, high, extreme]| WindCaseCounts {
                low,
                high,
                extreme,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTotals {
    pub design: MarketDesign,
    pub consumer: ConsumerDocument,
    pub consumer_per_mwh: f64,
    pub balancing_volume_mwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyId,
    pub rent_share: f64,
    pub depressed_zones: Vec<String>,
    pub covered_units: usize,
    pub scale: f64,
    pub rent_available_mgbp: i64,
    pub rent_used_mgbp: i64,
    pub consumer_saving_mgbp: i64,
    pub consumer_saving_per_mwh: f64,
    pub mean_restoration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub meta: RunMeta,
    pub days: usize,
    pub warnings: WarningSummary,
    pub failures: Vec<DayFailure>,
    pub designs: Vec<DesignTotals>,
    pub consumer_saving_mgbp: Option<i64>,
    pub consumer_saving_per_mwh: Option<f64>,
    pub seb: Option<SebDocument>,
    pub wind_cases: Option<WindCaseCounts>,
    pub unlocked_wind_mwh: Option<f64>,
    pub avoided_co2_t: Option<f64>,
    pub regression: Option<Regression>,
    pub policy: Option<PolicySummary>,
    /// Accounting conventions the figures depend on.
    #[serde(default)]
    pub conventions: Vec<String>,
}

fn conventions(meta: &RunMeta) -> Vec<String> {
    let mut notes =
        vec!["interconnector trade payments are carried in the wholesale cost line".to_string()];
    if meta.policy.is_some() {
        notes.push("northern thermal units are outside policy coverage".to_string());
    }
    if meta.policy == Some(PolicyId::NationalRevenuePool) {
        notes.push("the revenue pool excludes balancing revenue of covered units".to_string());
    }
    notes
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> IngestError + '_ {
    move |e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IngestError> {
    let csv_err = |e: csv::Error| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io(path))
}

#[derive(Default)]
struct Month {
    days: usize,
    served: f64,
    national: Option<ConsumerCostStack>,
    zonal: Option<ConsumerCostStack>,
    seb: Option<(SebComponents, f64)>,
    curtailment: f64,
    national_balancing: f64,
    zonal_balancing: f64,
}

fn add_stack(slot: &mut Option<ConsumerCostStack>, c: &ConsumerCostStack) {
    *slot.get_or_insert_with(ConsumerCostStack::default) += *c;
}

fn months(days: &[DayResult]) -> BTreeMap<String, Month> {
    let mut out: BTreeMap<String, Month> = BTreeMap::new();
    for d in days {
        let m = out.entry(d.date.format("%Y-%m").to_string()).or_default();
        m.days += 1;
        if let Some(n) = d.design(MarketDesign::National) {
            add_stack(&mut m.national, &n.settlement.consumer);
            m.curtailment += n.wind_curtailment;
            m.national_balancing += n.balancing_volume;
        }
        if let Some(z) = d.design(MarketDesign::Zonal) {
            add_stack(&mut m.zonal, &z.settlement.consumer);
            m.zonal_balancing += z.balancing_volume;
        }
        m.served += d
            .designs
            .first()
            .map_or(0.0, |x| x.settlement.consumer.served_energy);
        if let (Some(c), Some(td)) = (d.seb, d.seb_top_down) {
            let e = m.seb.get_or_insert((SebComponents::default(), 0.0));
            e.0 += c;
            e.1 += td;
        }
    }
    out
}

fn stack_cells(c: Option<&ConsumerCostStack>) -> Vec<String> {
    match c {
        Some(c) => [
            c.wholesale_cost,
            c.bm_cost,
            c.ro_payments,
            c.cfd_payments,
            c.congestion_rent_income,
            c.total(),
        ]
        .iter()
        .map(|x| mgbp(*x).to_string())
        .collect(),
        None => vec![String::new(); 6],
    }
}

fn monthly_rows(days: &[DayResult]) -> Vec<Vec<String>> {
    months(days)
        .into_iter()
        .map(|(month, m)| {
            let mut row = vec![month, m.days.to_string(), mwh(m.served)];
            row.extend(stack_cells(m.national.as_ref()));
            row.extend(stack_cells(m.zonal.as_ref()));
            match m.seb {
                Some((c, td)) => row.extend(
                    [
                        c.export_revenue_delta,
                        c.import_cost_delta,
                        c.ic_rent_delta,
                        c.prevented_thermal_balancing,
                        c.prevented_thermal_wholesale,
                        c.total_bottom_up(),
                        td,
                    ]
                    .iter()
                    .map(|x| mgbp(*x).to_string()),
                ),
                None => row.extend(vec![String::new(); 7]),
            }
            let has_n = m.national.is_some();
            let has_z = m.zonal.is_some();
            row.push(if has_n {
                mwh(m.curtailment)
            } else {
                String::new()
            });
            row.push(if has_n {
                mwh(m.national_balancing)
            } else {
                String::new()
            });
            row.push(if has_z {
                mwh(m.zonal_balancing)
            } else {
                String::new()
            });
            row
        })
        .collect()
}

fn unit_rows(results: &RunResults, designs: &[MarketDesign]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for &design in designs {
        let totals = accumulate_units(
            results
                .days
                .iter()
                .filter_map(|d| d.design(design))
                .map(|d| &d.settlement),
        );
        for (id, u) in totals {
            rows.push(vec![
                design.as_str().to_string(),
                id,
                u.tech.as_str().to_string(),
                mwh(u.scheduled_energy),
                mwh(u.actual_energy),
                mwh(u.up_energy),
                mwh(u.down_energy),
                mgbp(u.wholesale_revenue).to_string(),
                mgbp(u.balancing_revenue).to_string(),
                mgbp(u.ro_income).to_string(),
                mgbp(u.cfd_income).to_string(),
                mgbp(u.surplus()).to_string(),
            ]);
        }
    }
    rows
}

fn ratio(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.9}"))
}

fn design_totals(results: &RunResults, design: MarketDesign) -> DesignTotals {
    let mut c = ConsumerCostStack::default();
    let mut volume = 0.0;
    for d in results.days.iter().filter_map(|d| d.design(design)) {
        c += d.settlement.consumer;
        volume += d.balancing_volume;
    }
    DesignTotals {
        design,
        consumer: (&c).into(),
        consumer_per_mwh: c.per_mwh(),
        balancing_volume_mwh: volume,
    }
}

/// Headline figures of a run.
pub fn summarize(results: &RunResults, meta: &RunMeta) -> Summary {
    let designs: Vec<DesignTotals> = meta
        .designs
        .iter()
        .map(|&d| design_totals(results, d))
        .collect();
    let both = meta.designs.contains(&MarketDesign::National)
        && meta.designs.contains(&MarketDesign::Zonal);
    let stack = |d: MarketDesign| {
        let mut c = ConsumerCostStack::default();
        for x in results.days.iter().filter_map(|r| r.design(d)) {
            c += x.settlement.consumer;
        }
        c
    };
    let (mut saving, mut saving_per_mwh, mut seb, mut cases) = (None, None, None, None);
    let (mut unlocked, mut co2, mut regression) = (None, None, None);
    if both && !results.days.is_empty() {
        let (n, z) = (stack(MarketDesign::National), stack(MarketDesign::Zonal));
        saving = Some(mgbp(n.total() - z.total()));
        saving_per_mwh = Some(if z.served_energy > 0.0 {
            (n.total() - z.total()) / z.served_energy
        } else {
            0.0
        });
        let mut c = SebComponents::default();
        let mut td = 0.0;
        let mut k = [0usize; 3];
        for d in &results.days {
            if let (Some(x), Some(t)) = (d.seb, d.seb_top_down) {
                c += x;
                td += t;
            }
            if let Some(w) = d.wind_cases {
                for i in 0..3 {
                    k[i] += w[i];
                }
            }
        }
        seb = Some(SebDocument::new(&c, td));
        cases = Some(WindCaseCounts {
            low: k[0],
            high: k[1],
            extreme: k[2],
        });
        let settled = |d: MarketDesign| {
            accumulate_units(
                results
                    .days
                    .iter()
                    .filter_map(|r| r.design(d))
                    .map(|x| &x.settlement),
            )
        };
        let (ns, zs) = (
            settled(MarketDesign::National),
            settled(MarketDesign::Zonal),
        );
        let (e, t) = unlocked_wind(ns.values(), zs.values());
        unlocked = Some(e);
        co2 = Some(t);
        let pairs: Vec<(f64, f64)> = months(&results.days)
            .values()
            .filter_map(|m| m.seb.map(|(c, _)| (m.curtailment, c.total_bottom_up())))
            .collect();
        regression = curtailment_regression(&pairs, meta.curtailment_scale).ok();
    }
    let policy = results.policy.as_ref().map(|p| {
        let defined: Vec<f64> = p.units.iter().filter_map(|u| u.restoration).collect();
        PolicySummary {
            policy: p.policy,
            rent_share: p.rent_share,
            depressed_zones: p.depressed_zones.clone(),
            covered_units: p.units.len(),
            scale: p.scale,
            rent_available_mgbp: mgbp(p.rent_available),
            rent_used_mgbp: mgbp(p.rent_used),
            consumer_saving_mgbp: mgbp(p.consumer_saving),
            consumer_saving_per_mwh: p.consumer_saving_per_mwh,
            mean_restoration: (!defined.is_empty())
                .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        }
    });
    Summary {
        meta: meta.clone(),
        days: results.days.len(),
        warnings: results.warnings,
        failures: results.failures.clone(),
        designs,
        consumer_saving_mgbp: saving,
        consumer_saving_per_mwh: saving_per_mwh,
        seb,
        wind_cases: cases,
        unlocked_wind_mwh: unlocked,
        avoided_co2_t: co2,
        regression,
        policy,
        conventions: conventions(meta),
    }
}

/// Writes every output file into `dir`, creating it if needed.
pub fn write_results(results: &RunResults, meta: &RunMeta, dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    for day in &results.days {
        write_json(
            &dir.join(format!("day-{}.json", day.date)),
            &DayDocument::from(day),
        )?;
    }
    write_table(
        &dir.join("monthly.csv"),
        &MONTHLY_HEADER,
        &monthly_rows(&results.days),
    )?;
    write_table(
        &dir.join("units.csv"),
        &UNITS_HEADER,
        &unit_rows(results, &meta.designs),
    )?;
    let surplus: Vec<Vec<String>> = results
        .surplus
        .iter()
        .map(|s| {
            vec![
                s.unit.clone(),
                s.tech.as_str().to_string(),
                mgbp(s.national).to_string(),
                mgbp(s.zonal).to_string(),
                s.change_pct.map_or(String::new(), |p| format!("{p:.6}")),
            ]
        })
        .collect();
    write_table(&dir.join("surplus.csv"), &SURPLUS_HEADER, &surplus)?;
    if let Some(p) = &results.policy {
        let rows: Vec<Vec<String>> = p
            .units
            .iter()
            .map(|u| {
                vec![
                    u.unit.clone(),
                    u.zone.clone(),
                    u.tech.as_str().to_string(),
                    mgbp(u.national_revenue).to_string(),
                    mgbp(u.zonal_revenue).to_string(),
                    mgbp(u.payout).to_string(),
                    mgbp(u.post_revenue).to_string(),
                    ratio(u.restoration),
                ]
            })
            .collect();
        write_table(&dir.join("policy.csv"), &POLICY_HEADER, &rows)?;
    }
    write_json(&dir.join("summary.json"), &summarize(results, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_days, RunOptions};
    use crate::scenario::fixtures::two_bus;

    fn meta() -> RunMeta {
        RunMeta {
            from: "2024-03-21".into(),
            to: "2024-03-21".into(),
            designs: vec![MarketDesign::National, MarketDesign::Zonal],
            policy: None,
            rent_share: 0.5,
            markup: 30.0,
            seed: 0,
            curtailment_scale: 1.0,
        }
    }

    fn one_day() -> RunResults {
        let (t, mut s) = two_bus(2);
        s.date = chrono::NaiveDate::from_ymd_opt(2024, 3, 21).unwrap();
        run_days(&t, &[s], &RunOptions::default()).unwrap()
    }

    #[test]
    fn one_day_writes_day_and_monthly_files() {
        let dir = tempfile::tempdir().unwrap();
        write_results(&one_day(), &meta(), dir.path()).unwrap();
        assert!(dir.path().join("day-2024-03-21.json").is_file());
        let monthly = fs::read_to_string(dir.path().join("monthly.csv")).unwrap();
        let lines: Vec<&str> = monthly.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("2024-03,1,"));
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_results(&one_day(), &meta(), a.path()).unwrap();
        write_results(&one_day(), &meta(), b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for n in names {
            assert_eq!(
                fs::read(a.path().join(&n)).unwrap(),
                fs::read(b.path().join(&n)).unwrap()
            );
        }
    }

    #[test]
    fn empty_results_give_header_only_monthly_table() {
        let dir = tempfile::tempdir().unwrap();
        write_results(&RunResults::empty(), &meta(), dir.path()).unwrap();
        let monthly = fs::read_to_string(dir.path().join("monthly.csv")).unwrap();
        assert_eq!(monthly, format!("{}\n", MONTHLY_HEADER.join(",")));
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("blocker");
        fs::write(&file, "x").unwrap();
        let err = write_results(&RunResults::empty(), &meta(), &file.join("out")).unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    #[test]
    fn milli_pound_conversion() {
        assert_eq!(mgbp(1.25), 1250);
        assert_eq!(mgbp(-2.5), -2500);
        assert_eq!(mgbp(0.0004), 0);
    }
}
