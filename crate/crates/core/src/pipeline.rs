//! End-to-end daily runs: costs, calibration, clearing per design, redispatch,
//! balancing, settlement, policy inputs and welfare.

use std::time::Instant;

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate_in_session, CalibrationConfig, CalibrationResult};
use crate::clearing::{
    classify_period, clear, price_setter, ClearingResult, MarketDesign, RedispatchSession, WindCase,
};
use crate::cost::attach_costs;
use crate::policy::{apply, policy_day, PolicyDay, PolicyId, PolicyOutcome, DEFAULT_RENT_SHARE};
use crate::redispatch::{
    balancing_volume, group_by_technology_and_band, price_balancing, BalancingPrices,
};
use crate::scenario::{DayScenario, NetworkTopology};
use crate::settlement::{
    accumulate_units, producer_surplus, settle_day, DaySettlement, ProducerSurplus, DEFAULT_MARKUP,
};
use crate::welfare::{seb_bottom_up, seb_top_down, wind_curtailment, SebComponents};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub designs: Vec<MarketDesign>,
    pub policy: Option<PolicyId>,
    pub rent_share: f64,
    /// Balancing markup, GBP/MWh.
    pub markup: f64,
    pub jobs: usize,
    /// Abort the run at the first failed day instead of skipping it.
    pub fail_fast: bool,
    pub calibration: CalibrationConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            designs: vec![MarketDesign::National, MarketDesign::Zonal],
            policy: None,
            rent_share: DEFAULT_RENT_SHARE,
            markup: DEFAULT_MARKUP,
            jobs: 1,
            fail_fast: false,
            calibration: CalibrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Costs,
    Calibration,
    Clearing,
    Redispatch,
    Balancing,
    Settlement,
    Welfare,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Costs => "costs",
            Stage::Calibration => "calibration",
            Stage::Clearing => "clearing",
            Stage::Redispatch => "redispatch",
            Stage::Balancing => "balancing",
            Stage::Settlement => "settlement",
            Stage::Welfare => "welfare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{date} failed at {}: {message}", stage.as_str())]
pub struct DayFailure {
    pub date: NaiveDate,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no designs selected")]
    NoDesigns,
    #[error("policies need both the national and the zonal design")]
    PolicyNeedsBothDesigns,
    #[error("rent share {0} is outside 0..1")]
    RentShare(f64),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Day(#[from] DayFailure),
}

/// One design on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDay {
    pub design: MarketDesign,
    /// Dispatch cost of the wholesale schedule, GBP.
    pub objective: f64,
    /// Congestion balancing volume, MWh.
    pub balancing_volume: f64,
    pub balancing: BalancingPrices,
    pub settlement: DaySettlement,
    /// Wind removed by redispatch, MWh.
    pub wind_curtailment: f64,
    /// Load-weighted wholesale price, GBP/MWh.
    pub average_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub date: NaiveDate,
    pub calibration: CalibrationResult,
    pub mean_kappa: f64,
    pub designs: Vec<DesignDay>,
    pub seb: Option<SebComponents>,
    pub seb_top_down: Option<f64>,
    /// Periods per wind case: low, high, extreme.
    pub wind_cases: Option<[usize; 3]>,
    pub policy_inputs: Option<PolicyDay>,
}

impl DayResult {
    pub fn design(&self, d: MarketDesign) -> Option<&DesignDay> {
        self.designs.iter().find(|x| x.design == d)
    }

    pub fn warnings(&self) -> usize {
        self.designs
            .iter()
            .map(|d| d.balancing.warnings)
            .sum::<usize>()
            + usize::from(!self.calibration.converged)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningSummary {
    pub stack_exhausted: usize,
    pub calibration_not_converged: usize,
    pub calibration_grid_fallback: usize,
    pub policy: usize,
    pub failed_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub days: Vec<DayResult>,
    pub failures: Vec<DayFailure>,
    pub policy: Option<PolicyOutcome>,
    pub surplus: Vec<ProducerSurplus>,
    pub warnings: WarningSummary,
}

impl RunResults {
    pub fn empty() -> Self {
        Self {
            days: Vec::new(),
            failures: Vec::new(),
            policy: None,
            surplus: Vec::new(),
            warnings: WarningSummary::default(),
        }
    }
}

fn fail(date: NaiveDate, stage: Stage) -> impl Fn(String) -> DayFailure {
    move |message| DayFailure {
        date,
        stage,
        message,
    }
}

fn average_price(
    result: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
) -> f64 {
    let mut region_load = vec![vec![0.0; scenario.periods]; result.regions.len()];
    for (b, bus) in topology.buses.iter().enumerate() {
        if let Some(series) = scenario.load.get(&bus.id) {
            for (t, l) in series.iter().enumerate() {
                region_load[result.bus_region[b]][t] += l;
            }
        }
    }
    let (mut pay, mut load) = (0.0, 0.0);
    for (r, series) in region_load.iter().enumerate() {
        for (t, l) in series.iter().enumerate() {
            pay += l * result.prices[r][t];
            load += l;
        }
    }
    if load > 0.0 {
        pay / load
    } else {
        0.0
    }
}

fn wind_cases(
    national: &ClearingResult,
    zonal: &ClearingResult,
    scenario: &DayScenario,
) -> [usize; 3] {
    let mut counts = [0; 3];
    for t in 0..scenario.periods {
        let prices: Vec<f64> = zonal.prices.iter().map(|r| r[t]).collect();
        let case = classify_period(&prices, price_setter(national, scenario, 0, t));
        counts[match case {
            WindCase::LowWind => 0,
            WindCase::HighWind => 1,
            WindCase::ExtremeWind => 2,
        }] += 1;
    }
    counts
}

/// Runs every stage for one day.
pub fn run_day(
    topology: &NetworkTopology,
    scenario: &DayScenario,
    options: &RunOptions,
) -> Result<DayResult, DayFailure> {
    let date = scenario.date;
    let started = Instant::now();
    let mut s = scenario.clone();
    let kappa = attach_costs(&mut s).map_err(|e| fail(date, Stage::Costs)(e.to_string()))?;
    let mean_kappa = kappa.iter().sum::<f64>() / kappa.len().max(1) as f64;

    let national_ws = clear(&s, topology, MarketDesign::National, 1.0)
        .map_err(|e| fail(date, Stage::Clearing)(e.to_string()))?;
    let mut session = RedispatchSession::new(&national_ws, &s, topology)
        .map_err(|e| fail(date, Stage::Calibration)(e.to_string()))?;
    let (calibration, national_actual) = calibrate_in_session(
        &mut session,
        &national_ws,
        &s,
        topology,
        s.observed_balancing.congestion_volume,
        &options.calibration,
    )
    .map_err(|e| fail(date, Stage::Calibration)(e.to_string()))?;
    let tau = calibration.tau;
    info!(
        "day={date} stage=calibration tau={tau:.4} iterations={} converged={} ms={}",
        calibration.iterations,
        calibration.converged,
        started.elapsed().as_millis()
    );

    let groups = group_by_technology_and_band(&s, topology);
    let mut designs = Vec::new();
    let mut wholesale = Vec::new();
    for &design in &options.designs {
        let ws = match design {
            MarketDesign::National => national_ws.clone(),
            MarketDesign::Zonal => clear(&s, topology, design, tau)
                .map_err(|e| fail(date, Stage::Clearing)(e.to_string()))?,
            MarketDesign::Nodal => {
                session.release();
                session
                    .solve(tau)
                    .map_err(|e| fail(date, Stage::Clearing)(e.to_string()))?
            }
        };
        // The nodal schedule already respects every link at τ, and the
        // national redispatch at τ was solved during calibration.
        let actual = match (design, &national_actual) {
            (MarketDesign::Nodal, _) => ws.clone(),
            (MarketDesign::National, Some(r)) => r.clone(),
            _ => {
                let redispatched = session.rebase(&ws).and_then(|()| session.solve(tau));
                redispatched.map_err(|e| fail(date, Stage::Redispatch)(e.to_string()))?
            }
        };
        let outcome = balancing_volume(&ws, &actual, &s, &groups)
            .map_err(|e| fail(date, Stage::Balancing)(e.to_string()))?;
        let prices = price_balancing(&outcome, &s.observed_balancing);
        if prices.warnings > 0 {
            warn!("day={date} design={design} stage=balancing stack exhausted");
        }
        let settlement = settle_day(
            &s,
            topology,
            &ws,
            &actual,
            &outcome,
            &prices,
            options.markup,
        )
        .map_err(|e| fail(date, Stage::Settlement)(e.to_string()))?;
        designs.push(DesignDay {
            design,
            objective: ws.objective,
            balancing_volume: outcome.volume(),
            wind_curtailment: wind_curtailment(&settlement),
            average_price: average_price(&ws, &s, topology),
            balancing: prices,
            settlement,
        });
        wholesale.push(ws);
    }

    let find = |d: MarketDesign| options.designs.iter().position(|x| *x == d);
    let (mut seb, mut seb_td, mut cases, mut policy_inputs) = (None, None, None, None);
    if let (Some(n), Some(z)) = (find(MarketDesign::National), find(MarketDesign::Zonal)) {
        let (ns, zs) = (&designs[n].settlement, &designs[z].settlement);
        let welfare = |e: crate::welfare::WelfareError| fail(date, Stage::Welfare)(e.to_string());
        seb = Some(seb_bottom_up(ns, zs).map_err(welfare)?);
        seb_td = Some(seb_top_down(ns, zs).map_err(welfare)?);
        cases = Some(wind_cases(&wholesale[n], &wholesale[z], &s));
        policy_inputs = Some(policy_day(
            &s,
            topology,
            &wholesale[n],
            &wholesale[z],
            ns,
            zs,
        ));
    }
    info!("day={date} stage=done ms={}", started.elapsed().as_millis());
    Ok(DayResult {
        date,
        calibration,
        mean_kappa,
        designs,
        seb,
        seb_top_down: seb_td,
        wind_cases: cases,
        policy_inputs,
    })
}

fn check(options: &RunOptions) -> Result<(), PipelineError> {
    if options.designs.is_empty() {
        return Err(PipelineError::NoDesigns);
    }
    if !(0.0..=1.0).contains(&options.rent_share) {
        return Err(PipelineError::RentShare(options.rent_share));
    }
    let both = options.designs.contains(&MarketDesign::National)
        && options.designs.contains(&MarketDesign::Zonal);
    if options.policy.is_some() && !both {
        return Err(PipelineError::PolicyNeedsBothDesigns);
    }
    Ok(())
}

/// Runs all days on a pool of `options.jobs` workers and merges in date order.
pub fn run_days(
    topology: &NetworkTopology,
    days: &[DayScenario],
    options: &RunOptions,
) -> Result<RunResults, PipelineError> {
    check(options)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<DayResult, DayFailure>> = pool.install(|| {
        days.par_iter()
            .map(|d| run_day(topology, d, options))
            .collect()
    });

    let mut results = RunResults::empty();
    for outcome in outcomes {
        match outcome {
            Ok(day) => results.days.push(day),
            Err(f) if options.fail_fast => return Err(f.into()),
            Err(f) => {
                warn!(
                    "day={} stage={} error={}",
                    f.date,
                    f.stage.as_str(),
                    f.message
                );
                results.failures.push(f);
            }
        }
    }
    results.days.sort_by_key(|d| d.date);

    let w = &mut results.warnings;
    for day in &results.days {
        w.stack_exhausted += day
            .designs
            .iter()
            .map(|d| d.balancing.warnings)
            .sum::<usize>();
        w.calibration_not_converged += usize::from(!day.calibration.converged);
        w.calibration_grid_fallback += usize::from(day.calibration.grid_fallback);
    }
    w.failed_days = results.failures.len();

    let settled = |d: MarketDesign| {
        accumulate_units(
            results
                .days
                .iter()
                .filter_map(|r| r.design(d))
                .map(|x| &x.settlement),
        )
    };
    if options.designs.contains(&MarketDesign::National)
        && options.designs.contains(&MarketDesign::Zonal)
    {
        results.surplus = producer_surplus(
            &settled(MarketDesign::National),
            &settled(MarketDesign::Zonal),
            options.markup,
        );
    }
    if let Some(policy) = options.policy {
        let inputs: Vec<PolicyDay> = results
            .days
            .iter()
            .filter_map(|d| d.policy_inputs.clone())
            .collect();
        let outcome = apply(policy, &inputs, options.rent_share);
        results.warnings.policy = outcome.warnings;
        results.policy = Some(outcome);
    }
    Ok(results)
}
