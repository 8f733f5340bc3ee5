//! Cost-minimising dispatch for one day under a given market design.
//!
//! The network is a pure transport model: each region balances supply and
//! demand every period and links carry power between regions up to their
//! capacity. Prices are the duals of the regional balance rows.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostError;
use crate::lp::{ColId, LpError, LpProgram, LpSession, LpSolution, RowId};
use crate::scenario::{DayScenario, NetworkTopology, Technology, Unit, UnitKind, PERIOD_HOURS};

/// Price spread below which a period counts as uncongested, GBP/MWh.
pub const SPLIT_EPSILON: f64 = 1.0;

/// Largest id-indexed cost perturbation used to make dispatch unique, GBP/MWh.
pub const MAX_PERTURBATION: f64 = 1e-8;

/// Initial (and terminal) state of charge as a share of usable energy.
pub const INITIAL_SOC_SHARE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketDesign {
    /// All buses form one price region.
    National,
    /// Buses of a zone form one region; only inter-zone links constrain flow.
    Zonal,
    /// Every bus is a region and every link limit applies.
    Nodal,
}

impl MarketDesign {
    pub fn as_str(self) -> &'static str {
        match self {
            MarketDesign::National => "national",
            MarketDesign::Zonal => "zonal",
            MarketDesign::Nodal => "nodal",
        }
    }
}

impl fmt::Display for MarketDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MarketDesign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "national" => Ok(MarketDesign::National),
            "zonal" => Ok(MarketDesign::Zonal),
            "nodal" => Ok(MarketDesign::Nodal),
            other => Err(format!("unknown design '{other}'")),
        }
    }
}

/// Constraint family blamed for an infeasible program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintGroup {
    PowerBalance,
    DailyQuota,
    LinkLimits,
    Intertemporal,
}

impl fmt::Display for ConstraintGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintGroup::PowerBalance => "power balance",
            ConstraintGroup::DailyQuota => "daily quota",
            ConstraintGroup::LinkLimits => "link limits",
            ConstraintGroup::Intertemporal => "storage/interconnector intertemporal limits",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClearingError {
    #[error("tuning factor must be positive and finite, got {0}")]
    InvalidTuning(f64),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("infeasible ({group}): {detail}")]
    Infeasible {
        group: ConstraintGroup,
        detail: String,
    },
    #[error("unbounded dispatch program; a bid is missing a price floor")]
    Unbounded,
    #[error("solver error: {0}")]
    Solver(String),
    #[error("wholesale result does not belong to this scenario")]
    Mismatch,
}

/// Solved schedule, prices and flows of one design on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub design: MarketDesign,
    pub tuning: f64,
    /// Unit ids in scenario order.
    pub units: Vec<String>,
    /// Price region names.
    pub regions: Vec<String>,
    /// Region index of every bus, in topology order.
    pub bus_region: Vec<usize>,
    /// Region index of every unit.
    pub unit_region: Vec<usize>,
    /// Generation, storage discharge or interconnector import (neighbour side), MW.
    pub output: Vec<Vec<f64>>,
    /// Storage charge or interconnector export (GB side), MW.
    pub intake: Vec<Vec<f64>>,
    /// State of charge at the end of each period for storage units, MWh.
    pub soc: BTreeMap<String, Vec<f64>>,
    /// GBP/MWh, `[region][period]`.
    pub prices: Vec<Vec<f64>>,
    /// Flows of modelled links keyed by topology link index, MW.
    pub flows: BTreeMap<usize, Vec<f64>>,
    /// Dispatch cost at unperturbed bids, GBP.
    pub objective: f64,
}

impl ClearingResult {
    pub fn periods(&self) -> usize {
        self.prices.first().map_or(0, Vec::len)
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u == id)
    }

    pub fn unit_price(&self, unit: usize, period: usize) -> f64 {
        self.prices[self.unit_region[unit]][period]
    }

    /// Net injection of a unit into the GB network in MW.
    pub fn net_injection(&self, scenario: &DayScenario, unit: usize, period: usize) -> f64 {
        let out = self.output[unit][period];
        let inn = self.intake[unit][period];
        match scenario.units[unit].kind {
            UnitKind::Interconnector { efficiency, .. } => efficiency * out - inn,
            _ => out - inn,
        }
    }
}

/// Effective per-period capacity of every link (`None` = unconstrained).
///
/// Boundary members are scaled so their sum equals the period's NTC, then by
/// `tau`. Links touching a member's bus get the same factor (the smallest one
/// if they touch several boundaries). Other links keep their nominal limit.
pub fn link_limits(
    topology: &NetworkTopology,
    scenario: &DayScenario,
    tau: f64,
) -> Vec<Vec<Option<f64>>> {
    let periods = scenario.periods;
    let n = topology.links.len();
    let mut factor: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut is_member = vec![false; n];

    for boundary in &topology.boundaries {
        let nominal = topology.boundary_nominal_capacity(boundary);
        let scale: Vec<f64> = (0..periods)
            .map(
                |t| match (nominal, scenario.boundary_ntc.get(&boundary.id)) {
                    (Some(nom), Some(ntc)) if nom > 0.0 => ntc[t] / nom,
                    _ => 1.0,
                },
            )
            .collect();
        let member_buses: Vec<&str> = boundary
            .links
            .iter()
            .flat_map(|&l| {
                [
                    topology.links[l].from.as_str(),
                    topology.links[l].to.as_str(),
                ]
            })
            .collect();
        for &l in &boundary.links {
            is_member[l] = true;
            factor[l] = Some(scale.clone());
        }
        for (l, link) in topology.links.iter().enumerate() {
            if boundary.links.contains(&l) {
                continue;
            }
            if member_buses.contains(&link.from.as_str())
                || member_buses.contains(&link.to.as_str())
            {
                factor[l] = Some(match factor[l].take() {
                    Some(prev) if !is_member[l] => {
                        prev.iter().zip(&scale).map(|(a, b)| a.min(*b)).collect()
                    }
                    Some(prev) => prev,
                    None => scale.clone(),
                });
            }
        }
    }

    topology
        .links
        .iter()
        .enumerate()
        .map(|(l, link)| {
            (0..periods)
                .map(|t| {
                    link.capacity.limit().map(|cap| match &factor[l] {
                        Some(f) => cap * f[t] * tau,
                        None => cap,
                    })
                })
                .collect()
        })
        .collect()
}

fn region_layout(topology: &NetworkTopology, design: MarketDesign) -> (Vec<String>, Vec<usize>) {
    match design {
        MarketDesign::National => (vec!["GB".to_string()], vec![0; topology.buses.len()]),
        MarketDesign::Zonal => {
            let zones = topology.zones();
            let idx: HashMap<&str, usize> = zones
                .iter()
                .enumerate()
                .map(|(i, z)| (z.as_str(), i))
                .collect();
            let map = topology
                .buses
                .iter()
                .map(|b| idx[b.zone.as_str()])
                .collect();
            (zones, map)
        }
        MarketDesign::Nodal => (
            topology.buses.iter().map(|b| b.id.clone()).collect(),
            (0..topology.buses.len()).collect(),
        ),
    }
}

#[derive(Debug, Clone)]
enum UnitCols {
    Generator(Vec<ColId>),
    Storage {
        charge: Vec<ColId>,
        discharge: Vec<ColId>,
        soc: Vec<ColId>,
    },
    Interconnector {
        import: Vec<ColId>,
        export: Vec<ColId>,
    },
}

/// Holds storage and interconnector columns at the positions in `ws`. State of
/// charge is left free so the storage balance rows always close.
fn pin_positions(lp: &mut impl Bounds, unit_cols: &[UnitCols], ws: &ClearingResult) {
    for (u, cols) in unit_cols.iter().enumerate() {
        match cols {
            UnitCols::Generator(_) => {}
            UnitCols::Storage {
                charge,
                discharge,
                soc,
            } => {
                for t in 0..charge.len() {
                    lp.set_bounds(charge[t], ws.intake[u][t], ws.intake[u][t]);
                    lp.set_bounds(discharge[t], ws.output[u][t], ws.output[u][t]);
                    lp.set_bounds(soc[t], f64::NEG_INFINITY, f64::INFINITY);
                }
            }
            UnitCols::Interconnector { import, export } => {
                for t in 0..import.len() {
                    lp.set_bounds(import[t], ws.output[u][t], ws.output[u][t]);
                    lp.set_bounds(export[t], ws.intake[u][t], ws.intake[u][t]);
                }
            }
        }
    }
}

/// Restores the bounds `formulation` was built with on every storage and
/// interconnector column.
fn release_positions(session: &mut LpSession, original: &LpProgram, unit_cols: &[UnitCols]) {
    for cols in unit_cols {
        let all: Vec<ColId> = match cols {
            UnitCols::Generator(_) => continue,
            UnitCols::Storage {
                charge,
                discharge,
                soc,
            } => charge.iter().chain(discharge).chain(soc).copied().collect(),
            UnitCols::Interconnector { import, export } => {
                import.iter().chain(export).copied().collect()
            }
        };
        for c in all {
            let (lo, hi) = original.bounds(c);
            session.set_bounds(c, lo, hi);
        }
    }
}

trait Bounds {
    fn set_bounds(&mut self, col: ColId, lower: f64, upper: f64);
}

impl Bounds for LpProgram {
    fn set_bounds(&mut self, col: ColId, lower: f64, upper: f64) {
        LpProgram::set_bounds(self, col, lower, upper);
    }
}

impl Bounds for LpSession {
    fn set_bounds(&mut self, col: ColId, lower: f64, upper: f64) {
        LpSession::set_bounds(self, col, lower, upper);
    }
}

/// A built dispatch program with the index maps needed to read it back.
struct Formulation {
    program: LpProgram,
    design: MarketDesign,
    tau: f64,
    regions: Vec<String>,
    bus_region: Vec<usize>,
    unit_region: Vec<usize>,
    balance: Vec<Vec<RowId>>,
    unit_cols: Vec<UnitCols>,
    link_cols: BTreeMap<usize, Vec<ColId>>,
}

fn perturbations(units: &[Unit]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| units[a].id.cmp(&units[b].id));
    let mut eps = vec![0.0; units.len()];
    let n = units.len() as f64 + 1.0;
    for (rank, &u) in order.iter().enumerate() {
        eps[u] = MAX_PERTURBATION * (rank as f64 + 1.0) / n;
    }
    eps
}

fn bound(limit: Option<f64>) -> (f64, f64) {
    match limit {
        Some(c) => (-c, c),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

fn formulate(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    design: MarketDesign,
    tau: f64,
    fixed: Option<&ClearingResult>,
) -> Result<Formulation, ClearingError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ClearingError::InvalidTuning(tau));
    }
    let periods = scenario.periods;
    let (regions, bus_region) = region_layout(topology, design);
    let bus_idx = topology.bus_index();
    let unit_region: Vec<usize> = scenario
        .units
        .iter()
        .map(|u| {
            bus_idx
                .get(u.bus.as_str())
                .map(|&b| bus_region[b])
                .unwrap_or(0)
        })
        .collect();

    let mut load = vec![vec![0.0; periods]; regions.len()];
    for (bus, series) in &scenario.load {
        if let Some(&b) = bus_idx.get(bus.as_str()) {
            for (t, v) in series.iter().enumerate() {
                load[bus_region[b]][t] += v;
            }
        }
    }
    if let Some(ws) = fixed {
        if ws.units.len() != scenario.units.len() || ws.periods() != periods {
            return Err(ClearingError::Mismatch);
        }
    }

    let eps = perturbations(&scenario.units);
    // Units that can move energy between periods prefer earlier periods on ties.
    let timing = |t: usize| 1.0 - 0.5 * t as f64 / periods as f64;
    let mut lp = LpProgram::new();
    let mut unit_cols = Vec::with_capacity(scenario.units.len());
    for (u, unit) in scenario.units.iter().enumerate() {
        let cols = match &unit.kind {
            UnitKind::SimpleGenerator | UnitKind::ThermalGenerator => {
                let curve = scenario
                    .marginal_costs
                    .get(&unit.id)
                    .ok_or_else(|| CostError::MissingCost(unit.id.clone()))?;
                let avail = scenario.availability.get(&unit.id).ok_or_else(|| {
                    ClearingError::Infeasible {
                        group: ConstraintGroup::PowerBalance,
                        detail: format!("no availability for {}", unit.id),
                    }
                })?;
                UnitCols::Generator(
                    (0..periods)
                        .map(|t| lp.add_col(curve.at(t) + eps[u], 0.0, avail[t]))
                        .collect(),
                )
            }
            UnitKind::DailyQuotaGenerator {
                daily_quota,
                power_cap,
            } => {
                let curve = scenario
                    .marginal_costs
                    .get(&unit.id)
                    .ok_or_else(|| CostError::MissingCost(unit.id.clone()))?;
                let cols: Vec<ColId> = (0..periods)
                    .map(|t| lp.add_col(curve.at(t) + eps[u] * timing(t), 0.0, *power_cap))
                    .collect();
                let entries: Vec<(ColId, f64)> = cols.iter().map(|&c| (c, PERIOD_HOURS)).collect();
                lp.add_eq(*daily_quota, &entries);
                UnitCols::Generator(cols)
            }
            UnitKind::StorageUnit {
                energy_cap,
                power_cap,
                damping,
            } => {
                let e_max = damping * energy_cap;
                let p_max = damping * power_cap;
                let initial = INITIAL_SOC_SHARE * e_max;
                let charge: Vec<ColId> = (0..periods)
                    .map(|t| lp.add_col(0.1 * eps[u] * timing(t), 0.0, p_max))
                    .collect();
                let discharge: Vec<ColId> = (0..periods)
                    .map(|t| lp.add_col(0.1 * eps[u] * timing(t), 0.0, p_max))
                    .collect();
                let soc: Vec<ColId> = (0..periods)
                    .map(|t| {
                        if t + 1 == periods {
                            lp.add_col(0.0, initial, initial)
                        } else {
                            lp.add_col(0.0, 0.0, e_max)
                        }
                    })
                    .collect();
                for t in 0..periods {
                    let mut entries = vec![
                        (soc[t], 1.0),
                        (charge[t], -PERIOD_HOURS),
                        (discharge[t], PERIOD_HOURS),
                    ];
                    let rhs = if t == 0 {
                        initial
                    } else {
                        entries.push((soc[t - 1], -1.0));
                        0.0
                    };
                    lp.add_eq(rhs, &entries);
                }
                UnitCols::Storage {
                    charge,
                    discharge,
                    soc,
                }
            }
            UnitKind::Interconnector {
                import_cap,
                export_cap,
                ramp_limit,
                efficiency,
            } => {
                let price = scenario.neighbor_price.get(&unit.id).ok_or_else(|| {
                    ClearingError::Infeasible {
                        group: ConstraintGroup::PowerBalance,
                        detail: format!("no neighbour price for {}", unit.id),
                    }
                })?;
                let import: Vec<ColId> = (0..periods)
                    .map(|t| lp.add_col(price[t] + eps[u], 0.0, *import_cap))
                    .collect();
                let export: Vec<ColId> = (0..periods)
                    .map(|t| lp.add_col(-efficiency * price[t] + eps[u], 0.0, *export_cap))
                    .collect();
                for t in 1..periods {
                    lp.add_row(
                        -ramp_limit,
                        *ramp_limit,
                        &[
                            (import[t], 1.0),
                            (export[t], -1.0),
                            (import[t - 1], -1.0),
                            (export[t - 1], 1.0),
                        ],
                    );
                }
                UnitCols::Interconnector { import, export }
            }
        };
        unit_cols.push(cols);
    }

    if let Some(ws) = fixed {
        pin_positions(&mut lp, &unit_cols, ws);
    }

    let mut link_cols = BTreeMap::new();
    if design != MarketDesign::National {
        let limits = link_limits(topology, scenario, tau);
        for (l, link) in topology.links.iter().enumerate() {
            let (Some(&a), Some(&b)) = (
                bus_idx.get(link.from.as_str()),
                bus_idx.get(link.to.as_str()),
            ) else {
                continue;
            };
            if bus_region[a] == bus_region[b] {
                continue;
            }
            let cols: Vec<ColId> = (0..periods)
                .map(|t| {
                    let (lo, hi) = bound(limits[l][t]);
                    lp.add_col(0.0, lo, hi)
                })
                .collect();
            link_cols.insert(l, cols);
        }
    }

    let mut entries: Vec<Vec<Vec<(ColId, f64)>>> = vec![vec![Vec::new(); periods]; regions.len()];
    for (u, cols) in unit_cols.iter().enumerate() {
        let r = unit_region[u];
        for t in 0..periods {
            match cols {
                UnitCols::Generator(p) => entries[r][t].push((p[t], 1.0)),
                UnitCols::Storage {
                    charge, discharge, ..
                } => {
                    entries[r][t].push((discharge[t], 1.0));
                    entries[r][t].push((charge[t], -1.0));
                }
                UnitCols::Interconnector { import, export } => {
                    let eta = match scenario.units[u].kind {
                        UnitKind::Interconnector { efficiency, .. } => efficiency,
                        _ => 1.0,
                    };
                    entries[r][t].push((import[t], eta));
                    entries[r][t].push((export[t], -1.0));
                }
            }
        }
    }
    for (&l, cols) in &link_cols {
        let link = &topology.links[l];
        let from = bus_region[bus_idx[link.from.as_str()]];
        let to = bus_region[bus_idx[link.to.as_str()]];
        for t in 0..periods {
            entries[from][t].push((cols[t], -1.0));
            entries[to][t].push((cols[t], 1.0));
        }
    }
    let balance: Vec<Vec<RowId>> = entries
        .iter()
        .enumerate()
        .map(|(r, per_t)| {
            per_t
                .iter()
                .enumerate()
                .map(|(t, e)| lp.add_eq(load[r][t], e))
                .collect()
        })
        .collect();

    Ok(Formulation {
        program: lp,
        design,
        tau,
        regions,
        bus_region,
        unit_region,
        balance,
        unit_cols,
        link_cols,
    })
}

impl Formulation {
    fn extract(
        &self,
        scenario: &DayScenario,
        solution: &LpSolution,
        fixed: Option<&ClearingResult>,
    ) -> ClearingResult {
        let periods = scenario.periods;
        let n = scenario.units.len();
        let mut output = vec![vec![0.0; periods]; n];
        let mut intake = vec![vec![0.0; periods]; n];
        let mut soc = BTreeMap::new();
        for (u, cols) in self.unit_cols.iter().enumerate() {
            match cols {
                UnitCols::Generator(p) => {
                    output[u] = p.iter().map(|&c| solution.value(c)).collect();
                }
                UnitCols::Storage {
                    charge,
                    discharge,
                    soc: s,
                } => {
                    output[u] = discharge.iter().map(|&c| solution.value(c)).collect();
                    intake[u] = charge.iter().map(|&c| solution.value(c)).collect();
                    let id = &scenario.units[u].id;
                    let levels = match fixed.and_then(|ws| ws.soc.get(id)) {
                        Some(pinned) => pinned.clone(),
                        None => s.iter().map(|&c| solution.value(c)).collect(),
                    };
                    soc.insert(id.clone(), levels);
                }
                UnitCols::Interconnector { import, export } => {
                    output[u] = import.iter().map(|&c| solution.value(c)).collect();
                    intake[u] = export.iter().map(|&c| solution.value(c)).collect();
                }
            }
        }
        let prices = self
            .balance
            .iter()
            .map(|rows| rows.iter().map(|&r| solution.dual(r)).collect())
            .collect();
        let flows = self
            .link_cols
            .iter()
            .map(|(&l, cols)| (l, cols.iter().map(|&c| solution.value(c)).collect()))
            .collect();
        let mut result = ClearingResult {
            design: self.design,
            tuning: self.tau,
            units: scenario.units.iter().map(|u| u.id.clone()).collect(),
            regions: self.regions.clone(),
            bus_region: self.bus_region.clone(),
            unit_region: self.unit_region.clone(),
            output,
            intake,
            soc,
            prices,
            flows,
            objective: 0.0,
        };
        result.objective = dispatch_cost(scenario, &result);
        result
    }
}

/// Cost of a schedule at unperturbed bids, GBP.
pub fn dispatch_cost(scenario: &DayScenario, result: &ClearingResult) -> f64 {
    let mut total = 0.0;
    for (u, unit) in scenario.units.iter().enumerate() {
        for t in 0..result.periods() {
            total += match unit.kind {
                UnitKind::Interconnector { efficiency, .. } => {
                    let p = scenario.neighbor_price[&unit.id][t];
                    p * result.output[u][t] - efficiency * p * result.intake[u][t]
                }
                UnitKind::StorageUnit { .. } => 0.0,
                _ => scenario
                    .marginal_costs
                    .get(&unit.id)
                    .map_or(0.0, |c| c.at(t) * result.output[u][t]),
            };
        }
    }
    total * PERIOD_HOURS
}

fn diagnose(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    design: MarketDesign,
    tau: f64,
    fixed: Option<&ClearingResult>,
) -> ClearingError {
    for unit in &scenario.units {
        if let UnitKind::DailyQuotaGenerator {
            daily_quota,
            power_cap,
        } = unit.kind
        {
            if daily_quota > power_cap * PERIOD_HOURS * scenario.periods as f64 + 1e-9 {
                return ClearingError::Infeasible {
                    group: ConstraintGroup::DailyQuota,
                    detail: format!("unit {} cannot deliver its quota", unit.id),
                };
            }
        }
    }
    let (regions, bus_region) = region_layout(topology, design);
    let bus_idx = topology.bus_index();
    let limits = link_limits(topology, scenario, tau);
    for t in 0..scenario.periods {
        let mut supply = vec![0.0; regions.len()];
        let mut demand = vec![0.0; regions.len()];
        for (bus, series) in &scenario.load {
            if let Some(&b) = bus_idx.get(bus.as_str()) {
                demand[bus_region[b]] += series[t];
            }
        }
        for (u, unit) in scenario.units.iter().enumerate() {
            let Some(&b) = bus_idx.get(unit.bus.as_str()) else {
                continue;
            };
            let r = bus_region[b];
            let fixed_injection = fixed
                .filter(|_| !unit.kind.is_generator())
                .map(|ws| ws.net_injection(scenario, u, t));
            supply[r] += match (&unit.kind, fixed_injection) {
                (_, Some(inj)) => inj,
                (UnitKind::SimpleGenerator | UnitKind::ThermalGenerator, _) => {
                    scenario.availability.get(&unit.id).map_or(0.0, |a| a[t])
                }
                (UnitKind::DailyQuotaGenerator { power_cap, .. }, _) => *power_cap,
                (
                    UnitKind::StorageUnit {
                        power_cap, damping, ..
                    },
                    _,
                ) => power_cap * damping,
                (
                    UnitKind::Interconnector {
                        import_cap,
                        efficiency,
                        ..
                    },
                    _,
                ) => import_cap * efficiency,
            };
        }
        let total_supply: f64 = supply.iter().sum();
        let total_demand: f64 = demand.iter().sum();
        if total_supply + 1e-6 < total_demand {
            return ClearingError::Infeasible {
                group: ConstraintGroup::PowerBalance,
                detail: format!(
                    "period {}: {total_demand:.1} MW load exceeds {total_supply:.1} MW available",
                    t + 1
                ),
            };
        }
        if design != MarketDesign::National {
            for r in 0..regions.len() {
                let import_cap: f64 = topology
                    .links
                    .iter()
                    .enumerate()
                    .filter(|(_, link)| {
                        let a = bus_region[bus_idx[link.from.as_str()]];
                        let b = bus_region[bus_idx[link.to.as_str()]];
                        a != b && (a == r || b == r)
                    })
                    .map(|(l, _)| limits[l][t].unwrap_or(f64::INFINITY))
                    .sum();
                if supply[r] + import_cap + 1e-6 < demand[r] {
                    return ClearingError::Infeasible {
                        group: ConstraintGroup::LinkLimits,
                        detail: format!(
                            "period {}: region {} cannot be supplied through its links",
                            t + 1,
                            regions[r]
                        ),
                    };
                }
            }
        }
    }
    let group = if design == MarketDesign::National {
        ConstraintGroup::Intertemporal
    } else {
        ConstraintGroup::LinkLimits
    };
    ClearingError::Infeasible {
        group,
        detail: "no single-period shortfall found".to_string(),
    }
}

fn solve_error(
    err: LpError,
    scenario: &DayScenario,
    topology: &NetworkTopology,
    design: MarketDesign,
    tau: f64,
    fixed: Option<&ClearingResult>,
) -> ClearingError {
    match err {
        LpError::Infeasible => diagnose(scenario, topology, design, tau, fixed),
        LpError::Unbounded => ClearingError::Unbounded,
        LpError::Solver(s) => ClearingError::Solver(s),
    }
}

/// Clears one day under `design` with boundary links scaled by `tau`.
pub fn clear(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    design: MarketDesign,
    tau: f64,
) -> Result<ClearingResult, ClearingError> {
    let f = formulate(scenario, topology, design, tau, None)?;
    let solution = f
        .program
        .solve()
        .map_err(|e| solve_error(e, scenario, topology, design, tau, None))?;
    Ok(f.extract(scenario, &solution, None))
}

/// Nodal re-optimisation of generators with storage and interconnector
/// positions held at their wholesale values.
pub fn clear_fixed_positions(
    wholesale: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
    tau: f64,
) -> Result<ClearingResult, ClearingError> {
    let f = formulate(
        scenario,
        topology,
        MarketDesign::Nodal,
        tau,
        Some(wholesale),
    )?;
    let solution = f.program.solve().map_err(|e| {
        solve_error(
            e,
            scenario,
            topology,
            MarketDesign::Nodal,
            tau,
            Some(wholesale),
        )
    })?;
    Ok(f.extract(scenario, &solution, Some(wholesale)))
}

/// Repeated nodal solves of one day at varying `tau`, reusing the solver
/// basis between solves. Storage and interconnector positions are either
/// pinned to a wholesale schedule (redispatch) or free (nodal wholesale).
pub struct RedispatchSession<'a> {
    scenario: &'a DayScenario,
    topology: &'a NetworkTopology,
    pinned: Option<ClearingResult>,
    formulation: Formulation,
    session: LpSession,
}

impl<'a> RedispatchSession<'a> {
    /// Starts with positions pinned to `wholesale`.
    pub fn new(
        wholesale: &ClearingResult,
        scenario: &'a DayScenario,
        topology: &'a NetworkTopology,
    ) -> Result<Self, ClearingError> {
        if wholesale.units.len() != scenario.units.len() || wholesale.periods() != scenario.periods
        {
            return Err(ClearingError::Mismatch);
        }
        let formulation = formulate(scenario, topology, MarketDesign::Nodal, 1.0, None)?;
        let mut session = LpSession::new(&formulation.program);
        pin_positions(&mut session, &formulation.unit_cols, wholesale);
        Ok(Self {
            scenario,
            topology,
            pinned: Some(wholesale.clone()),
            formulation,
            session,
        })
    }

    /// Pins positions to another wholesale schedule.
    pub fn rebase(&mut self, wholesale: &ClearingResult) -> Result<(), ClearingError> {
        if wholesale.units.len() != self.scenario.units.len()
            || wholesale.periods() != self.scenario.periods
        {
            return Err(ClearingError::Mismatch);
        }
        pin_positions(&mut self.session, &self.formulation.unit_cols, wholesale);
        self.pinned = Some(wholesale.clone());
        Ok(())
    }

    /// Frees storage and interconnectors, turning later solves into nodal
    /// wholesale clears.
    pub fn release(&mut self) {
        release_positions(
            &mut self.session,
            &self.formulation.program,
            &self.formulation.unit_cols,
        );
        self.pinned = None;
    }

    pub fn solve(&mut self, tau: f64) -> Result<ClearingResult, ClearingError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ClearingError::InvalidTuning(tau));
        }
        let limits = link_limits(self.topology, self.scenario, tau);
        for (&l, cols) in &self.formulation.link_cols {
            for (t, &c) in cols.iter().enumerate() {
                let (lo, hi) = bound(limits[l][t]);
                self.session.set_bounds(c, lo, hi);
            }
        }
        self.formulation.tau = tau;
        let pinned = self.pinned.as_ref();
        let solution = self.session.solve().map_err(|e| {
            solve_error(
                e,
                self.scenario,
                self.topology,
                MarketDesign::Nodal,
                tau,
                pinned,
            )
        })?;
        Ok(self.formulation.extract(self.scenario, &solution, pinned))
    }
}

/// Congestion rents per period, GBP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionRent {
    /// Flow times regional price spread over domestic links.
    pub intra: Vec<f64>,
    /// Interconnector trading margin against neighbour prices (full value).
    pub ic: Vec<f64>,
}

/// Rent on one link in one period, GBP.
pub fn link_rent(
    result: &ClearingResult,
    topology: &NetworkTopology,
    link: usize,
    period: usize,
) -> f64 {
    let Some(flows) = result.flows.get(&link) else {
        return 0.0;
    };
    let bus_idx = topology.bus_index();
    let l = &topology.links[link];
    let from = result.bus_region[bus_idx[l.from.as_str()]];
    let to = result.bus_region[bus_idx[l.to.as_str()]];
    flows[period] * (result.prices[to][period] - result.prices[from][period]) * PERIOD_HOURS
}

/// Interconnector margin in one period, GBP. Split into the export and import legs.
pub fn ic_rent_legs(
    result: &ClearingResult,
    scenario: &DayScenario,
    unit: usize,
    period: usize,
) -> (f64, f64) {
    let UnitKind::Interconnector { efficiency, .. } = scenario.units[unit].kind else {
        return (0.0, 0.0);
    };
    let gb = result.unit_price(unit, period);
    let nb = scenario.neighbor_price[&scenario.units[unit].id][period];
    let import = result.output[unit][period];
    let export = result.intake[unit][period];
    (
        (efficiency * nb - gb) * export * PERIOD_HOURS,
        (efficiency * gb - nb) * import * PERIOD_HOURS,
    )
}

pub fn congestion_rent(
    result: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
) -> CongestionRent {
    let periods = result.periods();
    let intra = (0..periods)
        .map(|t| {
            result
                .flows
                .keys()
                .map(|&l| link_rent(result, topology, l, t))
                .sum()
        })
        .collect();
    let ic = (0..periods)
        .map(|t| {
            (0..scenario.units.len())
                .map(|u| {
                    let (e, i) = ic_rent_legs(result, scenario, u, t);
                    e + i
                })
                .sum()
        })
        .collect();
    CongestionRent { intra, ic }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindCase {
    LowWind,
    HighWind,
    ExtremeWind,
}

impl WindCase {
    pub fn as_str(self) -> &'static str {
        match self {
            WindCase::LowWind => "low-wind",
            WindCase::HighWind => "high-wind",
            WindCase::ExtremeWind => "extreme-wind",
        }
    }
}

/// Technology and bid of the unit setting a price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSetter {
    pub tech: Technology,
    pub bid: f64,
}

/// The partially loaded generator whose bid is closest to its region's price.
pub fn price_setter(
    result: &ClearingResult,
    scenario: &DayScenario,
    region: usize,
    period: usize,
) -> Option<PriceSetter> {
    const TOL: f64 = 1e-6;
    let price = result.prices[region][period];
    let mut best: Option<(f64, PriceSetter)> = None;
    for (u, unit) in scenario.units.iter().enumerate() {
        if result.unit_region[u] != region || !unit.kind.is_generator() {
            continue;
        }
        let upper = match unit.kind {
            UnitKind::DailyQuotaGenerator { power_cap, .. } => power_cap,
            _ => scenario.availability[&unit.id][period],
        };
        let p = result.output[u][period];
        let Some(curve) = scenario.marginal_costs.get(&unit.id) else {
            continue;
        };
        let bid = curve.at(period);
        let marginal = p > TOL && p < upper - TOL;
        let gap = (bid - price).abs();
        if marginal && gap < 1e-3 && best.is_none_or(|(g, _)| gap < g) {
            best = Some((
                gap,
                PriceSetter {
                    tech: unit.tech,
                    bid,
                },
            ));
        }
    }
    best.map(|(_, s)| s)
}

/// Classifies a period from the zonal price spread and the national price setter.
pub fn classify_period(zonal_prices: &[f64], national_setter: Option<PriceSetter>) -> WindCase {
    let max = zonal_prices
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let min = zonal_prices.iter().copied().fold(f64::INFINITY, f64::min);
    if zonal_prices.is_empty() || max - min <= SPLIT_EPSILON {
        return WindCase::LowWind;
    }
    match national_setter {
        Some(s) if s.tech.is_renewable() && s.bid <= 0.0 => WindCase::ExtremeWind,
        _ => WindCase::HighWind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::attach_costs;
    use crate::scenario::fixtures::two_bus;
    use crate::scenario::{Capacity, SubsidyScheme};

    fn prepared(periods: usize) -> (NetworkTopology, DayScenario) {
        let (t, mut s) = two_bus(periods);
        attach_costs(&mut s).unwrap();
        (t, s)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6
    }

    #[test]
    fn two_bus_zonal() {
        let (t, s) = prepared(1);
        let r = clear(&s, &t, MarketDesign::Zonal, 1.0).unwrap();
        assert!(close(r.output[0][0], 50.0) && close(r.output[1][0], 70.0));
        assert!(close(r.prices[0][0], 10.0) && close(r.prices[1][0], 50.0));
        assert!(close(r.flows[&0][0], 50.0));
        let rent = congestion_rent(&r, &s, &t);
        assert!(close(rent.intra[0], 1000.0));
        assert!(close(rent.ic[0], 0.0));
    }

    #[test]
    fn two_bus_national() {
        let (t, s) = prepared(1);
        let r = clear(&s, &t, MarketDesign::National, 1.0).unwrap();
        assert!(close(r.output[0][0], 100.0) && close(r.output[1][0], 20.0));
        assert_eq!(r.prices.len(), 1);
        assert!(close(r.prices[0][0], 50.0));
        assert!(r.flows.is_empty());
        assert!(close(r.objective, (100.0 * 10.0 + 20.0 * 50.0) * 0.5));
    }

    #[test]
    fn unconstrained_link_matches_national() {
        let (mut t, s) = prepared(1);
        t.links[0].capacity = Capacity::Unconstrained;
        let z = clear(&s, &t, MarketDesign::Zonal, 1.0).unwrap();
        let n = clear(&s, &t, MarketDesign::National, 1.0).unwrap();
        assert!(close(z.prices[0][0], 50.0) && close(z.prices[1][0], 50.0));
        assert!(close(z.objective, n.objective));
        assert_eq!(congestion_rent(&z, &s, &t).intra, vec![0.0]);
    }

    #[test]
    fn tuning_scales_boundary_link() {
        let (t, s) = prepared(1);
        let r = clear(&s, &t, MarketDesign::Nodal, 1.5).unwrap();
        assert!(close(r.flows[&0][0], 75.0));
        assert_eq!(
            clear(&s, &t, MarketDesign::Nodal, 0.0).unwrap_err(),
            ClearingError::InvalidTuning(0.0)
        );
    }

    #[test]
    fn neighbours_of_boundary_links_are_scaled() {
        use crate::scenario::{Band, Bus, Link};
        let bus = |id: &str, zone: &str| Bus {
            id: id.into(),
            zone: zone.into(),
            band: Band::South,
        };
        let link = |a: &str, b: &str, cap: f64, boundary: Option<&str>| Link {
            from: a.into(),
            to: b.into(),
            capacity: Capacity::Limited(cap),
            boundary: boundary.map(String::from),
        };
        let t = NetworkTopology::new(
            vec![bus("a", "1"), bus("b", "2"), bus("c", "2"), bus("d", "2")],
            vec![
                link("a", "b", 100.0, Some("X")),
                link("b", "c", 40.0, None),
                link("c", "d", 30.0, None),
            ],
        );
        let (_, mut s) = two_bus(2);
        s.boundary_ntc = BTreeMap::from([("X".to_string(), vec![50.0, 200.0])]);
        let lim = link_limits(&t, &s, 2.0);
        assert_eq!(lim[0], vec![Some(100.0), Some(400.0)]);
        assert_eq!(lim[1], vec![Some(40.0), Some(160.0)]);
        assert_eq!(lim[2], vec![Some(30.0), Some(30.0)]);
    }

    #[test]
    fn shortfall_is_reported_as_power_balance() {
        let (t, mut s) = prepared(1);
        s.load.insert("S".into(), vec![500.0]);
        match clear(&s, &t, MarketDesign::National, 1.0).unwrap_err() {
            ClearingError::Infeasible { group, .. } => {
                assert_eq!(group, ConstraintGroup::PowerBalance)
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn isolated_load_is_reported_as_link_limits() {
        let (t, mut s) = prepared(1);
        s.availability.insert("GS".into(), vec![0.0]);
        s.availability.insert("GN".into(), vec![200.0]);
        match clear(&s, &t, MarketDesign::Nodal, 1.0).unwrap_err() {
            ClearingError::Infeasible { group, .. } => {
                assert_eq!(group, ConstraintGroup::LinkLimits)
            }
            e => panic!("unexpected {e}"),
        }
    }

    fn with_storage_and_ic(periods: usize) -> (NetworkTopology, DayScenario) {
        let (t, mut s) = two_bus(periods);
        s.units.push(Unit {
            id: "BAT".into(),
            bus: "S".into(),
            tech: Technology::Battery,
            subsidy: SubsidyScheme::None,
            kind: UnitKind::StorageUnit {
                energy_cap: 400.0,
                power_cap: 80.0,
                damping: 0.25,
            },
            base_cost: None,
        });
        s.units.push(Unit {
            id: "IC1".into(),
            bus: "S".into(),
            tech: Technology::Ic,
            subsidy: SubsidyScheme::None,
            kind: UnitKind::Interconnector {
                import_cap: 30.0,
                export_cap: 30.0,
                ramp_limit: 10.0,
                efficiency: 0.99,
            },
            base_cost: None,
        });
        s.units.push(Unit {
            id: "HYD".into(),
            bus: "N".into(),
            tech: Technology::Hydro,
            subsidy: SubsidyScheme::None,
            kind: UnitKind::DailyQuotaGenerator {
                daily_quota: 40.0,
                power_cap: 20.0,
            },
            base_cost: None,
        });
        let load: Vec<f64> = (0..periods)
            .map(|t| 90.0 + 40.0 * ((t as f64) / periods as f64 * std::f64::consts::TAU).sin())
            .collect();
        s.load.insert("S".into(), load);
        s.day_ahead_price = (0..periods).map(|t| 40.0 + t as f64).collect();
        s.neighbor_price.insert(
            "IC1".into(),
            (0..periods).map(|t| 20.0 + 2.0 * t as f64).collect(),
        );
        attach_costs(&mut s).unwrap();
        (t, s)
    }

    #[test]
    fn storage_and_interconnector_constraints_hold() {
        let (t, s) = with_storage_and_ic(12);
        let r = clear(&s, &t, MarketDesign::Zonal, 1.0).unwrap();
        let bat = r.unit_index("BAT").unwrap();
        let ic = r.unit_index("IC1").unwrap();
        let hyd = r.unit_index("HYD").unwrap();
        let e_max = 100.0;
        let soc = &r.soc["BAT"];
        assert!((soc[11] - 0.5 * e_max).abs() < 1e-9);
        let charged: f64 = r.intake[bat].iter().sum::<f64>() * PERIOD_HOURS;
        let discharged: f64 = r.output[bat].iter().sum::<f64>() * PERIOD_HOURS;
        assert!(discharged <= charged + 0.5 * e_max + 1e-9);
        assert!(soc.iter().all(|&x| x >= -1e-9 && x <= e_max + 1e-9));
        let net: Vec<f64> = (0..12).map(|k| r.output[ic][k] - r.intake[ic][k]).collect();
        assert!(net.windows(2).all(|w| (w[1] - w[0]).abs() <= 10.0 + 1e-7));
        let quota: f64 = r.output[hyd].iter().sum::<f64>() * PERIOD_HOURS;
        assert!((quota - 40.0).abs() < 1e-7);
        // Power balance in each region.
        for k in 0..12 {
            let mut net_n = -r.flows[&0][k];
            let mut net_s = r.flows[&0][k] - s.load["S"][k];
            for u in 0..s.units.len() {
                let inj = r.net_injection(&s, u, k);
                if r.unit_region[u] == 0 {
                    net_n += inj;
                } else {
                    net_s += inj;
                }
            }
            assert!(net_n.abs() < 1e-6 && net_s.abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_positions_are_preserved() {
        let (t, s) = with_storage_and_ic(12);
        let ws = clear(&s, &t, MarketDesign::National, 1.0).unwrap();
        let nodal = clear_fixed_positions(&ws, &s, &t, 1.0).unwrap();
        for u in [ws.unit_index("BAT").unwrap(), ws.unit_index("IC1").unwrap()] {
            assert_eq!(ws.output[u], nodal.output[u]);
            assert_eq!(ws.intake[u], nodal.intake[u]);
        }
        let mut session = RedispatchSession::new(&ws, &s, &t).unwrap();
        let again = session.solve(1.0).unwrap();
        assert!((again.objective - nodal.objective).abs() < 1e-6);
    }

    #[test]
    fn session_switches_between_schedules_and_free_positions() {
        let (t, s) = with_storage_and_ic(12);
        let national = clear(&s, &t, MarketDesign::National, 1.0).unwrap();
        let zonal = clear(&s, &t, MarketDesign::Zonal, 0.8).unwrap();
        let mut session = RedispatchSession::new(&national, &s, &t).unwrap();
        session.solve(1.3).unwrap();

        session.rebase(&zonal).unwrap();
        let warm = session.solve(0.8).unwrap();
        let cold = clear_fixed_positions(&zonal, &s, &t, 0.8).unwrap();
        assert!((warm.objective - cold.objective).abs() < 1e-6);
        let bat = zonal.unit_index("BAT").unwrap();
        assert_eq!(warm.output[bat], zonal.output[bat]);
        assert_eq!(warm.soc["BAT"], zonal.soc["BAT"]);

        session.release();
        let warm = session.solve(0.8).unwrap();
        let cold = clear(&s, &t, MarketDesign::Nodal, 0.8).unwrap();
        assert!((warm.objective - cold.objective).abs() < 1e-6);
        assert_eq!(warm.prices.len(), cold.prices.len());
        for (a, b) in warm
            .prices
            .iter()
            .flatten()
            .zip(cold.prices.iter().flatten())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn design_objectives_are_ordered() {
        let (t, s) = with_storage_and_ic(12);
        let n = clear(&s, &t, MarketDesign::National, 0.7)
            .unwrap()
            .objective;
        let z = clear(&s, &t, MarketDesign::Zonal, 0.7).unwrap().objective;
        let x = clear(&s, &t, MarketDesign::Nodal, 0.7).unwrap().objective;
        assert!(n <= z + 1e-6 && z <= x + 1e-6, "{n} {z} {x}");
    }

    #[test]
    fn classification_examples() {
        let gas = PriceSetter {
            tech: Technology::Gas,
            bid: 90.0,
        };
        let wind = PriceSetter {
            tech: Technology::Wind,
            bid: -48.0,
        };
        assert_eq!(classify_period(&[85.0; 6], Some(gas)), WindCase::LowWind);
        assert_eq!(classify_period(&[0.0, 90.0], Some(gas)), WindCase::HighWind);
        assert_eq!(
            classify_period(&[-48.0, 90.0], Some(wind)),
            WindCase::ExtremeWind
        );
        assert_eq!(classify_period(&[-48.0, 90.0], None), WindCase::HighWind);
    }

    #[test]
    fn congested_two_bus_classifies_high_and_extreme() {
        // Congested: national setter is gas.
        let (t, s) = prepared(1);
        let nat = clear(&s, &t, MarketDesign::National, 1.0).unwrap();
        let zon = clear(&s, &t, MarketDesign::Zonal, 1.0).unwrap();
        let setter = price_setter(&nat, &s, 0, 0);
        assert_eq!(setter.unwrap().tech, Technology::Gas);
        let zp: Vec<f64> = zon.prices.iter().map(|p| p[0]).collect();
        assert_eq!(classify_period(&zp, setter), WindCase::HighWind);

        // Northern RO wind exceeding national load sets the national price.
        let (t, mut s) = two_bus(1);
        s.units[0].subsidy = SubsidyScheme::Ro(48.0);
        s.units[0].base_cost = None;
        s.availability.insert("GN".into(), vec![200.0]);
        s.load.insert("S".into(), vec![90.0]);
        s.availability.insert("GS".into(), vec![100.0]);
        attach_costs(&mut s).unwrap();
        let nat = clear(&s, &t, MarketDesign::National, 1.0).unwrap();
        let zon = clear(&s, &t, MarketDesign::Zonal, 1.0).unwrap();
        let setter = price_setter(&nat, &s, 0, 0);
        assert!(close(nat.prices[0][0], -48.0));
        let zp: Vec<f64> = zon.prices.iter().map(|p| p[0]).collect();
        assert!(close(zp[0], -48.0) && close(zp[1], 50.0));
        assert_eq!(classify_period(&zp, setter), WindCase::ExtremeWind);
    }
}
