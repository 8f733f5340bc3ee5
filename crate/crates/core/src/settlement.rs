//! Money flows of one cleared day: what consumers pay, what each unit earns,
//! and what that leaves as producer surplus.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clearing::{congestion_rent, ic_rent_legs, ClearingResult, MarketDesign};
use crate::redispatch::{BalancingOutcome, BalancingPrices};
use crate::scenario::{
    DayScenario, NetworkTopology, SubsidyScheme, Technology, UnitKind, PERIOD_HOURS,
};

/// Consecutive negative-price periods after which CfD top-ups stop.
pub const CFD_NEGATIVE_RUN_LIMIT: usize = 12;

/// Default balancing premium, GBP/MWh.
pub const DEFAULT_MARKUP: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SettlementError {
    #[error("CfD unit {0} has no usable strike price")]
    MissingStrike(String),
    #[error("need at least two observations, got {0}")]
    TooFewObservations(usize),
    #[error("wholesale and actual results differ in shape")]
    Mismatch,
}

/// Consumer-side costs, GBP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsumerCostStack {
    pub wholesale_cost: f64,
    pub bm_cost: f64,
    pub ro_payments: f64,
    pub cfd_payments: f64,
    pub congestion_rent_income: f64,
    /// MWh.
    pub served_energy: f64,
}

impl ConsumerCostStack {
    pub fn total(&self) -> f64 {
        self.wholesale_cost + self.bm_cost + self.ro_payments + self.cfd_payments
            - self.congestion_rent_income
    }

    /// GBP/MWh of served load; zero when nothing was served.
    pub fn per_mwh(&self) -> f64 {
        if self.served_energy > 0.0 {
            self.total() / self.served_energy
        } else {
            0.0
        }
    }
}

impl AddAssign for ConsumerCostStack {
    fn add_assign(&mut self, o: Self) {
        self.wholesale_cost += o.wholesale_cost;
        self.bm_cost += o.bm_cost;
        self.ro_payments += o.ro_payments;
        self.cfd_payments += o.cfd_payments;
        self.congestion_rent_income += o.congestion_rent_income;
        self.served_energy += o.served_energy;
    }
}

/// Day money and energy of one unit. Energies in MWh, money in GBP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSettlement {
    pub unit: String,
    pub tech: Technology,
    pub thermal: bool,
    /// Wholesale-schedule energy (net of charging for storage).
    pub scheduled_energy: f64,
    /// Energy after redispatch.
    pub actual_energy: f64,
    pub wholesale_revenue: f64,
    pub balancing_revenue: f64,
    pub ro_income: f64,
    pub cfd_income: f64,
    pub up_energy: f64,
    pub down_energy: f64,
    pub wholesale_surplus: f64,
    pub balancing_surplus: f64,
    /// Σ srmc · (scheduled − attributed down) for thermal units.
    pub thermal_wholesale_cost: f64,
    /// Σ (srmc + markup) · attributed up for thermal units.
    pub thermal_balancing_cost: f64,
    /// Scheduled output removed by redispatch.
    pub curtailed_energy: f64,
    /// Available output left out of the wholesale schedule.
    pub unscheduled_energy: f64,
}

impl UnitSettlement {
    pub fn new(unit: &str, tech: Technology, thermal: bool) -> Self {
        Self {
            unit: unit.to_string(),
            tech,
            thermal,
            scheduled_energy: 0.0,
            actual_energy: 0.0,
            wholesale_revenue: 0.0,
            balancing_revenue: 0.0,
            ro_income: 0.0,
            cfd_income: 0.0,
            up_energy: 0.0,
            down_energy: 0.0,
            wholesale_surplus: 0.0,
            balancing_surplus: 0.0,
            thermal_wholesale_cost: 0.0,
            thermal_balancing_cost: 0.0,
            curtailed_energy: 0.0,
            unscheduled_energy: 0.0,
        }
    }

    pub fn subsidy_income(&self) -> f64 {
        self.ro_income + self.cfd_income
    }

    /// Market revenue used by the policies: wholesale plus subsidy.
    pub fn market_revenue(&self) -> f64 {
        self.wholesale_revenue + self.subsidy_income()
    }

    pub fn total_revenue(&self) -> f64 {
        self.market_revenue() + self.balancing_revenue
    }

    pub fn surplus(&self) -> f64 {
        self.wholesale_surplus + self.balancing_surplus + self.subsidy_income()
    }

    fn accumulate(&mut self, o: &Self) {
        self.scheduled_energy += o.scheduled_energy;
        self.actual_energy += o.actual_energy;
        self.wholesale_revenue += o.wholesale_revenue;
        self.balancing_revenue += o.balancing_revenue;
        self.ro_income += o.ro_income;
        self.cfd_income += o.cfd_income;
        self.up_energy += o.up_energy;
        self.down_energy += o.down_energy;
        self.wholesale_surplus += o.wholesale_surplus;
        self.balancing_surplus += o.balancing_surplus;
        self.thermal_wholesale_cost += o.thermal_wholesale_cost;
        self.thermal_balancing_cost += o.thermal_balancing_cost;
        self.curtailed_energy += o.curtailed_energy;
        self.unscheduled_energy += o.unscheduled_energy;
    }
}

/// Interconnector trade of one day, GBP.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IcSettlement {
    pub unit: String,
    /// Exports valued at the GB price.
    pub export_value: f64,
    /// Imports valued at the neighbour price.
    pub import_cost: f64,
    pub rent_export_leg: f64,
    pub rent_import_leg: f64,
}

impl IcSettlement {
    pub fn rent(&self) -> f64 {
        self.rent_export_leg + self.rent_import_leg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySettlement {
    pub design: MarketDesign,
    pub consumer: ConsumerCostStack,
    /// Consumer wholesale payment per period, GBP.
    pub load_payment: Vec<f64>,
    /// Wholesale revenue of all units (interconnectors on the GB side) per period, GBP.
    pub producer_revenue: Vec<f64>,
    pub intra_rent: Vec<f64>,
    pub ic_rent: Vec<f64>,
    pub units: Vec<UnitSettlement>,
    pub interconnectors: Vec<IcSettlement>,
    pub markup: f64,
    pub bm_warnings: usize,
}

/// Periods whose CfD top-up is suspended: the 13th and later period of every
/// run of negative prices.
pub fn cfd_suspended(prices: &[f64]) -> Vec<bool> {
    let mut run = 0;
    prices
        .iter()
        .map(|&p| {
            run = if p < 0.0 { run + 1 } else { 0 };
            run > CFD_NEGATIVE_RUN_LIMIT
        })
        .collect()
}

/// CfD top-up of one unit over a day; negative values are clawbacks.
pub fn cfd_top_up(strike: f64, reference: &[f64], actual_mw: &[f64]) -> f64 {
    let suspended = cfd_suspended(reference);
    reference
        .iter()
        .zip(actual_mw)
        .zip(suspended)
        .filter(|(_, s)| !s)
        .map(|((p, q), _)| (strike - p) * q * PERIOD_HOURS)
        .sum()
}

/// Settles one design on one day.
///
/// `wholesale` carries the design's schedule and prices, `actual` the
/// network-feasible dispatch after redispatch.
#[allow(clippy::too_many_arguments)]
pub fn settle_day(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    wholesale: &ClearingResult,
    actual: &ClearingResult,
    outcome: &BalancingOutcome,
    prices: &BalancingPrices,
    markup: f64,
) -> Result<DaySettlement, SettlementError> {
    let periods = wholesale.periods();
    let n = scenario.units.len();
    if actual.output.len() != n || actual.periods() != periods || wholesale.output.len() != n {
        return Err(SettlementError::Mismatch);
    }
    let bus_idx = topology.bus_index();

    let mut load_payment = vec![0.0; periods];
    for (bus, series) in &scenario.load {
        let Some(&b) = bus_idx.get(bus.as_str()) else {
            continue;
        };
        let region = wholesale.bus_region[b];
        for t in 0..periods {
            load_payment[t] += series[t] * wholesale.prices[region][t] * PERIOD_HOURS;
        }
    }

    let mut producer_revenue = vec![0.0; periods];
    let mut units = Vec::with_capacity(n);
    let mut interconnectors = Vec::new();
    let mut consumer = ConsumerCostStack {
        bm_cost: prices.bm_cost,
        served_energy: scenario.served_energy(),
        ..Default::default()
    };

    for (u, unit) in scenario.units.iter().enumerate() {
        let price: Vec<f64> = (0..periods).map(|t| wholesale.unit_price(u, t)).collect();
        let mut s = UnitSettlement::new(&unit.id, unit.tech, unit.is_thermal());
        s.balancing_revenue = prices.unit_revenue.get(u).copied().unwrap_or(0.0);
        for t in 0..periods {
            let inj = wholesale.net_injection(scenario, u, t);
            let revenue = price[t] * inj * PERIOD_HOURS;
            producer_revenue[t] += revenue;
            if matches!(unit.kind, UnitKind::Interconnector { .. }) {
                continue;
            }
            s.wholesale_revenue += revenue;
            s.scheduled_energy += inj * PERIOD_HOURS;
            s.actual_energy += actual.net_injection(scenario, u, t) * PERIOD_HOURS;
        }

        if let UnitKind::Interconnector { .. } = unit.kind {
            let nb = &scenario.neighbor_price[&unit.id];
            let mut ic = IcSettlement {
                unit: unit.id.clone(),
                ..Default::default()
            };
            for t in 0..periods {
                ic.export_value += wholesale.intake[u][t] * price[t] * PERIOD_HOURS;
                ic.import_cost += wholesale.output[u][t] * nb[t] * PERIOD_HOURS;
                let (e, i) = ic_rent_legs(wholesale, scenario, u, t);
                ic.rent_export_leg += e;
                ic.rent_import_leg += i;
            }
            interconnectors.push(ic);
            continue;
        }

        if unit.kind.is_generator() {
            let q_act = &actual.output[u];
            match unit.subsidy {
                SubsidyScheme::Ro(roc) => {
                    s.ro_income = roc * q_act.iter().sum::<f64>() * PERIOD_HOURS;
                }
                SubsidyScheme::Cfd(strike) => {
                    if !strike.is_finite() {
                        return Err(SettlementError::MissingStrike(unit.id.clone()));
                    }
                    s.cfd_income = cfd_top_up(strike, &price, q_act);
                }
                SubsidyScheme::None => {}
            }
            let up = &outcome.unit_up[u];
            let down = &outcome.unit_down[u];
            s.up_energy = up.iter().sum();
            s.down_energy = down.iter().sum();
            for t in 0..periods {
                let q_ws = wholesale.output[u][t];
                s.curtailed_energy += (q_ws - q_act[t]).max(0.0) * PERIOD_HOURS;
                if let Some(avail) = scenario.availability.get(&unit.id) {
                    s.unscheduled_energy += (avail[t] - q_ws).max(0.0) * PERIOD_HOURS;
                }
            }
            if s.thermal {
                let curve = scenario.marginal_costs.get(&unit.id);
                let srmc = |t: usize| curve.map_or(0.0, |c| c.at(t));
                let offer = prices.avg_offer_price;
                let bid = prices.avg_bid_price;
                for t in 0..periods {
                    let q_ws = wholesale.output[u][t];
                    s.wholesale_surplus += (price[t] - srmc(t)) * q_ws * PERIOD_HOURS;
                    s.balancing_surplus +=
                        (offer - srmc(t) - markup) * up[t] + (srmc(t) - bid) * down[t];
                    s.thermal_wholesale_cost += srmc(t) * (q_ws * PERIOD_HOURS - down[t]);
                    s.thermal_balancing_cost += (srmc(t) + markup) * up[t];
                }
            } else {
                s.wholesale_surplus = s.wholesale_revenue;
                s.balancing_surplus = s.balancing_revenue;
            }
        } else {
            s.wholesale_surplus = s.wholesale_revenue;
        }
        consumer.ro_payments += s.ro_income;
        consumer.cfd_payments += s.cfd_income;
        units.push(s);
    }

    let rent = congestion_rent(wholesale, scenario, topology);
    consumer.wholesale_cost = load_payment.iter().sum();
    consumer.congestion_rent_income = rent.intra.iter().sum();
    Ok(DaySettlement {
        design: wholesale.design,
        consumer,
        load_payment,
        producer_revenue,
        intra_rent: rent.intra,
        ic_rent: rent.ic,
        units,
        interconnectors,
        markup,
        bm_warnings: prices.warnings,
    })
}

/// Per-unit totals over many days, keyed by unit id.
pub fn accumulate_units<'a>(
    days: impl IntoIterator<Item = &'a DaySettlement>,
) -> BTreeMap<String, UnitSettlement> {
    let mut totals: BTreeMap<String, UnitSettlement> = BTreeMap::new();
    for day in days {
        for s in &day.units {
            totals
                .entry(s.unit.clone())
                .or_insert_with(|| UnitSettlement::new(&s.unit, s.tech, s.thermal))
                .accumulate(s);
        }
    }
    totals
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerSurplus {
    pub unit: String,
    pub tech: Technology,
    pub national: f64,
    pub zonal: f64,
    /// Percentage change zonal vs national; `None` when the national surplus is zero.
    pub change_pct: Option<f64>,
    pub markup: f64,
}

/// Compares run totals of producer surplus between the two designs.
pub fn producer_surplus(
    national: &BTreeMap<String, UnitSettlement>,
    zonal: &BTreeMap<String, UnitSettlement>,
    markup: f64,
) -> Vec<ProducerSurplus> {
    national
        .iter()
        .filter_map(|(id, n)| {
            let z = zonal.get(id)?;
            let (ns, zs) = (n.surplus(), z.surplus());
            Some(ProducerSurplus {
                unit: id.clone(),
                tech: n.tech,
                national: ns,
                zonal: zs,
                change_pct: (ns != 0.0).then(|| 100.0 * (zs - ns) / ns.abs()),
                markup,
            })
        })
        .collect()
}

/// Population standard deviation, GBP/MWh.
pub fn price_volatility(prices: &[f64]) -> Result<f64, SettlementError> {
    if prices.len() < 2 {
        return Err(SettlementError::TooFewObservations(prices.len()));
    }
    let n = prices.len() as f64;
    let mean = prices.iter().sum::<f64>() / n;
    let var = prices.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}
