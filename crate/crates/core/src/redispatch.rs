//! Balancing actions needed to turn a wholesale schedule into a
//! network-feasible dispatch, and their cost against the observed stacks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clearing::{clear_fixed_positions, ClearingError, ClearingResult};
use crate::scenario::{
    Band, DayScenario, NetworkTopology, ObservedBalancingRecord, StackEntry, Technology,
    PERIOD_HOURS,
};

/// Nodal re-optimisation with storage and interconnectors held at their
/// wholesale positions.
pub fn redispatch(
    wholesale: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
    tau: f64,
) -> Result<ClearingResult, ClearingError> {
    clear_fixed_positions(wholesale, scenario, topology, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub tech: Technology,
    pub band: Band,
}

/// Partition of generator units (by scenario index) into balancing groups.
pub type GroupMap = BTreeMap<GroupKey, Vec<usize>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalancingError {
    #[error("unit {0} appears in no balancing group")]
    Ungrouped(String),
    #[error("unit {0} appears in more than one balancing group")]
    DuplicateMember(String),
    #[error("unit {0} is not a generator")]
    NotAGenerator(String),
    #[error("results differ in shape")]
    Mismatch,
}

/// Groups every generator by technology and the band of its bus.
pub fn group_by_technology_and_band(
    scenario: &DayScenario,
    topology: &NetworkTopology,
) -> GroupMap {
    let mut groups = GroupMap::new();
    for (u, unit) in scenario.units.iter().enumerate() {
        if !unit.kind.is_generator() {
            continue;
        }
        let band = topology.bus(&unit.bus).map_or(Band::South, |b| b.band);
        groups
            .entry(GroupKey {
                tech: unit.tech,
                band,
            })
            .or_default()
            .push(u);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingOutcome {
    pub groups: Vec<GroupKey>,
    /// Upward group deltas, MWh, `[group][period]`.
    pub group_up: Vec<Vec<f64>>,
    /// Downward group deltas as positive MWh, `[group][period]`.
    pub group_down: Vec<Vec<f64>>,
    pub volume_up: f64,
    pub volume_down: f64,
    /// Attributed upward volume per unit, MWh, `[unit][period]`.
    pub unit_up: Vec<Vec<f64>>,
    /// Attributed downward volume per unit as positive MWh, `[unit][period]`.
    pub unit_down: Vec<Vec<f64>>,
}

impl BalancingOutcome {
    /// Total congestion-related balancing volume, MWh.
    pub fn volume(&self) -> f64 {
        self.volume_up + self.volume_down
    }
}

/// Group-level differences between wholesale schedule and nodal dispatch.
pub fn balancing_volume(
    wholesale: &ClearingResult,
    nodal: &ClearingResult,
    scenario: &DayScenario,
    groups: &GroupMap,
) -> Result<BalancingOutcome, BalancingError> {
    let n = scenario.units.len();
    if wholesale.output.len() != n || nodal.output.len() != n {
        return Err(BalancingError::Mismatch);
    }
    let periods = wholesale.periods();
    if nodal.periods() != periods {
        return Err(BalancingError::Mismatch);
    }
    let mut seen = vec![false; n];
    for members in groups.values() {
        for &u in members {
            let unit = &scenario.units[u];
            if !unit.kind.is_generator() {
                return Err(BalancingError::NotAGenerator(unit.id.clone()));
            }
            if std::mem::replace(&mut seen[u], true) {
                return Err(BalancingError::DuplicateMember(unit.id.clone()));
            }
        }
    }
    if let Some(u) = (0..n).find(|&u| scenario.units[u].kind.is_generator() && !seen[u]) {
        return Err(BalancingError::Ungrouped(scenario.units[u].id.clone()));
    }

    let mut outcome = BalancingOutcome {
        groups: groups.keys().copied().collect(),
        group_up: Vec::with_capacity(groups.len()),
        group_down: Vec::with_capacity(groups.len()),
        volume_up: 0.0,
        volume_down: 0.0,
        unit_up: vec![vec![0.0; periods]; n],
        unit_down: vec![vec![0.0; periods]; n],
    };
    for members in groups.values() {
        let mut up = vec![0.0; periods];
        let mut down = vec![0.0; periods];
        for t in 0..periods {
            let deltas: Vec<f64> = members
                .iter()
                .map(|&u| (nodal.output[u][t] - wholesale.output[u][t]) * PERIOD_HOURS)
                .collect();
            let net: f64 = deltas.iter().sum();
            let (same_sign_total, sign) = if net > 0.0 {
                (deltas.iter().filter(|d| **d > 0.0).sum::<f64>(), 1.0)
            } else {
                (-deltas.iter().filter(|d| **d < 0.0).sum::<f64>(), -1.0)
            };
            if net > 0.0 {
                up[t] = net;
            } else {
                down[t] = -net;
            }
            if net != 0.0 && same_sign_total > 0.0 {
                for (&u, &d) in members.iter().zip(&deltas) {
                    if d * sign > 0.0 {
                        let share = d.abs() / same_sign_total * net.abs();
                        if sign > 0.0 {
                            outcome.unit_up[u][t] = share;
                        } else {
                            outcome.unit_down[u][t] = share;
                        }
                    }
                }
            }
        }
        outcome.volume_up += up.iter().sum::<f64>();
        outcome.volume_down += down.iter().sum::<f64>();
        outcome.group_up.push(up);
        outcome.group_down.push(down);
    }
    Ok(outcome)
}

/// Money side of a balancing outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingPrices {
    /// Paid for accepted offers, GBP.
    pub offer_cost: f64,
    /// Received for accepted bids, GBP (negative when bids are negative-priced).
    pub bid_receipt: f64,
    /// Net consumer-borne cost, GBP.
    pub bm_cost: f64,
    /// Volume-weighted price of the consumed offer stack, GBP/MWh.
    pub avg_offer_price: f64,
    /// Volume-weighted price of the consumed bid stack, GBP/MWh.
    pub avg_bid_price: f64,
    /// Balancing receipts per unit for the day, GBP.
    pub unit_revenue: Vec<f64>,
    /// Number of stacks that ran out before the modelled volume was covered.
    pub warnings: usize,
}

/// Consumes `volume` MWh from a stack already sorted in acceptance order.
/// Returns the payment and whether the stack ran out.
pub fn consume_stack(stack: &[StackEntry], volume: f64) -> (f64, bool) {
    let mut remaining = volume;
    let mut payment = 0.0;
    for entry in stack {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(entry.volume);
        payment += take * entry.price;
        remaining -= take;
    }
    if remaining > 1e-9 {
        let last = stack.last().map_or(0.0, |e| e.price);
        (payment + remaining * last, true)
    } else {
        (payment, false)
    }
}

/// Prices modelled balancing volume against the day's pooled stacks.
pub fn price_balancing(
    outcome: &BalancingOutcome,
    record: &ObservedBalancingRecord,
) -> BalancingPrices {
    let mut offers = record.accepted_offers.clone();
    offers.sort_by(|a, b| a.price.total_cmp(&b.price));
    let mut bids = record.accepted_bids.clone();
    bids.sort_by(|a, b| b.price.total_cmp(&a.price));

    let (offer_cost, offers_short) = consume_stack(&offers, outcome.volume_up);
    let (bid_receipt, bids_short) = consume_stack(&bids, outcome.volume_down);
    let avg_offer_price = if outcome.volume_up > 0.0 {
        offer_cost / outcome.volume_up
    } else {
        0.0
    };
    let avg_bid_price = if outcome.volume_down > 0.0 {
        bid_receipt / outcome.volume_down
    } else {
        0.0
    };
    let unit_revenue = outcome
        .unit_up
        .iter()
        .zip(&outcome.unit_down)
        .map(|(up, down)| {
            avg_offer_price * up.iter().sum::<f64>() - avg_bid_price * down.iter().sum::<f64>()
        })
        .collect();
    BalancingPrices {
        offer_cost,
        bid_receipt,
        bm_cost: offer_cost - bid_receipt,
        avg_offer_price,
        avg_bid_price,
        unit_revenue,
        warnings: usize::from(offers_short) + usize::from(bids_short),
    }
}
