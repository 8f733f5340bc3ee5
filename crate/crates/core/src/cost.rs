//! Bid price estimation and the merit order.
//!
//! Bids follow the unit's support scheme: nuclear at its observed price floor,
//! RO units at minus their certificate value, CfD units at zero and thermal
//! units at an SRMC estimate scaled each period by a correction factor that
//! aligns the price-setting thermal unit with the observed day-ahead price.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{
    CostCurve, DayScenario, SubsidyScheme, Technology, Unit, UnitKind, PERIOD_HOURS,
};

/// Lowest price at which GB nuclear kept dispatching over 2022-2024.
pub const GB_NUCLEAR_FLOOR: f64 = -77.29;

/// Correction is skipped when the price setter's SRMC is at or below this.
pub const SRMC_POSITIVITY_FLOOR: f64 = 1.0;

/// Share of MEL above which a thermal unit counts as dispatching.
pub const DISPATCH_SHARE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("no dispatching period in history")]
    NoDispatchingPeriod,
    #[error("no observed estimates to sample from")]
    EmptyCohort,
    #[error("no thermal estimate available for technology {0}")]
    EmptyClass(Technology),
    #[error("missing cost for unit {0}")]
    MissingCost(String),
}

/// Lowest day-ahead price among periods in which the units kept running.
pub fn estimate_nuclear_floor(history: &[(usize, f64, bool)]) -> Result<f64, CostError> {
    history
        .iter()
        .filter(|(_, _, dispatching)| *dispatching)
        .map(|(_, price, _)| *price)
        .min_by(f64::total_cmp)
        .ok_or(CostError::NoDispatchingPeriod)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RocSource {
    ObservedRecurringBid,
    SampledFromCohort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocEstimate {
    pub unit: String,
    pub roc: f64,
    pub source: RocSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocConfig {
    /// Minimum share of accepted bids at the modal price.
    pub recurring_share: f64,
    pub min_bids: usize,
    /// Sampled values are clipped below at this value.
    pub floor: f64,
    pub seed: u64,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            recurring_share: 0.5,
            min_bids: 3,
            floor: 1.0,
            seed: 0,
        }
    }
}

/// Most frequent exact price and its count; ties go to the lowest price.
fn modal_price(bids: &[f64]) -> Option<(f64, usize)> {
    let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &b in bids {
        let entry = counts.entry(b.to_bits()).or_insert((b, 0));
        entry.1 += 1;
    }
    counts
        .into_values()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
}

/// Infers certificate values from accepted balancing bids.
///
/// Units whose bids recur at one exact price take its magnitude. The rest are
/// drawn from a normal fitted to the observed cohort.
pub fn infer_roc(
    bid_history: &BTreeMap<String, Vec<f64>>,
    config: &RocConfig,
) -> Result<BTreeMap<String, RocEstimate>, CostError> {
    let mut out = BTreeMap::new();
    let mut unresolved = Vec::new();
    for (unit, bids) in bid_history {
        let recurring = modal_price(bids).filter(|(price, count)| {
            bids.len() >= config.min_bids
                && *count as f64 >= config.recurring_share * bids.len() as f64
                && price.abs() > 0.0
        });
        match recurring {
            Some((price, _)) => {
                out.insert(
                    unit.clone(),
                    RocEstimate {
                        unit: unit.clone(),
                        roc: price.abs(),
                        source: RocSource::ObservedRecurringBid,
                    },
                );
            }
            None => unresolved.push(unit.clone()),
        }
    }
    if unresolved.is_empty() {
        return Ok(out);
    }
    let cohort: Vec<f64> = out.values().map(|e| e.roc).collect();
    if cohort.is_empty() {
        return Err(CostError::EmptyCohort);
    }
    let n = cohort.len() as f64;
    let mean = cohort.iter().sum::<f64>() / n;
    let var = cohort.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let normal = Normal::new(mean, var.sqrt()).map_err(|_| CostError::EmptyCohort)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for unit in unresolved {
        let roc = normal.sample(&mut rng).max(config.floor);
        out.insert(
            unit.clone(),
            RocEstimate {
                unit,
                roc,
                source: RocSource::SampledFromCohort,
            },
        );
    }
    Ok(out)
}

/// One period of a thermal unit's recent record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchObservation {
    pub output: f64,
    pub mel: f64,
    pub day_ahead_price: f64,
}

impl DispatchObservation {
    pub fn dispatching(&self) -> bool {
        self.mel > 0.0 && self.output >= DISPATCH_SHARE * self.mel
    }
}

/// Mean day-ahead price over the periods in which the unit was dispatching.
///
/// Falls back to `class_mean` when the window holds no dispatching period.
pub fn estimate_thermal_srmc(
    tech: Technology,
    window: &[DispatchObservation],
    class_mean: Option<f64>,
) -> Result<f64, CostError> {
    let (sum, n) = window
        .iter()
        .filter(|o| o.dispatching())
        .fold((0.0, 0usize), |(s, n), o| (s + o.day_ahead_price, n + 1));
    if n > 0 {
        Ok(sum / n as f64)
    } else {
        class_mean.ok_or(CostError::EmptyClass(tech))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeritEntry {
    pub unit: String,
    pub tech: Technology,
    pub thermal: bool,
    /// GBP/MWh.
    pub bid: f64,
    /// MW.
    pub available: f64,
}

/// Uncorrected bid of a unit, or `None` for units priced outside the merit order.
pub fn base_bid(unit: &Unit) -> Option<f64> {
    if matches!(
        unit.kind,
        UnitKind::StorageUnit { .. } | UnitKind::Interconnector { .. }
    ) {
        return None;
    }
    if unit.is_thermal() {
        return unit.base_cost;
    }
    Some(match unit.subsidy {
        SubsidyScheme::Ro(roc) => -roc,
        SubsidyScheme::Cfd(_) => 0.0,
        SubsidyScheme::None => match unit.tech {
            Technology::Nuclear => unit.base_cost.unwrap_or(GB_NUCLEAR_FLOOR),
            _ => unit.base_cost.unwrap_or(0.0),
        },
    })
}

/// MW a unit can offer into the merit order in `period`.
fn offered_power(scenario: &DayScenario, unit: &Unit, period: usize) -> f64 {
    match &unit.kind {
        UnitKind::DailyQuotaGenerator {
            daily_quota,
            power_cap,
        } => (daily_quota / (scenario.periods as f64 * PERIOD_HOURS)).min(*power_cap),
        _ => scenario
            .availability
            .get(&unit.id)
            .map_or(0.0, |series| series[period]),
    }
}

fn sort_merit(entries: &mut [MeritEntry]) {
    entries.sort_by(|a, b| a.bid.total_cmp(&b.bid).then_with(|| a.unit.cmp(&b.unit)));
}

/// Merit order per period using the attached cost curves.
///
/// Storage and interconnectors are excluded; they are priced inside the LP.
pub fn build_merit_order(scenario: &DayScenario) -> Result<Vec<Vec<MeritEntry>>, CostError> {
    let mut out = Vec::with_capacity(scenario.periods);
    for t in 0..scenario.periods {
        let mut entries = Vec::new();
        for unit in scenario.units.iter().filter(|u| u.kind.is_generator()) {
            let curve = scenario
                .marginal_costs
                .get(&unit.id)
                .ok_or_else(|| CostError::MissingCost(unit.id.clone()))?;
            entries.push(MeritEntry {
                unit: unit.id.clone(),
                tech: unit.tech,
                thermal: unit.is_thermal(),
                bid: curve.at(t),
                available: offered_power(scenario, unit, t),
            });
        }
        sort_merit(&mut entries);
        out.push(entries);
    }
    Ok(out)
}

/// Index of the unit that covers `load` when stacking the order; the last
/// unit if the stack is short.
pub fn price_setter(order: &[MeritEntry], load: f64) -> Option<usize> {
    let mut stacked = 0.0;
    for (i, entry) in order.iter().enumerate() {
        stacked += entry.available;
        if stacked >= load && entry.available > 0.0 {
            return Some(i);
        }
    }
    order.iter().rposition(|e| e.available > 0.0)
}

/// Ratio between the observed price and the price setter's SRMC.
///
/// Returns 1 when the setter is not thermal, its SRMC is at or below the
/// positivity floor, or the observed price is not positive.
pub fn correction_factor(order: &[MeritEntry], total_load: f64, day_ahead_price: f64) -> f64 {
    let Some(idx) = price_setter(order, total_load) else {
        return 1.0;
    };
    let setter = &order[idx];
    if !setter.thermal || setter.bid <= SRMC_POSITIVITY_FLOOR || day_ahead_price <= 0.0 {
        return 1.0;
    }
    day_ahead_price / setter.bid
}

/// Fills `scenario.marginal_costs` for every unit and returns the per-period
/// correction factors.
pub fn attach_costs(scenario: &mut DayScenario) -> Result<Vec<f64>, CostError> {
    let mut base = BTreeMap::new();
    for unit in &scenario.units {
        let bid = match base_bid(unit) {
            Some(b) => b,
            None if unit.is_thermal() => return Err(CostError::MissingCost(unit.id.clone())),
            None => 0.0,
        };
        base.insert(unit.id.clone(), CostCurve::constant(unit.id.clone(), bid));
    }
    scenario.marginal_costs = base;
    let order = build_merit_order(scenario)?;
    let kappa: Vec<f64> = (0..scenario.periods)
        .map(|t| {
            correction_factor(
                &order[t],
                scenario.total_load(t),
                scenario.day_ahead_price[t],
            )
        })
        .collect();
    for unit in scenario.units.iter().filter(|u| u.is_thermal()) {
        let curve = scenario
            .marginal_costs
            .get_mut(&unit.id)
            .expect("inserted above");
        curve.corrected_srmc = Some(kappa.iter().map(|k| k * curve.base_srmc).collect());
    }
    Ok(kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(unit: &str, bid: f64, mw: f64, thermal: bool) -> MeritEntry {
        MeritEntry {
            unit: unit.into(),
            tech: if thermal {
                Technology::Gas
            } else {
                Technology::Wind
            },
            thermal,
            bid,
            available: mw,
        }
    }

    #[test]
    fn nuclear_floor_examples() {
        let h = [(0, 10.0, true), (1, -5.0, true), (2, -50.0, false)];
        assert_eq!(estimate_nuclear_floor(&h).unwrap(), -5.0);
        assert_eq!(estimate_nuclear_floor(&[(0, 0.0, true)]).unwrap(), 0.0);
        assert_eq!(
            estimate_nuclear_floor(&[(0, 3.0, false)]),
            Err(CostError::NoDispatchingPeriod)
        );
    }

    #[test]
    fn recurring_bid_gives_observed_roc() {
        let hist = BTreeMap::from([("W1".to_string(), vec![-48.1, -48.1, -48.1, -52.0])]);
        let est = infer_roc(&hist, &RocConfig::default()).unwrap();
        assert_eq!(est["W1"].roc, 48.1);
        assert_eq!(est["W1"].source, RocSource::ObservedRecurringBid);
    }

    #[test]
    fn spread_bids_are_sampled() {
        let hist = BTreeMap::from([
            ("A".to_string(), vec![-40.0; 4]),
            ("B".to_string(), vec![-10.0, -20.0, -30.0, -40.0]),
        ]);
        let est = infer_roc(&hist, &RocConfig::default()).unwrap();
        assert_eq!(est["B"].source, RocSource::SampledFromCohort);
        // Cohort of one has zero variance.
        assert_eq!(est["B"].roc, 40.0);
    }

    #[test]
    fn sampling_without_cohort_fails() {
        let hist = BTreeMap::from([("B".to_string(), vec![])]);
        assert_eq!(
            infer_roc(&hist, &RocConfig::default()),
            Err(CostError::EmptyCohort)
        );
    }

    #[test]
    fn sampled_roc_mean_matches_cohort() {
        // Monte-Carlo over seeds: mean of draws from N(50, var{40,50,60}).
        let mut hist = BTreeMap::new();
        hist.insert("A".to_string(), vec![-40.0; 3]);
        hist.insert("B".to_string(), vec![-50.0; 3]);
        hist.insert("C".to_string(), vec![-60.0; 3]);
        hist.insert("X".to_string(), vec![]);
        let n = 10_000;
        let mean = (0..n)
            .map(|seed| {
                let cfg = RocConfig {
                    seed,
                    ..RocConfig::default()
                };
                infer_roc(&hist, &cfg).unwrap()["X"].roc
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 50.0).abs() < 1.0, "mean {mean}");
    }

    #[test]
    fn thermal_srmc_examples() {
        let obs = |output, price| DispatchObservation {
            output,
            mel: 100.0,
            day_ahead_price: price,
        };
        let w = [obs(50.0, 80.0), obs(60.0, 120.0), obs(5.0, 300.0)];
        assert_eq!(
            estimate_thermal_srmc(Technology::Gas, &w, None).unwrap(),
            100.0
        );
        let idle = [obs(0.0, 80.0)];
        assert_eq!(
            estimate_thermal_srmc(Technology::Gas, &idle, Some(95.0)).unwrap(),
            95.0
        );
        assert_eq!(
            estimate_thermal_srmc(Technology::Coal, &idle, None),
            Err(CostError::EmptyClass(Technology::Coal))
        );
        let flat = vec![obs(100.0, 70.0); 48];
        assert_eq!(
            estimate_thermal_srmc(Technology::Gas, &flat, None).unwrap(),
            70.0
        );
    }

    #[test]
    fn correction_factor_examples() {
        let order = [
            entry("W", -45.0, 50.0, false),
            entry("G", 100.0, 100.0, true),
        ];
        assert_eq!(correction_factor(&order, 120.0, 200.0), 2.0);
        let order = [
            entry("W", -45.0, 50.0, false),
            entry("G", 150.0, 100.0, true),
        ];
        assert_eq!(correction_factor(&order, 120.0, 150.0), 1.0);
        assert_eq!(correction_factor(&order, 40.0, 150.0), 1.0);
        let order = [entry("G", 0.5, 100.0, true)];
        assert_eq!(correction_factor(&order, 50.0, 150.0), 1.0);
    }

    #[test]
    fn merit_order_ranks_by_bid_then_id() {
        let mut e = vec![
            entry("gas", 100.0, 1.0, true),
            entry("cfd", 0.0, 1.0, false),
            entry("nuc", -77.29, 1.0, false),
            entry("ro", -48.0, 1.0, false),
            entry("a0", 0.0, 1.0, false),
        ];
        sort_merit(&mut e);
        let ids: Vec<&str> = e.iter().map(|x| x.unit.as_str()).collect();
        assert_eq!(ids, ["nuc", "ro", "a0", "cfd", "gas"]);
    }

    #[test]
    fn empty_merit_order() {
        let mut s = crate::scenario::fixtures::two_bus(48).1;
        s.units.clear();
        s.availability.clear();
        assert!(build_merit_order(&s).unwrap().iter().all(|p| p.is_empty()));
    }

    #[test]
    fn missing_cost_names_unit() {
        let s = crate::scenario::fixtures::two_bus(48).1;
        assert_eq!(
            build_merit_order(&s),
            Err(CostError::MissingCost("GN".into()))
        );
    }

    #[test]
    fn bids_follow_scheme() {
        let mut u = Unit {
            id: "x".into(),
            bus: "b".into(),
            tech: Technology::Nuclear,
            subsidy: SubsidyScheme::None,
            kind: UnitKind::SimpleGenerator,
            base_cost: None,
        };
        assert_eq!(base_bid(&u), Some(GB_NUCLEAR_FLOOR));
        u.tech = Technology::Wind;
        u.subsidy = SubsidyScheme::Ro(48.0);
        assert_eq!(base_bid(&u), Some(-48.0));
        u.subsidy = SubsidyScheme::Cfd(57.5);
        assert_eq!(base_bid(&u), Some(0.0));
        u.tech = Technology::Hydro;
        u.subsidy = SubsidyScheme::None;
        assert_eq!(base_bid(&u), Some(0.0));
    }

    proptest! {
        #[test]
        fn corrected_order_reproduces_day_ahead_price(
            renewables in prop::collection::vec((-80.0f64..0.0, 0.0f64..200.0), 0..5),
            thermals in prop::collection::vec((2.0f64..300.0, 1.0f64..200.0), 1..6),
            load_share in 0.01f64..0.99,
            price in 1.0f64..500.0,
        ) {
            let mut order: Vec<MeritEntry> = renewables.iter().enumerate()
                .map(|(i, (b, mw))| entry(&format!("r{i}"), *b, *mw, false))
                .chain(thermals.iter().enumerate().map(|(i, (b, mw))| entry(&format!("t{i}"), *b, *mw, true)))
                .collect();
            sort_merit(&mut order);
            let total: f64 = order.iter().map(|e| e.available).sum();
            let load = total * load_share;
            let kappa = correction_factor(&order, load, price);
            let setter = &order[price_setter(&order, load).unwrap()];
            if setter.thermal {
                let mut corrected: Vec<MeritEntry> = order.iter().cloned().map(|mut e| {
                    if e.thermal { e.bid *= kappa; }
                    e
                }).collect();
                sort_merit(&mut corrected);
                let margin = &corrected[price_setter(&corrected, load).unwrap()];
                prop_assert!((margin.bid - price).abs() <= 1e-9 * price.abs());
            } else {
                prop_assert_eq!(kappa, 1.0);
            }
        }

        #[test]
        fn thermal_srmc_is_permutation_invariant(
            mut obs in prop::collection::vec((0.0f64..100.0, -50.0f64..300.0), 1..40),
            seed in any::<u64>(),
        ) {
            let window: Vec<_> = obs.iter().map(|(o, p)| DispatchObservation { output: *o, mel: 100.0, day_ahead_price: *p }).collect();
            let a = estimate_thermal_srmc(Technology::Gas, &window, Some(1.0)).unwrap();
            use rand::seq::SliceRandom;
            obs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let window: Vec<_> = obs.iter().map(|(o, p)| DispatchObservation { output: *o, mel: 100.0, day_ahead_price: *p }).collect();
            let b = estimate_thermal_srmc(Technology::Gas, &window, Some(1.0)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn planted_recurring_price_is_recovered(
            roc in 1.0f64..150.0,
            noise in prop::collection::vec(-200.0f64..0.0, 0..10),
        ) {
            let mut bids = vec![-roc; noise.len() + 3];
            bids.extend(noise);
            let hist = BTreeMap::from([("u".to_string(), bids)]);
            let est = infer_roc(&hist, &RocConfig::default()).unwrap();
            prop_assert_eq!(est["u"].roc, roc);
            prop_assert_eq!(est["u"].source, RocSource::ObservedRecurringBid);
        }
    }
}
