//! Revenue-protection policies for generators that lose out under zonal
//! pricing, evaluated against the national counterfactual.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::clearing::ClearingResult;
use crate::scenario::{DayScenario, NetworkTopology, SubsidyScheme, Technology, PERIOD_HOURS};
use crate::settlement::DaySettlement;

/// Share of intra-GB congestion rent handed to the policy by default.
pub const DEFAULT_RENT_SHARE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyId {
    /// CfD top-ups referenced to the zonal price; the default zonal settlement.
    ZonalCfd,
    /// Production-based transmission rights paying the reference-to-zone spread.
    ProductionFtr,
    /// Zonal dispatch with revenues pooled and shared by national revenue.
    NationalRevenuePool,
}

impl PolicyId {
    pub fn number(self) -> u8 {
        match self {
            PolicyId::ZonalCfd => 1,
            PolicyId::ProductionFtr => 2,
            PolicyId::NationalRevenuePool => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(PolicyId::ZonalCfd),
            2 => Some(PolicyId::ProductionFtr),
            3 => Some(PolicyId::NationalRevenuePool),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// One unit's policy-relevant totals for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyUnitDay {
    pub unit: String,
    pub zone: String,
    pub tech: Technology,
    pub cfd: bool,
    /// National wholesale plus subsidy revenue, GBP.
    pub national_revenue: f64,
    /// Zonal wholesale plus subsidy revenue, GBP.
    pub zonal_revenue: f64,
    /// Unscaled production-based FTR payout, GBP (signed).
    pub ftr_payout: f64,
}

/// Per-day inputs to the policies, reduced from both designs' settlements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDay {
    /// Sum over periods of each zone's price.
    pub zone_price_sum: BTreeMap<String, f64>,
    /// Sum over periods of the national price.
    pub national_price_sum: f64,
    pub periods: usize,
    pub units: Vec<PolicyUnitDay>,
    /// Zonal intra-GB congestion rent, GBP.
    pub intra_rent: f64,
    /// National minus zonal consumer total, GBP.
    pub consumer_saving: f64,
    /// MWh.
    pub served_energy: f64,
}

/// Load-weighted average of regional prices for each period.
pub fn reference_price(
    result: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
) -> Vec<f64> {
    let periods = result.periods();
    let bus_idx = topology.bus_index();
    let mut weighted = vec![0.0; periods];
    let mut load = vec![0.0; periods];
    for (bus, series) in &scenario.load {
        let Some(&b) = bus_idx.get(bus.as_str()) else {
            continue;
        };
        let r = result.bus_region[b];
        for t in 0..periods {
            weighted[t] += series[t] * result.prices[r][t];
            load[t] += series[t];
        }
    }
    (0..periods)
        .map(|t| {
            if load[t] > 0.0 {
                weighted[t] / load[t]
            } else {
                result.prices.iter().map(|p| p[t]).sum::<f64>() / result.prices.len() as f64
            }
        })
        .collect()
}

/// FTR payout on scheduled output: Σ q · (P_ref − P_zone) · Δt.
pub fn ftr_payout(scheduled_mw: &[f64], reference: &[f64], zone_price: &[f64]) -> f64 {
    scheduled_mw
        .iter()
        .zip(reference)
        .zip(zone_price)
        .map(|((q, r), z)| q * (r - z) * PERIOD_HOURS)
        .sum()
}

/// Reduces one day's national and zonal results to policy inputs.
pub fn policy_day(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    national_ws: &ClearingResult,
    zonal_ws: &ClearingResult,
    national: &DaySettlement,
    zonal: &DaySettlement,
) -> PolicyDay {
    let periods = zonal_ws.periods();
    let reference = reference_price(zonal_ws, scenario, topology);
    let zone_price_sum = zonal_ws
        .regions
        .iter()
        .zip(&zonal_ws.prices)
        .map(|(z, p)| (z.clone(), p.iter().sum()))
        .collect();
    let n_settle: BTreeMap<&str, _> = national
        .units
        .iter()
        .map(|s| (s.unit.as_str(), s))
        .collect();
    let z_settle: BTreeMap<&str, _> = zonal.units.iter().map(|s| (s.unit.as_str(), s)).collect();
    let units = scenario
        .units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.kind.is_generator())
        .filter_map(|(u, unit)| {
            let (n, z) = (
                n_settle.get(unit.id.as_str())?,
                z_settle.get(unit.id.as_str())?,
            );
            let region = zonal_ws.unit_region[u];
            Some(PolicyUnitDay {
                unit: unit.id.clone(),
                zone: zonal_ws.regions[region].clone(),
                tech: unit.tech,
                cfd: matches!(unit.subsidy, SubsidyScheme::Cfd(_)),
                national_revenue: n.market_revenue(),
                zonal_revenue: z.market_revenue(),
                ftr_payout: ftr_payout(&zonal_ws.output[u], &reference, &zonal_ws.prices[region]),
            })
        })
        .collect();
    PolicyDay {
        zone_price_sum,
        national_price_sum: national_ws.prices[0].iter().sum(),
        periods,
        units,
        intra_rent: zonal.intra_rent.iter().sum(),
        consumer_saving: national.consumer.total() - zonal.consumer.total(),
        served_energy: zonal.consumer.served_energy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRestoration {
    pub unit: String,
    pub zone: String,
    pub tech: Technology,
    pub national_revenue: f64,
    pub zonal_revenue: f64,
    pub payout: f64,
    pub post_revenue: f64,
    /// Post-policy over national revenue; `None` when national revenue is not positive.
    pub restoration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub policy: PolicyId,
    pub rent_share: f64,
    /// Zones whose run-average price is below the national average.
    pub depressed_zones: Vec<String>,
    pub units: Vec<UnitRestoration>,
    /// FTR scale for the FTR policy, revenue ratio for the pool; 1 otherwise.
    pub scale: f64,
    pub rent_available: f64,
    pub rent_used: f64,
    /// GBP.
    pub consumer_saving: f64,
    pub consumer_saving_per_mwh: f64,
    pub warnings: usize,
}

#[derive(Debug, Clone)]
struct UnitTotals {
    zone: String,
    tech: Technology,
    cfd: bool,
    national: f64,
    zonal: f64,
    ftr: f64,
}

struct Basis {
    units: BTreeMap<String, UnitTotals>,
    depressed: Vec<String>,
    rent: f64,
    saving: f64,
    served: f64,
}

fn basis(days: &[PolicyDay]) -> Basis {
    let mut units: BTreeMap<String, UnitTotals> = BTreeMap::new();
    let mut zone_sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let (mut national_sum, mut periods) = (0.0, 0usize);
    let (mut rent, mut saving, mut served) = (0.0, 0.0, 0.0);
    for day in days {
        for (z, s) in &day.zone_price_sum {
            let e = zone_sum.entry(z.clone()).or_insert((0.0, 0));
            e.0 += s;
            e.1 += day.periods;
        }
        national_sum += day.national_price_sum;
        periods += day.periods;
        rent += day.intra_rent;
        saving += day.consumer_saving;
        served += day.served_energy;
        for u in &day.units {
            let e = units.entry(u.unit.clone()).or_insert_with(|| UnitTotals {
                zone: u.zone.clone(),
                tech: u.tech,
                cfd: u.cfd,
                national: 0.0,
                zonal: 0.0,
                ftr: 0.0,
            });
            e.national += u.national_revenue;
            e.zonal += u.zonal_revenue;
            e.ftr += u.ftr_payout;
        }
    }
    let national_avg = if periods > 0 {
        national_sum / periods as f64
    } else {
        0.0
    };
    let depressed = zone_sum
        .into_iter()
        .filter(|(_, (s, n))| *n > 0 && s / (*n as f64) < national_avg)
        .map(|(z, _)| z)
        .collect();
    Basis {
        units,
        depressed,
        rent,
        saving,
        served,
    }
}

fn covered(b: &Basis, include_cfd: bool) -> impl Iterator<Item = (&String, &UnitTotals)> {
    b.units.iter().filter(move |(_, u)| {
        u.tech.is_renewable() && b.depressed.contains(&u.zone) && (include_cfd || !u.cfd)
    })
}

fn ratio(post: f64, national: f64) -> Option<f64> {
    (national > 0.0).then(|| post / national)
}

fn outcome(
    policy: PolicyId,
    b: &Basis,
    rent_share: f64,
    units: Vec<UnitRestoration>,
    scale: f64,
    warnings: usize,
) -> PolicyOutcome {
    let rent_available = rent_share * b.rent;
    let consumer_saving = match policy {
        PolicyId::ZonalCfd => b.saving,
        _ => b.saving - rent_available,
    };
    PolicyOutcome {
        policy,
        rent_share,
        depressed_zones: b.depressed.clone(),
        rent_used: units.iter().map(|u| u.payout).sum(),
        units,
        scale,
        rent_available,
        consumer_saving,
        consumer_saving_per_mwh: if b.served > 0.0 {
            consumer_saving / b.served
        } else {
            0.0
        },
        warnings,
    }
}

/// Zonal settlement as is; CfD top-ups already reference the zonal price.
pub fn policy1(days: &[PolicyDay]) -> PolicyOutcome {
    let b = basis(days);
    let units = covered(&b, true)
        .map(|(id, u)| UnitRestoration {
            unit: id.clone(),
            zone: u.zone.clone(),
            tech: u.tech,
            national_revenue: u.national,
            zonal_revenue: u.zonal,
            payout: 0.0,
            post_revenue: u.zonal,
            restoration: ratio(u.zonal, u.national),
        })
        .collect();
    outcome(PolicyId::ZonalCfd, &b, 1.0, units, 1.0, 0)
}

/// Production-based FTRs for non-CfD renewables in depressed zones, scaled
/// down uniformly if they would exceed the allocated rent.
pub fn policy2(days: &[PolicyDay], rent_share: f64) -> PolicyOutcome {
    let b = basis(days);
    let budget = rent_share * b.rent;
    let raw: f64 = covered(&b, false).map(|(_, u)| u.ftr).sum();
    let mut warnings = 0;
    let scale = if budget <= 0.0 {
        warn!("no congestion rent available for FTR payouts");
        warnings += 1;
        0.0
    } else if raw > budget {
        budget / raw
    } else {
        1.0
    };
    let units = covered(&b, false)
        .map(|(id, u)| {
            let payout = scale * u.ftr;
            UnitRestoration {
                unit: id.clone(),
                zone: u.zone.clone(),
                tech: u.tech,
                national_revenue: u.national,
                zonal_revenue: u.zonal,
                payout,
                post_revenue: u.zonal + payout,
                restoration: ratio(u.zonal + payout, u.national),
            }
        })
        .collect();
    outcome(
        PolicyId::ProductionFtr,
        &b,
        rent_share,
        units,
        scale,
        warnings,
    )
}

/// Pools the covered group's zonal revenue with the allocated rent and pays
/// every unit the same share ρ of its national revenue.
pub fn policy3(days: &[PolicyDay], rent_share: f64) -> PolicyOutcome {
    let b = basis(days);
    let budget = (rent_share * b.rent).max(0.0);
    let national: f64 = covered(&b, true).map(|(_, u)| u.national).sum();
    let zonal: f64 = covered(&b, true).map(|(_, u)| u.zonal).sum();
    let rho = if national > 0.0 {
        ((zonal + budget) / national).min(1.0)
    } else {
        f64::NAN
    };
    let units = covered(&b, true)
        .map(|(id, u)| {
            let (post, payout, restoration) = if rho.is_nan() {
                (u.zonal, 0.0, ratio(u.zonal, u.national))
            } else {
                let post = rho * u.national;
                (post, post - u.zonal, (u.national > 0.0).then_some(rho))
            };
            UnitRestoration {
                unit: id.clone(),
                zone: u.zone.clone(),
                tech: u.tech,
                national_revenue: u.national,
                zonal_revenue: u.zonal,
                payout,
                post_revenue: post,
                restoration,
            }
        })
        .collect();
    let scale = if rho.is_nan() { 1.0 } else { rho };
    outcome(
        PolicyId::NationalRevenuePool,
        &b,
        rent_share,
        units,
        scale,
        0,
    )
}

pub fn apply(policy: PolicyId, days: &[PolicyDay], rent_share: f64) -> PolicyOutcome {
    match policy {
        PolicyId::ZonalCfd => policy1(days),
        PolicyId::ProductionFtr => policy2(days, rent_share),
        PolicyId::NationalRevenuePool => policy3(days, rent_share),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(
        id: &str,
        zone: &str,
        tech: Technology,
        cfd: bool,
        n: f64,
        z: f64,
        ftr: f64,
    ) -> PolicyUnitDay {
        PolicyUnitDay {
            unit: id.into(),
            zone: zone.into(),
            tech,
            cfd,
            national_revenue: n,
            zonal_revenue: z,
            ftr_payout: ftr,
        }
    }

    fn day(units: Vec<PolicyUnitDay>, rent: f64) -> PolicyDay {
        PolicyDay {
            zone_price_sum: BTreeMap::from([("N".into(), 10.0), ("S".into(), 90.0)]),
            national_price_sum: 60.0,
            periods: 1,
            units,
            intra_rent: rent,
            consumer_saving: 5000.0,
            served_energy: 100.0,
        }
    }

    #[test]
    fn ftr_worked_example() {
        let payout = ftr_payout(&[50.0], &[85.0], &[-48.0]);
        assert!((payout - 3325.0).abs() < 1e-9);
        // Revenue per MWh = ref + roc regardless of the zone price.
        let roc = 48.0;
        for zone in [-48.0, 0.0, 30.0] {
            let revenue =
                zone * 50.0 * 0.5 + roc * 50.0 * 0.5 + ftr_payout(&[50.0], &[85.0], &[zone]);
            assert!((revenue / 25.0 - (85.0 + roc)).abs() < 1e-9);
        }
        assert_eq!(ftr_payout(&[0.0], &[85.0], &[-48.0]), 0.0);
    }

    #[test]
    fn coverage_is_renewables_in_depressed_zones() {
        let d = day(
            vec![
                unit("W1", "N", Technology::Wind, false, 100.0, 40.0, 30.0),
                unit("W2", "N", Technology::Wind, true, 100.0, 40.0, 30.0),
                unit("G1", "N", Technology::Gas, false, 100.0, 40.0, 30.0),
                unit("W3", "S", Technology::Wind, false, 100.0, 120.0, -5.0),
            ],
            1000.0,
        );
        let p2 = policy2(std::slice::from_ref(&d), 1.0);
        assert_eq!(p2.depressed_zones, vec!["N".to_string()]);
        assert_eq!(
            p2.units.iter().map(|u| u.unit.as_str()).collect::<Vec<_>>(),
            vec!["W1"]
        );
        let p3 = policy3(&[d], 1.0);
        assert_eq!(
            p3.units.iter().map(|u| u.unit.as_str()).collect::<Vec<_>>(),
            vec!["W1", "W2"]
        );
    }

    #[test]
    fn ftr_scaling_respects_budget() {
        let d = day(
            vec![
                unit("W1", "N", Technology::Wind, false, 100.0, 40.0, 300.0),
                unit("W2", "N", Technology::Solar, false, 100.0, 40.0, 100.0),
            ],
            200.0,
        );
        let p = policy2(&[d], 1.0);
        assert!((p.scale - 0.5).abs() < 1e-12);
        assert!(p.rent_used <= p.rent_available + 1e-3);
        let none = policy2(
            &[day(
                vec![unit("W1", "N", Technology::Wind, false, 1.0, 1.0, 3.0)],
                0.0,
            )],
            1.0,
        );
        assert_eq!(none.units[0].payout, 0.0);
        assert_eq!(none.warnings, 1);
    }

    #[test]
    fn pool_gives_uniform_restoration() {
        let d = day(
            vec![
                unit("W1", "N", Technology::Wind, false, 100.0, 40.0, 0.0),
                unit("W2", "N", Technology::Wind, true, 300.0, 200.0, 0.0),
                unit("H1", "N", Technology::Hydro, false, 50.0, 45.0, 0.0),
            ],
            60.0,
        );
        let p = policy3(&[d], 1.0);
        let rho = (40.0 + 200.0 + 45.0 + 60.0) / 450.0;
        assert!((p.scale - rho).abs() < 1e-12);
        assert!(p.units.iter().all(|u| u.restoration == Some(p.scale)));
        assert!(p.rent_used <= p.rent_available + 1e-3);
    }

    #[test]
    fn pool_is_complete_when_rent_covers_gap() {
        let d = day(
            vec![unit("W1", "N", Technology::Wind, false, 100.0, 70.0, 0.0)],
            30.0,
        );
        let p = policy3(&[d], 1.0);
        assert_eq!(p.scale, 1.0);
        assert_eq!(p.units[0].restoration, Some(1.0));
    }

    #[test]
    fn ftr_and_pool_leave_consumers_the_same_saving() {
        let d = day(
            vec![
                unit("W1", "N", Technology::Wind, false, 100.0, 40.0, 70.0),
                unit("W2", "N", Technology::Wind, true, 100.0, 60.0, 0.0),
            ],
            80.0,
        );
        for share in [0.0, 0.3, 1.0] {
            let a = policy2(std::slice::from_ref(&d), share);
            let b = policy3(std::slice::from_ref(&d), share);
            assert_eq!(a.consumer_saving, b.consumer_saving);
            assert_eq!(a.consumer_saving, 5000.0 - share * 80.0);
        }
        assert_eq!(policy1(&[d]).consumer_saving, 5000.0);
    }
}
