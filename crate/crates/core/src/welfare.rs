//! Socioeconomic benefit of zonal over national pricing, computed from
//! system costs (bottom-up) and from consumer and producer surplus
//! (top-down), plus the curtailment regression used for projections.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Technology;
use crate::settlement::{DaySettlement, UnitSettlement};

/// Avoided emissions per MWh of displaced gas generation, t/MWh.
pub const GAS_EMISSION_FACTOR: f64 = 0.175;

/// Share of interconnector rent changes attributed to GB.
pub const GB_RENT_SHARE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WelfareError {
    #[error("settlements are for different scenarios")]
    Mismatch,
    #[error("need at least 3 months, got {0}")]
    TooFewMonths(usize),
    #[error("curtailment has no variance")]
    DegenerateVariance,
}

/// Positive values are gains under zonal pricing, GBP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SebComponents {
    pub export_revenue_delta: f64,
    pub import_cost_delta: f64,
    pub ic_rent_delta: f64,
    pub prevented_thermal_balancing: f64,
    pub prevented_thermal_wholesale: f64,
}

impl SebComponents {
    pub fn total_bottom_up(&self) -> f64 {
        self.export_revenue_delta
            + self.import_cost_delta
            + self.ic_rent_delta
            + self.prevented_thermal_balancing
            + self.prevented_thermal_wholesale
    }
}

impl AddAssign for SebComponents {
    fn add_assign(&mut self, o: Self) {
        self.export_revenue_delta += o.export_revenue_delta;
        self.import_cost_delta += o.import_cost_delta;
        self.ic_rent_delta += o.ic_rent_delta;
        self.prevented_thermal_balancing += o.prevented_thermal_balancing;
        self.prevented_thermal_wholesale += o.prevented_thermal_wholesale;
    }
}

/// Rounds to whole milli-pounds so solver round-off between two designs that
/// clear identically does not show up as a benefit.
fn settle_resolution(gbp: f64) -> f64 {
    let r = (gbp * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn check_pair(national: &DaySettlement, zonal: &DaySettlement) -> Result<(), WelfareError> {
    let same_units = national.units.len() == zonal.units.len()
        && national
            .units
            .iter()
            .zip(&zonal.units)
            .all(|(a, b)| a.unit == b.unit);
    let same_ics = national.interconnectors.len() == zonal.interconnectors.len();
    if same_units && same_ics && national.load_payment.len() == zonal.load_payment.len() {
        Ok(())
    } else {
        Err(WelfareError::Mismatch)
    }
}

/// Cost-side benefit of one day.
pub fn seb_bottom_up(
    national: &DaySettlement,
    zonal: &DaySettlement,
) -> Result<SebComponents, WelfareError> {
    check_pair(national, zonal)?;
    let mut c = SebComponents::default();
    for (n, z) in national.interconnectors.iter().zip(&zonal.interconnectors) {
        c.export_revenue_delta += z.export_value - n.export_value;
        c.import_cost_delta -= z.import_cost - n.import_cost;
        let spread_n = n.rent_export_leg - n.rent_import_leg;
        let spread_z = z.rent_export_leg - z.rent_import_leg;
        c.ic_rent_delta += GB_RENT_SHARE * (spread_z - spread_n);
    }
    for (n, z) in national
        .units
        .iter()
        .zip(&zonal.units)
        .filter(|(n, _)| n.thermal)
    {
        c.prevented_thermal_balancing += n.thermal_balancing_cost - z.thermal_balancing_cost;
        c.prevented_thermal_wholesale += n.thermal_wholesale_cost - z.thermal_wholesale_cost;
    }
    Ok(SebComponents {
        export_revenue_delta: settle_resolution(c.export_revenue_delta),
        import_cost_delta: settle_resolution(c.import_cost_delta),
        ic_rent_delta: settle_resolution(c.ic_rent_delta),
        prevented_thermal_balancing: settle_resolution(c.prevented_thermal_balancing),
        prevented_thermal_wholesale: settle_resolution(c.prevented_thermal_wholesale),
    })
}

fn producer_surplus_total(day: &DaySettlement) -> f64 {
    day.units.iter().map(UnitSettlement::surplus).sum()
}

fn ic_rent_total(day: &DaySettlement) -> f64 {
    day.interconnectors.iter().map(|ic| ic.rent()).sum()
}

/// Surplus-side benefit of one day: consumer saving minus producer surplus
/// loss plus GB's share of the interconnector rent gain.
pub fn seb_top_down(national: &DaySettlement, zonal: &DaySettlement) -> Result<f64, WelfareError> {
    check_pair(national, zonal)?;
    let consumer = national.consumer.total() - zonal.consumer.total();
    let producer_loss = producer_surplus_total(national) - producer_surplus_total(zonal);
    let ic = GB_RENT_SHARE * (ic_rent_total(zonal) - ic_rent_total(national));
    Ok(settle_resolution(consumer - producer_loss + ic))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Annual benefit at scaled mean monthly curtailment, GBP.
    pub projected_annual: f64,
}

/// Least-squares line through monthly (curtailment MWh, benefit GBP) pairs.
pub fn curtailment_regression(
    pairs: &[(f64, f64)],
    scale: f64,
) -> Result<Regression, WelfareError> {
    if pairs.len() < 3 {
        return Err(WelfareError::TooFewMonths(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(WelfareError::DegenerateVariance);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pairs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(Regression {
        slope,
        intercept,
        r_squared,
        projected_annual: (slope * scale * mx + intercept) * 12.0,
    })
}

/// Extra wind energy delivered under zonal pricing and the emissions it avoids.
pub fn unlocked_wind<'a>(
    national: impl IntoIterator<Item = &'a UnitSettlement>,
    zonal: impl IntoIterator<Item = &'a UnitSettlement>,
) -> (f64, f64) {
    let wind = |s: &&UnitSettlement| s.tech == Technology::Wind;
    let n: f64 = national
        .into_iter()
        .filter(wind)
        .map(|s| s.actual_energy)
        .sum();
    let z: f64 = zonal
        .into_iter()
        .filter(wind)
        .map(|s| s.actual_energy)
        .sum();
    let energy = (z - n).max(0.0);
    (energy, energy * GAS_EMISSION_FACTOR)
}

/// Wind energy scheduled nationally but removed by redispatch, MWh.
pub fn wind_curtailment(day: &DaySettlement) -> f64 {
    day.units
        .iter()
        .filter(|s| s.tech == Technology::Wind)
        .map(|s| s.curtailed_energy)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::{clear, MarketDesign};
    use crate::cost::attach_costs;
    use crate::redispatch::{
        balancing_volume, group_by_technology_and_band, price_balancing, redispatch,
    };
    use crate::scenario::fixtures::two_bus;
    use crate::scenario::{Capacity, DayScenario, NetworkTopology};
    use crate::settlement::settle_day;

    fn settle(t: &NetworkTopology, s: &DayScenario, design: MarketDesign, m: f64) -> DaySettlement {
        let ws = clear(s, t, design, 1.0).unwrap();
        let nodal = redispatch(&ws, s, t, 1.0).unwrap();
        let out = balancing_volume(&ws, &nodal, s, &group_by_technology_and_band(s, t)).unwrap();
        let prices = price_balancing(&out, &s.observed_balancing);
        settle_day(s, t, &ws, &nodal, &out, &prices, m).unwrap()
    }

    #[test]
    fn two_bus_benefit_is_prevented_thermal_balancing() {
        let (t, mut s) = two_bus(1);
        attach_costs(&mut s).unwrap();
        let m = 30.0;
        let n = settle(&t, &s, MarketDesign::National, m);
        let z = settle(&t, &s, MarketDesign::Zonal, m);
        let c = seb_bottom_up(&n, &z).unwrap();
        assert_eq!(c.export_revenue_delta, 0.0);
        assert_eq!(c.import_cost_delta, 0.0);
        assert_eq!(c.ic_rent_delta, 0.0);
        // Gas: nationally 10 MWh scheduled, 25 MWh up; zonally 35 MWh scheduled.
        assert!((c.prevented_thermal_balancing - (50.0 + m) * 25.0).abs() < 1e-6);
        assert!((c.prevented_thermal_wholesale - 50.0 * (10.0 - 35.0)).abs() < 1e-6);
        assert!((c.total_bottom_up() - 25.0 * m).abs() < 1e-6);
        let td = seb_top_down(&n, &z).unwrap();
        assert!((td - c.total_bottom_up()).abs() < 1e-4);
    }

    #[test]
    fn uncongested_day_has_no_benefit() {
        let (mut t, mut s) = two_bus(2);
        t.links[0].capacity = Capacity::Unconstrained;
        attach_costs(&mut s).unwrap();
        let n = settle(&t, &s, MarketDesign::National, 30.0);
        let z = settle(&t, &s, MarketDesign::Zonal, 30.0);
        assert_eq!(seb_bottom_up(&n, &z).unwrap(), SebComponents::default());
        assert_eq!(seb_top_down(&n, &z).unwrap(), 0.0);
        assert_eq!(seb_top_down(&n, &n).unwrap(), 0.0);
    }

    #[test]
    fn rent_component_is_linear() {
        let n = SebComponents {
            ic_rent_delta: 3.0,
            ..SebComponents::default()
        };
        let mut doubled = n;
        doubled.ic_rent_delta *= 2.0;
        assert_eq!(doubled.total_bottom_up() - n.total_bottom_up(), 3.0);
    }

    #[test]
    fn regression_recovers_planted_line() {
        let pairs: Vec<(f64, f64)> = (1..=12)
            .map(|k| (k as f64 * 1000.0, 40.0 * k as f64 * 1000.0 + 5e5))
            .collect();
        let r = curtailment_regression(&pairs, 5.0).unwrap();
        assert!((r.slope - 40.0).abs() < 1e-9);
        assert!((r.intercept - 5e5).abs() < 1e-3);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!((r.projected_annual - (40.0 * 5.0 * 6500.0 + 5e5) * 12.0).abs() < 1e-2);

        let shifted: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x, y + 777.0)).collect();
        let s = curtailment_regression(&shifted, 5.0).unwrap();
        assert!((s.slope - r.slope).abs() < 1e-9);
        assert!((s.intercept - r.intercept - 777.0).abs() < 1e-6);
    }

    #[test]
    fn regression_rejects_degenerate_input() {
        let flat = vec![(10.0, 1.0), (10.0, 2.0), (10.0, 3.0)];
        assert_eq!(
            curtailment_regression(&flat, 1.0).unwrap_err(),
            WelfareError::DegenerateVariance
        );
        assert_eq!(
            curtailment_regression(&flat[..2], 1.0).unwrap_err(),
            WelfareError::TooFewMonths(2)
        );
    }

    #[test]
    fn unlocked_wind_is_linear() {
        let mut a = UnitSettlement::new("W", Technology::Wind, false);
        let b = a.clone();
        assert_eq!(unlocked_wind([&a], [&b]), (0.0, 0.0));
        a.actual_energy = 100_000.0;
        let (e, co2) = unlocked_wind([&b], [&a]);
        assert_eq!(e, 100_000.0);
        assert!((co2 - 17_500.0).abs() < 1e-9);
        assert!((0.24e6 / 1.37e6 - GAS_EMISSION_FACTOR).abs() < 1e-3);
    }
}
