//! Daily search for the line tuning factor that reproduces the observed
//! congestion balancing volume.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::clearing::{clear, ClearingError, ClearingResult, MarketDesign, RedispatchSession};
use crate::redispatch::{balancing_volume, group_by_technology_and_band, GroupMap};
use crate::scenario::{DayScenario, NetworkTopology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tol_rel: f64,
    /// MWh.
    pub tol_abs: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tau_min: 0.05,
            tau_max: 5.0,
            tol_rel: 0.02,
            tol_abs: 10.0,
            max_iterations: 40,
        }
    }
}

impl CalibrationConfig {
    pub fn tolerance(&self, target: f64) -> f64 {
        self.tol_abs.max(self.tol_rel * target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau: f64,
    pub iterations: usize,
    /// MWh.
    pub achieved_volume: f64,
    /// MWh.
    pub target_volume: f64,
    pub converged: bool,
    /// Set when bisection met a non-monotone bracket and a grid scan was used.
    pub grid_fallback: bool,
}

/// Calibrates against the scenario's observed congestion volume.
pub fn calibrate(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    config: &CalibrationConfig,
) -> Result<CalibrationResult, ClearingError> {
    let national = clear(scenario, topology, MarketDesign::National, 1.0)?;
    calibrate_against(
        &national,
        scenario,
        topology,
        scenario.observed_balancing.congestion_volume,
        config,
    )
}

struct VolumeProbe<'a, 's> {
    session: &'s mut RedispatchSession<'a>,
    national: &'s ClearingResult,
    scenario: &'s DayScenario,
    groups: GroupMap,
    evaluations: usize,
    solved: Vec<(f64, ClearingResult)>,
}

impl VolumeProbe<'_, '_> {
    /// Balancing volume at `tau`; an infeasible redispatch counts as unbounded volume.
    fn volume(&mut self, tau: f64) -> Result<f64, ClearingError> {
        self.evaluations += 1;
        match self.session.solve(tau) {
            Ok(nodal) => {
                let v = balancing_volume(self.national, &nodal, self.scenario, &self.groups)
                    .map_err(|e| ClearingError::Solver(e.to_string()))?
                    .volume();
                self.solved.push((tau, nodal));
                Ok(v)
            }
            Err(ClearingError::Infeasible { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

/// Calibrates given the day's national schedule, which does not depend on τ.
pub fn calibrate_against(
    national: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
    target: f64,
    config: &CalibrationConfig,
) -> Result<CalibrationResult, ClearingError> {
    calibrate_with_redispatch(national, scenario, topology, target, config).map(|(r, _)| r)
}

/// Like [`calibrate_against`], also returning the national redispatch at the
/// chosen τ when it was feasible.
pub fn calibrate_with_redispatch(
    national: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
    target: f64,
    config: &CalibrationConfig,
) -> Result<(CalibrationResult, Option<ClearingResult>), ClearingError> {
    let mut session = RedispatchSession::new(national, scenario, topology)?;
    calibrate_in_session(&mut session, national, scenario, topology, target, config)
}

/// Like [`calibrate_with_redispatch`] on a session already pinned to
/// `national`. The session stays usable afterwards.
pub fn calibrate_in_session(
    session: &mut RedispatchSession<'_>,
    national: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
    target: f64,
    config: &CalibrationConfig,
) -> Result<(CalibrationResult, Option<ClearingResult>), ClearingError> {
    let target = target.max(0.0);
    let tol = config.tolerance(target);
    let mut probe = VolumeProbe {
        session,
        national,
        scenario,
        groups: group_by_technology_and_band(scenario, topology),
        evaluations: 0,
        solved: Vec::new(),
    };
    let result = bisect(&mut probe, scenario, target, tol, config)?;
    let mut solved = probe.solved;
    let at = solved.iter().rposition(|(tau, _)| *tau == result.tau);
    Ok((result, at.map(|i| solved.swap_remove(i).1)))
}

fn bisect(
    probe: &mut VolumeProbe<'_, '_>,
    scenario: &DayScenario,
    target: f64,
    tol: f64,
    config: &CalibrationConfig,
) -> Result<CalibrationResult, ClearingError> {
    let done = |tau: f64, volume: f64, evaluations: usize, converged: bool, grid: bool| {
        CalibrationResult {
            tau,
            iterations: evaluations,
            achieved_volume: volume,
            target_volume: target,
            converged,
            grid_fallback: grid,
        }
    };

    let (mut hi, mut v_hi) = (config.tau_max, probe.volume(config.tau_max)?);
    if (v_hi - target).abs() <= tol || v_hi > target {
        let ok = (v_hi - target).abs() <= tol;
        if !ok {
            warn!(
                "{}: volume {v_hi:.1} MWh at tau_max exceeds target {target:.1}",
                scenario.date
            );
        }
        return Ok(done(hi, v_hi, probe.evaluations, ok, false));
    }
    // The lower end is only solved once the bracket closes in on it.
    let lo_probe_below = 4.0 * config.tau_min;
    let (mut lo, mut v_lo) = (config.tau_min, None);
    while probe.evaluations < config.max_iterations {
        if v_lo.is_none() && hi <= lo_probe_below {
            let v = probe.volume(lo)?;
            if (v - target).abs() <= tol || v < target {
                let ok = (v - target).abs() <= tol;
                if !ok {
                    warn!(
                        "{}: target {target:.1} MWh unreachable even at tau_min",
                        scenario.date
                    );
                }
                return Ok(done(lo, v, probe.evaluations, ok, false));
            }
            v_lo = Some(v);
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let v = probe.volume(mid)?;
        if (v - target).abs() <= tol {
            return Ok(done(mid, v, probe.evaluations, true, false));
        }
        if v_lo.is_some_and(|vl| v > vl + tol) || v < v_hi - tol {
            warn!(
                "{}: balancing volume not monotone in tau; scanning a grid",
                scenario.date
            );
            return grid_scan(probe, target, tol, config)
                .map(|(tau, v, ok)| done(tau, v, probe.evaluations, ok, true));
        }
        if v > target {
            lo = mid;
            v_lo = Some(v);
        } else {
            hi = mid;
            v_hi = v;
        }
    }
    let (tau, v) = match v_lo {
        Some(vl) if (vl - target).abs() < (v_hi - target).abs() => (lo, vl),
        _ => (hi, v_hi),
    };
    warn!(
        "{}: calibration stopped after {} solves",
        scenario.date, probe.evaluations
    );
    Ok(done(tau, v, probe.evaluations, false, false))
}

fn grid_scan(
    probe: &mut VolumeProbe<'_, '_>,
    target: f64,
    tol: f64,
    config: &CalibrationConfig,
) -> Result<(f64, f64, bool), ClearingError> {
    let points = config
        .max_iterations
        .saturating_sub(probe.evaluations)
        .max(8);
    let mut best = (config.tau_max, f64::INFINITY);
    for k in 0..points {
        let tau =
            config.tau_min + (config.tau_max - config.tau_min) * k as f64 / (points - 1) as f64;
        let v = probe.volume(tau)?;
        if (v - target).abs() < (best.1 - target).abs() {
            best = (tau, v);
        }
    }
    Ok((best.0, best.1, (best.1 - target).abs() <= tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::attach_costs;
    use crate::scenario::fixtures::two_bus;
    use crate::scenario::Capacity;

    fn two_bus_one_period() -> (NetworkTopology, DayScenario) {
        let (t, mut s) = two_bus(1);
        attach_costs(&mut s).unwrap();
        (t, s)
    }

    /// volume(τ) = 2 · max(0, 100 − 50τ) · 0.5 for the one-period two-bus day.
    fn hand_volume(tau: f64) -> f64 {
        (100.0 - 50.0 * tau).max(0.0)
    }

    #[test]
    fn two_bus_target_fifty() {
        let (t, s) = two_bus_one_period();
        let cfg = CalibrationConfig::default();
        let r = calibrate(&s, &t, &cfg).unwrap();
        assert!(r.converged);
        assert!((r.achieved_volume - hand_volume(r.tau)).abs() < 1e-6);
        assert!((r.achieved_volume - 50.0).abs() <= 10.0);
        assert!(r.iterations <= 40);
    }

    #[test]
    fn tight_tolerance_recovers_unit_tau() {
        let (t, s) = two_bus_one_period();
        let cfg = CalibrationConfig {
            tol_abs: 1e-6,
            tol_rel: 0.0,
            ..CalibrationConfig::default()
        };
        let r = calibrate(&s, &t, &cfg).unwrap();
        assert!(r.converged);
        assert!((r.tau - 1.0).abs() < 1e-6, "tau {}", r.tau);
    }

    #[test]
    fn zero_target_on_uncongested_day() {
        let (mut t, mut s) = two_bus_one_period();
        t.links[0].capacity = Capacity::Unconstrained;
        s.observed_balancing.congestion_volume = 0.0;
        let r = calibrate(&s, &t, &CalibrationConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.tau, 5.0);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn unreachable_target_reports_boundary() {
        let (t, mut s) = two_bus_one_period();
        // Enough southern capacity that every tau is feasible; volume at tau_min is 97.5 MWh.
        s.availability.insert("GS".into(), vec![200.0]);
        s.observed_balancing.congestion_volume = 500.0;
        let r = calibrate(&s, &t, &CalibrationConfig::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.tau, 0.05);
        assert!((r.achieved_volume - hand_volume(0.05)).abs() < 1e-6);
    }

    #[test]
    fn repeated_calibration_is_identical() {
        let (t, s) = two_bus_one_period();
        let a = calibrate(&s, &t, &CalibrationConfig::default()).unwrap();
        let b = calibrate(&s, &t, &CalibrationConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
