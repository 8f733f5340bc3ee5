use proptest::prelude::*;
use zonalsim::clearing::{
    clear, congestion_rent, link_limits, ClearingResult, MarketDesign, INITIAL_SOC_SHARE,
};
use zonalsim::cost::attach_costs;
use zonalsim::ingestion::{generate_synthetic, SyntheticConfig};
use zonalsim::redispatch::{balancing_volume, group_by_technology_and_band};
use zonalsim::scenario::{DayScenario, NetworkTopology, UnitKind, PERIOD_HOURS};

const TOL: f64 = 1e-6;

fn day(seed: u64, unconstrained: bool) -> (NetworkTopology, DayScenario) {
    let cfg = SyntheticConfig {
        days: 1,
        buses: 12,
        zones: 4,
        wind_units: 10,
        thermal_units: 10,
        unconstrained_links: unconstrained,
        ..SyntheticConfig::default()
    };
    let (topology, mut days) = generate_synthetic(&cfg, seed).unwrap();
    let mut scenario = days.remove(0);
    attach_costs(&mut scenario).unwrap();
    (topology, scenario)
}

fn region_load(
    result: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
) -> Vec<Vec<f64>> {
    let idx = topology.bus_index();
    let mut load = vec![vec![0.0; scenario.periods]; result.regions.len()];
    for (bus, series) in &scenario.load {
        let r = result.bus_region[idx[bus.as_str()]];
        for (t, v) in series.iter().enumerate() {
            load[r][t] += v;
        }
    }
    load
}

fn check_balance(
    result: &ClearingResult,
    scenario: &DayScenario,
    topology: &NetworkTopology,
) -> Result<(), TestCaseError> {
    let idx = topology.bus_index();
    let load = region_load(result, scenario, topology);
    for t in 0..scenario.periods {
        let mut net = vec![0.0; result.regions.len()];
        for u in 0..scenario.units.len() {
            net[result.unit_region[u]] += result.net_injection(scenario, u, t);
        }
        for (&l, flow) in &result.flows {
            let link = &topology.links[l];
            net[result.bus_region[idx[link.from.as_str()]]] -= flow[t];
            net[result.bus_region[idx[link.to.as_str()]]] += flow[t];
        }
        for r in 0..net.len() {
            let scale = load[r][t].abs().max(1.0);
            prop_assert!(
                (net[r] - load[r][t]).abs() <= TOL * scale,
                "region {} period {t}: supply {} load {}",
                result.regions[r],
                net[r],
                load[r][t]
            );
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn supply_meets_load_in_every_region(seed in 0u64..10_000, tau in 0.5f64..2.0) {
        let (topology, scenario) = day(seed, false);
        for design in [MarketDesign::National, MarketDesign::Zonal, MarketDesign::Nodal] {
            if let Ok(result) = clear(&scenario, &topology, design, tau) {
                check_balance(&result, &scenario, &topology)?;
            }
        }
    }

    #[test]
    fn flows_respect_scaled_limits(seed in 0u64..10_000, tau in 0.5f64..2.0) {
        let (topology, scenario) = day(seed, false);
        let limits = link_limits(&topology, &scenario, tau);
        for design in [MarketDesign::Zonal, MarketDesign::Nodal] {
            let Ok(result) = clear(&scenario, &topology, design, tau) else { continue };
            for (&l, flow) in &result.flows {
                for (t, f) in flow.iter().enumerate() {
                    if let Some(cap) = limits[l][t] {
                        prop_assert!(f.abs() <= cap + TOL, "link {l} period {t}: flow {f} cap {cap}");
                    }
                }
            }
        }
    }

    #[test]
    fn domestic_rent_is_never_negative(seed in 0u64..10_000, tau in 0.5f64..2.0) {
        let (topology, scenario) = day(seed, false);
        for design in [MarketDesign::Zonal, MarketDesign::Nodal] {
            let Ok(result) = clear(&scenario, &topology, design, tau) else { continue };
            let rent = congestion_rent(&result, &scenario, &topology);
            for (t, r) in rent.intra.iter().enumerate() {
                prop_assert!(*r >= -TOL, "period {t}: rent {r}");
            }
        }
    }

    #[test]
    fn finer_designs_never_cost_less(seed in 0u64..10_000, tau in 0.5f64..2.0) {
        let (topology, scenario) = day(seed, false);
        let cost = |d| clear(&scenario, &topology, d, tau).map(|r| r.objective);
        let (Ok(n), Ok(z), Ok(x)) = (
            cost(MarketDesign::National),
            cost(MarketDesign::Zonal),
            cost(MarketDesign::Nodal),
        ) else {
            return Ok(());
        };
        let slack = TOL * n.abs().max(1.0);
        prop_assert!(n <= z + slack, "national {n} zonal {z}");
        prop_assert!(z <= x + slack, "zonal {z} nodal {x}");
    }

    #[test]
    fn a_schedule_needs_no_balancing_against_itself(seed in 0u64..10_000) {
        let (topology, scenario) = day(seed, false);
        let national = clear(&scenario, &topology, MarketDesign::National, 1.0).unwrap();
        let groups = group_by_technology_and_band(&scenario, &topology);
        let outcome = balancing_volume(&national, &national, &scenario, &groups).unwrap();
        prop_assert_eq!(outcome.volume(), 0.0);
    }

    #[test]
    fn storage_ends_where_it_started(seed in 0u64..10_000, unconstrained in any::<bool>()) {
        let (topology, scenario) = day(seed, unconstrained);
        let result = clear(&scenario, &topology, MarketDesign::Nodal, 1.0).unwrap();
        for (u, unit) in scenario.units.iter().enumerate() {
            let UnitKind::StorageUnit { energy_cap, damping, .. } = unit.kind else { continue };
            let initial = INITIAL_SOC_SHARE * damping * energy_cap;
            let charged: f64 = result.intake[u].iter().sum::<f64>() * PERIOD_HOURS;
            let discharged: f64 = result.output[u].iter().sum::<f64>() * PERIOD_HOURS;
            prop_assert!(discharged <= charged + initial + TOL);
            let soc = &result.soc[&unit.id];
            prop_assert!((soc[soc.len() - 1] - initial).abs() <= TOL);
            for level in soc {
                prop_assert!(*level >= -TOL && *level <= damping * energy_cap + TOL);
            }
        }
    }
}
