//! Seeded synthetic scenarios with a congested north-south boundary.
//!
//! Zones are numbered north to south. Wind sits mostly in the north and
//! thermal plant mostly in the south, so the boundary between the last
//! northern zone and the first southern one (`B6`) is the one that binds.
//! Each period draws a wind regime that fixes how far northern surplus
//! exceeds that boundary. The observed congestion volume of a day is the
//! model's own redispatch volume at a tuning factor drawn for that day.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::IngestError;
use crate::clearing::{clear, ClearingError, MarketDesign, WindCase};
use crate::cost::{attach_costs, base_bid, build_merit_order, price_setter};
use crate::redispatch::{balancing_volume, group_by_technology_and_band, redispatch};
use crate::scenario::{
    Band, Bus, Capacity, CostCurve, DayScenario, Link, NetworkTopology, ObservedBalancingRecord,
    StackEntry, SubsidyScheme, Technology, Unit, UnitKind, PERIODS_PER_DAY,
};

/// Name of the boundary between north and south.
pub const NORTH_SOUTH_BOUNDARY: &str = "B6";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub buses: usize,
    pub zones: usize,
    pub days: usize,
    pub start: NaiveDate,
    pub wind_units: usize,
    pub solar_units: usize,
    pub nuclear_units: usize,
    pub thermal_units: usize,
    pub hydro_units: usize,
    pub storage_units: usize,
    pub interconnectors: usize,
    /// Probabilities of low, high and extreme wind periods.
    pub regime_weights: [f64; 3],
    /// Average national load, MW.
    pub mean_load: f64,
    /// Makes every link unconstrained.
    pub unconstrained_links: bool,
    /// Relative noise of the day-ahead price around the merit-order price.
    pub price_noise: f64,
    pub require_thermal: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            buses: 24,
            zones: 6,
            days: 30,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            wind_units: 24,
            solar_units: 6,
            nuclear_units: 3,
            thermal_units: 20,
            hydro_units: 2,
            storage_units: 3,
            interconnectors: 2,
            regime_weights: [0.69, 0.30, 0.01],
            mean_load: 20_000.0,
            unconstrained_links: false,
            price_noise: 0.05,
            require_thermal: true,
        }
    }
}

impl SyntheticConfig {
    /// 300 buses and 450 units.
    pub fn large() -> Self {
        Self {
            buses: 300,
            wind_units: 150,
            solar_units: 40,
            nuclear_units: 8,
            thermal_units: 200,
            hydro_units: 12,
            storage_units: 25,
            interconnectors: 15,
            mean_load: 30_000.0,
            ..Self::default()
        }
    }

    pub fn unit_count(&self) -> usize {
        self.wind_units
            + self.solar_units
            + self.nuclear_units
            + self.thermal_units
            + self.hydro_units
            + self.storage_units
            + self.interconnectors
    }

    fn check(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::Config(m.to_string()));
        if self.zones < 2 {
            return bad("need at least two zones");
        }
        if self.buses < self.zones {
            return bad("need at least one bus per zone");
        }
        if self.require_thermal && self.thermal_units == 0 {
            return bad("thermal units are required but none are configured");
        }
        if self.wind_units == 0 {
            return bad("wind units are required to drive the regimes");
        }
        let w = self.regime_weights;
        if w.iter().any(|x| *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("regime weights must be non-negative and sum to 1");
        }
        if !(self.mean_load > 0.0) {
            return bad("mean load must be positive");
        }
        Ok(())
    }
}

/// A generated corpus and the wind regime drawn for every period.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub topology: NetworkTopology,
    pub days: Vec<DayScenario>,
    pub regimes: Vec<Vec<WindCase>>,
    /// Tuning factor behind each day's observed congestion volume.
    pub tuning: Vec<f64>,
}

pub fn generate_synthetic(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(NetworkTopology, Vec<DayScenario>), IngestError> {
    generate_with_regimes(config, seed).map(|c| (c.topology, c.days))
}

struct Layout {
    topology: NetworkTopology,
    north_buses: Vec<usize>,
    south_buses: Vec<usize>,
    load_weight: Vec<f64>,
    b6_capacity: f64,
}

fn layout(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Layout {
    let north_zones = (cfg.zones / 3).max(1);
    let zone_of = |b: usize| b * cfg.zones / cfg.buses;
    let buses: Vec<Bus> = (0..cfg.buses)
        .map(|b| Bus {
            id: format!("b{b:03}"),
            zone: format!("Z{}", zone_of(b) + 1),
            band: if zone_of(b) < north_zones {
                Band::North
            } else {
                Band::South
            },
        })
        .collect();
    let members: Vec<Vec<usize>> = (0..cfg.zones)
        .map(|z| (0..cfg.buses).filter(|&b| zone_of(b) == z).collect())
        .collect();

    let b6_capacity = 0.12 * cfg.mean_load;
    let wide = 2.0 * cfg.mean_load;
    let cap = |mw: f64| {
        if cfg.unconstrained_links {
            Capacity::Unconstrained
        } else {
            Capacity::Limited(mw)
        }
    };
    let mut links = Vec::new();
    for zone in &members {
        for pair in zone.windows(2) {
            links.push(Link {
                from: buses[pair[0]].id.clone(),
                to: buses[pair[1]].id.clone(),
                capacity: cap(wide),
                boundary: None,
            });
        }
        for _ in 0..zone.len() / 4 {
            let a = zone[rng.gen_range(0..zone.len())];
            let b = zone[rng.gen_range(0..zone.len())];
            if a != b {
                links.push(Link {
                    from: buses[a].id.clone(),
                    to: buses[b].id.clone(),
                    capacity: cap(wide),
                    boundary: None,
                });
            }
        }
    }
    for z in 0..cfg.zones - 1 {
        let (up, down) = (&members[z], &members[z + 1]);
        let count = up.len().min(down.len()).clamp(1, 2);
        let (name, each) = if z + 1 == north_zones {
            (NORTH_SOUTH_BOUNDARY.to_string(), b6_capacity / count as f64)
        } else {
            (format!("BZ{}", z + 1), wide)
        };
        for k in 0..count {
            links.push(Link {
                from: buses[up[up.len() - 1 - k]].id.clone(),
                to: buses[down[k]].id.clone(),
                capacity: cap(each),
                boundary: Some(name.clone()),
            });
        }
    }

    let (north_buses, south_buses): (Vec<usize>, Vec<usize>) =
        (0..cfg.buses).partition(|&b| buses[b].band == Band::North);
    let mut load_weight = vec![0.0; cfg.buses];
    for (group, share) in [(&north_buses, 0.1), (&south_buses, 0.9)] {
        let raw: Vec<f64> = group.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        for (&b, w) in group.iter().zip(raw) {
            load_weight[b] = share * w / total;
        }
    }
    Layout {
        topology: NetworkTopology::new(buses, links),
        north_buses,
        south_buses,
        load_weight,
        b6_capacity,
    }
}

/// Unit registry plus the per-unit nameplate used to draw availability.
fn registry(cfg: &SyntheticConfig, l: &Layout, rng: &mut ChaCha8Rng) -> (Vec<Unit>, Vec<f64>) {
    let m = cfg.mean_load;
    let bus_id = |b: usize| l.topology.buses[b].id.clone();
    let pick = |set: &[usize], rng: &mut ChaCha8Rng| bus_id(set[rng.gen_range(0..set.len())]);
    let mut units = Vec::new();
    let mut nameplate = Vec::new();
    let mut push = |u: Unit, cap: f64, units: &mut Vec<Unit>| {
        units.push(u);
        nameplate.push(cap);
    };

    let north_wind = ((cfg.wind_units as f64 * 0.85).round() as usize).clamp(1, cfg.wind_units);
    for i in 0..cfg.wind_units {
        let north = i < north_wind;
        let subsidy = match i % 10 {
            0..=5 => SubsidyScheme::Ro(rng.gen_range(40.0..60.0)),
            6..=8 => SubsidyScheme::Cfd(rng.gen_range(45.0..90.0)),
            _ => SubsidyScheme::None,
        };
        let (set, cap) = if north {
            (&l.north_buses, 2.0 * m / north_wind as f64)
        } else {
            (
                &l.south_buses,
                0.3 * m / (cfg.wind_units - north_wind).max(1) as f64,
            )
        };
        let bus = pick(set, rng);
        push(
            Unit {
                id: format!("WIND{i:03}"),
                bus,
                tech: Technology::Wind,
                subsidy,
                kind: UnitKind::SimpleGenerator,
                base_cost: None,
            },
            cap,
            &mut units,
        );
    }
    for i in 0..cfg.solar_units {
        let subsidy = if i % 2 == 0 {
            SubsidyScheme::Ro(rng.gen_range(20.0..40.0))
        } else {
            SubsidyScheme::None
        };
        let bus = pick(&l.south_buses, rng);
        push(
            Unit {
                id: format!("SOLAR{i:03}"),
                bus,
                tech: Technology::Solar,
                subsidy,
                kind: UnitKind::SimpleGenerator,
                base_cost: None,
            },
            0.12 * m / cfg.solar_units as f64,
            &mut units,
        );
    }
    for i in 0..cfg.nuclear_units {
        let set = if i == 0 {
            &l.north_buses
        } else {
            &l.south_buses
        };
        let bus = pick(set, rng);
        push(
            Unit {
                id: format!("NUC{i:03}"),
                bus,
                tech: Technology::Nuclear,
                subsidy: SubsidyScheme::None,
                kind: UnitKind::SimpleGenerator,
                base_cost: None,
            },
            0.04 * m,
            &mut units,
        );
    }
    let north_thermal = cfg.thermal_units / 10;
    for i in 0..cfg.thermal_units {
        // Northern thermal plant are peakers so they never fill the boundary.
        let (tech, cost) = match i % 10 {
            _ if i < north_thermal => (Technology::Oil, rng.gen_range(150.0..220.0)),
            0 => (Technology::Coal, rng.gen_range(80.0..130.0)),
            1 => (Technology::Biomass, rng.gen_range(40.0..70.0)),
            9 => (Technology::Oil, rng.gen_range(150.0..220.0)),
            _ => (Technology::Gas, rng.gen_range(60.0..110.0)),
        };
        let set = if i < north_thermal {
            &l.north_buses
        } else {
            &l.south_buses
        };
        let bus = pick(set, rng);
        push(
            Unit {
                id: format!("{}{i:03}", tech.as_str().to_ascii_uppercase()),
                bus,
                tech,
                subsidy: SubsidyScheme::None,
                kind: UnitKind::ThermalGenerator,
                base_cost: Some((cost * 100.0_f64).round() / 100.0),
            },
            1.6 * m / cfg.thermal_units as f64,
            &mut units,
        );
    }
    for i in 0..cfg.hydro_units {
        let power_cap = 0.02 * m;
        let bus = pick(&l.north_buses, rng);
        push(
            Unit {
                id: format!("HYDRO{i:03}"),
                bus,
                tech: Technology::Hydro,
                subsidy: SubsidyScheme::None,
                kind: UnitKind::DailyQuotaGenerator {
                    daily_quota: (power_cap * 24.0 * rng.gen_range(0.2..0.5)).round(),
                    power_cap,
                },
                base_cost: None,
            },
            power_cap,
            &mut units,
        );
    }
    for i in 0..cfg.storage_units {
        let power_cap = 0.015 * m;
        let bus = pick(&l.south_buses, rng);
        push(
            Unit {
                id: format!("BATT{i:03}"),
                bus,
                tech: Technology::Battery,
                subsidy: SubsidyScheme::None,
                kind: UnitKind::StorageUnit {
                    energy_cap: 2.0 * power_cap,
                    power_cap,
                    damping: (rng.gen_range(0.5..1.0) * 100.0_f64).round() / 100.0,
                },
                base_cost: None,
            },
            power_cap,
            &mut units,
        );
    }
    for i in 0..cfg.interconnectors {
        let bus = pick(&l.south_buses, rng);
        push(
            Unit {
                id: format!("IC{i:02}"),
                bus,
                tech: Technology::Ic,
                subsidy: SubsidyScheme::None,
                kind: UnitKind::Interconnector {
                    import_cap: 0.03 * m,
                    export_cap: 0.03 * m,
                    ramp_limit: 0.01 * m,
                    efficiency: 0.99,
                },
                base_cost: None,
            },
            0.03 * m,
            &mut units,
        );
    }
    (units, nameplate)
}

fn draw_regime(weights: &[f64; 3], rng: &mut ChaCha8Rng) -> WindCase {
    let u: f64 = rng.gen();
    if u < weights[0] {
        WindCase::LowWind
    } else if u < weights[0] + weights[1] {
        WindCase::HighWind
    } else {
        WindCase::ExtremeWind
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates a corpus together with the regime labels used to draw wind.
pub fn generate_with_regimes(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<SyntheticCorpus, IngestError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = layout(config, &mut rng);
    let (units, nameplate) = registry(config, &l, &mut rng);
    let m = config.mean_load;
    let periods = PERIODS_PER_DAY;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let north_of = |u: &Unit| l.topology.bus(&u.bus).map(|b| b.band) == Some(Band::North);
    let wind_north_cap: f64 = units
        .iter()
        .zip(&nameplate)
        .filter(|(u, _)| u.tech == Technology::Wind && north_of(u))
        .map(|(_, c)| c)
        .sum();
    let nuclear_north: f64 = units
        .iter()
        .zip(&nameplate)
        .filter(|(u, _)| u.tech == Technology::Nuclear && north_of(u))
        .map(|(_, c)| 0.95 * c)
        .sum();

    let mut days = Vec::with_capacity(config.days);
    let mut regimes = Vec::with_capacity(config.days);
    let mut tuning = Vec::with_capacity(config.days);
    for d in 0..config.days {
        let date = config.start + Duration::days(d as i64);
        let day_scale = rng.gen_range(0.9..1.1);
        let national: Vec<f64> = (0..periods)
            .map(|t| m * day_scale * (1.0 + 0.15 * (2.0 * PI * (t as f64 - 14.0) / 48.0).sin()))
            .collect();
        let load: BTreeMap<String, Vec<f64>> = l
            .topology
            .buses
            .iter()
            .enumerate()
            .map(|(b, bus)| {
                let w = l.load_weight[b];
                (
                    bus.id.clone(),
                    national.iter().map(|x| round2(x * w)).collect(),
                )
            })
            .collect();
        let north_load: Vec<f64> = (0..periods)
            .map(|t| {
                l.north_buses
                    .iter()
                    .map(|&b| load[&l.topology.buses[b].id][t])
                    .sum()
            })
            .collect();
        let ntc: Vec<f64> = (0..periods)
            .map(|_| round2(l.b6_capacity * rng.gen_range(0.9..1.1)))
            .collect();

        let quota_north: f64 = units
            .iter()
            .filter(|u| north_of(u))
            .filter_map(|u| match u.kind {
                UnitKind::DailyQuotaGenerator { daily_quota, .. } => Some(daily_quota / 24.0),
                _ => None,
            })
            .sum();
        let day_regimes: Vec<WindCase> = (0..periods)
            .map(|_| draw_regime(&config.regime_weights, &mut rng))
            .collect();
        let cf_north: Vec<f64> = (0..periods)
            .map(|t| {
                let base = north_load[t] - nuclear_north - quota_north;
                let target = match day_regimes[t] {
                    WindCase::LowWind => base + rng.gen_range(-0.4..0.4) * l.b6_capacity,
                    WindCase::HighWind => base + rng.gen_range(1.3..1.8) * l.b6_capacity,
                    WindCase::ExtremeWind => 1.4 * national[t] + 0.1 * m,
                };
                (target.max(0.0) / wind_north_cap).min(1.0)
            })
            .collect();
        let solar_shape: f64 = rng.gen_range(0.3..1.0);

        let mut availability = BTreeMap::new();
        for (u, unit) in units.iter().enumerate() {
            let cap = nameplate[u];
            let series: Vec<f64> = match (unit.tech, &unit.kind) {
                (Technology::Wind, _) => {
                    let jitter = rng.gen_range(0.95..1.05);
                    (0..periods)
                        .map(|t| {
                            let cf = if north_of(unit) {
                                cf_north[t] * jitter
                            } else {
                                0.3 * cf_north[t] * jitter
                            };
                            round2(cap * cf.min(1.0))
                        })
                        .collect()
                }
                (Technology::Solar, _) => (0..periods)
                    .map(|t| {
                        let sun = (PI * (t as f64 - 12.0) / 24.0).sin().max(0.0);
                        round2(cap * sun * solar_shape)
                    })
                    .collect(),
                (Technology::Nuclear, _) => vec![round2(0.95 * cap); periods],
                (_, UnitKind::ThermalGenerator) => {
                    let a = round2(cap * rng.gen_range(0.85..1.0));
                    vec![a; periods]
                }
                _ => continue,
            };
            availability.insert(unit.id.clone(), series);
        }

        let neighbor_price: BTreeMap<String, Vec<f64>> = units
            .iter()
            .filter(|u| matches!(u.kind, UnitKind::Interconnector { .. }))
            .map(|u| {
                let level = rng.gen_range(45.0..75.0);
                let series = (0..periods)
                    .map(|t| {
                        round2(
                            level
                                + 15.0 * (2.0 * PI * (t as f64 - 16.0) / 48.0).sin()
                                + 5.0 * noise.sample(&mut rng),
                        )
                    })
                    .collect();
                (u.id.clone(), series)
            })
            .collect();

        let mut boundary_ntc = BTreeMap::new();
        for b in &l.topology.boundaries {
            let series = if b.id == NORTH_SOUTH_BOUNDARY {
                ntc.clone()
            } else {
                vec![l.topology.boundary_nominal_capacity(b).unwrap_or(2.0 * m); periods]
            };
            boundary_ntc.insert(b.id.clone(), series);
        }

        let mut scenario = DayScenario {
            date,
            periods,
            units: units.clone(),
            availability,
            load,
            day_ahead_price: vec![0.0; periods],
            neighbor_price,
            boundary_ntc,
            observed_balancing: ObservedBalancingRecord {
                congestion_volume: 0.0,
                accepted_offers: Vec::new(),
                accepted_bids: Vec::new(),
            },
            marginal_costs: BTreeMap::new(),
        };
        scenario.day_ahead_price = day_ahead_prices(&scenario, config.price_noise, &mut rng);

        let tau = rng.gen_range(0.8..1.25);
        let target = round2(model_volume(&scenario, &l.topology, tau)?);
        let depth = 3.0 * target + 1000.0;
        scenario.observed_balancing = ObservedBalancingRecord {
            congestion_volume: target,
            accepted_offers: (0..8)
                .map(|_| StackEntry {
                    price: round2(rng.gen_range(80.0..200.0)),
                    volume: round2(depth * rng.gen_range(0.3..0.6)),
                })
                .collect(),
            accepted_bids: (0..8)
                .map(|_| StackEntry {
                    price: round2(rng.gen_range(-70.0..0.0)),
                    volume: round2(depth * rng.gen_range(0.3..0.6)),
                })
                .collect(),
        };
        days.push(scenario);
        regimes.push(day_regimes);
        tuning.push(tau);
    }
    Ok(SyntheticCorpus {
        topology: l.topology,
        days,
        regimes,
        tuning,
    })
}

/// Congestion balancing volume of the national schedule redispatched at `tau`,
/// MWh. A day the model cannot clear gets zero and fails later at run time.
fn model_volume(
    scenario: &DayScenario,
    topology: &NetworkTopology,
    tau: f64,
) -> Result<f64, IngestError> {
    let fail = |e: String| IngestError::Config(format!("{}: {e}", scenario.date));
    let mut s = scenario.clone();
    attach_costs(&mut s).map_err(|e| fail(e.to_string()))?;
    let cleared = clear(&s, topology, MarketDesign::National, 1.0).and_then(|national| {
        redispatch(&national, &s, topology, tau).map(|nodal| (national, nodal))
    });
    let (national, nodal) = match cleared {
        Ok(pair) => pair,
        Err(ClearingError::Infeasible { .. }) => return Ok(0.0),
        Err(e) => return Err(fail(e.to_string())),
    };
    let groups = group_by_technology_and_band(&s, topology);
    balancing_volume(&national, &nodal, &s, &groups)
        .map(|o| o.volume())
        .map_err(|e| fail(e.to_string()))
}

/// Merit-order price against gross load, perturbed when thermal plant sets it.
fn day_ahead_prices(scenario: &DayScenario, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut priced = scenario.clone();
    priced.marginal_costs = scenario
        .units
        .iter()
        .map(|u| {
            let bid = base_bid(u).unwrap_or(0.0);
            (u.id.clone(), CostCurve::constant(u.id.clone(), bid))
        })
        .collect();
    let order = build_merit_order(&priced).expect("all costs attached");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..scenario.periods)
        .map(|t| {
            let load = scenario.total_load(t);
            match price_setter(&order[t], load).map(|i| &order[t][i]) {
                Some(e) if e.thermal => {
                    let z: f64 = normal.sample(rng);
                    round2(e.bid * (1.0 + noise * z.clamp(-3.0, 3.0)))
                }
                Some(e) => e.bid,
                None => order[t].last().map_or(0.0, |e| e.bid),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{load_bundle, write_bundle};
    use crate::scenario::validate_scenario;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            days: 3,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn scenarios_validate_and_repeat() {
        let cfg = SyntheticConfig {
            days: 30,
            ..SyntheticConfig::default()
        };
        let (t, days) = generate_synthetic(&cfg, 1).unwrap();
        assert_eq!(days.len(), 30);
        assert_eq!(t.zones().len(), 6);
        for d in &days {
            assert!(validate_scenario(d, &t).is_empty(), "{}", d.date);
        }
        assert_eq!(generate_synthetic(&cfg, 1).unwrap(), (t, days));
        assert_ne!(
            generate_synthetic(&cfg, 2).unwrap().1,
            generate_synthetic(&cfg, 1).unwrap().1
        );
    }

    #[test]
    fn missing_thermal_is_a_config_error() {
        let cfg = SyntheticConfig {
            thermal_units: 0,
            ..small()
        };
        assert!(matches!(
            generate_synthetic(&cfg, 1),
            Err(IngestError::Config(_))
        ));
        let relaxed = SyntheticConfig {
            require_thermal: false,
            ..cfg
        };
        assert!(generate_synthetic(&relaxed, 1).is_ok());
    }

    #[test]
    fn bad_weights_are_rejected() {
        let cfg = SyntheticConfig {
            regime_weights: [0.5, 0.2, 0.2],
            ..small()
        };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn round_trip_through_disk() {
        let (t, days) = generate_synthetic(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &t, &days).unwrap();
        let (t2, days2) = load_bundle(dir.path()).unwrap();
        assert_eq!(t, t2);
        assert_eq!(days, days2);
    }

    #[test]
    fn large_config_has_requested_size() {
        let cfg = SyntheticConfig {
            days: 1,
            ..SyntheticConfig::large()
        };
        let (t, days) = generate_synthetic(&cfg, 3).unwrap();
        assert_eq!(t.buses.len(), 300);
        assert_eq!(days[0].units.len(), 450);
        assert_eq!(cfg.unit_count(), 450);
    }

    #[test]
    fn regime_frequencies_follow_weights() {
        let cfg = SyntheticConfig {
            days: 100,
            ..SyntheticConfig::default()
        };
        let c = generate_with_regimes(&cfg, 9).unwrap();
        let all: Vec<WindCase> = c.regimes.into_iter().flatten().collect();
        let share = |k| all.iter().filter(|r| **r == k).count() as f64 / all.len() as f64;
        assert!((share(WindCase::LowWind) - 0.69).abs() < 0.03);
        assert!((share(WindCase::HighWind) - 0.30).abs() < 0.03);
    }
}
