//! Domain types shared by every stage of the simulator.
//!
//! Settlement periods are 0-based in memory. Files use 1..=48.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Settlement periods per day.
pub const PERIODS_PER_DAY: usize = 48;

/// Length of one settlement period in hours.
pub const PERIOD_HOURS: f64 = 0.5;

/// Side of the main north/south transmission boundary a bus sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    North,
    South,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::North => "north",
            Band::South => "south",
        }
    }
}

impl std::str::FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "north" => Ok(Band::North),
            "south" => Ok(Band::South),
            other => Err(format!("unknown band '{other}'")),
        }
    }
}

/// Transfer capacity of a link in MW per direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capacity {
    Limited(f64),
    Unconstrained,
}

impl Capacity {
    pub fn limit(self) -> Option<f64> {
        match self {
            Capacity::Limited(mw) => Some(mw),
            Capacity::Unconstrained => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub zone: String,
    pub band: Band,
}

/// Directed transport link. Positive flow runs `from` -> `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: String,
    pub to: String,
    pub capacity: Capacity,
    /// Boundary this link crosses, if any.
    pub boundary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub id: String,
    /// Indices into [`NetworkTopology::links`].
    pub links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub buses: Vec<Bus>,
    pub links: Vec<Link>,
    pub boundaries: Vec<Boundary>,
}

impl NetworkTopology {
    /// Builds a topology, deriving boundary membership from the links.
    pub fn new(buses: Vec<Bus>, links: Vec<Link>) -> Self {
        let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, link) in links.iter().enumerate() {
            if let Some(b) = &link.boundary {
                members.entry(b.clone()).or_default().push(i);
            }
        }
        let boundaries = members
            .into_iter()
            .map(|(id, links)| Boundary { id, links })
            .collect();
        Self {
            buses,
            links,
            boundaries,
        }
    }

    pub fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect()
    }

    /// Zone ids in order of first appearance.
    pub fn zones(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for bus in &self.buses {
            if seen.insert(bus.zone.as_str()) {
                out.push(bus.zone.clone());
            }
        }
        out
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Sum of member link limits; `None` if any member is unconstrained.
    pub fn boundary_nominal_capacity(&self, boundary: &Boundary) -> Option<f64> {
        boundary
            .links
            .iter()
            .map(|&l| self.links[l].capacity.limit())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technology {
    Wind,
    Solar,
    Nuclear,
    Hydro,
    Gas,
    Coal,
    Biomass,
    Oil,
    Battery,
    PumpedHydro,
    Ic,
}

impl Technology {
    pub const ALL: [Technology; 11] = [
        Technology::Wind,
        Technology::Solar,
        Technology::Nuclear,
        Technology::Hydro,
        Technology::Gas,
        Technology::Coal,
        Technology::Biomass,
        Technology::Oil,
        Technology::Battery,
        Technology::PumpedHydro,
        Technology::Ic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Wind => "wind",
            Technology::Solar => "solar",
            Technology::Nuclear => "nuclear",
            Technology::Hydro => "hydro",
            Technology::Gas => "gas",
            Technology::Coal => "coal",
            Technology::Biomass => "biomass",
            Technology::Oil => "oil",
            Technology::Battery => "battery",
            Technology::PumpedHydro => "pumped-hydro",
            Technology::Ic => "ic",
        }
    }

    /// Fuel-burning technologies whose bids follow an estimated SRMC.
    pub fn is_thermal(self) -> bool {
        matches!(
            self,
            Technology::Gas | Technology::Coal | Technology::Biomass | Technology::Oil
        )
    }

    pub fn is_renewable(self) -> bool {
        matches!(
            self,
            Technology::Wind | Technology::Solar | Technology::Hydro
        )
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Technology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Technology::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown technology '{s}'"))
    }
}

/// Renewable support scheme attached to a unit. Values in GBP/MWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "value")]
pub enum SubsidyScheme {
    None,
    Ro(f64),
    Cfd(f64),
}

impl SubsidyScheme {
    pub fn roc(self) -> Option<f64> {
        match self {
            SubsidyScheme::Ro(v) => Some(v),
            _ => None,
        }
    }

    pub fn strike(self) -> Option<f64> {
        match self {
            SubsidyScheme::Cfd(v) => Some(v),
            _ => None,
        }
    }
}

/// Kind-specific capacity parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UnitKind {
    /// Output bounded by the per-period availability (PN).
    SimpleGenerator,
    /// Output bounded by the per-period availability (MEL); bids a corrected SRMC.
    ThermalGenerator,
    /// Must deliver exactly `daily_quota` over the day; cannot charge.
    DailyQuotaGenerator { daily_quota: f64, power_cap: f64 },
    /// Effective caps are `damping * energy_cap` and `damping * power_cap`.
    StorageUnit {
        energy_cap: f64,
        power_cap: f64,
        damping: f64,
    },
    /// Link to a neighbouring market priced exogenously.
    Interconnector {
        import_cap: f64,
        export_cap: f64,
        ramp_limit: f64,
        efficiency: f64,
    },
}

impl UnitKind {
    pub fn name(&self) -> &'static str {
        match self {
            UnitKind::SimpleGenerator => "simple",
            UnitKind::ThermalGenerator => "thermal",
            UnitKind::DailyQuotaGenerator { .. } => "daily-quota",
            UnitKind::StorageUnit { .. } => "storage",
            UnitKind::Interconnector { .. } => "interconnector",
        }
    }

    /// Generators are the units re-optimised during redispatch.
    pub fn is_generator(&self) -> bool {
        matches!(
            self,
            UnitKind::SimpleGenerator
                | UnitKind::ThermalGenerator
                | UnitKind::DailyQuotaGenerator { .. }
        )
    }

    /// Whether a per-period availability series is expected for the unit.
    pub fn needs_availability(&self) -> bool {
        matches!(self, UnitKind::SimpleGenerator | UnitKind::ThermalGenerator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub bus: String,
    pub tech: Technology,
    pub subsidy: SubsidyScheme,
    pub kind: UnitKind,
    /// Bid basis in GBP/MWh before correction: SRMC estimate for thermal
    /// units, price floor for nuclear. `None` means the technology default.
    pub base_cost: Option<f64>,
}

impl Unit {
    pub fn is_thermal(&self) -> bool {
        matches!(self.kind, UnitKind::ThermalGenerator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackEntry {
    /// GBP/MWh.
    pub price: f64,
    /// MWh.
    pub volume: f64,
}

/// Congestion-related balancing actions observed on the day.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedBalancingRecord {
    /// MWh.
    pub congestion_volume: f64,
    pub accepted_offers: Vec<StackEntry>,
    pub accepted_bids: Vec<StackEntry>,
}

/// Merit-order price of a unit, possibly varying by period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub unit: String,
    /// GBP/MWh.
    pub base_srmc: f64,
    /// Per-period corrected SRMC; present for thermal units only.
    pub corrected_srmc: Option<Vec<f64>>,
}

impl CostCurve {
    pub fn constant(unit: impl Into<String>, price: f64) -> Self {
        Self {
            unit: unit.into(),
            base_srmc: price,
            corrected_srmc: None,
        }
    }

    pub fn at(&self, period: usize) -> f64 {
        match &self.corrected_srmc {
            Some(series) => series[period],
            None => self.base_srmc,
        }
    }
}

/// One simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayScenario {
    pub date: NaiveDate,
    pub periods: usize,
    pub units: Vec<Unit>,
    /// Unit id -> MW per period, for simple and thermal generators.
    pub availability: BTreeMap<String, Vec<f64>>,
    /// Bus id -> MW per period.
    pub load: BTreeMap<String, Vec<f64>>,
    /// GBP/MWh per period.
    pub day_ahead_price: Vec<f64>,
    /// Interconnector id -> neighbouring-market price per period.
    pub neighbor_price: BTreeMap<String, Vec<f64>>,
    /// Boundary id -> NTC in MW per period.
    pub boundary_ntc: BTreeMap<String, Vec<f64>>,
    pub observed_balancing: ObservedBalancingRecord,
    /// Filled by the cost model; empty after loading.
    #[serde(default)]
    pub marginal_costs: BTreeMap<String, CostCurve>,
}

impl DayScenario {
    pub fn unit(&self, id: &str) -> Option<&Unit> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn total_load(&self, period: usize) -> f64 {
        self.load.values().map(|series| series[period]).sum()
    }

    pub fn served_energy(&self) -> f64 {
        (0..self.periods).map(|t| self.total_load(t)).sum::<f64>() * PERIOD_HOURS
    }
}

/// A broken invariant found by [`validate_scenario`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for Violation {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

fn finite_non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Checks every type invariant. Violations are returned in a fixed order.
pub fn validate_scenario(s: &DayScenario, t: &NetworkTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |msg: String| out.push(Violation(msg));

    validate_topology(t, &mut push);

    if s.periods != PERIODS_PER_DAY {
        push("period count != 48".to_string());
    }

    let buses: BTreeSet<&str> = t.buses.iter().map(|b| b.id.as_str()).collect();
    let mut unit_ids = BTreeSet::new();
    for unit in &s.units {
        if !unit_ids.insert(unit.id.as_str()) {
            push(format!("duplicate unit id {}", unit.id));
        }
        if !buses.contains(unit.bus.as_str()) {
            push(format!(
                "unit {} references unknown bus {}",
                unit.id, unit.bus
            ));
        }
        match unit.subsidy {
            SubsidyScheme::Ro(v) if !(v > 0.0 && v.is_finite()) => {
                push(format!("unit {}: roc must be positive", unit.id))
            }
            SubsidyScheme::Cfd(v) if !(v > 0.0 && v.is_finite()) => {
                push(format!("unit {}: strike must be positive", unit.id))
            }
            _ => {}
        }
        match &unit.kind {
            UnitKind::StorageUnit {
                energy_cap,
                power_cap,
                damping,
            } => {
                if !(*damping > 0.0 && *damping <= 1.0) {
                    push("damping out of range".to_string());
                }
                if !finite_non_negative(*energy_cap) || !finite_non_negative(*power_cap) {
                    push(format!("unit {}: storage capacity invalid", unit.id));
                }
            }
            UnitKind::Interconnector {
                import_cap,
                export_cap,
                ramp_limit,
                efficiency,
            } => {
                if !(*efficiency > 0.0 && *efficiency <= 1.0) {
                    push("efficiency out of range".to_string());
                }
                if ![import_cap, export_cap, ramp_limit]
                    .iter()
                    .all(|v| finite_non_negative(**v))
                {
                    push(format!("unit {}: interconnector capacity invalid", unit.id));
                }
                match s.neighbor_price.get(&unit.id) {
                    Some(series) if series.len() == s.periods => {}
                    _ => push(format!("neighbor price missing for {}", unit.id)),
                }
            }
            UnitKind::DailyQuotaGenerator {
                daily_quota,
                power_cap,
            } => {
                if !finite_non_negative(*daily_quota) || !finite_non_negative(*power_cap) {
                    push(format!("unit {}: quota or power cap invalid", unit.id));
                } else if *daily_quota > power_cap * PERIOD_HOURS * s.periods as f64 + 1e-9 {
                    push(format!(
                        "unit {}: daily quota exceeds deliverable energy",
                        unit.id
                    ));
                }
            }
            UnitKind::SimpleGenerator | UnitKind::ThermalGenerator => {
                match s.availability.get(&unit.id) {
                    Some(series) if series.len() == s.periods => {
                        if !series.iter().all(|v| finite_non_negative(*v)) {
                            push(format!("negative availability for {}", unit.id));
                        }
                    }
                    _ => push(format!("availability missing for {}", unit.id)),
                }
            }
        }
    }
    for id in s.availability.keys() {
        if !unit_ids.contains(id.as_str()) {
            push(format!("availability for unknown unit {id}"));
        }
    }

    for bus in &t.buses {
        match s.load.get(&bus.id) {
            Some(series) if series.len() == s.periods => {
                if !series.iter().all(|v| finite_non_negative(*v)) {
                    push(format!("negative load at {}", bus.id));
                }
            }
            _ => push(format!("load missing for bus {}", bus.id)),
        }
    }
    for id in s.load.keys() {
        if !buses.contains(id.as_str()) {
            push(format!("load for unknown bus {id}"));
        }
    }

    if s.day_ahead_price.len() != s.periods || !s.day_ahead_price.iter().all(|p| p.is_finite()) {
        push("day-ahead price series incomplete".to_string());
    }

    for boundary in &t.boundaries {
        match s.boundary_ntc.get(&boundary.id) {
            Some(series) if series.len() == s.periods => {
                if !series.iter().all(|v| finite_non_negative(*v)) {
                    push(format!("negative ntc for boundary {}", boundary.id));
                }
            }
            _ => push(format!("ntc missing for boundary {}", boundary.id)),
        }
    }

    let record = &s.observed_balancing;
    if !finite_non_negative(record.congestion_volume) {
        push("congestion volume negative".to_string());
    }
    if record
        .accepted_offers
        .iter()
        .chain(&record.accepted_bids)
        .any(|e| !finite_non_negative(e.volume) || !e.price.is_finite())
    {
        push("balancing stack entry invalid".to_string());
    }

    out
}

fn validate_topology(t: &NetworkTopology, push: &mut impl FnMut(String)) {
    let mut buses = BTreeSet::new();
    for bus in &t.buses {
        if !buses.insert(bus.id.as_str()) {
            push(format!("duplicate bus id {}", bus.id));
        }
        if bus.zone.is_empty() {
            push(format!("bus {} has no zone", bus.id));
        }
    }
    for (i, link) in t.links.iter().enumerate() {
        if !buses.contains(link.from.as_str()) || !buses.contains(link.to.as_str()) {
            push(format!("link {i} references unknown bus"));
        }
        if let Capacity::Limited(c) = link.capacity {
            if !finite_non_negative(c) {
                push(format!("link {i} capacity invalid"));
            }
        }
    }
    for boundary in &t.boundaries {
        if boundary.links.iter().any(|&l| l >= t.links.len()) {
            push(format!("boundary {} references unknown link", boundary.id));
        }
    }
    // Zones are copper plates in the zonal design, so each must be internally connected.
    for zone in t.zones() {
        let members: Vec<&str> = t
            .buses
            .iter()
            .filter(|b| b.zone == zone)
            .map(|b| b.id.as_str())
            .collect();
        if members.len() <= 1 {
            continue;
        }
        let member_set: BTreeSet<&str> = members.iter().copied().collect();
        let mut reached = BTreeSet::from([members[0]]);
        let mut frontier = vec![members[0]];
        while let Some(bus) = frontier.pop() {
            for link in &t.links {
                let next = if link.from == bus {
                    link.to.as_str()
                } else if link.to == bus {
                    link.from.as_str()
                } else {
                    continue;
                };
                if member_set.contains(next) && reached.insert(next) {
                    frontier.push(next);
                }
            }
        }
        if reached.len() != members.len() {
            push(format!("zone {zone} is not internally connected"));
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::two_bus;
    use super::*;

    #[test]
    fn well_formed_two_bus_has_no_violations() {
        let (t, s) = two_bus(48);
        assert_eq!(validate_scenario(&s, &t), Vec::<Violation>::new());
    }

    #[test]
    fn wrong_period_count_is_reported() {
        let (t, mut s) = two_bus(48);
        s.periods = 47;
        for series in s.availability.values_mut().chain(s.load.values_mut()) {
            series.truncate(47);
        }
        s.day_ahead_price.truncate(47);
        s.boundary_ntc.values_mut().for_each(|v| v.truncate(47));
        assert_eq!(
            validate_scenario(&s, &t),
            vec![Violation("period count != 48".into())]
        );
    }

    #[test]
    fn zero_damping_is_reported() {
        let (t, mut s) = two_bus(48);
        s.units.push(Unit {
            id: "BAT".into(),
            bus: "S".into(),
            tech: Technology::Battery,
            subsidy: SubsidyScheme::None,
            kind: UnitKind::StorageUnit {
                energy_cap: 100.0,
                power_cap: 50.0,
                damping: 0.0,
            },
            base_cost: None,
        });
        assert_eq!(
            validate_scenario(&s, &t),
            vec![Violation("damping out of range".into())]
        );
    }

    #[test]
    fn unknown_bus_and_missing_maps_are_reported() {
        let (t, mut s) = two_bus(48);
        s.units[0].bus = "X".into();
        s.load.remove("N");
        let v = validate_scenario(&s, &t);
        assert!(v.contains(&Violation("unit GN references unknown bus X".into())));
        assert!(v.contains(&Violation("load missing for bus N".into())));
    }

    #[test]
    fn disconnected_zone_is_reported() {
        let (mut t, s) = two_bus(48);
        for b in &mut t.buses {
            b.zone = "Z".into();
        }
        t.links.clear();
        t.boundaries.clear();
        let mut s = s;
        s.boundary_ntc.clear();
        assert_eq!(
            validate_scenario(&s, &t),
            vec![Violation("zone Z is not internally connected".into())]
        );
    }

    #[test]
    fn validation_is_pure() {
        let (t, mut s) = two_bus(47);
        s.units[1].subsidy = SubsidyScheme::Cfd(-1.0);
        assert_eq!(validate_scenario(&s, &t), validate_scenario(&s, &t));
    }

    #[test]
    fn serde_round_trip() {
        let (t, s) = two_bus(48);
        let s2: DayScenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        let t2: NetworkTopology =
            serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(s, s2);
        assert_eq!(t, t2);
    }
}
