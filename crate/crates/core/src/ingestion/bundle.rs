//! On-disk scenario bundles.
//!
//! ```text
//! <bundle>/topology.csv          bus,zone,band
//! <bundle>/links.csv             from,to,capacity_mw,boundary
//! <bundle>/units.csv             id,bus,kind,tech,subsidy_variant,subsidy_value,
//!                                power_cap_mw,energy_cap_mwh,damping,import_cap_mw,
//!                                export_cap_mw,ramp_mw,efficiency,daily_quota_mwh,base_cost
//! <bundle>/days/<YYYY-MM-DD>/availability.csv   unit,period,mw
//!                            load.csv           bus,period,mw
//!                            prices.csv         period,gb_price,<interconnector ids...>
//!                            ntc.csv            boundary,period,mw
//!                            balancing.csv      side,price,volume
//! ```
//!
//! Periods are numbered from 1. A link's id is its row index in `links.csv`.
//! `capacity_mw` may be `unconstrained`. Balancing sides are `offer`, `bid`
//! and a single `congestion_volume` row whose price cell is empty.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use csv::StringRecord;

use super::IngestError;
use crate::scenario::{
    validate_scenario, Band, Bus, Capacity, DayScenario, Link, NetworkTopology,
    ObservedBalancingRecord, StackEntry, SubsidyScheme, Technology, Unit, UnitKind,
};

pub const DAY_FILES: [&str; 5] = [
    "availability.csv",
    "load.csv",
    "prices.csv",
    "ntc.csv",
    "balancing.csv",
];

const UNIT_HEADER: [&str; 15] = [
    "id",
    "bus",
    "kind",
    "tech",
    "subsidy_variant",
    "subsidy_value",
    "power_cap_mw",
    "energy_cap_mwh",
    "damping",
    "import_cap_mw",
    "export_cap_mw",
    "ramp_mw",
    "efficiency",
    "daily_quota_mwh",
    "base_cost",
];

/// Topology and unit registry shared by every day of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub root: PathBuf,
    pub topology: NetworkTopology,
    pub units: Vec<Unit>,
    pub dates: Vec<NaiveDate>,
}

struct Table {
    file: String,
    headers: StringRecord,
    rows: Vec<StringRecord>,
}

impl Table {
    fn read(path: &Path, label: String) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| IngestError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| IngestError::Schema {
                file: label.clone(),
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let rows = reader
            .records()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| IngestError::Schema {
                    file: label.clone(),
                    row: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            file: label,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Schema {
                file: self.file.clone(),
                row: 0,
                message: format!("missing column '{name}'"),
            })
    }

    fn err(&self, row: usize, field: &str, message: impl Into<String>) -> IngestError {
        IngestError::Schema {
            file: self.file.clone(),
            row: row + 1,
            message: format!("field '{field}': {}", message.into()),
        }
    }

    fn text(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, row: usize, col: usize) -> Result<T, IngestError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.text(row, col);
        raw.parse::<T>()
            .map_err(|e| self.err(row, &self.headers[col], format!("'{raw}': {e}")))
    }

    fn optional_f64(&self, row: usize, col: usize) -> Result<Option<f64>, IngestError> {
        if self.text(row, col).is_empty() {
            Ok(None)
        } else {
            self.parse(row, col).map(Some)
        }
    }

    fn required_f64(&self, row: usize, col: usize) -> Result<f64, IngestError> {
        self.optional_f64(row, col)?
            .ok_or_else(|| self.err(row, &self.headers[col], "value required"))
    }
}

fn bundle_file(root: &Path, name: &str) -> Result<PathBuf, IngestError> {
    let path = root.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(IngestError::MissingFile {
            file: name.to_string(),
            context: format!("bundle {}", root.display()),
        })
    }
}

fn read_topology(root: &Path) -> Result<NetworkTopology, IngestError> {
    let t = Table::read(&bundle_file(root, "topology.csv")?, "topology.csv".into())?;
    let (bus, zone, band) = (t.column("bus")?, t.column("zone")?, t.column("band")?);
    let buses = (0..t.rows.len())
        .map(|r| {
            Ok(Bus {
                id: t.text(r, bus).to_string(),
                zone: t.text(r, zone).to_string(),
                band: t.parse::<Band>(r, band)?,
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;

    let l = Table::read(&bundle_file(root, "links.csv")?, "links.csv".into())?;
    let (from, to, cap, boundary) = (
        l.column("from")?,
        l.column("to")?,
        l.column("capacity_mw")?,
        l.column("boundary")?,
    );
    let links = (0..l.rows.len())
        .map(|r| {
            let capacity = match l.text(r, cap) {
                "unconstrained" => Capacity::Unconstrained,
                _ => Capacity::Limited(l.parse(r, cap)?),
            };
            let b = l.text(r, boundary);
            Ok(Link {
                from: l.text(r, from).to_string(),
                to: l.text(r, to).to_string(),
                capacity,
                boundary: (!b.is_empty()).then(|| b.to_string()),
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    Ok(NetworkTopology::new(buses, links))
}

fn read_units(root: &Path) -> Result<Vec<Unit>, IngestError> {
    let t = Table::read(&bundle_file(root, "units.csv")?, "units.csv".into())?;
    let c: Vec<usize> = UNIT_HEADER
        .iter()
        .map(|h| t.column(h))
        .collect::<Result<_, _>>()?;
    (0..t.rows.len())
        .map(|r| {
            let subsidy = match t.text(r, c[4]) {
                "" | "none" => SubsidyScheme::None,
                "ro" => SubsidyScheme::Ro(t.required_f64(r, c[5])?),
                "cfd" => SubsidyScheme::Cfd(t.required_f64(r, c[5])?),
                other => return Err(t.err(r, "subsidy_variant", format!("unknown '{other}'"))),
            };
            let kind = match t.text(r, c[2]) {
                "simple" => UnitKind::SimpleGenerator,
                "thermal" => UnitKind::ThermalGenerator,
                "daily-quota" => UnitKind::DailyQuotaGenerator {
                    daily_quota: t.required_f64(r, c[13])?,
                    power_cap: t.required_f64(r, c[6])?,
                },
                "storage" => UnitKind::StorageUnit {
                    energy_cap: t.required_f64(r, c[7])?,
                    power_cap: t.required_f64(r, c[6])?,
                    damping: t.required_f64(r, c[8])?,
                },
                "interconnector" => UnitKind::Interconnector {
                    import_cap: t.required_f64(r, c[9])?,
                    export_cap: t.required_f64(r, c[10])?,
                    ramp_limit: t.required_f64(r, c[11])?,
                    efficiency: t.required_f64(r, c[12])?,
                },
                other => return Err(t.err(r, "kind", format!("unknown '{other}'"))),
            };
            Ok(Unit {
                id: t.text(r, c[0]).to_string(),
                bus: t.text(r, c[1]).to_string(),
                tech: t.parse::<Technology>(r, c[3])?,
                subsidy,
                kind,
                base_cost: t.optional_f64(r, c[14])?,
            })
        })
        .collect()
}

fn list_dates(root: &Path) -> Result<Vec<NaiveDate>, IngestError> {
    let days = root.join("days");
    let entries = fs::read_dir(&days).map_err(|e| IngestError::Io {
        path: days.clone(),
        message: e.to_string(),
    })?;
    let mut dates = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| IngestError::Io {
            path: days.clone(),
            message: e.to_string(),
        })?;
        if !entry.path().is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let date =
            NaiveDate::parse_from_str(&name, "%Y-%m-%d").map_err(|_| IngestError::Schema {
                file: format!("days/{name}"),
                row: 0,
                message: "day directory is not an ISO date".into(),
            })?;
        dates.push(date);
    }
    dates.sort();
    Ok(dates)
}

/// Reads the shared topology and registry and lists the available days.
pub fn open_bundle(root: &Path) -> Result<Bundle, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::Io {
            path: root.to_path_buf(),
            message: "bundle directory does not exist".into(),
        });
    }
    Ok(Bundle {
        root: root.to_path_buf(),
        topology: read_topology(root)?,
        units: read_units(root)?,
        dates: list_dates(root)?,
    })
}

fn series_table(
    t: &Table,
    key: &str,
    periods: usize,
) -> Result<BTreeMap<String, Vec<f64>>, IngestError> {
    let (k, p, mw) = (t.column(key)?, t.column("period")?, t.column("mw")?);
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in 0..t.rows.len() {
        let period: usize = t.parse(r, p)?;
        if period == 0 || period > periods {
            return Err(t.err(r, "period", format!("{period} outside 1..={periods}")));
        }
        let series = out
            .entry(t.text(r, k).to_string())
            .or_insert_with(|| vec![f64::NAN; periods]);
        series[period - 1] = t.required_f64(r, mw)?;
    }
    for (id, series) in &out {
        if let Some(missing) = series.iter().position(|v| v.is_nan()) {
            return Err(IngestError::Schema {
                file: t.file.clone(),
                row: 0,
                message: format!("{key} {id} has no value for period {}", missing + 1),
            });
        }
    }
    Ok(out)
}

impl Bundle {
    pub fn day_dir(&self, date: NaiveDate) -> PathBuf {
        self.root
            .join("days")
            .join(date.format("%Y-%m-%d").to_string())
    }

    /// Reads and validates one day.
    pub fn load_day(&self, date: NaiveDate) -> Result<DayScenario, IngestError> {
        let dir = self.day_dir(date);
        for name in DAY_FILES {
            if !dir.join(name).is_file() {
                return Err(IngestError::MissingFile {
                    file: name.to_string(),
                    context: date.to_string(),
                });
            }
        }
        let label = |name: &str| format!("days/{date}/{name}");

        let prices = Table::read(&dir.join("prices.csv"), label("prices.csv"))?;
        let periods = prices.rows.len();
        let period_col = prices.column("period")?;
        let gb_col = prices.column("gb_price")?;
        let mut day_ahead_price = vec![0.0; periods];
        let mut neighbor_price: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in 0..periods {
            let p: usize = prices.parse(r, period_col)?;
            if p != r + 1 {
                return Err(prices.err(r, "period", "periods must be 1, 2, ... in order"));
            }
            day_ahead_price[r] = prices.required_f64(r, gb_col)?;
            for (c, h) in prices.headers.iter().enumerate() {
                if c != period_col && c != gb_col {
                    neighbor_price
                        .entry(h.to_string())
                        .or_insert_with(|| vec![0.0; periods])[r] = prices.required_f64(r, c)?;
                }
            }
        }

        let availability = series_table(
            &Table::read(&dir.join("availability.csv"), label("availability.csv"))?,
            "unit",
            periods,
        )?;
        let load = series_table(
            &Table::read(&dir.join("load.csv"), label("load.csv"))?,
            "bus",
            periods,
        )?;
        let boundary_ntc = series_table(
            &Table::read(&dir.join("ntc.csv"), label("ntc.csv"))?,
            "boundary",
            periods,
        )?;

        let b = Table::read(&dir.join("balancing.csv"), label("balancing.csv"))?;
        let (side, price, volume) = (b.column("side")?, b.column("price")?, b.column("volume")?);
        let mut record = ObservedBalancingRecord {
            congestion_volume: 0.0,
            accepted_offers: Vec::new(),
            accepted_bids: Vec::new(),
        };
        let mut saw_volume = false;
        for r in 0..b.rows.len() {
            match b.text(r, side) {
                "offer" => record.accepted_offers.push(StackEntry {
                    price: b.required_f64(r, price)?,
                    volume: b.required_f64(r, volume)?,
                }),
                "bid" => record.accepted_bids.push(StackEntry {
                    price: b.required_f64(r, price)?,
                    volume: b.required_f64(r, volume)?,
                }),
                "congestion_volume" => {
                    record.congestion_volume = b.required_f64(r, volume)?;
                    saw_volume = true;
                }
                other => return Err(b.err(r, "side", format!("unknown '{other}'"))),
            }
        }
        if !saw_volume {
            return Err(b.err(0, "side", "no congestion_volume row"));
        }

        let scenario = DayScenario {
            date,
            periods,
            units: self.units.clone(),
            availability,
            load,
            day_ahead_price,
            neighbor_price,
            boundary_ntc,
            observed_balancing: record,
            marginal_costs: BTreeMap::new(),
        };
        let violations = validate_scenario(&scenario, &self.topology);
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(IngestError::Invalid {
                date,
                violations: violations.into_iter().map(|v| v.0).collect(),
            })
        }
    }

    /// Loads the days in `[from, to]`, ordered by date.
    /// The range must be non-empty and lie within the bundle's coverage.
    pub fn load_range(
        &self,
        from: NaiveDate,
        to: NaiveDate,
    ) -> Result<Vec<DayScenario>, IngestError> {
        let covered = match (self.dates.first(), self.dates.last()) {
            (Some(&first), Some(&last)) => from <= to && from >= first && to <= last,
            _ => false,
        };
        if !covered {
            return Err(IngestError::Range {
                from,
                to,
                coverage: match (self.dates.first(), self.dates.last()) {
                    (Some(a), Some(b)) => format!("{a} .. {b}"),
                    _ => "no days".to_string(),
                },
            });
        }
        self.dates
            .iter()
            .filter(|d| **d >= from && **d <= to)
            .map(|d| self.load_day(*d))
            .collect()
    }
}

/// Reads a whole bundle, ordered by date.
pub fn load_bundle(root: &Path) -> Result<(NetworkTopology, Vec<DayScenario>), IngestError> {
    let bundle = open_bundle(root)?;
    let days = bundle
        .dates
        .iter()
        .map(|d| bundle.load_day(*d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((bundle.topology, days))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, IngestError> {
    csv::Writer::from_path(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), IngestError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let io = |e: csv::Error| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = writer(path)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(io)?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn series_rows(map: &BTreeMap<String, Vec<f64>>) -> Vec<Vec<String>> {
    map.iter()
        .flat_map(|(id, series)| {
            series
                .iter()
                .enumerate()
                .map(move |(t, v)| vec![id.clone(), (t + 1).to_string(), v.to_string()])
        })
        .collect()
}

/// Writes a bundle that `load_bundle` reads back unchanged. Every day must
/// share the unit registry of the first.
pub fn write_bundle(
    root: &Path,
    topology: &NetworkTopology,
    days: &[DayScenario],
) -> Result<(), IngestError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| IngestError::Io {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    mkdir(&root.join("days"))?;
    write_rows(
        &root.join("topology.csv"),
        &["bus", "zone", "band"],
        topology
            .buses
            .iter()
            .map(|b| vec![b.id.clone(), b.zone.clone(), b.band.as_str().to_string()]),
    )?;
    write_rows(
        &root.join("links.csv"),
        &["from", "to", "capacity_mw", "boundary"],
        topology.links.iter().map(|l| {
            vec![
                l.from.clone(),
                l.to.clone(),
                l.capacity
                    .limit()
                    .map_or_else(|| "unconstrained".to_string(), |c| c.to_string()),
                l.boundary.clone().unwrap_or_default(),
            ]
        }),
    )?;
    let units = days.first().map(|d| d.units.as_slice()).unwrap_or(&[]);
    write_rows(
        &root.join("units.csv"),
        &UNIT_HEADER,
        units.iter().map(|u| {
            let (variant, value) = match u.subsidy {
                SubsidyScheme::None => ("none", None),
                SubsidyScheme::Ro(v) => ("ro", Some(v)),
                SubsidyScheme::Cfd(v) => ("cfd", Some(v)),
            };
            let mut caps = [None; 8];
            match u.kind {
                UnitKind::SimpleGenerator | UnitKind::ThermalGenerator => {}
                UnitKind::DailyQuotaGenerator {
                    daily_quota,
                    power_cap,
                } => {
                    caps[0] = Some(power_cap);
                    caps[7] = Some(daily_quota);
                }
                UnitKind::StorageUnit {
                    energy_cap,
                    power_cap,
                    damping,
                } => {
                    caps[0] = Some(power_cap);
                    caps[1] = Some(energy_cap);
                    caps[2] = Some(damping);
                }
                UnitKind::Interconnector {
                    import_cap,
                    export_cap,
                    ramp_limit,
                    efficiency,
                } => {
                    caps[3] = Some(import_cap);
                    caps[4] = Some(export_cap);
                    caps[5] = Some(ramp_limit);
                    caps[6] = Some(efficiency);
                }
            }
            let mut row = vec![
                u.id.clone(),
                u.bus.clone(),
                u.kind.name().to_string(),
                u.tech.as_str().to_string(),
                variant.to_string(),
                opt(value),
            ];
            row.extend(caps.iter().map(|c| opt(*c)));
            row.push(opt(u.base_cost));
            row
        }),
    )?;

    for day in days {
        let dir = root
            .join("days")
            .join(day.date.format("%Y-%m-%d").to_string());
        mkdir(&dir)?;
        write_rows(
            &dir.join("availability.csv"),
            &["unit", "period", "mw"],
            series_rows(&day.availability),
        )?;
        write_rows(
            &dir.join("load.csv"),
            &["bus", "period", "mw"],
            series_rows(&day.load),
        )?;
        write_rows(
            &dir.join("ntc.csv"),
            &["boundary", "period", "mw"],
            series_rows(&day.boundary_ntc),
        )?;
        let mut header = vec!["period".to_string(), "gb_price".to_string()];
        header.extend(day.neighbor_price.keys().cloned());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_rows(
            &dir.join("prices.csv"),
            &header_refs,
            (0..day.periods).map(|t| {
                let mut row = vec![(t + 1).to_string(), day.day_ahead_price[t].to_string()];
                row.extend(day.neighbor_price.values().map(|s| s[t].to_string()));
                row
            }),
        )?;
        let rec = &day.observed_balancing;
        let mut rows = vec![vec![
            "congestion_volume".to_string(),
            String::new(),
            rec.congestion_volume.to_string(),
        ]];
        rows.extend(
            rec.accepted_offers
                .iter()
                .map(|e| vec!["offer".into(), e.price.to_string(), e.volume.to_string()]),
        );
        rows.extend(
            rec.accepted_bids
                .iter()
                .map(|e| vec!["bid".into(), e.price.to_string(), e.volume.to_string()]),
        );
        write_rows(
            &dir.join("balancing.csv"),
            &["side", "price", "volume"],
            rows,
        )?;
    }
    Ok(())
}
