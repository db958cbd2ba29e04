//! TOML sector files.
//!
//! ```toml
//! name = "case_a"
//! d_los_nmi = 3.0
//! d_alert_nmi = 10.0
//! v_min_kt = 220.0
//! v_max_kt = 280.0
//! accel_kt_per_s = 0.5
//! dv_cmd_kt = 5.0
//!
//! [route.0]
//! waypoints = [[0.0, 0.0], [60.0, 0.0]]
//!
//! [route.1]
//! waypoints = [[30.0, -30.0], [30.0, 30.0]]
//! ```
//!
//! A mixture file lists other sector files instead (`mixture = ["a.toml",
//! "b.toml"]`, paths relative to the mixture file); each episode then draws
//! one of them uniformly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{build_sector, Point, RouteId, SectorConfig, SectorParams, SectorSpec};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorFile {
    pub name: Option<String>,
    pub d_los_nmi: Option<f64>,
    pub d_alert_nmi: Option<f64>,
    pub v_min_kt: Option<f64>,
    pub v_max_kt: Option<f64>,
    pub accel_kt_per_s: Option<f64>,
    pub dv_cmd_kt: Option<f64>,
    pub nominal_kt: Option<f64>,
    #[serde(default)]
    pub route: BTreeMap<String, RouteFile>,
    pub mixture: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteFile {
    pub waypoints: Vec<[f64; 2]>,
}

impl SectorFile {
    pub fn into_spec(self, fallback_name: &str) -> Result<SectorSpec> {
        if self.mixture.is_some() {
            return Err(Error::Config(
                "`mixture` cannot be combined with route definitions".into(),
            ));
        }
        let d = SectorParams::default();
        let v_min = self.v_min_kt.unwrap_or(d.v_min);
        let v_max = self.v_max_kt.unwrap_or(d.v_max);
        let params = SectorParams {
            d_los: self.d_los_nmi.unwrap_or(d.d_los),
            d_alert: self.d_alert_nmi.unwrap_or(d.d_alert),
            v_min,
            v_max,
            accel_mag: self.accel_kt_per_s.unwrap_or(d.accel_mag),
            dv_cmd: self.dv_cmd_kt.unwrap_or(d.dv_cmd),
            v_nominal: self.nominal_kt.unwrap_or(0.5 * (v_min + v_max)),
        };
        let routes = self
            .route
            .into_iter()
            .map(|(key, r)| {
                let id: RouteId = key.parse().map_err(|_| {
                    Error::Config(format!("route key `{key}` is not a non-negative integer id"))
                })?;
                Ok((id, r.waypoints.iter().map(|&[x, y]| Point::new(x, y)).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SectorSpec {
            name: self.name.unwrap_or_else(|| fallback_name.to_string()),
            routes,
            params,
        })
    }
}

/// One-line message: the parser's own text spans several lines.
fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let msg = e.message().trim().replace('\n', " ");
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            Error::Config(format!("line {line}: {msg}"))
        }
        None => Error::Config(msg),
    }
}

/// Parses and builds a single (non-mixture) sector from TOML text.
pub fn parse_sector_toml(text: &str, fallback_name: &str) -> Result<SectorConfig> {
    let file: SectorFile = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    build_sector(&file.into_spec(fallback_name)?)
}

/// One or more sectors; episodes pick uniformly among them.
#[derive(Debug, Clone)]
pub struct SectorSet {
    pub sectors: Vec<SectorConfig>,
}

impl SectorSet {
    pub fn single(sector: SectorConfig) -> Self {
        SectorSet {
            sectors: vec![sector],
        }
    }

    pub fn new(sectors: Vec<SectorConfig>) -> Result<Self> {
        if sectors.is_empty() {
            return Err(Error::Config("empty sector set".into()));
        }
        Ok(SectorSet { sectors })
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    /// Largest route count over the set; used for route-id normalization.
    pub fn max_routes(&self) -> usize {
        self.sectors.iter().map(|s| s.routes.len()).max().unwrap_or(0)
    }
}

pub fn load_sector_set(path: &Path) -> Result<SectorSet> {
    load_inner(path, 0)
}

fn load_inner(path: &Path, depth: usize) -> Result<SectorSet> {
    if depth > 4 {
        return Err(Error::Config(format!("{}: mixture nesting too deep", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SectorFile = toml::from_str(&text).map_err(|e| match toml_error(&text, &e) {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match file.mixture {
        Some(ref members) if file.route.is_empty() => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let mut sectors = Vec::new();
            for m in members {
                sectors.extend(load_inner(&base.join(m), depth + 1)?.sectors);
            }
            SectorSet::new(sectors)
        }
        _ => {
            let spec = file
                .into_spec(&stem)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(SectorSet::single(build_sector(&spec)?))
        }
    }
}
