//! Planar sector geometry: routes as polylines in nautical miles, and the
//! crossings between them.

mod file;

pub use file::{load_sector_set, parse_sector_toml, SectorFile, SectorSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "same point" decisions in nmi.
const GEOM_EPS: f64 = 1e-9;

pub type RouteId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

pub fn euclidean_distance(p: Point, q: Point) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub id: RouteId,
    pub waypoints: Vec<Point>,
    /// Arc length at each waypoint; `cumulative[0] == 0`.
    cumulative: Vec<f64>,
}

impl Route {
    pub fn new(id: RouteId, waypoints: Vec<Point>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Geometry(format!(
                "route {id} needs at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for (k, pair) in waypoints.windows(2).enumerate() {
            if !(pair[0].x.is_finite() && pair[0].y.is_finite())
                || !(pair[1].x.is_finite() && pair[1].y.is_finite())
            {
                return Err(Error::Geometry(format!("route {id} has a non-finite waypoint")));
            }
            let len = euclidean_distance(pair[0], pair[1]);
            if len <= GEOM_EPS {
                return Err(Error::Geometry(format!(
                    "route {id}: waypoints {k} and {} coincide",
                    k + 1
                )));
            }
            cumulative.push(cumulative[k] + len);
        }
        Ok(Route {
            id,
            waypoints,
            cumulative,
        })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("route has waypoints")
    }

    pub fn entry(&self) -> Point {
        self.waypoints[0]
    }

    pub fn exit(&self) -> Point {
        *self.waypoints.last().expect("route has waypoints")
    }

    /// Arc length at waypoint `k`.
    pub fn arc_at_waypoint(&self, k: usize) -> f64 {
        self.cumulative[k]
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.waypoints.windows(2).map(|w| (w[0], w[1]))
    }

    /// Point at arc length `s` along the polyline.
    pub fn position(&self, s: f64) -> Result<Point> {
        let len = self.length();
        if !(0.0..=len).contains(&s) {
            return Err(Error::Geometry(format!(
                "arc length {s} outside route {} [0, {len}]",
                self.id
            )));
        }
        Ok(self.position_clamped(s))
    }

    /// Like [`Route::position`] but clamps `s` into range. Used by the
    /// simulator, which may overshoot the exit by one sub-step.
    pub fn position_clamped(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.length());
        // index of the segment containing s
        let seg = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).expect("finite arc"))
        {
            Ok(k) => return self.waypoints[k],
            Err(k) => k - 1,
        };
        let (s0, s1) = (self.cumulative[seg], self.cumulative[seg + 1]);
        self.waypoints[seg].lerp(self.waypoints[seg + 1], (s - s0) / (s1 - s0))
    }
}

/// Free function form of [`Route::position`].
pub fn position_on_route(route: &Route, s: f64) -> Result<Point> {
    route.position(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub point: Point,
    pub route_a: RouteId,
    pub route_b: RouteId,
    pub s_a: f64,
    pub s_b: f64,
}

impl Intersection {
    /// Arc length of this crossing on `route`, if the crossing belongs to it.
    pub fn arc_on(&self, route: RouteId) -> Option<f64> {
        if route == self.route_a {
            Some(self.s_a)
        } else if route == self.route_b {
            Some(self.s_b)
        } else {
            None
        }
    }

    pub fn joins(&self, r1: RouteId, r2: RouteId) -> bool {
        (self.route_a == r1 && self.route_b == r2) || (self.route_a == r2 && self.route_b == r1)
    }
}

/// Separation radii and speed envelope shared by all aircraft in a sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorParams {
    pub d_los: f64,
    pub d_alert: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub accel_mag: f64,
    pub dv_cmd: f64,
    /// Spawn speed; defaults to the midpoint of the envelope.
    pub v_nominal: f64,
}

impl Default for SectorParams {
    fn default() -> Self {
        SectorParams {
            d_los: 3.0,
            d_alert: 10.0,
            v_min: 220.0,
            v_max: 280.0,
            accel_mag: 0.5,
            dv_cmd: 5.0,
            v_nominal: 250.0,
        }
    }
}

impl SectorParams {
    fn validate(&self) -> Result<()> {
        let all = [
            ("d_los_nmi", self.d_los),
            ("d_alert_nmi", self.d_alert),
            ("v_min_kt", self.v_min),
            ("v_max_kt", self.v_max),
            ("accel_kt_per_s", self.accel_mag),
            ("dv_cmd_kt", self.dv_cmd),
            ("nominal_kt", self.v_nominal),
        ];
        for (name, v) in all {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.d_los >= self.d_alert {
            return Err(Error::Config(format!(
                "d_los_nmi ({}) must be below d_alert_nmi ({})",
                self.d_los, self.d_alert
            )));
        }
        if self.v_min >= self.v_max {
            return Err(Error::Config(format!(
                "v_min_kt ({}) must be below v_max_kt ({})",
                self.v_min, self.v_max
            )));
        }
        if !(self.v_min..=self.v_max).contains(&self.v_nominal) {
            return Err(Error::Config(format!(
                "nominal_kt ({}) outside [{}, {}]",
                self.v_nominal, self.v_min, self.v_max
            )));
        }
        Ok(())
    }
}

/// Unvalidated description of a sector.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorSpec {
    pub name: String,
    pub routes: Vec<(RouteId, Vec<Point>)>,
    pub params: SectorParams,
}

/// Immutable, validated sector. Routes are stored sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorConfig {
    pub name: String,
    pub routes: Vec<Route>,
    pub intersections: Vec<Intersection>,
    pub params: SectorParams,
}

impl SectorConfig {
    /// Position of `id` in [`SectorConfig::routes`].
    pub fn route_index(&self, id: RouteId) -> Option<usize> {
        self.routes.binary_search_by_key(&id, |r| r.id).ok()
    }

    pub fn route(&self, id: RouteId) -> Option<&Route> {
        self.route_index(id).map(|k| &self.routes[k])
    }

    pub fn intersections_between(
        &self,
        r1: RouteId,
        r2: RouteId,
    ) -> impl Iterator<Item = &Intersection> + '_ {
        self.intersections.iter().filter(move |x| x.joins(r1, r2))
    }
}

pub fn build_sector(spec: &SectorSpec) -> Result<SectorConfig> {
    if spec.routes.is_empty() {
        return Err(Error::Geometry("sector has no routes".into()));
    }
    spec.params.validate()?;
    let mut routes = spec
        .routes
        .iter()
        .map(|(id, wps)| Route::new(*id, wps.clone()))
        .collect::<Result<Vec<_>>>()?;
    routes.sort_by_key(|r| r.id);
    if let Some(w) = routes.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Geometry(format!("duplicate route id {}", w[0].id)));
    }

    let mut intersections = Vec::new();
    for (ia, ra) in routes.iter().enumerate() {
        for rb in &routes[ia + 1..] {
            let mut found: Vec<Intersection> = Vec::new();
            for (ka, (a0, a1)) in ra.segments().enumerate() {
                for (kb, (b0, b1)) in rb.segments().enumerate() {
                    let Some((ta, tb)) = segment_crossing(a0, a1, b0, b1).map_err(|_| {
                        Error::Geometry(format!(
                            "routes {} and {} overlap along a segment (ambiguous crossing)",
                            ra.id, rb.id
                        ))
                    })?
                    else {
                        continue;
                    };
                    let s_a = ra.arc_at_waypoint(ka) + ta * euclidean_distance(a0, a1);
                    let s_b = rb.arc_at_waypoint(kb) + tb * euclidean_distance(b0, b1);
                    // a crossing at a shared waypoint shows up once per adjacent segment
                    if found
                        .iter()
                        .any(|x| (x.s_a - s_a).abs() < 1e-7 && (x.s_b - s_b).abs() < 1e-7)
                    {
                        continue;
                    }
                    found.push(Intersection {
                        point: a0.lerp(a1, ta),
                        route_a: ra.id,
                        route_b: rb.id,
                        s_a,
                        s_b,
                    });
                }
            }
            found.sort_by(|x, y| x.s_a.total_cmp(&y.s_a));
            intersections.extend(found);
        }
    }

    Ok(SectorConfig {
        name: spec.name.clone(),
        routes,
        intersections,
        params: spec.params,
    })
}

struct Collinear;

/// Parameters `(t, u)` of the crossing of segments `p0p1` and `q0q1`, both in
/// `[0, 1]`. Collinear segments that share more than a point are ambiguous.
fn segment_crossing(
    p0: Point,
    p1: Point,
    q0: Point,
    q1: Point,
) -> std::result::Result<Option<(f64, f64)>, Collinear> {
    let r = (p1.x - p0.x, p1.y - p0.y);
    let s = (q1.x - q0.x, q1.y - q0.y);
    let qp = (q0.x - p0.x, q0.y - p0.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    let qp_x_r = qp.0 * r.1 - qp.1 * r.0;
    let scale = (r.0.hypot(r.1) * s.0.hypot(s.1)).max(1.0);
    if denom.abs() <= 1e-12 * scale {
        if qp_x_r.abs() > 1e-12 * scale.max(qp.0.hypot(qp.1)) {
            return Ok(None); // parallel, disjoint lines
        }
        // collinear: project q endpoints onto p
        let rr = r.0 * r.0 + r.1 * r.1;
        let t0 = (qp.0 * r.0 + qp.1 * r.1) / rr;
        let t1 = t0 + (s.0 * r.0 + s.1 * r.1) / rr;
        let (lo, hi) = (t0.min(t1).max(0.0), t0.max(t1).min(1.0));
        let overlap = (hi - lo) * rr.sqrt();
        if hi < lo - GEOM_EPS {
            return Ok(None);
        }
        if overlap > GEOM_EPS {
            return Err(Collinear);
        }
        // touching end to end
        let t = lo.clamp(0.0, 1.0);
        let pt = p0.lerp(p1, t);
        let ss = s.0 * s.0 + s.1 * s.1;
        let u = ((pt.x - q0.x) * s.0 + (pt.y - q0.y) * s.1) / ss;
        return Ok(Some((t, u.clamp(0.0, 1.0))));
    }
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = qp_x_r / denom;
    let tol = 1e-12;
    if (-tol..=1.0 + tol).contains(&t) && (-tol..=1.0 + tol).contains(&u) {
        Ok(Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0))))
    } else {
        Ok(None)
    }
}

/// Nearest crossing of `route_o` and `route_i` strictly ahead of an ownship at
/// arc `s_o`. Returns `(remaining ownship distance, crossing arc on route_i)`.
pub fn next_shared_intersection(
    sector: &SectorConfig,
    route_o: RouteId,
    s_o: f64,
    route_i: RouteId,
) -> Option<(f64, f64)> {
    sector
        .intersections_between(route_o, route_i)
        .filter_map(|x| {
            let so = x.arc_on(route_o)?;
            let si = x.arc_on(route_i)?;
            (so > s_o).then_some((so - s_o, si))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
}
