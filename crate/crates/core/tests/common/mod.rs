//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;

use airsep::geometry::{build_sector, Point, RouteId, SectorConfig, SectorParams, SectorSpec};
use airsep::sim::{Action, AircraftId, AircraftState, SimState};

/// Crossing found by brute force: `(route_a, route_b, point, s_a, s_b)` with
/// `route_a < route_b`.
pub type Crossing = (RouteId, RouteId, Point, f64, f64);

/// Every crossing of every segment pair, solved by Cramer's rule and walked
/// back to arc lengths. Crossings at shared vertices are reported once.
pub fn brute_force_intersections(sector: &SectorConfig) -> Vec<Crossing> {
    let mut out: Vec<Crossing> = Vec::new();
    for (i, ra) in sector.routes.iter().enumerate() {
        for rb in &sector.routes[i + 1..] {
            let mut arc_a = 0.0;
            for wa in ra.waypoints.windows(2) {
                let len_a = (wa[1].x - wa[0].x).hypot(wa[1].y - wa[0].y);
                let mut arc_b = 0.0;
                for wb in rb.waypoints.windows(2) {
                    let len_b = (wb[1].x - wb[0].x).hypot(wb[1].y - wb[0].y);
                    // wa0 + t (wa1 - wa0) = wb0 + u (wb1 - wb0)
                    let (a11, a12) = (wa[1].x - wa[0].x, -(wb[1].x - wb[0].x));
                    let (a21, a22) = (wa[1].y - wa[0].y, -(wb[1].y - wb[0].y));
                    let (c1, c2) = (wb[0].x - wa[0].x, wb[0].y - wa[0].y);
                    let det = a11 * a22 - a12 * a21;
                    if det.abs() > 1e-12 {
                        let t = (c1 * a22 - a12 * c2) / det;
                        let u = (a11 * c2 - c1 * a21) / det;
                        let tol = 1e-12;
                        if (-tol..=1.0 + tol).contains(&t) && (-tol..=1.0 + tol).contains(&u) {
                            let (t, u) = (t.clamp(0.0, 1.0), u.clamp(0.0, 1.0));
                            let p = Point::new(wa[0].x + t * a11, wa[0].y + t * a21);
                            let (s_a, s_b) = (arc_a + t * len_a, arc_b + u * len_b);
                            let dup = out.iter().any(|c| {
                                c.0 == ra.id && c.1 == rb.id && (c.3 - s_a).abs() < 1e-7 && (c.4 - s_b).abs() < 1e-7
                            });
                            if !dup {
                                out.push((ra.id, rb.id, p, s_a, s_b));
                            }
                        }
                    }
                    arc_b += len_b;
                }
                arc_a += len_a;
            }
        }
    }
    out
}

/// Largest mismatch between the sector's crossing table and the brute-force
/// list, or an error describing a count or pairing difference.
pub fn compare_intersections(sector: &SectorConfig) -> Result<f64, String> {
    let mut expected = brute_force_intersections(sector);
    let got = &sector.intersections;
    if got.len() != expected.len() {
        return Err(format!(
            "sector {}: {} crossings enumerated, brute force finds {}",
            sector.name,
            got.len(),
            expected.len()
        ));
    }
    let mut worst = 0.0f64;
    for x in got {
        let k = expected
            .iter()
            .position(|c| c.0 == x.route_a && c.1 == x.route_b && (c.3 - x.s_a).abs() < 1e-6)
            .ok_or_else(|| format!("sector {}: crossing {x:?} not found by brute force", sector.name))?;
        let c = expected.swap_remove(k);
        worst = worst
            .max((c.2.x - x.point.x).abs())
            .max((c.2.y - x.point.y).abs())
            .max((c.3 - x.s_a).abs())
            .max((c.4 - x.s_b).abs());
    }
    let order_ok = got
        .windows(2)
        .all(|w| (w[0].route_a, w[0].route_b) < (w[1].route_a, w[1].route_b) || ((w[0].route_a, w[0].route_b) == (w[1].route_a, w[1].route_b) && w[0].s_a <= w[1].s_a));
    if !order_ok {
        return Err(format!("sector {}: crossings not ordered by (route_a, route_b, s_a)", sector.name));
    }
    Ok(worst)
}

pub fn random_sector<R: Rng>(rng: &mut R, name: &str) -> Option<SectorConfig> {
    let n_routes = rng.gen_range(2..=4);
    let routes = (0..n_routes)
        .map(|id| {
            let n = rng.gen_range(2..=4);
            let wps = (0..n)
                .map(|_| Point::new(rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0)))
                .collect();
            (id as RouteId, wps)
        })
        .collect();
    build_sector(&SectorSpec {
        name: name.into(),
        routes,
        params: SectorParams::default(),
    })
    .ok()
}

/// Random active aircraft spread over the sector's routes.
pub fn random_aircraft<R: Rng>(rng: &mut R, sector: &SectorConfig, n: usize) -> Vec<AircraftState> {
    (0..n)
        .map(|id| {
            let route_index = rng.gen_range(0..sector.routes.len());
            let len = sector.routes[route_index].length();
            AircraftState {
                id: id as AircraftId,
                route_index,
                s: rng.gen_range(0.0..len),
                v: rng.gen_range(220.0..280.0),
                v_cmd: 250.0,
                a: 0.0,
                spawn_time: 0,
                active: rng.gen_bool(0.85),
                exited: false,
                ever_in_los: false,
            }
        })
        .collect()
}

/// Expected intruder rows `(id, d_int_own, d_int_intruder)` for `own`,
/// straight from the filter rules: same route, or a crossing route whose next
/// crossing (ahead of the ownship) the intruder has not reached.
pub fn brute_force_filter(sector: &SectorConfig, aircraft: &[AircraftState], own: &AircraftState) -> Vec<(AircraftId, f64, f64)> {
    let crossings = brute_force_intersections(sector);
    let own_route = &sector.routes[own.route_index];
    let mut out = Vec::new();
    for other in aircraft {
        if !other.active || other.id == own.id {
            continue;
        }
        if other.route_index == own.route_index {
            out.push((other.id, own_route.length(), own_route.length()));
            continue;
        }
        let other_route = &sector.routes[other.route_index];
        let mut best: Option<(f64, f64)> = None;
        for c in &crossings {
            let (so, si) = if c.0 == own_route.id && c.1 == other_route.id {
                (c.3, c.4)
            } else if c.1 == own_route.id && c.0 == other_route.id {
                (c.4, c.3)
            } else {
                continue;
            };
            if so > own.s && best.map_or(true, |b| so - own.s < b.0) {
                best = Some((so - own.s, si));
            }
        }
        if let Some((d_own, si)) = best {
            if other.s < si {
                out.push((other.id, d_own, si - other.s));
            }
        }
    }
    out
}

/// Runs `states` random filter checks; returns the number of mismatches and
/// the first one described.
pub fn filter_mismatches<R: Rng>(rng: &mut R, states: usize) -> (usize, Option<String>) {
    let mut bad = 0;
    let mut first = None;
    let mut done = 0;
    while done < states {
        let Some(sector) = random_sector(rng, "random") else { continue };
        let sector = Arc::new(sector);
        for _ in 0..20 {
            if done == states {
                break;
            }
            let n = rng.gen_range(1..=12);
            let aircraft = random_aircraft(rng, &sector, n);
            let Some(own) = aircraft.iter().find(|a| a.active) else { continue };
            done += 1;
            let obs = airsep::sim::build_observation(&sector, &aircraft, own);
            let expected = brute_force_filter(&sector, &aircraft, own);
            let got_ids: BTreeSet<AircraftId> = obs.intruders.iter().map(|i| i.id).collect();
            let want_ids: BTreeSet<AircraftId> = expected.iter().map(|e| e.0).collect();
            let fields_ok = expected.iter().all(|&(id, d_own, d_int)| {
                obs.intruders
                    .iter()
                    .find(|i| i.id == id)
                    .is_some_and(|i| (i.d_int_own - d_own).abs() < 1e-9 && (i.d_int_intruder - d_int).abs() < 1e-9)
            });
            if got_ids != want_ids || !fields_ok {
                bad += 1;
                if first.is_none() {
                    first = Some(format!("ownship {} : got {got_ids:?}, expected {expected:?}", own.id));
                }
            }
        }
    }
    (bad, first)
}

/// Plays one episode with a fixed action per step; returns (score, LOS events,
/// min spacing over all sub-step checks at decision times).
pub fn play(sector: Arc<SectorConfig>, n_total: usize, seed: u64, pick: impl Fn(AircraftId, u32) -> Action) -> (usize, usize, f64) {
    let (mut state, _) = SimState::reset(sector, n_total, seed).unwrap();
    let mut min_gap = f64::INFINITY;
    while !state.is_terminal() {
        let ids = state.active_ids();
        if ids.is_empty() {
            state.idle_step().unwrap();
            continue;
        }
        let actions: BTreeMap<AircraftId, Action> = ids.iter().map(|&id| (id, pick(id, state.clock))).collect();
        state.step(&actions).unwrap();
        for id in state.active_ids() {
            if let Some(d) = state.closest_distance(id) {
                min_gap = min_gap.min(d);
            }
        }
    }
    (state.episode_score().unwrap(), state.los_events(), min_gap)
}
