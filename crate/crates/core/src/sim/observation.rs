use serde::{Deserialize, Serialize};

use super::{AircraftId, AircraftState};
use crate::geometry::{euclidean_distance, next_shared_intersection, SectorConfig};

/// Width of the encoded ownship tuple.
pub const OWNSHIP_FEATURES: usize = 5;
/// Width of the encoded intruder tuple.
pub const INTRUDER_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnshipState {
    pub d_goal: f64,
    pub v: f64,
    pub a: f64,
    pub route_index: usize,
    pub d_los: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntruderState {
    pub id: AircraftId,
    pub d_goal: f64,
    pub v: f64,
    pub a: f64,
    pub route_index: usize,
    /// Distance ownship to intruder.
    pub distance: f64,
    /// Ownship distance to the shared crossing (route length for same-route).
    pub d_int_own: f64,
    /// Intruder distance to the shared crossing (route length for same-route).
    pub d_int_intruder: f64,
    pub same_route: bool,
}

/// Divisors applied when turning raw tuples into network features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub distance: f64,
    pub speed: f64,
    pub accel: f64,
    pub route: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: AircraftId,
    pub ownship: OwnshipState,
    pub intruders: Vec<IntruderState>,
    pub norm: Normalizer,
}

impl Observation {
    pub fn ownship_features(&self) -> [f32; OWNSHIP_FEATURES] {
        let (o, n) = (&self.ownship, &self.norm);
        [
            (o.d_goal / n.distance) as f32,
            (o.v / n.speed) as f32,
            (o.a / n.accel) as f32,
            (o.route_index as f64 / n.route) as f32,
            (o.d_los / n.distance) as f32,
        ]
    }

    pub fn intruder_features(&self, k: usize) -> [f32; INTRUDER_FEATURES] {
        let (i, n) = (&self.intruders[k], &self.norm);
        [
            (i.d_goal / n.distance) as f32,
            (i.v / n.speed) as f32,
            (i.a / n.accel) as f32,
            (i.route_index as f64 / n.route) as f32,
            (i.distance / n.distance) as f32,
            (i.d_int_own / n.distance) as f32,
            (i.d_int_intruder / n.distance) as f32,
        ]
    }
}

/// Observation of `own` among `aircraft` (which may include `own` and
/// inactive entries; both are skipped).
pub fn build_observation(
    sector: &SectorConfig,
    aircraft: &[AircraftState],
    own: &AircraftState,
) -> Observation {
    let route = &sector.routes[own.route_index];
    let own_pos = route.position_clamped(own.s);
    let mut intruders = Vec::new();
    for other in aircraft {
        if !other.active || other.id == own.id {
            continue;
        }
        let other_route = &sector.routes[other.route_index];
        let (d_int_own, d_int_intruder, same_route) = if other.route_index == own.route_index {
            (route.length(), route.length(), true)
        } else {
            match next_shared_intersection(sector, route.id, own.s, other_route.id) {
                Some((d_own, s_on_other)) if other.s < s_on_other => {
                    (d_own, s_on_other - other.s, false)
                }
                _ => continue,
            }
        };
        intruders.push(IntruderState {
            id: other.id,
            d_goal: other_route.length() - other.s,
            v: other.v,
            a: other.a,
            route_index: other.route_index,
            distance: euclidean_distance(own_pos, other_route.position_clamped(other.s)),
            d_int_own,
            d_int_intruder,
            same_route,
        });
    }
    let p = &sector.params;
    Observation {
        id: own.id,
        ownship: OwnshipState {
            d_goal: route.length() - own.s,
            v: own.v,
            a: own.a,
            route_index: own.route_index,
            d_los: p.d_los,
        },
        intruders,
        norm: Normalizer {
            distance: route.length(),
            speed: p.v_max,
            accel: p.accel_mag,
            route: (sector.routes.len().max(2) - 1) as f64,
        },
    }
}
