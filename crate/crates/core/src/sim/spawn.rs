use rand::Rng;

use crate::error::{Error, Result};

/// Smallest per-route inter-arrival gap in seconds.
pub const MIN_GAP_S: u32 = 180;
/// Gaps are drawn from `MIN_GAP_S + GAP_STEP_S * k` for `k` in `0..GAP_CHOICES`.
pub const GAP_STEP_S: u32 = 12;
pub const GAP_CHOICES: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpawnSchedule {
    /// Spawn times per route index, ascending, seconds.
    pub per_route: Vec<Vec<u32>>,
    pub n_total: usize,
}

impl SpawnSchedule {
    /// Flattened `(time, aircraft id, route index)` in activation order.
    ///
    /// Aircraft `k` flies route `k % routes`, so ids follow round-robin order.
    pub fn entries(&self) -> Vec<(u32, u32, usize)> {
        let routes = self.per_route.len();
        let mut out: Vec<(u32, u32, usize)> = (0..self.n_total)
            .map(|k| {
                let r = k % routes;
                (self.per_route[r][k / routes], k as u32, r)
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// One aircraft per route at `t = 0`, then round-robin assignment with
/// i.i.d. gaps uniform over {180, 192, ..., 360} s on each route.
pub fn generate_spawn_schedule<R: Rng>(
    rng: &mut R,
    routes: usize,
    n_total: usize,
) -> Result<SpawnSchedule> {
    if routes == 0 || n_total < routes {
        return Err(Error::Sim(format!(
            "need at least one aircraft per route ({routes} routes, n_total = {n_total})"
        )));
    }
    let mut per_route: Vec<Vec<u32>> = vec![vec![0]; routes];
    for k in routes..n_total {
        let times = &mut per_route[k % routes];
        let gap = MIN_GAP_S + GAP_STEP_S * rng.gen_range(0..GAP_CHOICES);
        let last = *times.last().expect("seeded with t = 0");
        times.push(last + gap);
    }
    Ok(SpawnSchedule { per_route, n_total })
}
