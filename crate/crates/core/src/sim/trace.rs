//! Per-decision episode trace as CSV.

use std::io::Write;

use super::{AgentTransition, SimState};

pub const TRACE_HEADER: &str = "time_s,aircraft_id,route_id,s_nmi,v_kt,a_kts,action,reward,in_los";

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{TRACE_HEADER}")?;
        Ok(TraceWriter { out })
    }

    /// One row per acting agent, describing its post-step kinematics.
    pub fn record(&mut self, state: &SimState, transitions: &[AgentTransition]) -> std::io::Result<()> {
        for t in transitions {
            let Some(ac) = state.aircraft(t.id) else { continue };
            let route_id = state.sector.routes[ac.route_index].id;
            let in_los = t.closest.is_some_and(|d| d < state.reward.d_los);
            writeln!(
                self.out,
                "{},{},{},{:.6},{:.3},{:.3},{},{:.6},{}",
                state.clock,
                t.id,
                route_id,
                ac.s,
                ac.v,
                ac.a,
                t.action.name(),
                t.reward,
                in_los as u8
            )?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
