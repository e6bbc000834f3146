//! Sampled paths and their occupation-time accumulators.
//!
//! A chain path is a sequence of sojourns (exact in distribution); a
//! diffusion path is an Euler grid. The occupation time
//! `occ(t) = integral_0^t 1_C(X_s) ds` is computed exactly for jump paths
//! and by the left-endpoint rule for grid paths. It is non-decreasing and
//! 1-Lipschitz, which is what makes occupation-clock crossing times
//! solvable in closed form within a sojourn.

use super::TargetSet;

/// A cadlag sample path on `[0, horizon]`.
#[derive(Debug, Clone)]
pub enum Trajectory {
    /// Jump times (first entry 0.0) with the state holding from each time
    /// until the next jump (or the horizon).
    JumpPath {
        times: Vec<f64>,
        states: Vec<usize>,
        horizon: f64,
    },
    /// Euler grid: `positions[k]` at time `k * step`, left-continuous reads.
    GridPath { step: f64, positions: Vec<f64> },
}

/// One constant piece of a path: `[t0, t1)` with its C-membership.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub in_c: bool,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        match self {
            Trajectory::JumpPath { horizon, .. } => *horizon,
            Trajectory::GridPath { step, positions } => {
                step * positions.len().saturating_sub(1) as f64
            }
        }
    }

    /// Occupation time of `target` on `[0, t]`.
    pub fn occupation_in_c(&self, target: &TargetSet, t: f64) -> f64 {
        let mut occ = 0.0;
        for seg in self.segments(target) {
            if seg.t0 >= t {
                break;
            }
            if seg.in_c {
                occ += (seg.t1.min(t) - seg.t0).max(0.0);
            }
        }
        occ
    }

    /// Piecewise-constant segmentation by C-membership, truncated at the horizon.
    pub fn segments<'a>(&'a self, target: &'a TargetSet) -> OccupationSegments<'a> {
        OccupationSegments {
            traj: self,
            target,
            idx: 0,
        }
    }
}

/// Iterator over `Segment`s of a trajectory.
pub struct OccupationSegments<'a> {
    traj: &'a Trajectory,
    target: &'a TargetSet,
    idx: usize,
}

impl Iterator for OccupationSegments<'_> {
    type Item = Segment;

    fn next(&mut self) -> Option<Segment> {
        match self.traj {
            Trajectory::JumpPath {
                times,
                states,
                horizon,
            } => {
                if self.idx >= times.len() {
                    return None;
                }
                let t0 = times[self.idx];
                let t1 = if self.idx + 1 < times.len() {
                    times[self.idx + 1]
                } else {
                    *horizon
                };
                let in_c = self.target.contains_state(states[self.idx]);
                self.idx += 1;
                if t1 <= t0 {
                    return self.next();
                }
                Some(Segment { t0, t1, in_c })
            }
            Trajectory::GridPath { step, positions } => {
                if self.idx + 1 >= positions.len() {
                    return None;
                }
                let t0 = self.idx as f64 * step;
                let t1 = (self.idx + 1) as f64 * step;
                let in_c = self.target.contains_point(positions[self.idx]);
                self.idx += 1;
                Some(Segment { t0, t1, in_c })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TargetSet;

    fn jump_path() -> Trajectory {
        // state 0 on [0,1), 1 on [1,2.5), 0 on [2.5,4)
        Trajectory::JumpPath {
            times: vec![0.0, 1.0, 2.5],
            states: vec![0, 1, 0],
            horizon: 4.0,
        }
    }

    #[test]
    fn occupation_exact_on_jump_path() {
        let c = TargetSet::states(vec![0]).unwrap();
        let p = jump_path();
        assert_eq!(p.occupation_in_c(&c, 0.5), 0.5);
        assert_eq!(p.occupation_in_c(&c, 2.0), 1.0);
        assert_eq!(p.occupation_in_c(&c, 3.0), 1.5);
        assert_eq!(p.occupation_in_c(&c, 4.0), 2.5);
    }

    #[test]
    fn occupation_monotone_and_lipschitz() {
        let c = TargetSet::states(vec![0]).unwrap();
        let p = jump_path();
        let mut prev = 0.0;
        let mut prev_t = 0.0;
        for k in 0..=80 {
            let t = 0.05 * k as f64;
            let o = p.occupation_in_c(&c, t);
            assert!(o >= prev);
            assert!(o - prev <= (t - prev_t) + 1e-12);
            prev = o;
            prev_t = t;
        }
    }

    #[test]
    fn grid_path_left_endpoint_rule() {
        let p = Trajectory::GridPath {
            step: 0.5,
            positions: vec![0.0, 2.0, 0.1, 3.0],
        };
        let c = TargetSet::interval(-1.0, 1.0).unwrap();
        // cells [0,0.5) in C, [0.5,1.0) out, [1.0,1.5) in
        assert_eq!(p.occupation_in_c(&c, 1.5), 1.0);
        assert_eq!(p.occupation_in_c(&c, 0.25), 0.25);
    }
}
