//! Parametric motion primitives.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geom::Vec2;
use crate::scene::{AgentType, Trajectory, HISTORY_STEPS, HORIZON_STEPS, STEP_SECONDS};

const SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ManeuverKind {
    Straight,
    Slow,
    Left,
    Right,
    Stop,
    UTurn,
    LaneChangeLeft,
    LaneChangeRight,
    /// Lane of a constructed fan fixture (index from the rightmost lane).
    Lane(u8),
}

impl ManeuverKind {
    /// The six components every generated agent mixes over.
    pub const MIXTURE: [ManeuverKind; 6] = [
        ManeuverKind::Straight,
        ManeuverKind::Slow,
        ManeuverKind::Left,
        ManeuverKind::Right,
        ManeuverKind::Stop,
        ManeuverKind::UTurn,
    ];
}

/// Speed and yaw profile of one maneuver. Times are seconds after t = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maneuver {
    pub kind: ManeuverKind,
    pub v0: f64,
    /// Speed held after the transition.
    pub final_speed: f64,
    /// Duration of the linear speed transition starting at t = 0.
    pub speed_ramp: f64,
    /// Net heading change (radians, counter-clockwise positive).
    pub turn: f64,
    pub turn_start: f64,
    pub turn_duration: f64,
    /// Lateral shift with zero net heading change (lane change), meters.
    pub shift: f64,
}

impl Maneuver {
    fn base(kind: ManeuverKind, v0: f64) -> Self {
        Self {
            kind,
            v0,
            final_speed: v0,
            speed_ramp: 1.0,
            turn: 0.0,
            turn_start: 0.0,
            turn_duration: 1.0,
            shift: 0.0,
        }
    }

    fn speed(&self, t: f64) -> f64 {
        let frac = (t / self.speed_ramp).clamp(0.0, 1.0);
        self.v0 + (self.final_speed - self.v0) * frac
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        let u = (t - self.turn_start) / self.turn_duration;
        if !(0.0..1.0).contains(&u) {
            return 0.0;
        }
        let mut w = self.turn / self.turn_duration;
        if self.shift != 0.0 {
            // One full sine period of yaw: no net heading change.
            let v = self.speed(t).max(0.1);
            let peak = 2.0 * PI * self.shift / (self.turn_duration * self.turn_duration * v);
            w += peak * libm::sin(2.0 * PI * u);
        }
        w
    }

    /// Future positions at the 16 checkpoints from `start` with `heading0`.
    pub fn trajectory(&self, start: Vec2, heading0: f64) -> Trajectory {
        let dt = STEP_SECONDS / SUBSTEPS as f64;
        let (mut p, mut h) = (start, heading0);
        let mut pts = [Vec2::ZERO; HORIZON_STEPS];
        for (k, slot) in pts.iter_mut().enumerate() {
            for s in 0..SUBSTEPS {
                let t = k as f64 * STEP_SECONDS + (s as f64 + 0.5) * dt;
                let hm = h + 0.5 * dt * self.yaw_rate(t);
                p += Vec2::from_angle(hm) * (self.speed(t) * dt);
                h += dt * self.yaw_rate(t);
            }
            *slot = p;
        }
        Trajectory::from_fn(|k| pts[k])
    }

    /// Upper bound of the speed profile.
    pub fn max_speed(&self) -> f64 {
        self.v0.max(self.final_speed)
    }
}

/// Speed range, gt noise and turning speed per agent type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeProfile {
    pub speed: (f64, f64),
    pub turn_speed: f64,
    /// Per-step std of the random-walk perturbation applied to ground truth.
    pub gt_noise: f64,
    pub lane_width: f64,
}

impl TypeProfile {
    pub fn of(t: AgentType) -> Self {
        match t {
            AgentType::Vehicle => Self {
                speed: (3.0, 15.0),
                turn_speed: 7.0,
                gt_noise: 0.12,
                lane_width: 3.5,
            },
            AgentType::Pedestrian => Self {
                speed: (0.5, 2.0),
                turn_speed: 1.2,
                gt_noise: 0.04,
                lane_width: 1.5,
            },
            AgentType::Cyclist => Self {
                speed: (2.0, 7.0),
                turn_speed: 3.5,
                gt_noise: 0.08,
                lane_width: 2.0,
            },
        }
    }
}

/// Generators for the maneuver set of one agent type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverLibrary {
    pub agent_type: AgentType,
    pub profile: TypeProfile,
}

impl ManeuverLibrary {
    pub fn new(agent_type: AgentType) -> Self {
        Self {
            agent_type,
            profile: TypeProfile::of(agent_type),
        }
    }

    pub fn maneuver(&self, kind: ManeuverKind, v0: f64) -> Maneuver {
        let turn_v = v0.min(self.profile.turn_speed);
        let mut m = Maneuver::base(kind, v0);
        match kind {
            ManeuverKind::Straight | ManeuverKind::Lane(_) => {}
            ManeuverKind::Slow => {
                m.final_speed = 0.5 * v0;
                m.speed_ramp = 4.0;
            }
            ManeuverKind::Left | ManeuverKind::Right => {
                m.final_speed = turn_v;
                m.speed_ramp = 1.5;
                m.turn = if kind == ManeuverKind::Left { 0.5 * PI } else { -0.5 * PI };
                m.turn_start = 1.0;
                m.turn_duration = 3.0;
            }
            ManeuverKind::Stop => {
                m.final_speed = 0.0;
                m.speed_ramp = 3.0;
            }
            ManeuverKind::UTurn => {
                m.final_speed = turn_v.min(0.6 * self.profile.turn_speed);
                m.speed_ramp = 2.0;
                m.turn = 0.95 * PI;
                m.turn_start = 1.5;
                m.turn_duration = 4.0;
            }
            ManeuverKind::LaneChangeLeft | ManeuverKind::LaneChangeRight => {
                let sign = if kind == ManeuverKind::LaneChangeLeft { 1.0 } else { -1.0 };
                m.shift = sign * self.profile.lane_width;
                m.turn_start = 1.0;
                m.turn_duration = 4.0;
            }
        }
        m
    }

    /// Deterministic mixture weights over [`ManeuverKind::MIXTURE`] for an
    /// agent of this type at speed `v0`.
    pub fn mixture_weights(&self, v0: f64) -> [f64; 6] {
        let mut w = match self.agent_type {
            AgentType::Vehicle => [0.40, 0.15, 0.14, 0.14, 0.12, 0.05],
            AgentType::Pedestrian => [0.35, 0.20, 0.15, 0.15, 0.10, 0.05],
            AgentType::Cyclist => [0.38, 0.16, 0.15, 0.15, 0.10, 0.06],
        };
        // Fast agents turn and reverse less often.
        let (lo, hi) = self.profile.speed;
        let fast = ((v0 - lo) / (hi - lo)).clamp(0.0, 1.0);
        w[2] *= 1.0 - 0.4 * fast;
        w[3] *= 1.0 - 0.4 * fast;
        w[5] *= 1.0 - 0.7 * fast;
        let s: f64 = w.iter().sum();
        w.map(|x| x / s)
    }
}

/// Constant-velocity past at 10 Hz ending just before t = 0, oldest first.
pub fn cv_history(start: Vec2, heading: f64, v0: f64) -> Vec<Vec2> {
    let u = Vec2::from_angle(heading);
    (0..HISTORY_STEPS)
        .map(|j| start - u * (v0 * 0.1 * (HISTORY_STEPS - j) as f64))
        .collect()
}

/// Largest displacement between consecutive checkpoints (from `start`).
pub fn max_step(traj: &Trajectory, start: Vec2) -> f64 {
    (0..HORIZON_STEPS)
        .map(|k| {
            let prev = if k == 0 { start } else { traj.at(k - 1) };
            (traj.at(k) - prev).norm()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::wrap_angle;
    use crate::metrics::{bucket_of, DirectionBucket};

    #[test]
    fn continuity() {
        for t in AgentType::ALL {
            let lib = ManeuverLibrary::new(t);
            for kind in ManeuverKind::MIXTURE {
                let m = lib.maneuver(kind, lib.profile.speed.1);
                let traj = m.trajectory(Vec2::new(3.0, -2.0), 0.4);
                assert!(max_step(&traj, Vec2::new(3.0, -2.0)) <= m.max_speed() * STEP_SECONDS + 1e-9);
            }
        }
    }

    #[test]
    fn kinds_land_in_expected_buckets() {
        let lib = ManeuverLibrary::new(AgentType::Vehicle);
        let start = Vec2::new(1.0, 1.0);
        let cases = [
            (ManeuverKind::Straight, DirectionBucket::Straight),
            (ManeuverKind::Left, DirectionBucket::Left),
            (ManeuverKind::Right, DirectionBucket::Right),
            (ManeuverKind::UTurn, DirectionBucket::UTurnLeft),
            (ManeuverKind::LaneChangeLeft, DirectionBucket::StraightLeft),
            (ManeuverKind::LaneChangeRight, DirectionBucket::StraightRight),
        ];
        for (kind, bucket) in cases {
            let traj = lib.maneuver(kind, 8.0).trajectory(start, 0.3);
            assert_eq!(bucket_of(&traj, start, 0.3), bucket, "{kind:?}");
        }
        let stop = lib.maneuver(ManeuverKind::Stop, 0.5).trajectory(start, 0.3);
        assert_eq!(bucket_of(&stop, start, 0.3), DirectionBucket::Stationary);
    }

    #[test]
    fn lane_change_has_no_net_turn() {
        let lib = ManeuverLibrary::new(AgentType::Vehicle);
        let traj = lib.maneuver(ManeuverKind::LaneChangeLeft, 10.0).trajectory(Vec2::ZERO, 0.0);
        let d = traj.at(15) - traj.at(14);
        assert!(wrap_angle(d.angle()).abs() < 1e-3);
        assert!((traj.last().y - 3.5).abs() < 0.3, "{}", traj.last().y);
    }

    #[test]
    fn weights_normalized() {
        for t in AgentType::ALL {
            let w = ManeuverLibrary::new(t).mixture_weights(5.0);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
