//! Scenes, agents, trajectories and prediction records.
//!
//! All record types validate their invariants on construction and are
//! immutable afterwards.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::geom::Vec2;
use crate::mixture::InverseCovariance;
use crate::{Error, Result};

/// Predicted steps per trajectory (8 s at 2 Hz).
pub const HORIZON_STEPS: usize = 16;
/// Seconds between predicted steps.
pub const STEP_SECONDS: f64 = 0.5;
/// Known history points (1 s at 10 Hz).
pub const HISTORY_STEPS: usize = 10;
/// Modes emitted per agent by a raw predictor.
pub const NUM_MODES: usize = 6;
/// Tolerance on `Σ p = 1`.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Timestamp in seconds of predicted step `k` (0-based).
pub fn step_time(k: usize) -> f64 {
    STEP_SECONDS * (k + 1) as f64
}

/// Evaluation checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Horizon {
    S3,
    S5,
    S8,
}

impl Horizon {
    pub const ALL: [Horizon; 3] = [Horizon::S3, Horizon::S5, Horizon::S8];

    pub fn seconds(self) -> f64 {
        match self {
            Horizon::S3 => 3.0,
            Horizon::S5 => 5.0,
            Horizon::S8 => 8.0,
        }
    }

    /// Index of the checkpoint in a [`Trajectory`].
    pub fn index(self) -> usize {
        match self {
            Horizon::S3 => 5,
            Horizon::S5 => 9,
            Horizon::S8 => 15,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Horizon::S3 => "3s",
            Horizon::S5 => "5s",
            Horizon::S8 => "8s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Pedestrian, AgentType::Cyclist];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Cyclist => "cyclist",
        }
    }

    /// Generator default collision-disc radius in meters.
    pub fn default_radius(self) -> f64 {
        match self {
            AgentType::Vehicle => 2.0,
            AgentType::Pedestrian => 0.4,
            AgentType::Cyclist => 0.8,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vehicle" => Ok(AgentType::Vehicle),
            "pedestrian" => Ok(AgentType::Pedestrian),
            "cyclist" => Ok(AgentType::Cyclist),
            other => Err(Error::invalid("type", format!("unknown agent type `{other}`"))),
        }
    }
}

/// Sixteen future positions at 2 Hz, `t_k = 0.5 (k + 1)` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory([Vec2; HORIZON_STEPS]);

impl Trajectory {
    pub fn new(points: &[Vec2]) -> Result<Self> {
        let arr: [Vec2; HORIZON_STEPS] = points
            .try_into()
            .map_err(|_| Error::TrajectoryLength(points.len()))?;
        Self::from_array(arr)
    }

    pub fn from_array(points: [Vec2; HORIZON_STEPS]) -> Result<Self> {
        if points.iter().all(|p| p.is_finite()) {
            Ok(Self(points))
        } else {
            Err(Error::NonFinite("trajectory"))
        }
    }

    /// Build from a per-step closure; panics on non-finite output.
    pub(crate) fn from_fn(f: impl FnMut(usize) -> Vec2) -> Self {
        let t = Self(core::array::from_fn(f));
        debug_assert!(t.0.iter().all(|p| p.is_finite()));
        t
    }

    pub fn points(&self) -> &[Vec2; HORIZON_STEPS] {
        &self.0
    }

    pub fn at(&self, k: usize) -> Vec2 {
        self.0[k]
    }

    pub fn last(&self) -> Vec2 {
        self.0[HORIZON_STEPS - 1]
    }

    /// Apply `f` to every point.
    pub fn map(&self, mut f: impl FnMut(Vec2) -> Vec2) -> Self {
        Self::from_fn(|k| f(self.0[k]))
    }
}

/// Motion direction of `traj` over the step ending at `k`; falls back to
/// `fallback` when that step moved less than 1 cm. For `k = 0` the step
/// starts at `start`.
pub fn step_direction(traj: &Trajectory, start: Vec2, k: usize, fallback: f64) -> f64 {
    let prev = if k == 0 { start } else { traj.at(k - 1) };
    let d = traj.at(k) - prev;
    if d.norm() < 0.01 {
        fallback
    } else {
        d.angle()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    id: String,
    agent_type: AgentType,
    position: Vec2,
    heading: f64,
    speed: f64,
    radius: f64,
    history: [Vec2; HISTORY_STEPS],
    interesting: bool,
}

impl AgentState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        agent_type: AgentType,
        position: Vec2,
        heading: f64,
        speed: f64,
        radius: f64,
        history: &[Vec2],
        interesting: bool,
    ) -> Result<Self> {
        let history: [Vec2; HISTORY_STEPS] = history
            .try_into()
            .map_err(|_| Error::HistoryLength(history.len()))?;
        if !position.is_finite() || history.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("agent position/history"));
        }
        if !heading.is_finite() {
            return Err(Error::NonFinite("heading0"));
        }
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(Error::invalid("v0", format!("speed {speed} must be ≥ 0")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("radius", format!("radius {radius} must be > 0")));
        }
        Ok(Self {
            id: id.into(),
            agent_type,
            position,
            heading,
            speed,
            radius,
            history,
            interesting,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn agent_type(&self) -> AgentType {
        self.agent_type
    }
    pub fn position(&self) -> Vec2 {
        self.position
    }
    pub fn heading(&self) -> f64 {
        self.heading
    }
    pub fn speed(&self) -> f64 {
        self.speed
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn history(&self) -> &[Vec2; HISTORY_STEPS] {
        &self.history
    }
    pub fn interesting(&self) -> bool {
        self.interesting
    }

    pub fn context(&self) -> AgentContext {
        AgentContext {
            agent_type: self.agent_type,
            start: self.position,
            heading: self.heading,
            speed: self.speed,
        }
    }
}

/// The per-agent quantities that metrics, covariance schedules and mode
/// processing depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentContext {
    pub agent_type: AgentType,
    pub start: Vec2,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    scene_id: String,
    agents: Vec<AgentState>,
    ground_truth: BTreeMap<String, Trajectory>,
    interacting_pair: Option<(String, String)>,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        agents: Vec<AgentState>,
        ground_truth: BTreeMap<String, Trajectory>,
        interacting_pair: Option<(String, String)>,
    ) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for a in &agents {
            if !ids.insert(a.id()) {
                return Err(Error::DuplicateAgent(a.id.clone()));
            }
        }
        if let Some(k) = ground_truth.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::UnknownAgent(k.clone()));
        }
        if let Some((a, b)) = &interacting_pair {
            if a == b {
                return Err(Error::invalid("interacting_pair", "ids must be distinct"));
            }
            for id in [a, b] {
                if !ids.contains(id.as_str()) {
                    return Err(Error::UnknownAgent(id.clone()));
                }
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            agents,
            ground_truth,
            interacting_pair,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }
    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }
    pub fn agent(&self, id: &str) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }
    pub fn ground_truth(&self) -> &BTreeMap<String, Trajectory> {
        &self.ground_truth
    }
    pub fn gt(&self, id: &str) -> Option<&Trajectory> {
        self.ground_truth.get(id)
    }
    pub fn interacting_pair(&self) -> Option<(&str, &str)> {
        self.interacting_pair
            .as_ref()
            .map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

/// Per-step `(a, b, c)` covariance parameters of one mode.
pub type CovParams = [InverseCovariance; HORIZON_STEPS];

#[derive(Debug, Clone, PartialEq)]
pub struct ModePrediction {
    mean: Trajectory,
    cov: Option<Box<CovParams>>,
    prob: f64,
}

impl ModePrediction {
    pub fn new(mean: Trajectory, cov: Option<&[InverseCovariance]>, prob: f64) -> Result<Self> {
        let cov = match cov {
            None => None,
            Some(c) => {
                let arr: CovParams = c.try_into().map_err(|_| Error::CovarianceLength(c.len()))?;
                if arr.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite("cov"));
                }
                Some(Box::new(arr))
            }
        };
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::invalid("prob", format!("{prob} outside [0, 1]")));
        }
        Ok(Self { mean, cov, prob })
    }

    pub fn mean(&self) -> &Trajectory {
        &self.mean
    }
    pub fn cov(&self) -> Option<&CovParams> {
        self.cov.as_deref()
    }
    pub fn prob(&self) -> f64 {
        self.prob
    }

    pub(crate) fn with_prob(&self, prob: f64) -> Self {
        Self {
            prob,
            ..self.clone()
        }
    }

    pub(crate) fn with_mean(&self, mean: Trajectory) -> Self {
        Self {
            mean,
            ..self.clone()
        }
    }
}

fn check_probs(probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("prob", format!("{p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Normalization(sum));
    }
    Ok(())
}

/// Up to six modes for one agent with normalized probabilities.
///
/// Raw predictors emit exactly [`NUM_MODES`]; greedy mode processing may
/// return fewer.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    scene_id: String,
    agent_id: String,
    modes: Vec<ModePrediction>,
}

impl PredictionSet {
    pub fn new(
        scene_id: impl Into<String>,
        agent_id: impl Into<String>,
        modes: Vec<ModePrediction>,
    ) -> Result<Self> {
        if modes.is_empty() || modes.len() > NUM_MODES {
            return Err(Error::ModeCount(modes.len()));
        }
        check_probs(modes.iter().map(|m| m.prob))?;
        Ok(Self {
            scene_id: scene_id.into(),
            agent_id: agent_id.into(),
            modes,
        })
    }

    /// Build from unnormalized non-negative weights, applying `p → p / Σp`.
    pub fn from_weights(
        scene_id: impl Into<String>,
        agent_id: impl Into<String>,
        modes: Vec<(Trajectory, Option<Vec<InverseCovariance>>, f64)>,
    ) -> Result<Self> {
        let total: f64 = modes.iter().map(|m| m.2).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::ZeroProbability);
        }
        let modes = modes
            .into_iter()
            .map(|(t, c, w)| ModePrediction::new(t, c.as_deref(), w / total))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scene_id, agent_id, modes)
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }
    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }
    pub fn modes(&self) -> &[ModePrediction] {
        &self.modes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointMode {
    pub traj_a: Trajectory,
    pub traj_b: Trajectory,
    pub prob: f64,
}

/// Shared-probability futures for an interacting pair.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPredictionSet {
    scene_id: String,
    pair: (String, String),
    modes: Vec<JointMode>,
    degenerate: bool,
}

impl JointPredictionSet {
    pub fn new(
        scene_id: impl Into<String>,
        pair: (String, String),
        modes: Vec<JointMode>,
        degenerate: bool,
    ) -> Result<Self> {
        if modes.is_empty() || modes.len() > NUM_MODES {
            return Err(Error::ModeCount(modes.len()));
        }
        if pair.0 == pair.1 {
            return Err(Error::invalid("pair", "ids must be distinct"));
        }
        check_probs(modes.iter().map(|m| m.prob))?;
        Ok(Self {
            scene_id: scene_id.into(),
            pair,
            modes,
            degenerate,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }
    pub fn pair(&self) -> (&str, &str) {
        (&self.pair.0, &self.pair.1)
    }
    pub fn modes(&self) -> &[JointMode] {
        &self.modes
    }
    /// Set when every combination collided and the fallback was used.
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }
}
