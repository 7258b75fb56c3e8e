//! JSON-lines records for scenes, marginal and joint predictions, and the
//! generator's label sidecar.
//!
//! Reading validates every record into the corresponding core type; errors
//! carry the 1-based line number. Blank lines are skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use kraken_core::mixture::InverseCovariance;
use kraken_core::synth::{AgentLabel, Component, LabeledScene, ManeuverKind};
use kraken_core::{
    AgentState, AgentType, JointMode, JointPredictionSet, ModePrediction, PredictionSet, Scene, Trajectory, Vec2,
};

use crate::error::{KrakenError, Result};

type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub agent_type: String,
    pub x0: f64,
    pub y0: f64,
    pub heading0: f64,
    pub v0: f64,
    pub radius: f64,
    pub history: Vec<Point>,
    pub interesting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: String,
    pub agents: Vec<AgentRecord>,
    pub ground_truth: BTreeMap<String, Vec<Point>>,
    pub interacting_pair: Option<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRecord {
    pub prob: f64,
    pub traj: Vec<Point>,
    pub cov: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub agent_id: String,
    pub modes: Vec<ModeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointModeRecord {
    pub prob: f64,
    pub traj_a: Vec<Point>,
    pub traj_b: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub scene_id: String,
    pub pair: [String; 2],
    pub modes: Vec<JointModeRecord>,
    /// Set when no combination survived collision filtering.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentRecord {
    pub kind: String,
    pub prob: f64,
    pub traj: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentLabelRecord {
    pub gt_component: usize,
    pub components: Vec<ComponentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub scene_id: String,
    pub agents: BTreeMap<String, AgentLabelRecord>,
}

fn points(t: &Trajectory) -> Vec<Point> {
    t.points().iter().map(|p| [p.x, p.y]).collect()
}

fn trajectory(pts: &[Point]) -> kraken_core::Result<Trajectory> {
    let v: Vec<Vec2> = pts.iter().map(|&p| Vec2::from(p)).collect();
    Trajectory::new(&v)
}

impl From<&Scene> for SceneRecord {
    fn from(s: &Scene) -> Self {
        Self {
            scene_id: s.scene_id().into(),
            agents: s
                .agents()
                .iter()
                .map(|a| AgentRecord {
                    id: a.id().into(),
                    agent_type: a.agent_type().as_str().into(),
                    x0: a.position().x,
                    y0: a.position().y,
                    heading0: a.heading(),
                    v0: a.speed(),
                    radius: a.radius(),
                    history: a.history().iter().map(|p| [p.x, p.y]).collect(),
                    interesting: a.interesting(),
                })
                .collect(),
            ground_truth: s.ground_truth().iter().map(|(k, t)| (k.clone(), points(t))).collect(),
            interacting_pair: s.interacting_pair().map(|(a, b)| [a.into(), b.into()]),
        }
    }
}

impl TryFrom<SceneRecord> for Scene {
    type Error = kraken_core::Error;

    fn try_from(r: SceneRecord) -> kraken_core::Result<Self> {
        let agents = r
            .agents
            .into_iter()
            .map(|a| {
                let history: Vec<Vec2> = a.history.iter().map(|&p| Vec2::from(p)).collect();
                AgentState::new(
                    a.id,
                    a.agent_type.parse::<AgentType>()?,
                    Vec2::new(a.x0, a.y0),
                    a.heading0,
                    a.v0,
                    a.radius,
                    &history,
                    a.interesting,
                )
            })
            .collect::<kraken_core::Result<Vec<_>>>()?;
        let gt = r
            .ground_truth
            .into_iter()
            .map(|(k, pts)| Ok((k, trajectory(&pts)?)))
            .collect::<kraken_core::Result<BTreeMap<_, _>>>()?;
        Scene::new(r.scene_id, agents, gt, r.interacting_pair.map(|[a, b]| (a, b)))
    }
}

impl From<&PredictionSet> for PredictionRecord {
    fn from(p: &PredictionSet) -> Self {
        Self {
            scene_id: p.scene_id().into(),
            agent_id: p.agent_id().into(),
            modes: p
                .modes()
                .iter()
                .map(|m| ModeRecord {
                    prob: m.prob(),
                    traj: points(m.mean()),
                    cov: m.cov().map(|c| c.iter().map(|l| [l.a, l.b, l.c]).collect()),
                })
                .collect(),
        }
    }
}

impl TryFrom<PredictionRecord> for PredictionSet {
    type Error = kraken_core::Error;

    fn try_from(r: PredictionRecord) -> kraken_core::Result<Self> {
        let modes = r
            .modes
            .iter()
            .map(|m| {
                let cov = m
                    .cov
                    .as_ref()
                    .map(|c| c.iter().map(|&[a, b, c]| InverseCovariance::new(a, b, c)).collect::<kraken_core::Result<Vec<_>>>())
                    .transpose()?;
                ModePrediction::new(trajectory(&m.traj)?, cov.as_deref(), m.prob)
            })
            .collect::<kraken_core::Result<Vec<_>>>()?;
        PredictionSet::new(r.scene_id, r.agent_id, modes)
    }
}

impl From<&JointPredictionSet> for JointRecord {
    fn from(j: &JointPredictionSet) -> Self {
        let (a, b) = j.pair();
        Self {
            scene_id: j.scene_id().into(),
            pair: [a.into(), b.into()],
            modes: j
                .modes()
                .iter()
                .map(|m| JointModeRecord {
                    prob: m.prob,
                    traj_a: points(&m.traj_a),
                    traj_b: points(&m.traj_b),
                })
                .collect(),
            degenerate: j.degenerate(),
        }
    }
}

impl TryFrom<JointRecord> for JointPredictionSet {
    type Error = kraken_core::Error;

    fn try_from(r: JointRecord) -> kraken_core::Result<Self> {
        let modes = r
            .modes
            .iter()
            .map(|m| {
                Ok(JointMode {
                    traj_a: trajectory(&m.traj_a)?,
                    traj_b: trajectory(&m.traj_b)?,
                    prob: m.prob,
                })
            })
            .collect::<kraken_core::Result<Vec<_>>>()?;
        let [a, b] = r.pair;
        JointPredictionSet::new(r.scene_id, (a, b), modes, r.degenerate)
    }
}

pub fn kind_name(k: ManeuverKind) -> String {
    match k {
        ManeuverKind::Straight => "straight".into(),
        ManeuverKind::Slow => "slow".into(),
        ManeuverKind::Left => "left".into(),
        ManeuverKind::Right => "right".into(),
        ManeuverKind::Stop => "stop".into(),
        ManeuverKind::UTurn => "u_turn".into(),
        ManeuverKind::LaneChangeLeft => "lane_change_left".into(),
        ManeuverKind::LaneChangeRight => "lane_change_right".into(),
        ManeuverKind::Lane(j) => format!("lane{j}"),
    }
}

pub fn parse_kind(s: &str) -> Option<ManeuverKind> {
    Some(match s {
        "straight" => ManeuverKind::Straight,
        "slow" => ManeuverKind::Slow,
        "left" => ManeuverKind::Left,
        "right" => ManeuverKind::Right,
        "stop" => ManeuverKind::Stop,
        "u_turn" => ManeuverKind::UTurn,
        "lane_change_left" => ManeuverKind::LaneChangeLeft,
        "lane_change_right" => ManeuverKind::LaneChangeRight,
        other => ManeuverKind::Lane(other.strip_prefix("lane")?.parse().ok()?),
    })
}

impl From<&LabeledScene> for LabelRecord {
    fn from(s: &LabeledScene) -> Self {
        Self {
            scene_id: s.scene.scene_id().into(),
            agents: s
                .labels
                .iter()
                .map(|(id, l)| {
                    let rec = AgentLabelRecord {
                        gt_component: l.gt_component,
                        components: l
                            .components
                            .iter()
                            .map(|c| ComponentRecord {
                                kind: kind_name(c.kind),
                                prob: c.prob,
                                traj: points(&c.mean),
                            })
                            .collect(),
                    };
                    (id.clone(), rec)
                })
                .collect(),
        }
    }
}

fn label_from_record(r: &AgentLabelRecord) -> kraken_core::Result<AgentLabel> {
    let components = r
        .components
        .iter()
        .map(|c| {
            let kind = parse_kind(&c.kind).ok_or(kraken_core::Error::Invalid {
                field: "kind",
                reason: format!("unknown maneuver `{}`", c.kind),
            })?;
            Ok(Component {
                kind,
                prob: c.prob,
                mean: trajectory(&c.traj)?,
            })
        })
        .collect::<kraken_core::Result<Vec<_>>>()?;
    if r.gt_component >= components.len() {
        return Err(kraken_core::Error::Invalid {
            field: "gt_component",
            reason: format!("{} out of range", r.gt_component),
        });
    }
    Ok(AgentLabel {
        components,
        gt_component: r.gt_component,
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KrakenError::io(path, e))
}

/// Parse and convert each non-blank line of a JSON-lines file.
pub fn read_jsonl<R, T>(path: &Path) -> Result<Vec<T>>
where
    R: DeserializeOwned,
    T: TryFrom<R, Error = kraken_core::Error>,
{
    parse_jsonl(path, &read_to_string(path)?)
}

/// [`read_jsonl`] on in-memory text; `path` is used for messages only.
pub fn parse_jsonl<R, T>(path: &Path, text: &str) -> Result<Vec<T>>
where
    R: DeserializeOwned,
    T: TryFrom<R, Error = kraken_core::Error>,
{
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: R = serde_json::from_str(line).map_err(|source| KrakenError::Parse {
            path: path.into(),
            line: i + 1,
            source,
        })?;
        out.push(T::try_from(rec).map_err(|source| KrakenError::Record {
            path: path.into(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    read_jsonl::<SceneRecord, Scene>(path)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionSet>> {
    read_jsonl::<PredictionRecord, PredictionSet>(path)
}

pub fn read_joint(path: &Path) -> Result<Vec<JointPredictionSet>> {
    read_jsonl::<JointRecord, JointPredictionSet>(path)
}

/// Join scenes with their label sidecar by scene id.
pub fn read_labeled(scenes: &Path, labels: &Path) -> Result<Vec<LabeledScene>> {
    let scenes = read_scenes(scenes)?;
    let text = read_to_string(labels)?;
    let mut by_scene: BTreeMap<String, (usize, LabelRecord)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|source| KrakenError::Parse {
            path: labels.into(),
            line: i + 1,
            source,
        })?;
        by_scene.insert(rec.scene_id.clone(), (i + 1, rec));
    }
    scenes
        .into_iter()
        .map(|scene| {
            let (line, rec) = by_scene.remove(scene.scene_id()).ok_or_else(|| KrakenError::Format {
                path: labels.into(),
                reason: format!("no labels for scene `{}`", scene.scene_id()),
            })?;
            let labels_map = rec
                .agents
                .iter()
                .map(|(id, l)| Ok((id.clone(), label_from_record(l)?)))
                .collect::<kraken_core::Result<BTreeMap<_, _>>>()
                .map_err(|source| KrakenError::Record {
                    path: labels.into(),
                    line,
                    source,
                })?;
            Ok(LabeledScene {
                scene,
                labels: labels_map,
            })
        })
        .collect()
}

/// Write one JSON object per line.
pub fn write_jsonl<R: Serialize>(path: &Path, records: impl IntoIterator<Item = R>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| KrakenError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| KrakenError::io(path, e))?;
    }
    w.flush().map_err(|e| KrakenError::io(path, e))
}

/// Default label sidecar path for a scene file: `x.jsonl` → `x.labels.jsonl`.
pub fn labels_path(scenes: &Path) -> PathBuf {
    let stem = scenes.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    scenes.with_file_name(format!("{stem}.labels.jsonl"))
}
