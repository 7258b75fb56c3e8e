//! Command-line driver. All randomness derives from `--seed`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use kraken_core::gmp::{greedy_process, CoincidenceCriterion, GmpConfig, MergeStrategy};
use kraken_core::joint::{joint_predict, CollisionCriterion, JointConfig, PairAgents};
use kraken_core::metrics::{joint_map_score, map_score, DuplicatePolicy, EvalConfig, MetricReport, WindowConfig};
use kraken_core::mixture::{CovarianceSchedule, DisplacementPower};
use kraken_core::synth::{
    fan_fixture, gen_scene, gmp_grid, scene_features, training_samples, tune_gmp, tune_sigma, DuplicatingPredictor,
    GenConfig, KernelPredictor, LabeledScene, OraclePredictor, Predictor, TuningReport,
};
use kraken_core::transformer::{
    predict_set, train_toy, CovMode, MixingBlock, ModelConfig, Parameters, Sample, TrainConfig,
};
use kraken_core::{AgentType, JointPredictionSet, PredictionSet, Scene};

use crate::checkpoint::Checkpoint;
use crate::error::{KrakenError, Result};
use crate::formats::{
    labels_path, read_joint, read_labeled, read_predictions, read_scenes, write_jsonl, JointRecord, LabelRecord,
    PredictionRecord, SceneRecord,
};
use crate::report::{metric_json_string, metric_table, tuning_json, tuning_svg};

#[derive(Debug, Parser)]
#[command(name = "kraken", version, about = "Multimodal trajectory prediction toolkit", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes and their label sidecar.
    Gen(GenArgs),
    /// Produce marginal predictions for every labeled agent.
    Predict(PredictArgs),
    /// Score marginal or joint predictions.
    Eval(EvalArgs),
    /// Greedy mode processing of marginal predictions.
    Gmp(GmpArgs),
    /// Joint predictions for every interacting pair.
    Joint(JointArgs),
    /// Grid search over σ or the GMP configuration.
    Tune(TuneArgs),
    /// Train the toy mode-transformer model.
    TrainToy(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Final,
    Checkpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Keep,
    Avg,
    Wavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Oracle,
    Duplicating,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DuplicatesArg {
    Fp,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TuneParam {
    Sigma,
    Gmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TypeArg {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl From<TypeArg> for AgentType {
    fn from(t: TypeArg) -> Self {
        match t {
            TypeArg::Vehicle => AgentType::Vehicle,
            TypeArg::Pedestrian => AgentType::Pedestrian,
            TypeArg::Cyclist => AgentType::Cyclist,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct WindowArgs {
    /// Lateral hit-window slope (m/s).
    #[arg(long, default_value_t = 0.4)]
    pub window_slope: f64,
    /// Lateral hit-window offset (m).
    #[arg(long, default_value_t = -0.2, allow_negative_numbers = true)]
    pub window_offset: f64,
}

impl WindowArgs {
    fn config(&self) -> WindowConfig {
        WindowConfig {
            lateral_slope: self.window_slope,
            lateral_offset: self.window_offset,
            ..WindowConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    /// Displacement power of the per-step density, in (0, 2].
    #[arg(long, default_value_t = 1.5)]
    pub r: f64,
    #[arg(long)]
    pub sigma_vehicle: Option<f64>,
    #[arg(long)]
    pub sigma_ped: Option<f64>,
    #[arg(long)]
    pub sigma_cyc: Option<f64>,
}

impl ScheduleArgs {
    fn schedule(&self) -> Result<CovarianceSchedule> {
        let mut s = CovarianceSchedule::default();
        for (t, v) in [
            (AgentType::Vehicle, self.sigma_vehicle),
            (AgentType::Pedestrian, self.sigma_ped),
            (AgentType::Cyclist, self.sigma_cyc),
        ] {
            if let Some(sigma) = v {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(KrakenError::Usage(format!("sigma for {t} must be positive, got {sigma}")));
                }
                s = s.with_sigma(t, sigma);
            }
        }
        Ok(s)
    }

    fn power(&self) -> Result<DisplacementPower> {
        DisplacementPower::new(self.r).map_err(|e| KrakenError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModeProcessingArgs {
    #[arg(long, value_enum, default_value = "checkpoints")]
    pub criterion: CriterionArg,
    /// Final-point coincidence radius (m).
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    /// Hit-window scale of the checkpoint criterion.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long = "merge", value_enum, default_value = "keep")]
    pub merge: MergeArg,
}

impl ModeProcessingArgs {
    fn config(&self, window: WindowConfig) -> Result<GmpConfig> {
        let criterion = match self.criterion {
            CriterionArg::Final => CoincidenceCriterion::FinalPoint { radius: self.radius },
            CriterionArg::Checkpoints => CoincidenceCriterion::CheckpointAnd { gamma: self.gamma },
        };
        if !criterion.is_valid() {
            return Err(KrakenError::Usage("coincidence radius and gamma must be positive".into()));
        }
        let strategy = match self.merge {
            MergeArg::Keep => MergeStrategy::KeepMax,
            MergeArg::Avg => MergeStrategy::AverageEqual,
            MergeArg::Wavg => MergeStrategy::AverageWeighted,
        };
        Ok(GmpConfig {
            criterion,
            strategy,
            window,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Label sidecar path (default: `<out stem>.labels.jsonl`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub n_scenes: usize,
    #[arg(long, default_value_t = 4)]
    pub agents: usize,
    #[arg(long, default_value_t = 0.5)]
    pub interacting: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub predictor: PredictorArg,
    /// Use a trained checkpoint instead of a synthetic predictor.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Chance that a checkpoint model's maneuver hint is replaced by a random one.
    #[arg(long, default_value_t = 0.3)]
    pub hint_noise: f64,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["pred", "joint"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub joint: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fp")]
    pub duplicates: DuplicatesArg,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GmpArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub processing: ModeProcessingArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Args)]
pub struct JointArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Predictions for the second agent of each pair (default: `--pred`).
    #[arg(long)]
    pub pred_b: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Extra clearance added to the radii sum (m).
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    #[arg(long)]
    pub no_collision: bool,
    #[arg(long)]
    pub no_gmp: bool,
    #[command(flatten)]
    pub processing: ModeProcessingArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    pub param: TuneParam,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, required_unless_present = "fan")]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Tune on a constructed lane-fan set of this many scenes.
    #[arg(long, conflicts_with = "scenes")]
    pub fan: Option<usize>,
    /// Comma-separated σ values.
    #[arg(long, default_value = "0.25,0.5,1,2,4,8")]
    pub grid: String,
    /// Sweep one type only (default: all).
    #[arg(long = "type", value_enum)]
    pub agent_type: Option<TypeArg>,
    /// Default: kernel for σ, duplicating for GMP.
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// NLL curve CSV path.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Replace the mode transformer with a per-token dense block.
    #[arg(long)]
    pub ablate_mt: bool,
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 500)]
    pub n_val: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.3)]
    pub hint_noise: f64,
    /// Train the covariance head instead of using the schedule.
    #[arg(long)]
    pub predicted_cov: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("KRAKEN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| KrakenError::Usage(format!("KRAKEN_THREADS must be a non-negative integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| KrakenError::Usage(format!("thread pool: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| KrakenError::io(path, e))
}

fn out_line(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| KrakenError::io("<stdout>", e))
}

fn scene_index(scenes: &[Scene]) -> BTreeMap<&str, &Scene> {
    scenes.iter().map(|s| (s.scene_id(), s)).collect()
}

fn lookup<'a>(index: &BTreeMap<&str, &'a Scene>, id: &str, path: &Path) -> Result<&'a Scene> {
    index.get(id).copied().ok_or_else(|| KrakenError::Format {
        path: path.into(),
        reason: format!("unknown scene `{id}`"),
    })
}

fn labeled_input(scenes: &Path, labels: Option<&Path>) -> Result<Vec<LabeledScene>> {
    let labels = labels.map(Path::to_path_buf).unwrap_or_else(|| labels_path(scenes));
    read_labeled(scenes, &labels)
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&a.interacting) {
        return Err(KrakenError::Usage("--interacting must lie in [0, 1]".into()));
    }
    let cfg = GenConfig {
        agents_per_scene: a.agents,
        interacting_fraction: a.interacting,
        ..GenConfig::default()
    };
    let scenes = thread_pool()?.install(|| {
        (0..a.n_scenes)
            .into_par_iter()
            .map(|i| gen_scene(a.seed, i, &cfg))
            .collect::<kraken_core::Result<Vec<_>>>()
    })?;
    write_jsonl(&a.out, scenes.iter().map(|s| SceneRecord::from(&s.scene)))?;
    let labels = a.labels.clone().unwrap_or_else(|| labels_path(&a.out));
    write_jsonl(&labels, scenes.iter().map(LabelRecord::from))?;
    out_line(out, &format!("wrote {} scenes to {}", scenes.len(), a.out.display()))
}

fn run_predictor<P: Predictor + Sync>(p: &P, scenes: &[LabeledScene], schedule: &CovarianceSchedule) -> Result<Vec<PredictionSet>> {
    let per_scene = thread_pool()?.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, s)| p.predict(s, schedule, i as u64))
            .collect::<kraken_core::Result<Vec<_>>>()
    })?;
    Ok(per_scene.into_iter().flatten().collect())
}

fn model_predictions(
    params: &Parameters,
    cov_mode: &CovMode,
    scenes: &[LabeledScene],
    hint_noise: f64,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    let per_scene = thread_pool()?.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(si, s)| {
                scene_features(s, hint_noise, seed, si as u64)
                    .into_iter()
                    .filter(|(ai, _)| s.scene.gt(s.scene.agents()[*ai].id()).is_some())
                    .map(|(ai, f)| {
                        let agent = &s.scene.agents()[ai];
                        predict_set(&f, &agent.context(), params, cov_mode, s.scene.scene_id(), agent.id())
                    })
                    .collect::<kraken_core::Result<Vec<_>>>()
            })
            .collect::<kraken_core::Result<Vec<_>>>()
    })?;
    Ok(per_scene.into_iter().flatten().collect())
}

fn synthetic_predictions(choice: PredictorArg, seed: u64, scenes: &[LabeledScene], schedule: &CovarianceSchedule) -> Result<Vec<PredictionSet>> {
    let base = OraclePredictor {
        seed,
        ..OraclePredictor::default()
    };
    match choice {
        PredictorArg::Oracle => run_predictor(&base, scenes, schedule),
        PredictorArg::Duplicating => run_predictor(
            &DuplicatingPredictor {
                base,
                ..DuplicatingPredictor::default()
            },
            scenes,
            schedule,
        ),
        PredictorArg::Kernel => run_predictor(
            &KernelPredictor {
                base: OraclePredictor {
                    seed,
                    ..KernelPredictor::default().base
                },
            },
            scenes,
            schedule,
        ),
    }
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let scenes = labeled_input(&a.scenes, a.labels.as_deref())?;
    let schedule = a.schedule.schedule()?;
    let preds = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let params = ck.parameters().map_err(|reason| KrakenError::Format {
                path: path.clone(),
                reason,
            })?;
            let cov_mode = if ck.predicted_cov() {
                CovMode::Predicted
            } else {
                CovMode::Schedule(schedule)
            };
            model_predictions(&params, &cov_mode, &scenes, a.hint_noise, a.seed)?
        }
        None => synthetic_predictions(a.predictor, a.seed, &scenes, &schedule)?,
    };
    write_jsonl(&a.out, preds.iter().map(PredictionRecord::from))?;
    out_line(out, &format!("wrote {} prediction sets to {}", preds.len(), a.out.display()))
}

fn emit_report(report: &MetricReport, json_out: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if let Some(p) = json_out {
        write_text(p, &metric_json_string(report))?;
    }
    write!(out, "{}", metric_table(report)).map_err(|e| KrakenError::io("<stdout>", e))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let scenes = read_scenes(&a.scenes)?;
    let index = scene_index(&scenes);
    let cfg = EvalConfig {
        window: a.window.config(),
        duplicates: match a.duplicates {
            DuplicatesArg::Fp => DuplicatePolicy::FalsePositive,
            DuplicatesArg::Ignore => DuplicatePolicy::Ignore,
        },
    };
    let report = match (&a.pred, &a.joint) {
        (Some(path), _) => {
            let preds = read_predictions(path)?;
            let pairs = preds
                .iter()
                .map(|p| Ok((p, lookup(&index, p.scene_id(), path)?)))
                .collect::<Result<Vec<(&PredictionSet, &Scene)>>>()?;
            map_score(&pairs, &cfg)?
        }
        (None, Some(path)) => {
            let preds = read_joint(path)?;
            let pairs = preds
                .iter()
                .map(|p| Ok((p, lookup(&index, p.scene_id(), path)?)))
                .collect::<Result<Vec<(&JointPredictionSet, &Scene)>>>()?;
            joint_map_score(&pairs, &cfg)?
        }
        (None, None) => return Err(KrakenError::Usage("one of --pred or --joint is required".into())),
    };
    emit_report(&report, a.out.as_deref(), out)
}

fn cmd_gmp(a: &GmpArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.processing.config(a.window.config())?;
    let scenes = read_scenes(&a.scenes)?;
    let index = scene_index(&scenes);
    let preds = read_predictions(&a.pred)?;
    let processed = thread_pool()?.install(|| {
        preds
            .par_iter()
            .map(|p| {
                let scene = lookup(&index, p.scene_id(), &a.pred)?;
                let agent = scene
                    .agent(p.agent_id())
                    .ok_or_else(|| kraken_core::Error::UnknownAgent(p.agent_id().into()))?;
                Ok(greedy_process(p, &cfg, &agent.context())?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_jsonl(&a.out, processed.iter().map(PredictionRecord::from))?;
    let before: usize = preds.iter().map(|p| p.modes().len()).sum();
    let after: usize = processed.iter().map(|p| p.modes().len()).sum();
    out_line(out, &format!("processed {} sets: {before} modes -> {after}", processed.len()))
}

fn cmd_joint(a: &JointArgs, out: &mut dyn Write) -> Result<()> {
    let gmp = a.processing.config(a.window.config())?;
    let collision = CollisionCriterion::new(a.margin).map_err(|e| KrakenError::Usage(e.to_string()))?;
    let cfg = JointConfig {
        collision: (!a.no_collision).then_some(collision),
        gmp: (!a.no_gmp).then_some(gmp),
    };
    let scenes = read_scenes(&a.scenes)?;
    let preds_a = read_predictions(&a.pred)?;
    let preds_b = match &a.pred_b {
        Some(p) => read_predictions(p)?,
        None => preds_a.clone(),
    };
    let key_index = |ps: &[PredictionSet]| -> BTreeMap<(String, String), usize> {
        ps.iter().enumerate().map(|(i, p)| ((p.scene_id().to_string(), p.agent_id().to_string()), i)).collect()
    };
    let (ia, ib) = (key_index(&preds_a), key_index(&preds_b));
    let src_b = a.pred_b.as_ref().unwrap_or(&a.pred);
    let jobs = scenes
        .iter()
        .filter_map(|s| s.interacting_pair().map(|pair| (s, pair)))
        .map(|(s, (ida, idb))| {
            let find = |idx: &BTreeMap<(String, String), usize>, id: &str, path: &Path| {
                idx.get(&(s.scene_id().to_string(), id.to_string())).copied().ok_or_else(|| KrakenError::Format {
                    path: path.into(),
                    reason: format!("no prediction for agent `{id}` of scene `{}`", s.scene_id()),
                })
            };
            Ok((s, ida, idb, find(&ia, ida, &a.pred)?, find(&ib, idb, src_b)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let joint = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(s, ida, idb, pa, pb)| {
                let (agent_a, agent_b) = (
                    s.agent(ida).ok_or_else(|| kraken_core::Error::UnknownAgent(ida.into()))?,
                    s.agent(idb).ok_or_else(|| kraken_core::Error::UnknownAgent(idb.into()))?,
                );
                joint_predict(&preds_a[pa], &preds_b[pb], &PairAgents::of(agent_a, agent_b), &cfg)
            })
            .collect::<kraken_core::Result<Vec<_>>>()
    })?;
    write_jsonl(&a.out, joint.iter().map(JointRecord::from))?;
    let degenerate = joint.iter().filter(|j| j.degenerate()).count();
    out_line(out, &format!("wrote {} joint sets ({degenerate} degenerate) to {}", joint.len(), a.out.display()))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let grid = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| KrakenError::Usage(format!("bad grid value `{v}`"))))
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(KrakenError::Usage("grid values must be positive".into()));
    }
    Ok(grid)
}

fn tune_with<P: Predictor>(a: &TuneArgs, p: &P, scenes: &[LabeledScene], schedule: &CovarianceSchedule) -> Result<TuningReport> {
    let window = a.window.config();
    let eval = EvalConfig {
        window,
        ..EvalConfig::default()
    };
    Ok(match a.param {
        TuneParam::Sigma => tune_sigma(&parse_grid(&a.grid)?, scenes, p, schedule, &eval, a.agent_type.map(Into::into))?,
        TuneParam::Gmp => tune_gmp(&gmp_grid(window), scenes, p, schedule, &eval)?,
    })
}

fn cmd_tune(a: &TuneArgs, out: &mut dyn Write) -> Result<()> {
    let scenes = match (&a.scenes, a.fan) {
        (_, Some(n)) => fan_fixture(a.seed, n, &a.window.config())?,
        (Some(s), None) => labeled_input(s, a.labels.as_deref())?,
        (None, None) => return Err(KrakenError::Usage("--scenes or --fan is required".into())),
    };
    let schedule = a.schedule.schedule()?;
    let choice = a.predictor.unwrap_or(match a.param {
        TuneParam::Sigma => PredictorArg::Kernel,
        TuneParam::Gmp => PredictorArg::Duplicating,
    });
    let base = OraclePredictor {
        seed: a.seed,
        ..OraclePredictor::default()
    };
    let report = match choice {
        PredictorArg::Oracle => tune_with(a, &base, &scenes, &schedule)?,
        PredictorArg::Duplicating => tune_with(
            a,
            &DuplicatingPredictor {
                base,
                ..DuplicatingPredictor::default()
            },
            &scenes,
            &schedule,
        )?,
        PredictorArg::Kernel => tune_with(
            a,
            &KernelPredictor {
                base: OraclePredictor {
                    seed: a.seed,
                    ..KernelPredictor::default().base
                },
            },
            &scenes,
            &schedule,
        )?,
    };
    if let Some(p) = &a.out {
        write_text(p, &(serde_json::to_string_pretty(&tuning_json(&report)).expect("serializes") + "\n"))?;
    }
    if let Some(p) = &a.svg {
        write_text(p, &tuning_svg(&report))?;
    }
    for t in AgentType::ALL {
        if let (Some(i), Some(g)) = (report.argmax[t.index()], report.best(t)) {
            let v = report.metric[i][t.index()].unwrap_or(f64::NAN);
            out_line(
                out,
                &format!("{t}: best {} = {} (mAP {v:.4}, n = {})", report.parameter, g.label, report.counts[t.index()]),
            )?;
        }
    }
    Ok(())
}

/// Samples for toy training: scenes `0..n` for training and the following
/// block for validation, each from its own child stream of `seed`.
pub fn toy_samples(seed: u64, n_train: usize, n_val: usize, hint_noise: f64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let cfg = GenConfig::default();
    let per = cfg.agents_per_scene;
    let (nt, nv) = (n_train.div_ceil(per), n_val.div_ceil(per));
    let scenes = thread_pool()?.install(|| {
        (0..nt + nv)
            .into_par_iter()
            .map(|i| gen_scene(seed, i, &cfg))
            .collect::<kraken_core::Result<Vec<_>>>()
    })?;
    let mut train = training_samples(&scenes[..nt], hint_noise, seed);
    let mut val = training_samples(&scenes[nt..], hint_noise, seed.wrapping_add(1));
    train.truncate(n_train);
    val.truncate(n_val);
    Ok((train, val))
}

/// Modes with probability below `threshold`, summed over `samples`.
pub fn low_probability_modes(samples: &[Sample], params: &Parameters, threshold: f64) -> Result<usize> {
    let mut n = 0;
    for s in samples {
        let set = predict_set(&s.features, &s.ctx, params, &CovMode::Predicted, "", "")?;
        n += set.modes().iter().filter(|m| m.prob() < threshold).count();
    }
    Ok(n)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let r = a.schedule.power()?;
    let schedule = a.schedule.schedule()?;
    let (train, val) = toy_samples(a.seed, a.n_train, a.n_val, a.hint_noise)?;
    let model = ModelConfig {
        mixing: if a.ablate_mt { MixingBlock::PerToken } else { MixingBlock::Attention },
        seed: a.seed,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        r,
        cov_mode: if a.predicted_cov {
            CovMode::Predicted
        } else {
            CovMode::Schedule(schedule)
        },
        shuffle_seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = train_toy(&train, &val, model, &cfg)?;
    Checkpoint::new(&outcome.params, r, a.predicted_cov).save(&a.out)?;
    if let Some(p) = &a.curve {
        let mut csv = String::from("epoch,train_nll,val_nll,lr\n");
        for e in &outcome.curve {
            let val = e.val_nll.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{},{},{val},{}\n", e.epoch, e.train_nll, e.lr));
        }
        write_text(p, &csv)?;
    }
    let (first, last) = (outcome.initial(), outcome.last());
    let pick = |e: &kraken_core::transformer::EpochStats| e.val_nll.unwrap_or(e.train_nll);
    out_line(
        out,
        &format!(
            "nll {:.4} -> {:.4} ({:.1}% reduction); modes with p < 1e-3 on validation: {}",
            pick(first),
            pick(last),
            100.0 * (1.0 - pick(last) / pick(first)),
            low_probability_modes(&val, &outcome.params, 1e-3)?
        ),
    )
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gmp(a) => cmd_gmp(a, out),
        Command::Joint(a) => cmd_joint(a, out),
        Command::Tune(a) => cmd_tune(a, out),
        Command::TrainToy(a) => cmd_train(a, out),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
