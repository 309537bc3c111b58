//! Receding-horizon loop tying manager, executor and simulator together, the
//! plan-once baseline, batch execution and the episode log format.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{split_trace, Executor};
use crate::manager::{detect_progress, Instruction, ManagerError, ManagerOutput, TaskManager};
use crate::memory::render_memory;
use crate::model::{Observation, Plan, PlanState, Primitive, Verb};
use crate::sim::{Action, AttachmentEvent, FailureConfig, GripperCmd, Scene, SceneError, WorldState};

pub const LOG_SCHEMA: u32 = 1;
pub const DEFAULT_INTERVAL: u64 = 100;
pub const DEFAULT_BUDGET: u64 = 5000;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("scene mismatch: {0}")]
    SceneMismatch(#[from] SceneError),
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("manager failed at frame {frame}: {source}")]
    Manager { frame: u64, source: ManagerError },
    #[error("duplicate seed {0} in batch")]
    DuplicateSeed(u64),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("malformed log: {0}")]
    MalformedLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    ClosedLoop,
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub instruction: Plan,
    pub manager_interval: u64,
    pub step_budget: u64,
    pub seed: u64,
    pub failure: FailureConfig,
    pub mode: Mode,
}

impl EpisodeConfig {
    /// Closed-loop defaults for a scene: interval 100, budget 5000, scene seed and failure settings.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            instruction: scene.plan.clone(),
            manager_interval: DEFAULT_INTERVAL,
            step_budget: DEFAULT_BUDGET,
            seed: scene.seed,
            failure: scene.failure,
            mode: Mode::ClosedLoop,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.manager_interval < 1 {
            return Err(OrchestratorError::Config("manager_interval must be >= 1".into()));
        }
        if self.step_budget < 1 {
            return Err(OrchestratorError::Config("step_budget must be >= 1".into()));
        }
        self.failure.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    BudgetExhausted,
    /// Plan-once baseline ran out of subtasks without reaching the goal.
    TraceExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub frame: u64,
    pub observation: Observation,
    pub action: Action,
    /// The primitive the executor was working on.
    pub subtask: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub frame: u64,
    pub memory: String,
    pub output: ManagerOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub config: EpisodeConfig,
    pub scene: Scene,
    pub manager: String,
    pub executor: String,
    pub steps: Vec<StepRecord>,
    pub invocations: Vec<InvocationRecord>,
    pub events: Vec<AttachmentEvent>,
    pub final_observation: Observation,
    pub outcome: Outcome,
}

/// One line of an episode JSONL file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Header {
        schema: u32,
        manager: String,
        executor: String,
        config: EpisodeConfig,
        scene: Scene,
    },
    Invocation(InvocationRecord),
    Step(StepRecord),
    Event(AttachmentEvent),
    Summary {
        outcome: Outcome,
        frames: u64,
        final_observation: Observation,
    },
}

/// True when the observation shows every plan primitive done.
pub fn goal_satisfied(obs: &Observation, plan: &Plan) -> bool {
    detect_progress(obs, &plan.split(0)).is_done()
}

fn ends_subtask(verb: Verb, cmd: GripperCmd) -> bool {
    matches!(
        (verb, cmd),
        (Verb::Grasp, GripperCmd::CloseGrasp) | (Verb::Place | Verb::Drop, GripperCmd::OpenRelease)
    )
}

struct Recorder {
    steps: Vec<StepRecord>,
    invocations: Vec<InvocationRecord>,
    events: Vec<AttachmentEvent>,
}

pub fn run_episode(
    cfg: &EpisodeConfig,
    scene: &Scene,
    manager: &dyn TaskManager,
    executor: &dyn Executor,
) -> Result<EpisodeLog, OrchestratorError> {
    cfg.validate()?;
    scene.check_plan(&cfg.instruction)?;

    let instruction = Instruction {
        plan: cfg.instruction.clone(),
        projection: scene.projection(),
    };
    let mut world = WorldState::new(scene, cfg.seed);
    let mut obs = world.observe();
    let mut rec = Recorder {
        steps: Vec::new(),
        invocations: Vec::new(),
        events: Vec::new(),
    };

    let invoke = |obs: &Observation, memory: &str, rec: &mut Recorder| {
        let output = manager
            .plan(&instruction, obs, memory)
            .map_err(|source| OrchestratorError::Manager {
                frame: obs.frame(),
                source,
            })?;
        rec.invocations.push(InvocationRecord {
            frame: obs.frame(),
            memory: memory.to_string(),
            output: output.clone(),
        });
        Ok::<_, OrchestratorError>(output)
    };
    let mut advance = |obs: &mut Observation, action: Action, subtask: &Primitive, rec: &mut Recorder| {
        rec.steps.push(StepRecord {
            frame: obs.frame(),
            observation: obs.clone(),
            action,
            subtask: subtask.clone(),
        });
        let (next, event) = world.step(action, &cfg.failure);
        rec.events.extend(event);
        *obs = next;
    };

    let outcome = match cfg.mode {
        Mode::ClosedLoop => {
            let mut memory = render_memory(&cfg.instruction.split(0));
            let mut current: Option<ManagerOutput> = None;
            loop {
                if obs.frame().is_multiple_of(cfg.manager_interval) {
                    let out = invoke(&obs, &memory, &mut rec)?;
                    memory = render_memory(&out.plan);
                    if out.plan.is_done() {
                        break Outcome::Success;
                    }
                    current = Some(out);
                }
                if obs.frame() >= cfg.step_budget {
                    break Outcome::BudgetExhausted;
                }
                let out = current.as_ref().expect("manager invoked at frame 0");
                let (Some(subtask), Some(trace)) = (out.plan.next(), out.trace.as_ref()) else {
                    unreachable!("non-terminal manager output carries a subtask and trace");
                };
                let action = executor.act(&obs, subtask, trace);
                advance(&mut obs, action, subtask, &mut rec);
            }
        }
        Mode::OpenLoop => {
            let memory = render_memory(&cfg.instruction.split(0));
            let out = invoke(&obs, &memory, &mut rec)?;
            match out.trace.as_ref() {
                None => Outcome::Success,
                Some(trace) => {
                    let remaining = out.plan.remaining();
                    let pieces = split_trace(trace, &obs, remaining, &instruction.projection);
                    let mut queue = remaining.iter().zip(&pieces);
                    let mut subtask = queue.next();
                    loop {
                        let Some((current, trace)) = subtask else {
                            break if goal_satisfied(&obs, &cfg.instruction) {
                                Outcome::Success
                            } else {
                                Outcome::TraceExhausted
                            };
                        };
                        if obs.frame() >= cfg.step_budget {
                            break Outcome::BudgetExhausted;
                        }
                        let action = executor.act(&obs, current, trace);
                        advance(&mut obs, action, current, &mut rec);
                        if ends_subtask(current.verb(), action.gripper_cmd) {
                            subtask = queue.next();
                        }
                    }
                }
            }
        }
    };

    Ok(EpisodeLog {
        config: cfg.clone(),
        scene: scene.clone(),
        manager: manager.name().to_string(),
        executor: executor.name().to_string(),
        steps: rec.steps,
        invocations: rec.invocations,
        events: rec.events,
        final_observation: obs,
        outcome,
    })
}

/// Runs every config on a pool of `parallelism` workers. Results come back
/// in input order and do not depend on the worker count.
pub fn run_batch(
    configs: &[EpisodeConfig],
    scene: &Scene,
    manager: &dyn TaskManager,
    executor: &dyn Executor,
    parallelism: usize,
) -> Result<Vec<Result<EpisodeLog, OrchestratorError>>, OrchestratorError> {
    let mut seeds = BTreeSet::new();
    for c in configs {
        if !seeds.insert(c.seed) {
            return Err(OrchestratorError::DuplicateSeed(c.seed));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| OrchestratorError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| run_episode(cfg, scene, manager, executor))
            .collect()
    }))
}

impl EpisodeLog {
    pub fn file_name(&self) -> String {
        format!("episode_{}.jsonl", self.config.seed)
    }

    /// Number of frames simulated (executor steps).
    pub fn frames(&self) -> u64 {
        self.final_observation.frame()
    }

    /// The latest manager output.
    pub fn last_output(&self) -> Option<&ManagerOutput> {
        self.invocations.last().map(|i| &i.output)
    }

    /// Split implied by the final observation, independent of what the manager claimed.
    pub fn ground_truth_progress(&self) -> PlanState {
        detect_progress(&self.final_observation, &self.config.instruction.split(0))
    }

    fn records(&self) -> Vec<LogRecord> {
        let mut out = Vec::with_capacity(self.steps.len() + self.invocations.len() + self.events.len() + 2);
        out.push(LogRecord::Header {
            schema: LOG_SCHEMA,
            manager: self.manager.clone(),
            executor: self.executor.clone(),
            config: self.config.clone(),
            scene: self.scene.clone(),
        });
        let mut inv = self.invocations.iter().peekable();
        let mut ev = self.events.iter().peekable();
        for step in &self.steps {
            while let Some(i) = inv.next_if(|i| i.frame <= step.frame) {
                out.push(LogRecord::Invocation(i.clone()));
            }
            out.push(LogRecord::Step(step.clone()));
            while let Some(e) = ev.next_if(|e| e.frame <= step.frame + 1) {
                out.push(LogRecord::Event(e.clone()));
            }
        }
        out.extend(inv.cloned().map(LogRecord::Invocation));
        out.extend(ev.cloned().map(LogRecord::Event));
        out.push(LogRecord::Summary {
            outcome: self.outcome,
            frames: self.frames(),
            final_observation: self.final_observation.clone(),
        });
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), OrchestratorError> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r).map_err(|source| OrchestratorError::Json { line: 0, source })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, OrchestratorError> {
        let mut header = None;
        let mut summary = None;
        let (mut steps, mut invocations, mut events) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(OrchestratorError::MalformedLog("records after summary".into()));
            }
            let rec: LogRecord =
                serde_json::from_str(&line).map_err(|source| OrchestratorError::Json { line: n + 1, source })?;
            match rec {
                LogRecord::Header {
                    schema,
                    manager,
                    executor,
                    config,
                    scene,
                } => {
                    if header.is_some() || n != 0 {
                        return Err(OrchestratorError::MalformedLog("header must be the first line".into()));
                    }
                    if schema != LOG_SCHEMA {
                        return Err(OrchestratorError::MalformedLog(format!("unsupported log schema {schema}")));
                    }
                    header = Some((manager, executor, config, scene));
                }
                _ if header.is_none() => {
                    return Err(OrchestratorError::MalformedLog("missing header".into()));
                }
                LogRecord::Invocation(i) => invocations.push(i),
                LogRecord::Step(s) => steps.push(s),
                LogRecord::Event(e) => events.push(e),
                LogRecord::Summary {
                    outcome,
                    final_observation,
                    ..
                } => summary = Some((outcome, final_observation)),
            }
        }
        let (manager, executor, config, scene) =
            header.ok_or_else(|| OrchestratorError::MalformedLog("empty log".into()))?;
        let (outcome, final_observation) =
            summary.ok_or_else(|| OrchestratorError::MalformedLog("missing summary".into()))?;
        Ok(EpisodeLog {
            config,
            scene,
            manager,
            executor,
            steps,
            invocations,
            events,
            final_observation,
            outcome,
        })
    }

    /// Writes to `path`, gzip-compressed when it ends in `.gz`.
    pub fn save(&self, path: &Path) -> Result<(), OrchestratorError> {
        let file = File::create(path)?;
        if path.extension().is_some_and(|e| e == "gz") {
            let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
            self.write_jsonl(&mut enc)?;
            enc.finish()?.flush()?;
        } else {
            let mut w = BufWriter::new(file);
            self.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let file = File::open(path)?;
        let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
            Box::new(GzDecoder::new(file))
        } else {
            Box::new(file)
        };
        Self::read_jsonl(BufReader::new(reader))
    }

    pub fn save_in(&self, dir: &Path) -> Result<PathBuf, OrchestratorError> {
        let path = dir.join(self.file_name());
        self.save(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::PurePursuit;
    use crate::manager::ScriptedManager;
    use crate::sim::AttachmentKind;

    fn scene() -> Scene {
        Scene::from_json(
            r#"{
                "schema": 1,
                "gripper": [0.5, 0.5],
                "objects": [
                    {"id": "cup", "pos": [0.2, 0.3]},
                    {"id": "sponge", "pos": [0.7, 0.3]}
                ],
                "plan": [
                    {"verb": "grasp", "target": "cup"},
                    {"verb": "place", "target": "cup", "destination": [0.2, 0.8]},
                    {"verb": "grasp", "target": "sponge"},
                    {"verb": "place", "target": "sponge", "destination": [0.7, 0.8]}
                ]
            }"#,
        )
        .unwrap()
    }

    fn run(cfg: &EpisodeConfig, scene: &Scene) -> EpisodeLog {
        run_episode(cfg, scene, &ScriptedManager::default(), &PurePursuit::default()).unwrap()
    }

    #[test]
    fn closed_loop_completes_clean_task() {
        let s = scene();
        let log = run(&EpisodeConfig::from_scene(&s), &s);
        assert_eq!(log.outcome, Outcome::Success);
        assert!(log.last_output().unwrap().plan.is_done());
        assert!(goal_satisfied(&log.final_observation, &s.plan));
        for (i, inv) in log.invocations.iter().enumerate() {
            assert_eq!(inv.frame, i as u64 * DEFAULT_INTERVAL);
        }
    }

    #[test]
    fn satisfied_scene_needs_no_steps() {
        let mut s = scene();
        s.objects[0].pos = crate::geometry::Point2::new(0.2, 0.8);
        s.objects[1].pos = crate::geometry::Point2::new(0.7, 0.8);
        for mode in [Mode::ClosedLoop, Mode::OpenLoop] {
            let cfg = EpisodeConfig {
                mode,
                ..EpisodeConfig::from_scene(&s)
            };
            let log = run(&cfg, &s);
            assert_eq!(log.outcome, Outcome::Success);
            assert_eq!(log.invocations.len(), 1);
            assert!(log.steps.is_empty());
        }
    }

    #[test]
    fn certain_slip_exhausts_budget_and_keeps_grasp_pending() {
        let s = scene();
        let cfg = EpisodeConfig {
            failure: FailureConfig { p_slip: 1.0, drop_radius: 0.05 },
            step_budget: 1000,
            ..EpisodeConfig::from_scene(&s)
        };
        let log = run(&cfg, &s);
        assert_eq!(log.outcome, Outcome::BudgetExhausted);
        let grasp_cup = &s.plan.steps()[0];
        for inv in &log.invocations {
            assert!(inv.output.plan.remaining().iter().any(|p| p == grasp_cup));
        }
        assert!(log.events.iter().all(|e| e.kind == AttachmentKind::Slip));
        assert!(!log.events.is_empty());
    }

    #[test]
    fn open_loop_invokes_once() {
        let s = scene();
        let cfg = EpisodeConfig {
            mode: Mode::OpenLoop,
            ..EpisodeConfig::from_scene(&s)
        };
        let log = run(&cfg, &s);
        assert_eq!(log.invocations.len(), 1);
        assert_eq!(log.invocations[0].frame, 0);
        assert_eq!(log.outcome, Outcome::Success);
    }

    #[test]
    fn memory_chain_links_invocations() {
        let s = scene();
        let cfg = EpisodeConfig {
            manager_interval: 7,
            failure: FailureConfig { p_slip: 0.4, drop_radius: 0.05 },
            ..EpisodeConfig::from_scene(&s)
        };
        let log = run(&cfg, &s);
        for pair in log.invocations.windows(2) {
            assert_eq!(pair[1].memory, render_memory(&pair[0].output.plan));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let s = scene();
        let m = ScriptedManager::default();
        let e = PurePursuit::default();
        let zero = EpisodeConfig {
            manager_interval: 0,
            ..EpisodeConfig::from_scene(&s)
        };
        assert!(matches!(run_episode(&zero, &s, &m, &e), Err(OrchestratorError::Config(_))));

        let other: Scene = Scene::from_json(
            r#"{"schema":1,"objects":[{"id":"mug","pos":[0.1,0.1]}],"plan":[{"verb":"grasp","target":"mug"}]}"#,
        )
        .unwrap();
        let cfg = EpisodeConfig::from_scene(&other);
        assert!(matches!(run_episode(&cfg, &s, &m, &e), Err(OrchestratorError::SceneMismatch(_))));
    }

    #[test]
    fn jsonl_roundtrip() {
        let s = scene();
        let cfg = EpisodeConfig {
            failure: FailureConfig { p_slip: 0.3, drop_radius: 0.05 },
            ..EpisodeConfig::from_scene(&s).with_seed(3)
        };
        let log = run(&cfg, &s);
        let text = log.to_jsonl();
        let back = EpisodeLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), text);
        assert!(text.lines().next().unwrap().contains(r#""record":"header""#));
        assert!(text.lines().last().unwrap().contains(r#""record":"summary""#));
    }

    #[test]
    fn gzip_roundtrip() {
        let s = scene();
        let log = run(&EpisodeConfig::from_scene(&s), &s);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode_0.jsonl.gz");
        log.save(&path).unwrap();
        assert_eq!(EpisodeLog::load(&path).unwrap(), log);
    }

    #[test]
    fn batch_rejects_duplicate_seeds_and_handles_empty() {
        let s = scene();
        let m = ScriptedManager::default();
        let e = PurePursuit::default();
        assert!(run_batch(&[], &s, &m, &e, 4).unwrap().is_empty());
        let cfg = EpisodeConfig::from_scene(&s);
        assert!(matches!(
            run_batch(&[cfg.clone(), cfg], &s, &m, &e, 2),
            Err(OrchestratorError::DuplicateSeed(_))
        ));
    }
}
