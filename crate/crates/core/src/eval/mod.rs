//! Seeded batches, metrics and Table-shaped reports.

mod feedback;
mod metrics;
mod report;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use feedback::{feedback_script, FEEDBACK_STEPS};
pub use metrics::{episode_social_score, social_score, success_rate, Bucket, MetricsRow, MetricsTable, SS_VERSION};
pub use report::{parse_report_csv, parse_report_markdown, report_csv, report_markdown, ReportRow};

use crate::episode::planners::PlannerFactory;
use crate::episode::{
    initial_guidance, Episode, EpisodeConfig, EpisodeHeader, EpisodeLog, EpisodeOutcome, FeedbackItem, PlannerConfig,
    LOG_SCHEMA,
};
use crate::error::{Error, Result};
use crate::guidance::{parse_request, UserUtterance};
use crate::llm::{LlmClient, Transcript};
use crate::sim::{spawn_scenario, ScenarioFile, SCENARIO_SCHEMA};
use crate::types::{defaults, TaskKind};

pub const DEFAULT_PEDESTRIANS: usize = 10;
pub const DEFAULT_FEEDBACK_PROBABILITY: f64 = 0.5;
pub const MANIFEST_SCHEMA: &str = "salm-run/1";

/// Everything needed to start one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub task: TaskKind,
    pub seed: u64,
    pub pedestrians: usize,
    /// Replaces the generated scene.
    pub scenario: Option<ScenarioFile>,
    /// Initial user request; the scenario default guidance when absent.
    pub request: Option<String>,
    pub feedback: Vec<FeedbackItem>,
    pub config: EpisodeConfig,
}

impl EpisodeSpec {
    pub fn new(task: TaskKind, seed: u64) -> Self {
        Self {
            task,
            seed,
            pedestrians: DEFAULT_PEDESTRIANS,
            scenario: None,
            request: None,
            feedback: Vec::new(),
            config: EpisodeConfig::default(),
        }
    }
}

/// Builds the world, guidance, backend and planner for `spec`.
pub fn start_episode(spec: &EpisodeSpec, factory: &PlannerFactory) -> Result<Episode> {
    let mut world = match &spec.scenario {
        Some(s) => s.to_world()?,
        None => spawn_scenario(spec.seed, spec.pedestrians, spec.task)?,
    };
    let backend = factory.config.backend.build(spec.seed)?;
    let llm = LlmClient::new(backend, factory.config.backend.params());
    let guidance = match &spec.request {
        Some(text) => parse_request(&UserUtterance::request(text.as_str()), &llm)?.guidance,
        None => initial_guidance(spec.task, &world),
    };
    if guidance.task != spec.task {
        return Err(Error::Config(format!("request `{}` asks for {} but the episode is {}", guidance.raw_text, guidance.task, spec.task)));
    }
    if let Some(t) = guidance.target {
        world.robot.goal = t;
    }
    let header = EpisodeHeader {
        schema: LOG_SCHEMA.into(),
        seed: spec.seed,
        task: spec.task,
        planner: factory.config.kind.name().into(),
        backend: llm.identity(),
        rl_slot: factory.rl_description(),
        config: spec.config,
        scenario: ScenarioFile::from_world(&world, Some(spec.task), Some(spec.seed)),
        initial_guidance: guidance.clone(),
        initial_target: guidance.target,
        feedback_script: spec.feedback.clone(),
    };
    let planner = factory.build(llm.clone(), spec.seed);
    Ok(Episode::new(header, world, guidance, planner, llm, spec.feedback.clone(), spec.config))
}

/// A finished episode and its backend transcript.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub log: EpisodeLog,
    pub transcript: Transcript,
}

impl EpisodeResult {
    pub fn crashed(&self) -> bool {
        self.log.outcome.error.is_some()
    }
}

/// Runs `spec` to the end. Setup errors and panics become a crashed outcome.
pub fn run_spec(spec: &EpisodeSpec, factory: &PlannerFactory) -> EpisodeResult {
    let t_timeout = spec.config.max_steps as f64 * defaults::DT;
    let attempt = catch_unwind(AssertUnwindSafe(|| -> Result<EpisodeResult> {
        let mut ep = start_episode(spec, factory)?;
        while ep.step(&mut ()).is_some() {}
        let transcript = ep.llm().transcript();
        Ok(EpisodeResult { log: ep.into_log(), transcript })
    }));
    let error = match attempt {
        Ok(Ok(r)) => return r,
        Ok(Err(e)) => e.to_string(),
        Err(panic) => panic_message(&panic),
    };
    tracing::error!(seed = spec.seed, "episode crashed: {error}");
    EpisodeResult { log: crashed_log(spec, factory, &error, t_timeout), transcript: Transcript::default() }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}

fn crashed_log(spec: &EpisodeSpec, factory: &PlannerFactory, error: &str, t_timeout: f64) -> EpisodeLog {
    let scenario = spec.scenario.clone().unwrap_or_else(|| ScenarioFile {
        schema: SCENARIO_SCHEMA.into(),
        arena_radius: defaults::ARENA_RADIUS,
        dt: defaults::DT,
        task: Some(spec.task),
        seed: Some(spec.seed),
        agents: Vec::new(),
    });
    let header = EpisodeHeader {
        schema: LOG_SCHEMA.into(),
        seed: spec.seed,
        task: spec.task,
        planner: factory.config.kind.name().into(),
        backend: format!("{:?}", factory.config.backend.kind),
        rl_slot: factory.rl_description(),
        config: spec.config,
        scenario,
        initial_guidance: crate::guidance::GlobalGuidance::human_following(),
        initial_target: None,
        feedback_script: spec.feedback.clone(),
    };
    EpisodeLog { header, steps: Vec::new(), outcome: EpisodeOutcome::crashed(error, t_timeout) }
}

/// One planner on one task over consecutive seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub planner: PlannerConfig,
    pub task: TaskKind,
    pub cases: usize,
    pub seed0: u64,
    pub feedback_probability: f64,
    pub pedestrians: usize,
    pub episode: EpisodeConfig,
    /// Worker threads; 0 uses the rayon default.
    #[serde(skip)]
    pub workers: usize,
}

impl BatchConfig {
    pub fn new(planner: PlannerConfig, task: TaskKind, cases: usize, seed0: u64) -> Self {
        Self {
            planner,
            task,
            cases,
            seed0,
            feedback_probability: DEFAULT_FEEDBACK_PROBABILITY,
            pedestrians: DEFAULT_PEDESTRIANS,
            episode: EpisodeConfig::default(),
            workers: 0,
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.cases as u64).map(move |i| self.seed0 + i)
    }

    pub fn spec(&self, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            task: self.task,
            seed,
            pedestrians: self.pedestrians,
            scenario: None,
            request: None,
            feedback: feedback_script(seed, self.task, self.feedback_probability),
            config: self.episode,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs the batch; results come back in seed order whatever the worker count.
pub fn run_batch(cfg: &BatchConfig) -> Result<Vec<EpisodeResult>> {
    if cfg.cases == 0 {
        return Err(Error::Config("a batch needs at least one case".into()));
    }
    if !(0.0..=1.0).contains(&cfg.feedback_probability) {
        return Err(Error::Config(format!("feedback probability {} outside [0, 1]", cfg.feedback_probability)));
    }
    let factory = cfg.planner.prepare()?;
    let seeds: Vec<u64> = cfg.seeds().collect();
    Ok(pool(cfg.workers)?.install(|| seeds.par_iter().map(|&s| run_spec(&cfg.spec(s), &factory)).collect()))
}

/// A full evaluation: every planner on every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub planners: Vec<PlannerConfig>,
    pub tasks: Vec<TaskKind>,
    pub cases: usize,
    pub seed: u64,
    pub feedback_probability: f64,
    pub pedestrians: usize,
    pub episode: EpisodeConfig,
    #[serde(skip)]
    pub workers: usize,
}

impl EvalConfig {
    pub fn new(planners: Vec<PlannerConfig>, tasks: Vec<TaskKind>, cases: usize, seed: u64) -> Self {
        Self {
            planners,
            tasks,
            cases,
            seed,
            feedback_probability: DEFAULT_FEEDBACK_PROBABILITY,
            pedestrians: DEFAULT_PEDESTRIANS,
            episode: EpisodeConfig::default(),
            workers: 0,
        }
    }

    /// Hex sha256 of the canonical JSON; the worker count is not part of it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn run_id(&self) -> String {
        format!("run-{}", &self.hash()[..12])
    }

    fn batch(&self, planner: &PlannerConfig, task: TaskKind) -> BatchConfig {
        BatchConfig {
            planner: planner.clone(),
            task,
            cases: self.cases,
            seed0: self.seed,
            feedback_probability: self.feedback_probability,
            pedestrians: self.pedestrians,
            episode: self.episode,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub ss_version: String,
    pub backends: Vec<String>,
    pub config: EvalConfig,
    pub crashed_episodes: usize,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub table: MetricsTable,
}

/// Runs `cfg` and writes logs, transcripts, reports and the manifest under `out/{run-id}`.
pub fn run_eval(cfg: &EvalConfig, out: &Path) -> Result<EvalRun> {
    if cfg.planners.is_empty() || cfg.tasks.is_empty() {
        return Err(Error::Config("nothing to evaluate: no planners or no tasks".into()));
    }
    let run_id = cfg.run_id();
    let dir = out.join(&run_id);
    let mut table = MetricsTable::default();
    let mut backends = Vec::new();
    let mut crashed = 0;
    for planner in &cfg.planners {
        let pdir = dir.join(planner.kind.name());
        std::fs::create_dir_all(&pdir)?;
        for &task in &cfg.tasks {
            let results = run_batch(&cfg.batch(planner, task))?;
            for r in &results {
                let stem = format!("{task}-{}", r.log.header.seed);
                r.log.write_jsonl(&pdir.join(format!("{stem}.jsonl")))?;
                if !r.transcript.is_empty() {
                    r.transcript.write_jsonl(&pdir.join(format!("{stem}.transcript.jsonl")), &stem)?;
                }
                if !backends.contains(&r.log.header.backend) && !r.crashed() {
                    backends.push(r.log.header.backend.clone());
                }
            }
            crashed += results.iter().filter(|r| r.crashed()).count();
            let logs: Vec<&EpisodeLog> = results.iter().map(|r| &r.log).collect();
            table.rows.push(MetricsRow::from_logs(planner.kind.name(), task, &logs));
        }
    }
    std::fs::write(dir.join("metrics.csv"), table.to_csv())?;
    let rows = ReportRow::from_table(&table);
    std::fs::write(dir.join("report.csv"), report_csv(&rows))?;
    std::fs::write(dir.join("report.md"), report_markdown(&rows))?;
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        run_id,
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        ss_version: SS_VERSION.into(),
        backends,
        config: cfg.clone(),
        crashed_episodes: crashed,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(EvalRun { dir, manifest, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::PlannerKind;

    #[test]
    fn run_id_ignores_worker_count() {
        let mut a = EvalConfig::new(vec![PlannerConfig::new(PlannerKind::OrcaBaseline)], vec![TaskKind::P2p], 3, 7);
        let id = a.run_id();
        a.workers = 3;
        assert_eq!(a.run_id(), id);
        a.seed = 8;
        assert_ne!(a.run_id(), id);
    }

    #[test]
    fn batch_rejects_bad_inputs() {
        let mut b = BatchConfig::new(PlannerConfig::new(PlannerKind::OrcaBaseline), TaskKind::P2p, 0, 1);
        assert!(run_batch(&b).is_err());
        b.cases = 1;
        b.feedback_probability = 1.5;
        assert!(run_batch(&b).is_err());
    }

    #[test]
    fn scenario_failure_is_recorded_not_raised() {
        let mut b = BatchConfig::new(PlannerConfig::new(PlannerKind::OrcaBaseline), TaskKind::P2p, 2, 1);
        b.pedestrians = 500;
        let out = run_batch(&b).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|r| r.crashed() && r.log.outcome.failures == 1));
    }

    #[test]
    fn results_are_in_seed_order() {
        let mut b = BatchConfig::new(PlannerConfig::new(PlannerKind::OrcaBaseline), TaskKind::P2p, 4, 30);
        b.pedestrians = 3;
        b.workers = 3;
        let seeds: Vec<u64> = run_batch(&b).unwrap().iter().map(|r| r.log.header.seed).collect();
        assert_eq!(seeds, vec![30, 31, 32, 33]);
    }
}
