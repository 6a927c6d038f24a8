use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use salm_core::episode::planners::RlSlotConfig;
use salm_core::episode::{EpisodeLog, PlannerConfig, PlannerKind};
use salm_core::eval::{report_markdown, run_eval, EpisodeSpec, EvalConfig, ReportRow};
use salm_core::lfm::ScoreParsing;
use salm_core::llm::{BackendConfig, FaultConfig};
use salm_core::rlnm::train::{train_policy, TrainConfig};
use salm_core::sim::{spawn_scenario, ScenarioFile};
use salm_core::types::TaskKind;

#[derive(Parser)]
#[command(name = "salm", version, about = "Language-guided social navigation: batch evaluation, replay and live sessions")]
struct Cli {
    /// Log filter, e.g. `info` or `salm_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded batches and write logs, reports and a run manifest.
    Eval(EvalArgs),
    /// Summarize an episode log, optionally re-simulating it.
    Replay(ReplayArgs),
    /// Generate the scenario for a seed.
    Scenario(ScenarioArgs),
    /// Serve live sessions over HTTP and WebSocket.
    Serve(ServeArgs),
    /// Train the policy head with REINFORCE.
    Train(TrainArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    P2p,
    Hf,
    Both,
}

impl TaskArg {
    fn tasks(self) -> Vec<TaskKind> {
        match self {
            TaskArg::P2p => vec![TaskKind::P2p],
            TaskArg::Hf => vec![TaskKind::Hf],
            TaskArg::Both => vec![TaskKind::P2p, TaskKind::Hf],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Args, Clone)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendArg,
    /// Chat-completions URL for `--backend http`.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Replacement rule table for the mock backend.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    /// Corrupt this fraction of backend calls (timeouts, garbage, out-of-range numbers).
    #[arg(long)]
    fault_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    fault_seed: u64,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig> {
        let mut b = match self.backend {
            BackendArg::Mock => BackendConfig::mock(),
            BackendArg::Http => {
                let Some(endpoint) = &self.endpoint else { bail!("--backend http needs --endpoint") };
                BackendConfig::http(endpoint.clone(), self.model.clone().unwrap_or_else(|| "gpt-4o".into()))
            }
        };
        b.api_key_env = self.api_key_env.clone();
        b.rules_path = self.rules.clone();
        b.timeout_secs = self.timeout_secs;
        if let Some(p) = self.fault_rate {
            b.faults = Some(FaultConfig { probability: p, seed: self.fault_seed });
        }
        Ok(b)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Planner name, repeatable; `all` runs the baseline and every ablation.
    #[arg(long, default_value = "SALM")]
    planner: Vec<String>,
    #[arg(long, value_enum, default_value = "p2p")]
    task: TaskArg,
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    feedback_probability: f64,
    #[arg(long, default_value_t = 10)]
    pedestrians: usize,
    #[command(flatten)]
    backend: BackendArgs,
    /// Policy weights for the RL slot; the ORCA fallback when absent.
    #[arg(long)]
    rl_weights: Option<PathBuf>,
    /// Prompt template directory.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    lfm_every: u64,
    /// Accept only JSON score replies from the evaluator.
    #[arg(long)]
    strict_scores: bool,
    #[arg(long, default_value_t = 120)]
    max_steps: u64,
    /// Leave thought graphs out of the step records.
    #[arg(long)]
    no_graphs: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn planner_kinds(names: &[String]) -> Result<Vec<PlannerKind>> {
    let mut kinds = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            kinds.extend(PlannerKind::ALL);
        } else {
            kinds.push(n.parse()?);
        }
    }
    kinds.dedup();
    Ok(kinds)
}

fn eval(a: EvalArgs) -> Result<()> {
    let backend = a.backend.config()?;
    let rl_slot = match &a.rl_weights {
        Some(p) => RlSlotConfig::Weights { path: p.clone(), sample_seed: None },
        None => RlSlotConfig::Fallback,
    };
    let planners = planner_kinds(&a.planner)?
        .into_iter()
        .map(|k| {
            let mut p = PlannerConfig::new(k).with_backend(backend.clone());
            p.rl_slot = rl_slot.clone();
            p.templates = a.templates.clone();
            p.lfm.every_k_steps = a.lfm_every;
            if a.strict_scores {
                p.lfm.score_parsing = ScoreParsing::StrictJson;
            }
            p
        })
        .collect();
    let mut cfg = EvalConfig::new(planners, a.task.tasks(), a.cases, a.seed);
    cfg.feedback_probability = a.feedback_probability;
    cfg.pedestrians = a.pedestrians;
    cfg.episode.max_steps = a.max_steps;
    cfg.episode.log_graphs = !a.no_graphs;
    cfg.workers = a.workers;
    let run = run_eval(&cfg, &a.out)?;
    print!("{}", report_markdown(&ReportRow::from_table(&run.table)));
    println!("run {} written to {}", run.manifest.run_id, run.dir.display());
    if run.manifest.crashed_episodes > 0 {
        eprintln!("{} episode(s) crashed; see their logs", run.manifest.crashed_episodes);
    }
    Ok(())
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Print one line per step.
    #[arg(long)]
    steps: bool,
    /// Re-run the episode from its header with the mock backend and compare trajectories.
    #[arg(long)]
    rerun: bool,
}

fn replay(a: ReplayArgs) -> Result<()> {
    let log = EpisodeLog::read_jsonl(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let h = &log.header;
    println!("{} {} seed {} backend {} rl {}", h.planner, h.task, h.seed, h.backend, h.rl_slot);
    if a.steps {
        for s in &log.steps {
            let w = s.weights.map(|w| format!(" w=({:.2}, {:.2})", w.s1, w.s2)).unwrap_or_default();
            let ev: Vec<String> = s.events.iter().map(|e| format!("{:?}", e.kind)).collect();
            println!(
                "step {:>3} v{} robot ({:.2}, {:.2}) a_r ({:.2}, {:.2}){w} r={:.3} {}",
                s.step,
                s.guidance_version,
                s.world.robot.pos.x,
                s.world.robot.pos.y,
                s.a_r.vx,
                s.a_r.vy,
                s.reward.total,
                ev.join(",")
            );
        }
    }
    let o = &log.outcome;
    println!(
        "{:?} after {} steps ({:.2} s), path {:.2} m, discomfort {:.1}%, feedback events {}, failures {}, llm calls {}",
        o.status,
        o.steps,
        o.nav_time,
        o.path_length,
        100.0 * o.discomfort_fraction,
        o.feedback_events,
        o.failures,
        o.llm_calls
    );
    if a.rerun {
        let kind: PlannerKind = h.planner.parse()?;
        let factory = PlannerConfig::new(kind).prepare()?;
        let spec = EpisodeSpec {
            task: h.task,
            seed: h.seed,
            pedestrians: 0,
            scenario: Some(h.scenario.clone()),
            request: None,
            feedback: h.feedback_script.clone(),
            config: h.config,
        };
        let again = salm_core::eval::run_spec(&spec, &factory).log;
        let same = again.steps.len() == log.steps.len()
            && again.steps.iter().zip(&log.steps).all(|(x, y)| x.world == y.world && x.a_r == y.a_r);
        if !same {
            bail!("re-simulation diverged from the log");
        }
        println!("re-simulation matches the log bit for bit");
    }
    Ok(())
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "p2p")]
    task: TaskArg,
    #[arg(long, default_value_t = 10)]
    pedestrians: usize,
    /// Print the scenario file as JSON.
    #[arg(long)]
    dump: bool,
    /// Write the scenario file here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn scenario(a: ScenarioArgs) -> Result<()> {
    let task = match a.task {
        TaskArg::Hf => TaskKind::Hf,
        TaskArg::P2p => TaskKind::P2p,
        TaskArg::Both => bail!("pick one task for a scenario"),
    };
    let w = spawn_scenario(a.seed, a.pedestrians, task)?;
    let file = ScenarioFile::from_world(&w, Some(task), Some(a.seed));
    let json = serde_json::to_string_pretty(&file)? + "\n";
    if let Some(p) = &a.out {
        std::fs::write(p, &json)?;
    }
    if a.dump {
        print!("{json}");
    } else if a.out.is_none() {
        println!(
            "seed {} {}: robot ({:.2}, {:.2}) -> ({:.2}, {:.2}), {} pedestrians",
            a.seed,
            task,
            w.robot.position.x,
            w.robot.position.y,
            w.robot.goal.x,
            w.robot.goal.y,
            w.pedestrians.len()
        );
    }
    Ok(())
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, default_value_t = 8)]
    max_sessions: usize,
    /// Directory for session logs.
    #[arg(long, default_value = "sessions")]
    log_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = salm_server::ServerConfig::new(a.log_dir);
    cfg.max_sessions = a.max_sessions;
    cfg.backend = a.backend.config()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        salm_server::serve(listener, cfg).await?;
        Ok(())
    })
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    weights_seed: u64,
    #[arg(long, default_value_t = 2)]
    min_pedestrians: usize,
    #[arg(long, default_value_t = 4)]
    max_pedestrians: usize,
    /// Output directory for weights.json and training_curve.csv.
    #[arg(long, default_value = "policy")]
    out: PathBuf,
}

fn train(a: TrainArgs) -> Result<()> {
    if a.min_pedestrians > a.max_pedestrians {
        bail!("--min-pedestrians exceeds --max-pedestrians");
    }
    let cfg = TrainConfig {
        seed: a.seed,
        weights_seed: a.weights_seed,
        iterations: a.iterations,
        pedestrians: (a.min_pedestrians, a.max_pedestrians),
        ..TrainConfig::default()
    };
    let out = train_policy(&cfg)?;
    out.write(&a.out)?;
    if let (Some(first), Some(last)) = (out.curve.first(), out.curve.last()) {
        println!("mean return {:.3} -> {:.3} over {} iterations", first.mean_return, last.mean_return, out.curve.len());
    }
    println!("weights {} written to {}", out.weights.hash(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log_level))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
        Command::Scenario(a) => scenario(a),
        Command::Serve(a) => serve(a),
        Command::Train(a) => train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
