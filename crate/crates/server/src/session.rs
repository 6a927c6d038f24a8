//! One live episode: a driver task steps it at the playback rate and fans
//! sequenced messages out to every connected client.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::{broadcast, mpsc};
use tokio::time::{sleep_until, Instant};

use salm_core::episode::{Episode, EpisodeHeader, EpisodeLog, EpisodeOutcome, EventKind, LogLine, PlannerConfig, PlannerKind, StepRecord};
use salm_core::eval::{start_episode, EpisodeSpec};
use salm_core::lfm::GotSummary;
use salm_core::llm::{BackendConfig, BackendKind};
use salm_core::types::TaskKind;

use crate::wire::{Envelope, ServerMessage, StartParams, StateUpdate, WIRE_SCHEMA};
use crate::ServerConfig;

const CHANNEL_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Running,
    Paused,
    Ended,
}

#[derive(Debug)]
pub enum Control {
    Start(StartParams),
    Command(String),
    Pause,
    Resume,
    SetRate(f64),
    Shutdown(String),
}

#[derive(Debug)]
pub struct Shared {
    pub phase: Phase,
    pub clients: usize,
    /// Bumped on every disconnect so a stale grace timer can tell it lost the race.
    pub disconnects: u64,
    pub header: Option<EpisodeHeader>,
    pub steps: Vec<StepRecord>,
    pub outcome: Option<EpisodeOutcome>,
}

pub struct Session {
    pub id: String,
    pub shared: Mutex<Shared>,
    control: mpsc::UnboundedSender<Control>,
    out: broadcast::Sender<String>,
    seq: Mutex<u64>,
}

impl Session {
    /// Creates the session and spawns its driver.
    pub fn spawn(id: String, defaults: StartParams, cfg: Arc<ServerConfig>) -> Arc<Session> {
        let (control, rx) = mpsc::unbounded_channel();
        let (out, _) = broadcast::channel(CHANNEL_CAPACITY);
        let session = Arc::new(Session {
            id,
            shared: Mutex::new(Shared {
                phase: Phase::Idle,
                clients: 0,
                disconnects: 0,
                header: None,
                steps: Vec::new(),
                outcome: None,
            }),
            control,
            out,
            seq: Mutex::new(0),
        });
        tokio::spawn(Driver::new(session.clone(), defaults, cfg.clone()).run(rx));
        session.arm_grace_timer(cfg.grace);
        session
    }

    pub fn send(&self, c: Control) -> bool {
        self.control.send(c).is_ok()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.out.subscribe()
    }

    pub fn phase(&self) -> Phase {
        self.shared.lock().unwrap().phase
    }

    /// Assigns the next sequence number and broadcasts; the lock keeps channel order equal to seq order.
    pub fn emit(&self, body: ServerMessage) {
        let mut seq = self.seq.lock().unwrap();
        *seq += 1;
        let env = Envelope { schema: WIRE_SCHEMA.into(), session: self.id.clone(), seq: *seq, body };
        let text = serde_json::to_string(&env).expect("wire message serializes");
        let _ = self.out.send(text);
    }

    pub fn connect(&self) {
        self.shared.lock().unwrap().clients += 1;
    }

    pub fn disconnect(self: &Arc<Self>, grace: Duration) {
        let idle = {
            let mut s = self.shared.lock().unwrap();
            s.clients = s.clients.saturating_sub(1);
            s.disconnects += 1;
            s.clients == 0
        };
        if idle {
            self.arm_grace_timer(grace);
        }
    }

    /// Ends the episode if nobody is connected once `grace` has passed.
    fn arm_grace_timer(self: &Arc<Self>, grace: Duration) {
        let marker = self.shared.lock().unwrap().disconnects;
        let me = Arc::downgrade(self);
        tokio::spawn(async move {
            tokio::time::sleep(grace).await;
            let Some(s) = me.upgrade() else { return };
            let abandoned = {
                let sh = s.shared.lock().unwrap();
                sh.clients == 0 && sh.disconnects == marker && sh.phase != Phase::Ended
            };
            if abandoned {
                s.send(Control::Shutdown(format!("no client connected for {} s", grace.as_secs())));
            }
        });
    }

    /// Header, steps so far and the outcome once known, as JSON lines.
    pub fn log_jsonl(&self) -> Option<String> {
        let s = self.shared.lock().unwrap();
        let header = s.header.clone()?;
        let mut lines = vec![LogLine::Header(Box::new(header))];
        lines.extend(s.steps.iter().map(|r| LogLine::Step(Box::new(r.clone()))));
        if let Some(o) = &s.outcome {
            lines.push(LogLine::Outcome(Box::new(o.clone())));
        }
        let mut text = String::new();
        for l in lines {
            text.push_str(&serde_json::to_string(&l).expect("log line serializes"));
            text.push('\n');
        }
        Some(text)
    }
}

struct Driver {
    session: Arc<Session>,
    defaults: StartParams,
    cfg: Arc<ServerConfig>,
    episode: Option<Episode>,
    rate: f64,
    paused: bool,
}

impl Driver {
    fn new(session: Arc<Session>, defaults: StartParams, cfg: Arc<ServerConfig>) -> Self {
        let rate = defaults.rate.unwrap_or(cfg.default_rate);
        Self { session, defaults, cfg, episode: None, rate, paused: false }
    }

    fn error(&self, message: impl Into<String>) {
        self.session.emit(ServerMessage::Error { message: message.into() });
    }

    fn set_phase(&self, phase: Phase) {
        self.session.shared.lock().unwrap().phase = phase;
    }

    fn period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.rate)
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Control>) {
        let mut next_tick = Instant::now();
        loop {
            if self.session.phase() == Phase::Ended {
                break;
            }
            let runnable = self.episode.is_some() && !self.paused;
            let control = if runnable {
                tokio::select! {
                    biased;
                    c = rx.recv() => Some(c),
                    _ = sleep_until(next_tick) => None,
                }
            } else {
                Some(rx.recv().await)
            };
            match control {
                Some(None) => break,
                Some(Some(c)) => {
                    let was_running = runnable;
                    self.handle(c).await;
                    if !was_running {
                        next_tick = Instant::now();
                    }
                }
                None => {
                    self.step().await;
                    next_tick = (next_tick + self.period()).max(Instant::now());
                }
            }
        }
    }

    async fn handle(&mut self, c: Control) {
        match c {
            Control::Start(p) => self.start(p).await,
            Control::Command(text) => match self.episode.as_mut() {
                Some(ep) if !text.trim().is_empty() => ep.push_feedback(text),
                Some(_) => self.error("empty command"),
                None => self.error("no episode running; send start first"),
            },
            Control::Pause => {
                if self.episode.is_some() {
                    self.paused = true;
                    self.set_phase(Phase::Paused);
                } else {
                    self.error("no episode to pause");
                }
            }
            Control::Resume => {
                if self.episode.is_some() {
                    self.paused = false;
                    self.set_phase(Phase::Running);
                } else {
                    self.error("no episode to resume");
                }
            }
            Control::SetRate(r) => {
                if r.is_finite() && r > 0.0 && r <= self.cfg.max_rate {
                    self.rate = r;
                } else {
                    self.error(format!("rate {r} outside (0, {}]", self.cfg.max_rate));
                }
            }
            Control::Shutdown(reason) => {
                if let Some(ep) = self.episode.as_mut() {
                    ep.abort(&reason);
                }
                self.error(reason);
                self.finish();
            }
        }
    }

    fn spec(&self, p: &StartParams) -> Result<(EpisodeSpec, PlannerConfig), String> {
        let d = &self.defaults;
        let task = p.task.or(d.task).or(p.scenario.as_ref().and_then(|s| s.task)).unwrap_or(TaskKind::P2p);
        let planner = p.planner.as_deref().or(d.planner.as_deref()).unwrap_or("SALM");
        let kind: PlannerKind = planner.parse().map_err(|e: salm_core::Error| e.to_string())?;
        let backend = match p.backend.as_deref().or(d.backend.as_deref()).unwrap_or("mock") {
            "mock" if self.cfg.backend.kind == BackendKind::Mock => self.cfg.backend.clone(),
            "mock" => BackendConfig::mock(),
            "http" if self.cfg.backend.kind == BackendKind::Http => self.cfg.backend.clone(),
            other => return Err(format!("backend `{other}` is not available on this server")),
        };
        let mut spec = EpisodeSpec::new(task, p.seed.or(d.seed).unwrap_or(0));
        spec.pedestrians = p.pedestrians.or(d.pedestrians).unwrap_or(spec.pedestrians);
        spec.scenario = p.scenario.clone().or(d.scenario.clone());
        spec.request = p.request.clone().or(d.request.clone());
        spec.config.log_graphs = true;
        Ok((spec, PlannerConfig::new(kind).with_backend(backend)))
    }

    async fn start(&mut self, p: StartParams) {
        if self.episode.is_some() || self.session.phase() == Phase::Ended {
            return self.error("this session already ran its episode");
        }
        if let Some(r) = p.rate {
            if !(r.is_finite() && r > 0.0 && r <= self.cfg.max_rate) {
                return self.error(format!("rate {r} outside (0, {}]", self.cfg.max_rate));
            }
            self.rate = r;
        }
        let (spec, planner) = match self.spec(&p) {
            Ok(x) => x,
            Err(e) => return self.error(e),
        };
        let built = tokio::task::spawn_blocking(move || {
            let factory = planner.prepare()?;
            start_episode(&spec, &factory)
        })
        .await;
        match built {
            Ok(Ok(ep)) => {
                self.session.shared.lock().unwrap().header = Some(ep.header().clone());
                self.session.emit(ServerMessage::GuidanceUpdate { step: 0, guidance: ep.guidance.clone() });
                self.episode = Some(ep);
                self.paused = false;
                self.set_phase(Phase::Running);
            }
            Ok(Err(e)) => self.error(format!("could not start: {e}")),
            Err(e) => self.error(format!("could not start: {e}")),
        }
    }

    async fn step(&mut self) {
        let Some(mut ep) = self.episode.take() else { return };
        let joined = tokio::task::spawn_blocking(move || {
            let rec = ep.step(&mut ()).cloned();
            (ep, rec)
        })
        .await;
        let (ep, rec) = match joined {
            Ok(x) => x,
            Err(e) => {
                self.error(format!("episode crashed: {e}"));
                self.set_phase(Phase::Ended);
                return;
            }
        };
        self.episode = Some(ep);
        let Some(rec) = rec else { return self.finish() };
        let ep = self.episode.as_ref().expect("just restored");
        self.session.emit(ServerMessage::StateUpdate(Box::new(StateUpdate {
            step: rec.step,
            status: rec.status,
            world: rec.world.clone(),
            a_r: rec.a_r,
            a_rl: rec.a_rl,
            a_lm: rec.a_lm.as_ref().map(|a| a.action),
            weights: rec.weights,
            target: rec.target,
            guidance_version: rec.guidance_version,
            social_distance: rec.social_distance,
            events: rec.events.clone(),
        })));
        if rec.events.iter().any(|e| e.kind == EventKind::GuidanceUpdate) {
            self.session.emit(ServerMessage::GuidanceUpdate { step: rec.step, guidance: ep.guidance.clone() });
        }
        if rec.lfm_ran {
            let w = rec.weights.unwrap_or(salm_core::lfm::FusionWeights::RL_ONLY);
            let summary = GotSummary {
                s1: w.s1,
                s2: w.s2,
                vertices: rec.got.as_ref().map_or(0, |g| g.vertices.len()),
                flags: rec.events.iter().filter(|e| e.kind == EventKind::LfmFlag).count(),
            };
            self.session.emit(ServerMessage::GotSummary { step: rec.step, summary });
        }
        let ended = rec.status.is_terminal();
        self.session.shared.lock().unwrap().steps.push(rec);
        if ended {
            self.finish();
        }
    }

    /// Emits `episode_end` and persists the log.
    fn finish(&mut self) {
        if self.session.phase() == Phase::Ended {
            return;
        }
        let Some(ep) = self.episode.take() else {
            self.set_phase(Phase::Ended);
            return;
        };
        let log: EpisodeLog = ep.into_log();
        {
            let mut s = self.session.shared.lock().unwrap();
            // an abort rewrites the last step, so the engine's copy wins
            s.steps = log.steps.clone();
            s.outcome = Some(log.outcome.clone());
            s.phase = Phase::Ended;
        }
        self.session.emit(ServerMessage::EpisodeEnd { outcome: Box::new(log.outcome.clone()) });
        let path: PathBuf = self.cfg.log_dir.join(format!("{}.jsonl", self.session.id));
        if let Err(e) = std::fs::create_dir_all(&self.cfg.log_dir).map_err(salm_core::Error::from).and_then(|_| log.write_jsonl(&path)) {
            tracing::error!(session = %self.session.id, "writing log failed: {e}");
        }
    }
}
