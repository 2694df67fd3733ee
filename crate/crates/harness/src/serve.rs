//! Live training over a newline-delimited JSON socket protocol.
//!
//! One engine thread owns the training session and applies control
//! messages only between batches. Clients connect over TCP; each line a
//! client sends is one control message:
//!
//! ```json
//! {"cmd":"configure","key":"seed","value":17,"id":1}
//! {"cmd":"configure","value":{"dataset":"mnist","architecture":{"kind":"mlp","hidden":64}},"id":2}
//! {"cmd":"start","id":3}
//! {"cmd":"set_hyper","key":"lr","value":0.05,"id":4}
//! {"cmd":"pause","id":5}
//! {"cmd":"resume","id":6}
//! {"cmd":"stop","id":7}
//! ```
//!
//! Every message with an `id` is answered by `{"ack":id,"ok":bool}` plus a
//! `"reason"` when `ok` is false. Lines that do not parse produce
//! `{"event":"error","reason":...}`. While training, the engine emits
//!
//! ```json
//! {"event":"stats","samples_seen":3200,"loss":0.41,"train_acc":0.88,"test_acc":0.9,
//!  "per_class_f1":[...10 values, percent...],"lr":0.05,"momentum":0.9,"optimizer":"momentum","seed":7}
//! ```
//!
//! every `stats_every` samples (checked at batch boundaries), and
//! `{"event":"state","state":...,"samples_seen":n,"dropped_stats":k}` on
//! every state transition. `loss` and `train_acc` cover the training batches
//! since the previous stats event; `test_acc` and `per_class_f1` come from
//! an eval-mode pass over the first `eval_slice` test images.
//!
//! Outgoing messages go through a bounded queue: when it holds
//! `stats_buffer` stats events the oldest one is dropped and counted.
//! Acks, errors and state events are never dropped. The engine outlives
//! client connections, so a reconnecting client continues the same session.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use handnet::arch::DropoutPlacement;
use handnet::{checkpoint, Architecture, HyperParams, OptimizerKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Dataset, ExperimentConfig, ExperimentId, Subset};
use crate::datasets::{self, Splits};
use crate::error::{HarnessError, Result};
use crate::record::{Divergence, HyperChange, RunRecord, SeriesPoint};
use crate::train::{evaluate, is_divergence, Trainer};

/// Session settings, changeable with `configure` while no session runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub dataset: Dataset,
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub rho: f64,
    pub eps: f64,
    /// Overrides the dropout rate of the architecture's dropout layer.
    pub dropout_rate: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub subset: Subset,
    pub stats_every: usize,
    pub eval_slice: usize,
    /// Finish after this many batches.
    pub max_batches: Option<usize>,
    /// Finish once this many samples have been seen.
    pub sample_budget: Option<usize>,
    /// Where to save the network when the session ends.
    pub checkpoint: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            dataset: Dataset::Cifar10,
            architecture: Architecture::CifarCnn {
                dropout: Some(0.5),
                placement: DropoutPlacement::BeforePool,
            },
            optimizer: OptimizerKind::Momentum,
            lr: 0.01,
            momentum: 0.9,
            rho: 0.95,
            eps: 1e-6,
            dropout_rate: None,
            batch_size: 32,
            seed: 7,
            subset: Subset::Full,
            stats_every: 1_000,
            eval_slice: 1_000,
            max_batches: None,
            sample_budget: None,
            checkpoint: None,
        }
    }
}

impl SessionConfig {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            learning_rate: self.lr,
            momentum: self.momentum,
            rho: self.rho,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(HarnessError::Config(format!("lr {} must be > 0", self.lr)));
        }
        self.hyper().validate()?;
        if let Some(r) = self.dropout_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(HarnessError::Config(format!("dropout_rate {r} outside [0, 1)")));
            }
        }
        if self.batch_size == 0 || self.stats_every == 0 || self.eval_slice == 0 {
            return Err(HarnessError::Config(
                "batch_size, stats_every and eval_slice must be >= 1".into(),
            ));
        }
        self.experiment_config().validate()
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::mnist(ExperimentId::Serve, self.architecture.clone());
        cfg.dataset = self.dataset;
        cfg.optimizer = self.optimizer;
        cfg.hyper = self.hyper();
        cfg.epochs = 0;
        cfg.sample_budget = self.sample_budget;
        cfg.batch_size = self.batch_size;
        cfg.seed = self.seed;
        cfg.subset = self.subset;
        cfg.eval_every = self.stats_every;
        cfg.eval_slice = Some(self.eval_slice);
        cfg
    }

    /// Sets one field from a JSON value, as `configure` with a `key` does.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("struct serializes to an object");
        if !map.contains_key(key) {
            return Err(HarnessError::Config(format!("unknown config key `{key}`")));
        }
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(obj)?;
        Ok(())
    }

    /// Overlays every field present in a JSON object.
    pub fn merge(&mut self, patch: Value) -> Result<()> {
        let Value::Object(fields) = patch else {
            return Err(HarnessError::Config("configure value must be an object".into()));
        };
        let mut next = self.clone();
        for (k, v) in fields {
            next.set(&k, v)?;
        }
        *self = next;
        Ok(())
    }
}

/// Builds the session's network and trainer exactly as the engine does.
pub fn session_trainer(cfg: &SessionConfig) -> Result<Trainer> {
    cfg.validate()?;
    let mut net = cfg.architecture.build(cfg.seed)?;
    if let Some(r) = cfg.dropout_rate {
        net.set_dropout_rate(r)?;
    }
    Trainer::new(net, cfg.optimizer, cfg.hyper(), cfg.batch_size, cfg.seed)
}

/// Trains `batches` full batches with no control traffic. Matches a serve
/// session with `max_batches = batches` bit for bit.
pub fn headless_run(cfg: &SessionConfig, splits: &Splits, batches: usize) -> Result<Trainer> {
    let train = splits.train.head(cfg.subset.resolve(splits.train.len()))?;
    let mut t = session_trainer(cfg)?;
    for _ in 0..batches {
        t.step(&train, usize::MAX)?;
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ControlMessage {
    pub cmd: String,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub value: Option<Value>,
    #[serde(default)]
    pub id: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub ack: i64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsEvent {
    pub event: String,
    pub samples_seen: u64,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub per_class_f1: Vec<f64>,
    pub lr: f64,
    pub momentum: f64,
    pub optimizer: String,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Idle,
    Running,
    Paused,
    Stopped,
    Finished,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub event: String,
    pub state: SessionState,
    pub samples_seen: u64,
    pub dropped_stats: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub event: String,
    pub reason: String,
}

struct Queued {
    stats: bool,
    line: String,
}

#[derive(Default)]
struct OutboxInner {
    queue: VecDeque<Queued>,
    stats_queued: usize,
    closed: bool,
}

/// Bounded outgoing queue shared by the engine and connection writers.
pub struct Outbox {
    inner: Mutex<OutboxInner>,
    ready: Condvar,
    stats_capacity: usize,
    dropped: AtomicU64,
}

impl Outbox {
    pub fn new(stats_capacity: usize) -> Self {
        Outbox {
            inner: Mutex::new(OutboxInner::default()),
            ready: Condvar::new(),
            stats_capacity: stats_capacity.max(1),
            dropped: AtomicU64::new(0),
        }
    }

    fn push(&self, stats: bool, line: String) {
        let mut g = self.inner.lock().expect("outbox lock");
        if stats && g.stats_queued >= self.stats_capacity {
            if let Some(i) = g.queue.iter().position(|q| q.stats) {
                g.queue.remove(i);
                g.stats_queued -= 1;
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        if stats {
            g.stats_queued += 1;
        }
        g.queue.push_back(Queued { stats, line });
        self.ready.notify_all();
    }

    pub fn send<T: Serialize>(&self, msg: &T) {
        self.push(false, serde_json::to_string(msg).expect("message serializes"));
    }

    pub fn send_stats(&self, msg: &StatsEvent) {
        self.push(true, serde_json::to_string(msg).expect("stats serialize"));
    }

    /// Next line, waiting up to `timeout`. `None` on timeout or close.
    pub fn pop(&self, timeout: Duration) -> Option<String> {
        let mut g = self.inner.lock().expect("outbox lock");
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(q) = g.queue.pop_front() {
                if q.stats {
                    g.stats_queued -= 1;
                }
                return Some(q.line);
            }
            let now = Instant::now();
            if g.closed || now >= deadline {
                return None;
            }
            g = self.ready.wait_timeout(g, deadline - now).expect("outbox lock").0;
        }
    }

    /// Puts a line that could not be delivered back at the front.
    fn unpop(&self, line: String) {
        let mut g = self.inner.lock().expect("outbox lock");
        g.queue.push_front(Queued { stats: false, line });
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("outbox lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn close(&self) {
        self.inner.lock().expect("outbox lock").closed = true;
        self.ready.notify_all();
    }
}

pub enum Inbound {
    Line(String),
    Shutdown,
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub data_dir: PathBuf,
    /// Session records are written here when a session ends.
    pub out_dir: Option<PathBuf>,
    pub config: SessionConfig,
    pub stats_buffer: usize,
}

impl ServeOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServeOptions {
            data_dir: data_dir.into(),
            out_dir: None,
            config: SessionConfig::default(),
            stats_buffer: 1024,
        }
    }
}

struct Session {
    trainer: Trainer,
    train: handnet::data::LabeledImageSet,
    record: RunRecord,
    batches: usize,
    window_loss: f64,
    window_correct: usize,
    window_n: usize,
    since_stats: usize,
    started: Instant,
}

pub struct Engine {
    opts: ServeOptions,
    config: SessionConfig,
    state: SessionState,
    session: Option<Session>,
    data: Vec<(Dataset, Splits)>,
    out: Arc<Outbox>,
    sessions_run: usize,
    /// Records of ended sessions, newest last.
    pub finished: Vec<RunRecord>,
}

fn set_hyper_value(cfg: &mut SessionConfig, key: &str, value: &Value) -> Result<()> {
    let num = || {
        value
            .as_f64()
            .ok_or_else(|| HarnessError::Config(format!("`{key}` needs a number")))
    };
    match key {
        "lr" | "learning_rate" => cfg.lr = num()?,
        "momentum" => cfg.momentum = num()?,
        "rho" => cfg.rho = num()?,
        "eps" => cfg.eps = num()?,
        "dropout_rate" | "dropout" => cfg.dropout_rate = Some(num()?),
        "optimizer" => {
            let s = value
                .as_str()
                .ok_or_else(|| HarnessError::Config("`optimizer` needs a string".into()))?;
            cfg.optimizer = s.parse()?;
        }
        other => return Err(HarnessError::Config(format!("unknown hyperparameter `{other}`"))),
    }
    Ok(())
}

impl Engine {
    pub fn new(opts: ServeOptions, out: Arc<Outbox>) -> Self {
        Engine {
            config: opts.config.clone(),
            opts,
            state: SessionState::Idle,
            session: None,
            data: Vec::new(),
            out,
            sessions_run: 0,
            finished: Vec::new(),
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    fn samples_seen(&self) -> u64 {
        self.session.as_ref().map_or(0, |s| s.trainer.samples_seen() as u64)
    }

    fn emit_state(&mut self, state: SessionState, reason: Option<String>) {
        self.state = state;
        self.out.send(&StateEvent {
            event: "state".into(),
            state,
            samples_seen: self.samples_seen(),
            dropped_stats: self.out.dropped(),
            reason,
        });
    }

    /// Handles one raw protocol line.
    pub fn handle_line(&mut self, line: &str) {
        let line = line.trim();
        if line.is_empty() {
            return;
        }
        let msg: ControlMessage = match serde_json::from_str(line) {
            Ok(m) => m,
            Err(e) => {
                self.out.send(&ErrorEvent {
                    event: "error".into(),
                    reason: format!("malformed message: {e}"),
                });
                return;
            }
        };
        let result = self.handle(&msg);
        match msg.id {
            Some(id) => self.out.send(&Ack {
                ack: id,
                ok: result.is_ok(),
                reason: result.err().map(|e| e.to_string()),
            }),
            None => {
                if let Err(e) = result {
                    self.out.send(&ErrorEvent {
                        event: "error".into(),
                        reason: format!("{} (message had no id): {e}", msg.cmd),
                    });
                }
            }
        }
    }

    fn handle(&mut self, msg: &ControlMessage) -> Result<()> {
        let active = matches!(self.state, SessionState::Running | SessionState::Paused);
        match msg.cmd.as_str() {
            "configure" => {
                if active {
                    return Err(HarnessError::Config("session running; stop it first".into()));
                }
                let mut next = self.config.clone();
                match (&msg.key, &msg.value) {
                    (Some(k), Some(v)) => next.set(k, v.clone())?,
                    (None, Some(v)) => next.merge(v.clone())?,
                    (None, None) => {}
                    (Some(k), None) => return Err(HarnessError::Config(format!("`{k}` needs a value"))),
                }
                next.validate()?;
                self.config = next;
                Ok(())
            }
            "start" => {
                if active {
                    return Err(HarnessError::Config("session already running".into()));
                }
                self.start()
            }
            "pause" => match self.state {
                SessionState::Running => {
                    self.emit_state(SessionState::Paused, None);
                    Ok(())
                }
                _ => Err(HarnessError::Config("not running".into())),
            },
            "resume" => match self.state {
                SessionState::Paused => {
                    self.emit_state(SessionState::Running, None);
                    Ok(())
                }
                _ => Err(HarnessError::Config("not paused".into())),
            },
            "stop" => {
                if !active {
                    return Err(HarnessError::Config("no active session".into()));
                }
                self.end(SessionState::Stopped, None)
            }
            "set_hyper" => {
                let key = msg
                    .key
                    .as_deref()
                    .ok_or_else(|| HarnessError::Config("set_hyper needs a key".into()))?;
                let value = msg
                    .value
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("set_hyper needs a value".into()))?;
                self.set_hyper(key, value)
            }
            other => Err(HarnessError::Config(format!("unknown cmd `{other}`"))),
        }
    }

    fn set_hyper(&mut self, key: &str, value: &Value) -> Result<()> {
        let mut next = self.config.clone();
        set_hyper_value(&mut next, key, value)?;
        next.validate()?;
        if let Some(s) = self.session.as_mut() {
            if let Some(r) = next.dropout_rate {
                if next.dropout_rate != self.config.dropout_rate {
                    s.trainer.network_mut().set_dropout_rate(r)?;
                }
            }
            s.trainer.set_hyper(next.hyper())?;
            s.trainer.set_optimizer(next.optimizer);
            s.record.config.hyper = next.hyper();
            s.record.config.optimizer = next.optimizer;
            s.record.hyper_log.push(HyperChange {
                samples_seen: s.trainer.samples_seen() as u64,
                key: key.to_string(),
                value: value.clone(),
            });
        }
        self.config = next;
        Ok(())
    }

    fn splits(&mut self, dataset: Dataset) -> Result<&Splits> {
        if !self.data.iter().any(|(d, _)| *d == dataset) {
            let splits = datasets::load(dataset, &self.opts.data_dir)?;
            self.data.push((dataset, splits));
        }
        Ok(&self.data.iter().find(|(d, _)| *d == dataset).expect("just loaded").1)
    }

    fn start(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        cfg.validate()?;
        let trainer = session_trainer(&cfg)?;
        let splits = self.splits(cfg.dataset)?;
        let train = splits.train.head(cfg.subset.resolve(splits.train.len()))?;
        let mut exp = cfg.experiment_config();
        exp.data_dir = self.opts.data_dir.clone();
        if let Some(o) = &self.opts.out_dir {
            exp.out_dir = o.clone();
        }
        self.sessions_run += 1;
        let record = RunRecord::new(format!("session{}_seed={}", self.sessions_run, cfg.seed), exp);
        self.session = Some(Session {
            trainer,
            train,
            record,
            batches: 0,
            window_loss: 0.0,
            window_correct: 0,
            window_n: 0,
            since_stats: 0,
            started: Instant::now(),
        });
        self.emit_state(SessionState::Running, None);
        self.emit_stats()?;
        Ok(())
    }

    fn emit_stats(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let slice = cfg.eval_slice;
        let Some(s) = self.session.as_mut() else {
            return Ok(());
        };
        let splits = &self.data.iter().find(|(d, _)| *d == cfg.dataset).expect("loaded at start").1;
        let te = evaluate(s.trainer.network(), &splits.test, Some(slice))?;
        let (loss, train_acc) = if s.window_n == 0 {
            let tr = evaluate(s.trainer.network(), &s.train, Some(slice))?;
            (tr.loss, tr.accuracy)
        } else {
            (s.window_loss / s.window_n as f64, s.window_correct as f64 / s.window_n as f64)
        };
        let hyper = s.trainer.hyper();
        let ev = StatsEvent {
            event: "stats".into(),
            samples_seen: s.trainer.samples_seen() as u64,
            loss,
            train_acc,
            test_acc: te.accuracy,
            per_class_f1: te.report.f1.clone(),
            lr: hyper.learning_rate,
            momentum: hyper.momentum,
            optimizer: s.trainer.optimizer_kind().as_str().to_string(),
            seed: cfg.seed,
        };
        s.record.series.push(SeriesPoint {
            samples_seen: ev.samples_seen,
            loss,
            train_acc,
            test_acc: te.accuracy,
        });
        s.record.final_report = Some(te.report);
        s.window_loss = 0.0;
        s.window_correct = 0;
        s.window_n = 0;
        s.since_stats = 0;
        self.out.send_stats(&ev);
        Ok(())
    }

    /// One training batch. Returns false when the session is not running.
    pub fn tick(&mut self) -> bool {
        if self.state != SessionState::Running {
            return false;
        }
        let (max_batches, budget, stats_every) =
            (self.config.max_batches, self.config.sample_budget, self.config.stats_every);
        let done = |s: &Session| {
            max_batches.is_some_and(|m| s.batches >= m) || budget.is_some_and(|b| s.trainer.samples_seen() >= b)
        };
        let s = self.session.as_mut().expect("running session");
        if done(s) {
            let _ = self.end(SessionState::Finished, None);
            return false;
        }
        let limit = budget.map_or(usize::MAX, |b| b - s.trainer.samples_seen());
        let failure = match s.trainer.step(&s.train, limit) {
            Ok(o) => {
                s.batches += 1;
                s.window_loss += o.loss * o.size as f64;
                s.window_correct += o.correct;
                s.window_n += o.size;
                s.since_stats += o.size;
                None
            }
            Err(e) => {
                let reason = e.to_string();
                if is_divergence(&e) {
                    s.record.diverged = Some(Divergence {
                        samples_seen: s.trainer.samples_seen() as u64,
                        reason: reason.clone(),
                    });
                    Some((SessionState::Diverged, reason))
                } else {
                    Some((SessionState::Stopped, reason))
                }
            }
        };
        if let Some((state, reason)) = failure {
            let _ = self.end(state, Some(reason));
            return false;
        }
        let stats_due = s.since_stats >= stats_every;
        let finished = done(s);
        if stats_due || finished {
            if let Err(e) = self.emit_stats() {
                let _ = self.end(SessionState::Stopped, Some(e.to_string()));
                return false;
            }
        }
        if finished {
            let _ = self.end(SessionState::Finished, None);
            return false;
        }
        true
    }

    fn end(&mut self, state: SessionState, reason: Option<String>) -> Result<()> {
        if self.session.as_ref().is_some_and(|s| s.window_n > 0) && state != SessionState::Diverged {
            self.emit_stats()?;
        }
        self.emit_state(state, reason);
        let Some(s) = self.session.take() else {
            return Ok(());
        };
        let mut record = s.record;
        record.wall_clock_secs = s.started.elapsed().as_secs_f64();
        if state == SessionState::Diverged {
            record.final_report = None;
        }
        let mut result = Ok(());
        if let Some(path) = &self.config.checkpoint {
            result = checkpoint::save(s.trainer.network(), path).map_err(HarnessError::from);
        }
        if let Some(dir) = &self.opts.out_dir {
            let dir = dir.join("serve");
            let write = std::fs::create_dir_all(&dir).and_then(|_| {
                std::fs::write(
                    dir.join(format!("{}.json", record.label)),
                    serde_json::to_string_pretty(&record).expect("record serializes"),
                )
            });
            if let Err(e) = write {
                result = Err(e.into());
            }
        }
        self.finished.push(record);
        result
    }

    /// Runs until `Inbound::Shutdown` or the channel closes.
    pub fn run(mut self, rx: Receiver<Inbound>) -> Self {
        loop {
            let msg = if self.state == SessionState::Running {
                match rx.try_recv() {
                    Ok(m) => Some(m),
                    Err(mpsc::TryRecvError::Empty) => None,
                    Err(mpsc::TryRecvError::Disconnected) => break,
                }
            } else {
                match rx.recv_timeout(Duration::from_millis(100)) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            };
            match msg {
                Some(Inbound::Line(l)) => self.handle_line(&l),
                Some(Inbound::Shutdown) => break,
                None => {
                    self.tick();
                }
            }
        }
        if matches!(self.state, SessionState::Running | SessionState::Paused) {
            let _ = self.end(SessionState::Stopped, Some("server shutting down".into()));
        }
        self.out.close();
        self
    }
}

/// A running server: acceptor thread plus engine thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    tx: Sender<Inbound>,
    shutdown: Arc<AtomicBool>,
    engine: JoinHandle<Engine>,
    acceptor: JoinHandle<()>,
}

impl ServerHandle {
    /// Stops the engine (ending any session) and returns it.
    pub fn shutdown(self) -> Engine {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = self.tx.send(Inbound::Shutdown);
        let _ = TcpStream::connect(self.addr);
        let engine = self.engine.join().expect("engine thread");
        let _ = self.acceptor.join();
        engine
    }

    /// Blocks until the engine exits on its own.
    pub fn wait(self) -> Engine {
        self.engine.join().expect("engine thread")
    }
}

fn serve_connection(stream: TcpStream, tx: Sender<Inbound>, out: Arc<Outbox>, generation: Arc<AtomicU64>, mine: u64) {
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let live = Arc::new(AtomicBool::new(true));
    let live_w = live.clone();
    let writer_thread = thread::spawn(move || {
        while live_w.load(Ordering::SeqCst) && generation.load(Ordering::SeqCst) == mine {
            if let Some(line) = out.pop(Duration::from_millis(50)) {
                if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                    out.unpop(line);
                    break;
                }
            }
        }
    });
    for line in BufReader::new(stream).lines() {
        match line {
            Ok(l) => {
                if tx.send(Inbound::Line(l)).is_err() {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    live.store(false, Ordering::SeqCst);
    let _ = writer_thread.join();
}

/// Binds `listener` and starts serving. A new connection takes over the
/// outgoing stream from any previous one.
pub fn spawn(listener: TcpListener, opts: ServeOptions) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let out = Arc::new(Outbox::new(opts.stats_buffer));
    let (tx, rx) = mpsc::channel();
    let engine = Engine::new(opts, out.clone());
    let engine = thread::spawn(move || engine.run(rx));
    let shutdown = Arc::new(AtomicBool::new(false));
    let (stop, tx_acc) = (shutdown.clone(), tx.clone());
    let acceptor = thread::spawn(move || {
        let generation = Arc::new(AtomicU64::new(0));
        for stream in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let mine = generation.fetch_add(1, Ordering::SeqCst) + 1;
            let (tx, out, generation) = (tx_acc.clone(), out.clone(), generation.clone());
            thread::spawn(move || serve_connection(stream, tx, out, generation, mine));
        }
    });
    Ok(ServerHandle {
        addr,
        tx,
        shutdown,
        engine,
        acceptor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_config_set_and_merge() {
        let mut c = SessionConfig::default();
        c.set("seed", Value::from(17)).unwrap();
        assert_eq!(c.seed, 17);
        c.merge(serde_json::json!({"dataset":"mnist","architecture":{"kind":"mlp","hidden":8}}))
            .unwrap();
        assert_eq!(c.architecture, Architecture::Mlp { hidden: 8 });
        assert!(c.set("nope", Value::from(1)).is_err());
        assert!(c.merge(serde_json::json!({"seed": "x"})).is_err());
        assert_eq!(c.seed, 17);
    }

    #[test]
    fn outbox_drops_oldest_stats_only() {
        let out = Outbox::new(2);
        let stats = |n| StatsEvent {
            event: "stats".into(),
            samples_seen: n,
            loss: 0.0,
            train_acc: 0.0,
            test_acc: 0.0,
            per_class_f1: vec![0.0; 10],
            lr: 0.1,
            momentum: 0.0,
            optimizer: "sgd".into(),
            seed: 1,
        };
        out.send(&Ack {
            ack: 1,
            ok: true,
            reason: None,
        });
        for n in 0..5 {
            out.send_stats(&stats(n));
        }
        assert_eq!(out.dropped(), 3);
        assert_eq!(out.len(), 3);
        let lines: Vec<String> = std::iter::from_fn(|| out.pop(Duration::ZERO)).collect();
        assert_eq!(lines[0], r#"{"ack":1,"ok":true}"#);
        assert!(lines[1].contains("\"samples_seen\":3"));
        assert!(lines[2].contains("\"samples_seen\":4"));
    }

    #[test]
    fn hyper_keys() {
        let mut c = SessionConfig::default();
        set_hyper_value(&mut c, "lr", &Value::from(0.05)).unwrap();
        set_hyper_value(&mut c, "optimizer", &Value::from("adadelta")).unwrap();
        assert_eq!(c.lr, 0.05);
        assert_eq!(c.optimizer, OptimizerKind::Adadelta);
        assert!(set_hyper_value(&mut c, "lr", &Value::from("fast")).is_err());
        assert!(set_hyper_value(&mut c, "warp", &Value::from(1)).is_err());
    }
}
