//! One guest process with a persistent namespace, driven cell by cell.
//!
//! Layout under the session root:
//!
//! ```text
//! <root>/working/          guest working directory, kept after close
//! <root>/input/<mount>/    read-only copies of the input mounts (removed on close)
//! <root>/guest_stderr.log  raw guest stderr
//! <root>/transcript.json   written when the session is closed
//! ```
//!
//! A reader thread decodes guest frames into a bounded queue. The calling
//! thread drains that queue while a second helper thread consults the
//! monitor, so a slow monitor never stalls output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

use super::budget::{enforce_budgets, secs, Budget, BudgetCheck, BudgetUsage, RunClock};
use super::monitor::{Monitor, MonitorContext};
use super::protocol::{
    read_frame, write_frame, CellStatus, Frame, FrameError, FrameType, Handshake, StatusPayload,
    PROTOCOL_VERSION,
};
use super::{ResourceLimits, SandboxError};
use crate::llm::parse::{MonitorAction, MonitorDecision};
use crate::text::truncate_middle;

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(30);
pub const DEFAULT_GRACE: Duration = Duration::from_secs(10);
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
/// Characters of cell output retained in outcomes and transcripts.
pub const DEFAULT_CAPTURE_LIMIT: usize = 1_000_000;

const QUEUE_DEPTH: usize = 256;
const TICK: Duration = Duration::from_millis(20);

/// How source files are run by a given guest implementation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    #[default]
    Python,
    Fake,
}

impl Dialect {
    /// A cell that executes the file at `rel` (relative to the working dir).
    pub fn run_file(self, rel: &str) -> String {
        match self {
            Dialect::Python => format!(
                "exec(compile(open({rel:?}).read(), {rel:?}, 'exec'), {{'__name__': '__main__'}})"
            ),
            Dialect::Fake => format!("run {rel}"),
        }
    }

    /// A cell that runs the script at `rel` as a program with `--key value`
    /// arguments. Under the fake dialect the arguments become variables.
    pub fn run_script(self, rel: &str, args: &[(&str, &str)]) -> String {
        match self {
            Dialect::Python => {
                let mut argv = vec!["sys.executable".to_string(), format!("{rel:?}")];
                for (k, v) in args {
                    argv.push(format!("{:?}", format!("--{k}")));
                    argv.push(format!("{v:?}"));
                }
                format!("import subprocess, sys\nsubprocess.run([{}], check=True)", argv.join(", "))
            }
            Dialect::Fake => {
                let mut cell: String = args.iter().map(|(k, v)| format!("set {k} {v}\n")).collect();
                cell += &format!("run {rel}");
                cell
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestSpec {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub dialect: Dialect,
}

impl GuestSpec {
    pub fn new(program: impl Into<PathBuf>, args: &[&str], dialect: Dialect) -> Self {
        Self {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
            env: BTreeMap::new(),
            dialect,
        }
    }
}

/// A host path exposed read-only to the guest at `../input/<at>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mount {
    pub source: PathBuf,
    /// Relative location inside the input dir; empty places the contents at its top.
    #[serde(default)]
    pub at: String,
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub id: String,
    pub guest: GuestSpec,
    pub root: PathBuf,
    pub mounts: Vec<Mount>,
    pub budget: Budget,
    pub clock: RunClock,
    pub limits: ResourceLimits,
    pub handshake_timeout: Duration,
    pub grace: Duration,
    pub capture_limit: usize,
}

impl SessionConfig {
    pub fn new(id: impl Into<String>, guest: GuestSpec, root: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            guest,
            root: root.into(),
            mounts: Vec::new(),
            budget: Budget::default(),
            clock: RunClock::start(),
            limits: ResourceLimits::default(),
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            grace: DEFAULT_GRACE,
            capture_limit: DEFAULT_CAPTURE_LIMIT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Busy,
    Closed,
    Dead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
    KilledByMonitor,
    GuestDead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    /// Streamed output, with the guest's error text appended on failure.
    pub output: String,
    pub truncated: bool,
    #[serde(with = "secs")]
    pub wall_time: Duration,
    pub error: Option<String>,
    /// Output bytes received by the host.
    pub host_bytes: u64,
    /// Output bytes the guest reports having sent; absent without a status frame.
    pub guest_bytes: Option<u64>,
    pub monitor_note: Option<String>,
}

impl ExecutionOutcome {
    /// Whether every streamed byte arrived, per the guest's own count.
    pub fn output_complete(&self) -> bool {
        self.guest_bytes == Some(self.host_bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: u32,
    pub goal: String,
    pub code: String,
    /// Offset of the cell start from the session opening.
    pub started_ms: u64,
    pub wall_ms: u64,
    pub status: ExecStatus,
    pub output: String,
    pub truncated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session: String,
    pub workspace: PathBuf,
    pub entries: Vec<TranscriptEntry>,
    pub sealed: bool,
}

enum Event {
    Frame(Frame),
    Malformed(String),
    Closed(String),
}

pub struct Session {
    id: String,
    root: PathBuf,
    workspace: PathBuf,
    input_dir: PathBuf,
    dialect: Dialect,
    child: Option<Child>,
    pid: u32,
    stdin: Option<BufWriter<ChildStdin>>,
    events: Receiver<Event>,
    reader: Option<JoinHandle<()>>,
    state: SessionState,
    elapsed: Duration,
    steps: u32,
    seq: u64,
    opened: Instant,
    budget: Budget,
    clock: RunClock,
    grace: Duration,
    capture_limit: usize,
    transcript: Transcript,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> SandboxError + '_ {
    move |source| SandboxError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn prepare_input(input_dir: &Path, mounts: &[Mount]) -> Result<(), SandboxError> {
    for m in mounts {
        if !m.source.exists() {
            return Err(SandboxError::MissingMount(m.source.display().to_string()));
        }
    }
    if input_dir.exists() {
        crate::fsutil::set_tree_writable(input_dir, true).map_err(io_at(input_dir))?;
        fs::remove_dir_all(input_dir).map_err(io_at(input_dir))?;
    }
    fs::create_dir_all(input_dir).map_err(io_at(input_dir))?;
    for m in mounts {
        let dest = input_dir.join(&m.at);
        if m.source.is_dir() {
            crate::fsutil::copy_tree(&m.source, &dest, &[])
                .map_err(|(p, e)| io_at(&p)(e))?;
        } else {
            let name = m.source.file_name().unwrap_or_default();
            fs::create_dir_all(&dest).map_err(io_at(&dest))?;
            fs::copy(&m.source, dest.join(name)).map_err(io_at(&m.source))?;
        }
    }
    crate::fsutil::set_tree_writable(input_dir, false).map_err(io_at(input_dir))
}

fn spawn_reader(stdout: std::process::ChildStdout, tx: SyncSender<Event>) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut r = BufReader::new(stdout);
        loop {
            let ev = match read_frame(&mut r) {
                Ok(f) => Event::Frame(f),
                Err(FrameError::Malformed(m)) => Event::Malformed(m),
                Err(e) => {
                    let _ = tx.send(Event::Closed(e.to_string()));
                    return;
                }
            };
            if tx.send(ev).is_err() {
                return;
            }
        }
    })
}

fn kill_group(pid: u32) {
    // the guest leads its own process group, so this reaches its children too
    // SAFETY: plain syscall on a pid we spawned.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}

/// Launches the guest and waits for its handshake.
pub fn open_session(config: SessionConfig) -> Result<Session, SandboxError> {
    config.budget.validate()?;
    let root = config.root.clone();
    let workspace = root.join("working");
    let input_dir = root.join("input");
    fs::create_dir_all(&workspace).map_err(io_at(&workspace))?;
    prepare_input(&input_dir, &config.mounts)?;

    let stderr_path = root.join("guest_stderr.log");
    let stderr = File::create(&stderr_path).map_err(io_at(&stderr_path))?;
    let mut cmd = Command::new(&config.guest.program);
    cmd.args(&config.guest.args)
        .envs(&config.guest.env)
        .env("AGORA_INPUT_DIR", "../input")
        .current_dir(&workspace)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::from(stderr));
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    config.limits.apply(&mut cmd);
    let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
        program: config.guest.program.display().to_string(),
        source,
    })?;
    let pid = child.id();
    let stdin = child.stdin.take().expect("stdin piped");
    let stdout = child.stdout.take().expect("stdout piped");
    let (tx, rx) = mpsc::sync_channel(QUEUE_DEPTH);
    let reader = spawn_reader(stdout, tx);

    let mut session = Session {
        transcript: Transcript {
            session: config.id.clone(),
            workspace: workspace.clone(),
            entries: Vec::new(),
            sealed: false,
        },
        id: config.id,
        root,
        workspace,
        input_dir,
        dialect: config.guest.dialect,
        child: Some(child),
        pid,
        stdin: Some(BufWriter::new(stdin)),
        events: rx,
        reader: Some(reader),
        state: SessionState::Dead,
        elapsed: Duration::ZERO,
        steps: 0,
        seq: 0,
        opened: Instant::now(),
        budget: config.budget,
        clock: config.clock,
        grace: config.grace,
        capture_limit: config.capture_limit,
    };
    let failure = match session.events.recv_timeout(config.handshake_timeout) {
        Ok(Event::Frame(f)) if f.kind == FrameType::Handshake => {
            match serde_json::from_value::<Handshake>(f.payload) {
                Ok(h) if h.protocol == PROTOCOL_VERSION => None,
                Ok(h) => Some(format!("unsupported protocol version {}", h.protocol)),
                Err(e) => Some(format!("bad handshake payload: {e}")),
            }
        }
        Ok(Event::Frame(f)) => Some(format!("expected handshake, got {:?}", f.kind)),
        Ok(Event::Malformed(m)) => Some(format!("malformed handshake: {m}")),
        Ok(Event::Closed(m)) => Some(format!("guest exited before handshake: {m}")),
        Err(_) => Some(format!(
            "no handshake within {:.0}s",
            config.handshake_timeout.as_secs_f64()
        )),
    };
    if let Some(reason) = failure {
        session.kill();
        session.state = SessionState::Dead;
        return Err(SandboxError::Handshake(reason));
    }
    session.state = SessionState::Open;
    session.opened = Instant::now();
    debug!(session = %session.id, pid, "session open");
    Ok(session)
}

#[derive(Clone, Copy)]
enum Phase {
    Running,
    Interrupting(ExecStatus, Instant),
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    pub fn input_dir(&self) -> &Path {
        &self.input_dir
    }

    pub fn dialect(&self) -> Dialect {
        self.dialect
    }

    pub fn pid(&self) -> u32 {
        self.pid
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn usage(&self) -> BudgetUsage {
        BudgetUsage {
            session_elapsed: self.elapsed,
            run_elapsed: self.clock.elapsed(),
        }
    }

    pub fn check_budget(&self) -> BudgetCheck {
        enforce_budgets(self.usage(), &self.budget)
    }

    /// Wall time the next cell may use.
    pub fn cell_allowance(&self) -> Duration {
        let u = self.usage();
        self.budget
            .cell_wall
            .min(self.budget.session_wall.saturating_sub(u.session_elapsed))
            .min(self.budget.run_wall.saturating_sub(u.run_elapsed))
    }

    fn send(&mut self, frame: &Frame) -> bool {
        match self.stdin.as_mut() {
            Some(w) => write_frame(w, frame).is_ok(),
            None => false,
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        if let Some(mut child) = self.child.take() {
            if matches!(child.try_wait(), Ok(None)) {
                kill_group(self.pid);
            }
            let _ = child.wait();
        }
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }

    /// Runs one cell. Budget and step checks happen before anything is sent;
    /// when they fail the cell is not issued and the transcript is untouched.
    pub fn execute_cell(
        &mut self,
        code: &str,
        goal: &str,
        monitor: Option<&dyn Monitor>,
        poll_interval: Duration,
    ) -> Result<ExecutionOutcome, SandboxError> {
        if self.state != SessionState::Open {
            return Err(SandboxError::NotOpen(self.state));
        }
        if self.steps >= self.budget.max_steps {
            return Err(SandboxError::StepLimit(self.budget.max_steps));
        }
        let check = self.check_budget();
        if check != BudgetCheck::Within {
            return Err(SandboxError::BudgetExhausted(check));
        }
        // anything still queued belongs to an earlier cell
        while let Ok(ev) = self.events.try_recv() {
            if let Event::Closed(reason) = ev {
                warn!(session = %self.id, %reason, "guest gone between cells");
                self.kill();
                self.state = SessionState::Dead;
                return Err(SandboxError::NotOpen(self.state));
            }
        }

        let limit = self.cell_allowance();
        self.seq += 1;
        self.steps += 1;
        self.state = SessionState::Busy;
        let seq = self.seq;
        let start = Instant::now();
        let started_ms = start.duration_since(self.opened).as_millis() as u64;
        let output = Arc::new(Mutex::new(String::new()));
        let mut host_bytes = 0u64;
        let mut status: Option<StatusPayload> = None;
        let mut final_status = ExecStatus::GuestDead;
        let mut monitor_note = None;
        let mut dead = false;

        if !self.send(&Frame::new(FrameType::Exec, seq, code)) {
            dead = true;
        }

        let (stop_tx, stop_rx) = mpsc::channel::<()>();
        let (decision_tx, decision_rx) = mpsc::channel::<MonitorDecision>();
        thread::scope(|scope| {
            if let (Some(m), false) = (monitor, dead) {
                let output = Arc::clone(&output);
                scope.spawn(move || loop {
                    match stop_rx.recv_timeout(poll_interval) {
                        Err(RecvTimeoutError::Timeout) => {}
                        _ => return,
                    }
                    let elapsed = start.elapsed();
                    let ctx = MonitorContext {
                        code: code.to_string(),
                        goal: goal.to_string(),
                        elapsed,
                        remaining: limit.saturating_sub(elapsed),
                        output: output.lock().expect("output lock").clone(),
                    };
                    let d = m.decide(&ctx);
                    let stop = d.action == MonitorAction::Stop;
                    if decision_tx.send(d).is_err() || stop {
                        return;
                    }
                });
            }

            let mut phase = Phase::Running;
            while !dead {
                if let (Phase::Running, Ok(d)) = (phase, decision_rx.try_recv()) {
                    if d.action == MonitorAction::Stop {
                        debug!(session = %self.id, seq, "monitor stop");
                        monitor_note = Some(d.explanation);
                        phase = Phase::Interrupting(ExecStatus::KilledByMonitor, Instant::now());
                        if !self.send(&Frame::new(FrameType::Interrupt, seq, Value::Null)) {
                            final_status = ExecStatus::KilledByMonitor;
                            dead = true;
                            break;
                        }
                    }
                }
                let deadline = match phase {
                    Phase::Running => start + limit,
                    Phase::Interrupting(_, since) => since + self.grace,
                };
                let now = Instant::now();
                if now >= deadline {
                    match phase {
                        Phase::Running => {
                            debug!(session = %self.id, seq, "cell over time");
                            phase = Phase::Interrupting(ExecStatus::Timeout, now);
                            if !self.send(&Frame::new(FrameType::Interrupt, seq, Value::Null)) {
                                final_status = ExecStatus::Timeout;
                                dead = true;
                            }
                        }
                        Phase::Interrupting(reason, _) => {
                            warn!(session = %self.id, seq, "guest ignored interrupt; killing");
                            final_status = reason;
                            dead = true;
                        }
                    }
                    continue;
                }
                match self.events.recv_timeout((deadline - now).min(TICK)) {
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => dead = true,
                    Ok(Event::Closed(reason)) => {
                        debug!(session = %self.id, %reason, "guest stream closed");
                        final_status = match phase {
                            Phase::Running => ExecStatus::GuestDead,
                            Phase::Interrupting(r, _) => r,
                        };
                        dead = true;
                    }
                    Ok(Event::Malformed(m)) => warn!(session = %self.id, "malformed guest frame: {m}"),
                    Ok(Event::Frame(f)) if f.seq != seq => {
                        debug!(session = %self.id, "dropping stale {:?} frame {}", f.kind, f.seq)
                    }
                    Ok(Event::Frame(f)) => match f.kind {
                        FrameType::Out | FrameType::Err => {
                            let t = f.text();
                            host_bytes += t.len() as u64;
                            output.lock().expect("output lock").push_str(t);
                        }
                        FrameType::Status => {
                            let s: StatusPayload = match serde_json::from_value(f.payload) {
                                Ok(s) => s,
                                Err(e) => StatusPayload {
                                    status: CellStatus::Exception,
                                    total_output_bytes: host_bytes,
                                    wall_ms: 0,
                                    error: Some(format!("unreadable status frame: {e}")),
                                    protocol_error: true,
                                },
                            };
                            final_status = match (s.status, phase) {
                                (CellStatus::Ok, _) => ExecStatus::Ok,
                                (CellStatus::Exception, Phase::Interrupting(r, _)) => r,
                                (CellStatus::Exception, Phase::Running) => ExecStatus::Error,
                            };
                            status = Some(s);
                            break;
                        }
                        other => warn!(session = %self.id, "unexpected {other:?} frame from guest"),
                    },
                }
            }
            drop(stop_tx);
        });

        let wall_time = start.elapsed();
        if dead {
            self.kill();
            self.state = SessionState::Dead;
        } else {
            self.state = SessionState::Open;
        }
        self.elapsed += wall_time;

        let mut text = Arc::try_unwrap(output)
            .map(|m| m.into_inner().expect("output lock"))
            .unwrap_or_else(|a| a.lock().expect("output lock").clone());
        let error = status.as_ref().and_then(|s| s.error.clone());
        if let Some(e) = &error {
            if !text.is_empty() && !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(e);
        }
        let (output, truncated) = truncate_middle(&text, self.capture_limit);
        let outcome = ExecutionOutcome {
            status: final_status,
            output,
            truncated,
            wall_time,
            error,
            host_bytes,
            guest_bytes: status.as_ref().map(|s| s.total_output_bytes),
            monitor_note,
        };
        if outcome.status == ExecStatus::Ok && !outcome.output_complete() {
            warn!(session = %self.id, seq, host = host_bytes, guest = ?outcome.guest_bytes, "output byte count mismatch");
        }
        self.transcript.entries.push(TranscriptEntry {
            step: self.steps,
            goal: goal.to_string(),
            code: code.to_string(),
            started_ms,
            wall_ms: wall_time.as_millis() as u64,
            status: outcome.status,
            output: outcome.output.clone(),
            truncated,
        });
        Ok(outcome)
    }

    /// Stops the guest (stdin EOF, then a forced kill after the grace
    /// period), removes the input copies and seals the transcript. The
    /// working directory is kept. Safe to call more than once.
    pub fn close(&mut self) -> &Transcript {
        if self.state == SessionState::Closed {
            return &self.transcript;
        }
        self.stdin = None;
        if let Some(child) = self.child.as_mut() {
            let deadline = Instant::now() + self.grace;
            while matches!(child.try_wait(), Ok(None)) && Instant::now() < deadline {
                thread::sleep(TICK);
            }
        }
        self.kill();
        if self.input_dir.exists() {
            let _ = crate::fsutil::set_tree_writable(&self.input_dir, true);
            if let Err(e) = fs::remove_dir_all(&self.input_dir) {
                warn!(session = %self.id, "could not remove input copy: {e}");
            }
        }
        self.state = SessionState::Closed;
        self.transcript.sealed = true;
        let path = self.root.join("transcript.json");
        match serde_json::to_string_pretty(&self.transcript) {
            Ok(json) => {
                if let Err(e) = File::create(&path).and_then(|mut f| writeln!(f, "{json}")) {
                    warn!(session = %self.id, "could not write transcript: {e}");
                }
            }
            Err(e) => warn!(session = %self.id, "could not encode transcript: {e}"),
        }
        &self.transcript
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.state != SessionState::Closed {
            self.close();
        }
    }
}
