use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use agora_core::sandbox::{
    open_session, Budget, Dialect, ExecStatus, GuestSpec, Mount, MonitorAction, RunClock,
    SandboxError, ScriptedMonitor, SessionConfig, SessionState,
};

fn guest() -> GuestSpec {
    GuestSpec::new(env!("CARGO_BIN_EXE_agora-fake-guest"), &[], Dialect::Fake)
}

fn config(root: &Path) -> SessionConfig {
    SessionConfig::new("s", guest(), root)
}

fn budget(cell: f64, session: f64, steps: u32) -> Budget {
    Budget {
        run_wall: Duration::from_secs(3600),
        session_wall: Duration::from_secs_f64(session),
        cell_wall: Duration::from_secs_f64(cell),
        max_steps: steps,
    }
}

const POLL: Duration = Duration::from_secs(30);

#[test]
fn open_print_close() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open_session(config(dir.path())).unwrap();
    assert_eq!(s.state(), SessionState::Open);
    assert_eq!(s.elapsed(), Duration::ZERO);
    let out = s.execute_cell("print hello\nwrite result.txt done", "greet", None, POLL).unwrap();
    assert_eq!(out.status, ExecStatus::Ok);
    assert_eq!(out.output, "hello\n");
    assert!(out.output_complete());
    let t = s.close().clone();
    assert!(t.sealed);
    assert_eq!(s.state(), SessionState::Closed);
    s.close();
    assert_eq!(t.entries.len(), 1);
    assert_eq!(fs::read_to_string(s.workspace().join("result.txt")).unwrap(), "done");
    assert!(dir.path().join("transcript.json").is_file());
}

#[test]
fn state_persists_and_errors_are_contained() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open_session(config(dir.path())).unwrap();
    s.execute_cell("set x 41", "", None, POLL).unwrap();
    let e = s.execute_cell("print before\nfail bad input", "", None, POLL).unwrap();
    assert_eq!(e.status, ExecStatus::Error);
    assert!(e.output.starts_with("before\n"));
    assert!(e.output.contains("RuntimeError: bad input"));
    let ok = s.execute_cell("incr x\nprint ${x}", "", None, POLL).unwrap();
    assert_eq!(ok.output, "42\n");
}

#[test]
fn missing_mount_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.mounts.push(Mount {
        source: dir.path().join("nowhere"),
        at: String::new(),
    });
    let err = open_session(c).err().unwrap();
    assert!(matches!(err, SandboxError::MissingMount(ref p) if p.ends_with("nowhere")), "{err}");
}

#[test]
fn mounts_are_visible_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("train.csv"), "id,y\na,1\n").unwrap();
    let mut c = config(&dir.path().join("s"));
    c.mounts.push(Mount { source: data, at: String::new() });
    let mut s = open_session(c).unwrap();
    let ok = s.execute_cell("copy ../input/train.csv mine.csv", "", None, POLL).unwrap();
    assert_eq!(ok.status, ExecStatus::Ok);
    let root_user = unsafe { libc::geteuid() } == 0;
    if root_user {
        eprintln!("running as root: permission bits do not stop writes, skipping write check");
    } else {
        let w = s.execute_cell("write ../input/train.csv overwritten", "", None, POLL).unwrap();
        assert_eq!(w.status, ExecStatus::Error, "{}", w.output);
    }
    s.close();
    assert!(s.workspace().join("mine.csv").is_file());
    assert!(!s.input_dir().exists());
}

#[test]
fn two_sessions_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = open_session(config(&dir.path().join("a"))).unwrap();
    let mut b = open_session(config(&dir.path().join("b"))).unwrap();
    assert_ne!(a.pid(), b.pid());
    assert_ne!(a.workspace(), b.workspace());
    a.execute_cell("set v a", "", None, POLL).unwrap();
    let out = b.execute_cell("print [${v}]", "", None, POLL).unwrap();
    assert_eq!(out.output, "[]\n");
}

#[test]
fn cell_wall_interrupts_a_busy_loop() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.budget = budget(2.0, 60.0, 30);
    let mut s = open_session(c).unwrap();
    let t0 = Instant::now();
    let out = s.execute_cell("print start\nbusy", "spin", None, POLL).unwrap();
    let took = t0.elapsed();
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!(out.wall_time >= Duration::from_secs(2));
    assert!(took < Duration::from_millis(2500), "took {took:?}");
    // the session survives an honored interrupt
    assert_eq!(s.execute_cell("print again", "", None, POLL).unwrap().status, ExecStatus::Ok);
}

#[test]
fn ignored_interrupt_is_followed_by_a_kill() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.budget = budget(0.5, 60.0, 30);
    c.grace = Duration::from_millis(500);
    let mut s = open_session(c).unwrap();
    s.execute_cell("ignore_interrupts", "", None, POLL).unwrap();
    let t0 = Instant::now();
    let out = s.execute_cell("busy", "", None, POLL).unwrap();
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!(t0.elapsed() < Duration::from_secs(2));
    assert_eq!(s.state(), SessionState::Dead);
    assert!(matches!(s.execute_cell("print x", "", None, POLL), Err(SandboxError::NotOpen(_))));
    s.close();
    assert_eq!(s.state(), SessionState::Closed);
}

#[test]
fn monitor_stop_kills_in_flight_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open_session(config(dir.path())).unwrap();
    let monitor = ScriptedMonitor::new(vec![MonitorAction::Stop]);
    let poll = Duration::from_millis(300);
    let t0 = Instant::now();
    let out = s.execute_cell("loop_print 100000 10 tick", "train", Some(&monitor), poll).unwrap();
    assert_eq!(out.status, ExecStatus::KilledByMonitor);
    assert!(t0.elapsed() < poll + Duration::from_secs(2));
    assert_eq!(monitor.polls(), 1);
    assert!(out.output.starts_with("tick 0\n"));
}

#[test]
fn monitor_sees_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open_session(config(dir.path())).unwrap();
    let seen = std::sync::Mutex::new(Vec::new());
    let monitor = |ctx: &agora_core::sandbox::MonitorContext| {
        seen.lock().unwrap().push((ctx.output.clone(), ctx.goal.clone()));
        agora_core::sandbox::MonitorDecision {
            action: MonitorAction::Continue,
            explanation: String::new(),
        }
    };
    let out = s
        .execute_cell("print early\nsleep 0.6\nprint late", "watch", Some(&monitor), Duration::from_millis(200))
        .unwrap();
    assert_eq!(out.status, ExecStatus::Ok);
    let seen = seen.into_inner().unwrap();
    assert!(!seen.is_empty());
    assert_eq!(seen[0], ("early\n".to_string(), "watch".to_string()));
}

#[test]
fn exhausted_session_starts_no_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.budget = budget(1.0, 1.0, 30);
    let mut s = open_session(c).unwrap();
    let out = s.execute_cell("sleep 5", "", None, POLL).unwrap();
    assert_eq!(out.status, ExecStatus::Timeout);
    let err = s.execute_cell("print never", "", None, POLL).unwrap_err();
    assert!(matches!(err, SandboxError::BudgetExhausted(_)), "{err}");
    assert_eq!(s.transcript().entries.len(), 1);
}

#[test]
fn step_limit_blocks_the_next_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.budget = budget(10.0, 60.0, 3);
    let mut s = open_session(c).unwrap();
    for _ in 0..3 {
        s.execute_cell("print ok", "", None, POLL).unwrap();
    }
    assert!(matches!(s.execute_cell("print 4", "", None, POLL), Err(SandboxError::StepLimit(3))));
    assert_eq!(s.transcript().entries.iter().map(|e| e.step).max(), Some(3));
}

#[test]
fn exhausted_run_clock_blocks_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.budget = budget(10.0, 60.0, 30);
    c.clock = RunClock::started_ago(Duration::from_secs(3601));
    let mut s = open_session(c).unwrap();
    let err = s.execute_cell("print x", "", None, POLL).unwrap_err();
    assert!(matches!(err, SandboxError::BudgetExhausted(agora_core::sandbox::BudgetCheck::RunExhausted)));
}

#[test]
fn guest_death_marks_session_dead() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open_session(config(dir.path())).unwrap();
    let out = s.execute_cell("print bye\nexit 3", "", None, POLL).unwrap();
    assert_eq!(out.status, ExecStatus::GuestDead);
    assert_eq!(s.state(), SessionState::Dead);
}

#[test]
fn bad_guest_fails_handshake() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.guest = GuestSpec::new("/bin/sh", &["-c", "echo not-a-frame; sleep 5"], Dialect::Fake);
    c.handshake_timeout = Duration::from_secs(2);
    let t0 = Instant::now();
    assert!(matches!(open_session(c), Err(SandboxError::Handshake(_))));
    assert!(t0.elapsed() < Duration::from_secs(4));
}

#[test]
fn elapsed_matches_cell_sum() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open_session(config(dir.path())).unwrap();
    let mut sum = Duration::ZERO;
    for c in ["sleep 0.2", "print a", "sleep 0.1"] {
        sum += s.execute_cell(c, "", None, POLL).unwrap().wall_time;
    }
    assert_eq!(s.elapsed(), sum);
}
