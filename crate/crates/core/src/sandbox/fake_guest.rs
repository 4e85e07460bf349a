//! A deterministic stand-in guest speaking the session wire protocol.
//!
//! Cells are written in a tiny line-oriented command language instead of
//! Python, which keeps scripted runs hermetic. One command per line; blank
//! lines and `#` comments are skipped; `${name}` expands a variable set by an
//! earlier `set`, in this cell or any previous one.
//!
//! | command | effect |
//! |---|---|
//! | `print TEXT` / `eprint TEXT` | one out / err frame holding `TEXT\n` |
//! | `set NAME VALUE` / `incr NAME [N]` | persistent variables |
//! | `sleep SECS` / `busy [SECS]` | idle or spin; both honor interrupts (`busy` alone spins forever) |
//! | `loop_print N MS TEXT` | print `TEXT i` N times, MS apart |
//! | `fail MESSAGE` | raise an exception |
//! | `write PATH TEXT` / `append PATH TEXT` | file output, `\n` escapes honored |
//! | `copy SRC DST` | copy a file |
//! | `run PATH` | execute a file of commands in the same namespace |
//! | `exit CODE` | terminate the guest process |
//! | `ignore_interrupts` | later cells no longer honor interrupts |
//! | `predict_constant INPUT ID TARGET VALUE OUT` | constant-prediction submission |
//! | `predict_mean TRAIN TARGET INPUT ID OUT` | train-mean submission |
//! | `predict_linear TRAIN TARGET INPUT ID OUT` | least-squares fit on numeric columns |
//! | `split DATA_DIR OUT_DIR ID TARGET [--stratify COL] [--seed N] [--leak]` | 90/10 split; `--leak` plants labels in the public side |
//! | `evaluate TRUTH SUBMISSION METRIC ID TARGET [REPORT]` | grade and print an eval report |

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::protocol::{
    read_frame, write_frame, CellStatus, Frame, FrameError, FrameType, Handshake, StatusPayload,
    PROTOCOL_VERSION,
};
use crate::bundle::{split_into, Grader, Metric, SplitLayout, SplitOptions, Table, Target};

const NAP: Duration = Duration::from_millis(5);
const MAX_RUN_DEPTH: usize = 8;

enum Stop {
    Exception(String),
    Interrupted,
    Exit(i32),
}

type Step = Result<(), Stop>;

fn exception(kind: &str, msg: impl std::fmt::Display) -> Stop {
    Stop::Exception(format!("{kind}: {msg}"))
}

struct Shared<W: Write> {
    out: Mutex<W>,
    interrupt_seq: AtomicU64,
    ignore_interrupts: AtomicBool,
}

struct Cell<'a, W: Write> {
    shared: &'a Shared<W>,
    vars: &'a mut BTreeMap<String, String>,
    seq: u64,
    bytes: u64,
}

impl<W: Write> Cell<'_, W> {
    fn interrupted(&self) -> bool {
        !self.shared.ignore_interrupts.load(Ordering::SeqCst)
            && self.shared.interrupt_seq.load(Ordering::SeqCst) == self.seq
    }

    fn emit(&mut self, kind: FrameType, text: String) -> Step {
        self.bytes += text.len() as u64;
        let mut out = self.shared.out.lock().expect("guest stdout lock");
        write_frame(&mut *out, &Frame::new(kind, self.seq, text)).map_err(|_| Stop::Exit(1))
    }

    fn wait(&self, d: Option<Duration>, spin: bool) -> Step {
        let start = Instant::now();
        loop {
            if self.interrupted() {
                return Err(Stop::Interrupted);
            }
            if d.is_some_and(|d| start.elapsed() >= d) {
                return Ok(());
            }
            if spin {
                for _ in 0..10_000 {
                    std::hint::spin_loop();
                }
            } else {
                thread::sleep(NAP);
            }
        }
    }

    fn expand(&self, line: &str) -> String {
        let mut out = String::with_capacity(line.len());
        let mut rest = line;
        while let Some(p) = rest.find("${") {
            out.push_str(&rest[..p]);
            match rest[p + 2..].find('}') {
                Some(e) => {
                    let name = &rest[p + 2..p + 2 + e];
                    out.push_str(self.vars.get(name).map_or("", String::as_str));
                    rest = &rest[p + 3 + e..];
                }
                None => {
                    out.push_str(&rest[p..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }

    fn run_source(&mut self, source: &str, depth: usize) -> Step {
        for (n, raw) in source.lines().enumerate() {
            if self.interrupted() {
                return Err(Stop::Interrupted);
            }
            let line = self.expand(raw.trim());
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.command(&line, depth).map_err(|s| match s {
                Stop::Exception(m) => Stop::Exception(format!(
                    "Traceback (most recent call last):\n  cell {}, line {}: {}\n{m}",
                    self.seq,
                    n + 1,
                    raw.trim()
                )),
                other => other,
            })?;
        }
        Ok(())
    }

    fn command(&mut self, line: &str, depth: usize) -> Step {
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let args: Vec<&str> = rest.split_whitespace().collect();
        let need = |n: usize| {
            if args.len() < n {
                Err(exception("TypeError", format!("{cmd} expects {n} argument(s)")))
            } else {
                Ok(())
            }
        };
        let secs = |s: &str| {
            s.parse::<f64>()
                .ok()
                .and_then(|v| Duration::try_from_secs_f64(v).ok())
                .ok_or_else(|| exception("ValueError", format!("bad duration `{s}`")))
        };
        match cmd {
            "print" => self.emit(FrameType::Out, format!("{rest}\n")),
            "eprint" => self.emit(FrameType::Err, format!("{rest}\n")),
            "set" => {
                need(1)?;
                let value = rest[args[0].len()..].trim().to_string();
                self.vars.insert(args[0].to_string(), value);
                Ok(())
            }
            "incr" => {
                need(1)?;
                let by: i64 = args.get(1).map_or(Ok(1), |s| s.parse()).map_err(|_| exception("ValueError", "bad increment"))?;
                let cur: i64 = match self.vars.get(args[0]) {
                    Some(v) => v.parse().map_err(|_| exception("ValueError", format!("`{}` is not an integer", args[0])))?,
                    None => return Err(exception("NameError", format!("name '{}' is not defined", args[0]))),
                };
                self.vars.insert(args[0].to_string(), (cur + by).to_string());
                Ok(())
            }
            "sleep" => {
                need(1)?;
                self.wait(Some(secs(args[0])?), false)
            }
            "busy" => {
                let d = args.first().map(|s| secs(s)).transpose()?;
                self.wait(d, true)
            }
            "loop_print" => {
                need(3)?;
                let n: u64 = args[0].parse().map_err(|_| exception("ValueError", "bad count"))?;
                let gap = Duration::from_millis(args[1].parse().map_err(|_| exception("ValueError", "bad interval"))?);
                let text = args[2..].join(" ");
                for i in 0..n {
                    self.emit(FrameType::Out, format!("{text} {i}\n"))?;
                    self.wait(Some(gap), false)?;
                }
                Ok(())
            }
            "fail" => Err(exception("RuntimeError", rest)),
            "write" | "append" => {
                need(1)?;
                let text = rest[args[0].len()..].trim_start().replace("\\n", "\n");
                let path = Path::new(args[0]);
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| exception("OSError", e))?;
                }
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(cmd == "append")
                    .truncate(cmd == "write")
                    .open(path)
                    .map_err(|e| exception("OSError", format!("{}: {e}", args[0])))?;
                f.write_all(text.as_bytes()).map_err(|e| exception("OSError", e))
            }
            "copy" => {
                need(2)?;
                fs::copy(args[0], args[1])
                    .map(|_| ())
                    .map_err(|e| exception("OSError", format!("{} -> {}: {e}", args[0], args[1])))
            }
            "run" => {
                need(1)?;
                if depth >= MAX_RUN_DEPTH {
                    return Err(exception("RecursionError", "run nested too deeply"));
                }
                let src = fs::read_to_string(args[0])
                    .map_err(|e| exception("FileNotFoundError", format!("{}: {e}", args[0])))?;
                self.run_source(&src, depth + 1)
            }
            "exit" => Err(Stop::Exit(args.first().and_then(|s| s.parse().ok()).unwrap_or(0))),
            "ignore_interrupts" => {
                self.shared.ignore_interrupts.store(true, Ordering::SeqCst);
                Ok(())
            }
            "predict_constant" => {
                need(5)?;
                let input = read_table(args[0])?;
                let id = column(&input, args[1])?;
                let rows = input.rows.iter().map(|r| vec![r[id].clone(), args[3].to_string()]);
                write_submission(args[4], args[1], args[2], rows)
            }
            "predict_mean" | "predict_linear" => {
                need(5)?;
                let train = read_table(args[0])?;
                let input = read_table(args[2])?;
                let id = column(&input, args[3])?;
                let preds = if cmd == "predict_mean" {
                    let t = column(&train, args[1])?;
                    let ys = numbers(&train, t)?;
                    let mean = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
                    vec![mean; input.len()]
                } else {
                    linear_fit(&train, &input, args[1], args[3])?
                };
                let rows = input
                    .rows
                    .iter()
                    .zip(preds)
                    .map(|(r, p)| vec![r[id].clone(), format!("{p:.6}")]);
                write_submission(args[4], args[3], args[1], rows)
            }
            "split" => {
                need(4)?;
                let mut options = SplitOptions::default();
                let mut leak = false;
                let mut i = 4;
                while i < args.len() {
                    match args[i] {
                        "--leak" => leak = true,
                        "--stratify" if i + 1 < args.len() => {
                            options.stratify_on = Some(args[i + 1].to_string());
                            i += 1;
                        }
                        "--seed" if i + 1 < args.len() => {
                            options.seed = args[i + 1].parse().map_err(|_| exception("ValueError", "bad seed"))?;
                            i += 1;
                        }
                        other => return Err(exception("TypeError", format!("unknown split option `{other}`"))),
                    }
                    i += 1;
                }
                let data = Path::new(args[0]);
                let layout = SplitLayout {
                    data_dir: data.to_path_buf(),
                    sample_submission: data.join("sample_submission.csv"),
                    dest_root: args[1].into(),
                    id_column: args[2].to_string(),
                    target_column: args[3].to_string(),
                };
                let m = split_into(&layout, &options).map_err(|e| exception("ValueError", e))?;
                if leak {
                    let dest = layout.dest_root.join("public/validate_labels.csv");
                    fs::copy(layout.dest_root.join("private/validate.csv"), dest).map_err(|e| exception("OSError", e))?;
                }
                self.emit(
                    FrameType::Out,
                    format!("split: {} train rows, {} validation rows\n", m.train_rows.len(), m.validation_inputs.len()),
                )
            }
            "evaluate" => {
                need(5)?;
                let metric = Metric::from_name(args[2])
                    .ok_or_else(|| exception("ValueError", format!("unknown metric `{}`", args[2])))?;
                let grader = Grader {
                    metric,
                    id_column: args[3].to_string(),
                    target_column: args[4].to_string(),
                    header: vec![args[3].to_string(), args[4].to_string()],
                };
                let report = grader.grade_paths(Path::new(args[0]), Path::new(args[1]), Target::Validation);
                if let Some(path) = args.get(5) {
                    report.write(Path::new(path)).map_err(|e| exception("OSError", e))?;
                }
                self.emit(FrameType::Out, format!("{}\n", report.to_json_string()))
            }
            other => Err(exception("NameError", format!("unknown command `{other}`"))),
        }
    }
}

fn read_table(path: &str) -> Result<Table, Stop> {
    Table::read(Path::new(path)).map_err(|e| exception("FileNotFoundError", e))
}

fn column(t: &Table, name: &str) -> Result<usize, Stop> {
    t.column(name).ok_or_else(|| exception("KeyError", format!("'{name}'")))
}

fn numbers(t: &Table, col: usize) -> Result<Vec<f64>, Stop> {
    t.rows
        .iter()
        .map(|r| {
            r[col]
                .trim()
                .parse::<f64>()
                .map_err(|_| exception("ValueError", format!("non-numeric value `{}`", r[col])))
        })
        .collect()
}

fn write_submission(
    path: &str,
    id: &str,
    target: &str,
    rows: impl Iterator<Item = Vec<String>>,
) -> Step {
    let mut t = Table::new(vec![id.to_string(), target.to_string()]);
    t.rows.extend(rows);
    let p = Path::new(path);
    if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| exception("OSError", e))?;
    }
    t.write(p).map_err(|e| exception("OSError", e))
}

/// Ridge-stabilized least squares over the numeric columns shared by both
/// tables (id and target excluded).
fn linear_fit(train: &Table, input: &Table, target: &str, id: &str) -> Result<Vec<f64>, Stop> {
    let t = column(train, target)?;
    let y = numbers(train, t)?;
    let features: Vec<(usize, usize)> = train
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != target && *h != id)
        .filter_map(|(i, h)| input.column(h).map(|j| (i, j)))
        .filter(|&(i, _)| train.rows.iter().all(|r| r[i].trim().parse::<f64>().is_ok()))
        .collect();
    let k = features.len() + 1;
    let row_x = |r: &[String], pick: fn(&(usize, usize)) -> usize| -> Result<Vec<f64>, Stop> {
        let mut x = vec![1.0];
        for f in &features {
            let c = pick(f);
            x.push(r[c].trim().parse().map_err(|_| exception("ValueError", format!("non-numeric value `{}`", r[c])))?);
        }
        Ok(x)
    };
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, yi) in train.rows.iter().zip(&y) {
        let x = row_x(r, |f| f.0)?;
        for i in 0..k {
            for j in 0..k {
                a[i][j] += x[i] * x[j];
            }
            a[i][k] += x[i] * yi;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-9;
    }
    // Gauss-Jordan with partial pivoting
    for c in 0..k {
        let p = (c..k)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("non-empty range");
        a.swap(c, p);
        let d = a[c][c];
        if d.abs() < 1e-12 {
            return Err(exception("LinAlgError", "singular design matrix"));
        }
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..k {
            if r != c {
                let f = a[r][c];
                let pivot = a[c].clone();
                for (v, pv) in a[r].iter_mut().zip(pivot) {
                    *v -= f * pv;
                }
            }
        }
    }
    let beta: Vec<f64> = a.iter().map(|r| r[k]).collect();
    input
        .rows
        .iter()
        .map(|r| Ok(row_x(r, |f| f.1)?.iter().zip(&beta).map(|(x, b)| x * b).sum()))
        .collect()
}

enum Inbound {
    Exec(u64, String),
    ProtocolError(String),
}

/// Runs the guest loop until stdin closes. Returns the process exit code.
pub fn serve<R, W>(input: R, output: W) -> i32
where
    R: Read + Send + 'static,
    W: Write + Send + 'static,
{
    let shared = Arc::new(Shared {
        out: Mutex::new(BufWriter::new(output)),
        interrupt_seq: AtomicU64::new(0),
        ignore_interrupts: AtomicBool::new(false),
    });
    let hello = Handshake {
        protocol: PROTOCOL_VERSION,
        runner: "agora-fake-guest".into(),
        pid: std::process::id(),
    };
    {
        let mut out = shared.out.lock().expect("guest stdout lock");
        if write_frame(&mut *out, &Frame::new(FrameType::Handshake, 0, serde_json::to_value(hello).expect("handshake serializes"))).is_err() {
            return 1;
        }
    }

    let (tx, rx) = mpsc::channel();
    let reader_shared = Arc::clone(&shared);
    thread::spawn(move || {
        let mut r = BufReader::new(input);
        loop {
            match read_frame(&mut r) {
                Ok(f) => match f.kind {
                    FrameType::Interrupt => reader_shared.interrupt_seq.store(f.seq, Ordering::SeqCst),
                    FrameType::Exec => {
                        let src = f.payload.as_str().unwrap_or_default().to_string();
                        if tx.send(Inbound::Exec(f.seq, src)).is_err() {
                            return;
                        }
                    }
                    other => {
                        let _ = tx.send(Inbound::ProtocolError(format!("unexpected {other:?} frame")));
                    }
                },
                Err(FrameError::Malformed(m)) => {
                    let _ = tx.send(Inbound::ProtocolError(m));
                }
                Err(_) => return,
            }
        }
    });

    let mut vars = BTreeMap::new();
    for msg in rx {
        let (seq, source) = match msg {
            Inbound::Exec(seq, s) => (seq, s),
            Inbound::ProtocolError(m) => {
                let status = StatusPayload {
                    status: CellStatus::Exception,
                    total_output_bytes: 0,
                    wall_ms: 0,
                    error: Some(format!("ProtocolError: {m}")),
                    protocol_error: true,
                };
                let mut out = shared.out.lock().expect("guest stdout lock");
                let _ = write_frame(&mut *out, &Frame::new(FrameType::Status, 0, status_value(&status)));
                continue;
            }
        };
        let start = Instant::now();
        let mut cell = Cell {
            shared: &shared,
            vars: &mut vars,
            seq,
            bytes: 0,
        };
        let result = cell.run_source(&source, 0);
        let bytes = cell.bytes;
        let (status, error) = match result {
            Ok(()) => (CellStatus::Ok, None),
            Err(Stop::Exception(e)) => (CellStatus::Exception, Some(e)),
            Err(Stop::Interrupted) => (CellStatus::Exception, Some("KeyboardInterrupt: interrupted".to_string())),
            Err(Stop::Exit(code)) => {
                let _ = shared.out.lock().map(|mut o| o.flush());
                return code;
            }
        };
        let payload = StatusPayload {
            status,
            total_output_bytes: bytes,
            wall_ms: start.elapsed().as_millis() as u64,
            error,
            protocol_error: false,
        };
        let mut out = shared.out.lock().expect("guest stdout lock");
        if write_frame(&mut *out, &Frame::new(FrameType::Status, seq, status_value(&payload))).is_err() {
            return 1;
        }
    }
    0
}

fn status_value(s: &StatusPayload) -> Value {
    serde_json::to_value(s).unwrap_or_else(|_| json!({}))
}

/// Entry point for the guest binary: serves on the process's standard streams.
pub fn main_stdio() -> i32 {
    serve(io::stdin(), io::stdout())
}
