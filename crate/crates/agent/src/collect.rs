//! Task execution on the local host.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

pub use miniops_core::Outcome;
use miniops_core::{CollectionTask, EpochMs, ExecutionLog, OutputKind, ParseMode, Record, TaskSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub server_id: String,
    pub started_at: EpochMs,
    pub duration_ms: u64,
    pub outcome: Outcome,
    pub records: Vec<Record>,
}

/// Something that can execute a task for a server. The host implementation
/// runs real commands; simulators substitute their own.
impl TaskResult {
    pub fn execution_log(&self) -> ExecutionLog {
        ExecutionLog {
            task_id: self.task_id.clone(),
            server_id: self.server_id.clone(),
            started_at: self.started_at,
            outcome: self.outcome,
            duration_ms: self.duration_ms,
        }
    }
}

pub trait Collector: Send + Sync {
    fn run(&self, task: &CollectionTask, server_id: &str, started_at: EpochMs) -> TaskResult;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HostCollector;

impl Collector for HostCollector {
    fn run(&self, task: &CollectionTask, server_id: &str, started_at: EpochMs) -> TaskResult {
        run_task(task, server_id, started_at)
    }
}

struct Ctx<'a> {
    task: &'a CollectionTask,
    server: &'a str,
    ts: EpochMs,
}

impl Ctx<'_> {
    fn metric(&self, name: &str, value: f64) -> Record {
        Record::metric(&self.task.output_topic, self.server, name, self.ts, value)
            .with_tag("task", &self.task.task_id)
    }

    fn log(&self, level: &str, message: &str) -> Record {
        Record::log(&self.task.output_topic, self.server, &self.task.task_id, self.ts, level, message)
            .with_tag("task", &self.task.task_id)
    }

    fn default_name(&self) -> &str {
        match &self.task.spec {
            TaskSpec::Exec {
                metric_name: Some(n), ..
            } => n,
            _ => &self.task.task_id,
        }
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    let t = s.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("not a number: {t:?}"))
}

/// Turns command output into records according to the parse mode.
pub fn parse_output(
    task: &CollectionTask,
    server: &str,
    ts: EpochMs,
    mode: ParseMode,
    stdout: &str,
) -> Result<Vec<Record>, String> {
    let ctx = Ctx { task, server, ts };
    let kind = task.output_kind;
    match (mode, kind) {
        (ParseMode::Scalar, _) | (ParseMode::Raw, OutputKind::Metric) => {
            let v = parse_number(stdout)?;
            Ok(vec![ctx.metric(ctx.default_name(), v)])
        }
        (ParseMode::Raw, OutputKind::Log) => {
            let msg = stdout.trim_end();
            if msg.is_empty() {
                return Err("empty output".into());
            }
            Ok(vec![ctx.log("INFO", msg)])
        }
        (ParseMode::Lines, OutputKind::Log) => Ok(stdout
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty())
            .map(|l| ctx.log("INFO", l))
            .collect()),
        (ParseMode::Lines, OutputKind::Metric) => {
            let mut out = Vec::new();
            for (i, line) in stdout.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let mut parts = line.split_whitespace();
                let (a, b) = (parts.next(), parts.next());
                if parts.next().is_some() {
                    return Err(format!("line {}: expected 'name value'", i + 1));
                }
                match (a, b) {
                    (Some(name), Some(v)) => out.push(ctx.metric(name, parse_number(v)?)),
                    (Some(v), None) => {
                        out.push(ctx.metric(ctx.default_name(), parse_number(v)?).with_tag("line", i.to_string()))
                    }
                    _ => unreachable!("non-empty line has a token"),
                }
            }
            Ok(out)
        }
    }
}

pub fn run_task(task: &CollectionTask, server_id: &str, started_at: EpochMs) -> TaskResult {
    let t0 = Instant::now();
    let ctx = Ctx {
        task,
        server: server_id,
        ts: started_at,
    };
    let (outcome, records) = match &task.spec {
        TaskSpec::Exec { command, parse, .. } => run_exec(&ctx, command, *parse),
        TaskSpec::HttpProbe {
            url,
            method,
            timeout_ms,
        } => probe(&ctx, url, *method, timeout_ms.unwrap_or(task.timeout_ms)),
        TaskSpec::BuiltinMetric { generator } => match builtin(generator) {
            Ok(v) => (Outcome::Ok, vec![ctx.metric(generator, v)]),
            Err(e) => (Outcome::ExecError, vec![ctx.log("ERROR", &e)]),
        },
    };
    let mut duration_ms = t0.elapsed().as_millis() as u64;
    if outcome == Outcome::Timeout {
        duration_ms = duration_ms.max(task.timeout_ms);
    }
    TaskResult {
        task_id: task.task_id.clone(),
        server_id: server_id.to_string(),
        started_at,
        duration_ms,
        outcome,
        records,
    }
}

fn run_exec(ctx: &Ctx<'_>, command: &str, mode: ParseMode) -> (Outcome, Vec<Record>) {
    use std::os::unix::process::CommandExt;
    let child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .process_group(0)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn();
    let mut child = match child {
        Ok(c) => c,
        Err(e) => return (Outcome::ExecError, vec![ctx.log("ERROR", &format!("spawn failed: {e}"))]),
    };
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = out_pipe.read_to_end(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = err_pipe.read_to_end(&mut s);
        s
    });
    let deadline = Instant::now() + Duration::from_millis(ctx.task.timeout_ms);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                // SAFETY: signalling the process group we created for the child.
                unsafe {
                    libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
                }
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(_) => break None,
        }
    };
    let Some(status) = status else {
        drop(out_reader);
        drop(err_reader);
        return (Outcome::Timeout, Vec::new());
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    if !status.success() {
        let msg = match stderr.trim() {
            "" => format!("command exited with {status}"),
            s => s.to_string(),
        };
        return (Outcome::ExecError, vec![ctx.log("ERROR", &msg)]);
    }
    match parse_output(ctx.task, ctx.server, ctx.ts, mode, &stdout) {
        Ok(records) => (Outcome::Ok, records),
        Err(e) => (Outcome::ExecError, vec![ctx.log("ERROR", &format!("parse failure: {e}"))]),
    }
}

fn probe(ctx: &Ctx<'_>, url: &str, method: miniops_core::HttpMethod, timeout_ms: u64) -> (Outcome, Vec<Record>) {
    use miniops_core::HttpMethod;
    let t0 = Instant::now();
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(timeout_ms))
        .build();
    let reachable = match client {
        Ok(c) => {
            let req = match method {
                HttpMethod::Get => c.get(url),
                HttpMethod::Head => c.head(url),
                HttpMethod::Post => c.post(url),
            };
            req.send().is_ok()
        }
        Err(_) => false,
    };
    let latency = t0.elapsed().as_secs_f64() * 1000.0;
    let up = ctx.metric("probe.reachable", if reachable { 1.0 } else { 0.0 }).with_tag("url", url);
    let lat = ctx.metric("probe.latency_ms", latency).with_tag("url", url);
    (Outcome::Ok, vec![up, lat])
}

fn read_proc(path: &str) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))
}

/// Reads one of the built-in host gauges.
pub fn builtin(generator: &str) -> Result<f64, String> {
    match generator {
        "cpu_load" => {
            let s = read_proc("/proc/loadavg")?;
            parse_number(s.split_whitespace().next().unwrap_or(""))
        }
        "mem_free_bytes" => {
            let s = read_proc("/proc/meminfo")?;
            let line = s
                .lines()
                .find(|l| l.starts_with("MemAvailable:"))
                .or_else(|| s.lines().find(|l| l.starts_with("MemFree:")))
                .ok_or("no MemAvailable in /proc/meminfo")?;
            let kb = parse_number(line.split_whitespace().nth(1).unwrap_or(""))?;
            Ok(kb * 1024.0)
        }
        "disk_free_bytes" => disk_free("/"),
        "proc_count" => {
            let n = std::fs::read_dir("/proc")
                .map_err(|e| format!("/proc: {e}"))?
                .filter_map(Result::ok)
                .filter(|e| e.file_name().to_str().is_some_and(|n| n.bytes().all(|b| b.is_ascii_digit())))
                .count();
            Ok(n as f64)
        }
        other => Err(format!("unknown generator '{other}'")),
    }
}

fn disk_free(path: &str) -> Result<f64, String> {
    let c = std::ffi::CString::new(path).map_err(|e| e.to_string())?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    // SAFETY: `c` is a valid NUL-terminated path and `st` is a writable statvfs.
    let rc = unsafe { libc::statvfs(c.as_ptr(), &mut st) };
    if rc != 0 {
        return Err(format!("statvfs {path}: {}", std::io::Error::last_os_error()));
    }
    Ok(st.f_bavail as f64 * st.f_frsize as f64)
}
