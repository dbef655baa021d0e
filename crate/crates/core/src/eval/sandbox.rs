//! Child-process execution of assembled programs against their unit tests.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, ExitStatus, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::model::{FimTask, Language, TestSuite};
use crate::syntax::assemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Passed,
    Failed,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub stdout_excerpt: String,
    pub stderr_excerpt: String,
    /// Seconds.
    pub duration: f64,
}

impl ExecOutcome {
    pub fn passed(&self) -> bool {
        self.status == ExecStatus::Passed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub python: String,
    pub cxx: String,
    /// Wall-clock allowance on top of the task's CPU limit, seconds.
    pub grace: f64,
    /// Budget for compiling C++ programs, seconds.
    pub compile_timeout: f64,
    /// Run in a fresh network namespace when `unshare` permits it.
    pub isolate_network: bool,
    /// Bytes of stdout/stderr kept per run.
    pub excerpt_bytes: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            python: "python3".into(),
            cxx: "g++".into(),
            grace: 1.0,
            compile_timeout: 60.0,
            isolate_network: true,
            excerpt_bytes: 2048,
        }
    }
}

fn unshare_available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        let ok = Command::new("unshare")
            .args(["-rn", "true"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success());
        if !ok {
            tracing::warn!("unshare -rn unavailable; test programs run without network isolation");
        }
        ok
    })
}

struct Run {
    status: Option<ExitStatus>,
    stdout: String,
    stderr: String,
    duration: f64,
}

/// Executes completions against task tests. Python runs under `python3 -I`;
/// C++ is compiled with `g++ -std=c++17` and the binary run. CPU time and
/// address space are capped with rlimits, wall time with a kill.
#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    config: SandboxConfig,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Sandbox { config }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn supports(&self, language: &Language) -> bool {
        matches!(language, Language::Python | Language::Cpp)
    }

    pub fn execute_pass1(&self, task: &FimTask, completion_text: &str) -> Result<ExecOutcome> {
        let tests = task
            .tests
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("task `{}` has no tests", task.id)))?;
        if !self.supports(&task.language) {
            return Err(Error::Config(format!(
                "no execution adapter for language `{}` (available: python, cpp)",
                task.language
            )));
        }
        let dir = tempfile::Builder::new()
            .prefix("fimroute-exec-")
            .tempdir()
            .map_err(|e| Error::Harness(format!("creating sandbox directory: {e}")))?;
        let program = assemble(&task.prefix, completion_text, &task.suffix);
        match task.language {
            Language::Python => self.run_python(dir.path(), &program, tests),
            Language::Cpp => self.run_cpp(dir.path(), &program, tests),
            _ => unreachable!("checked by supports()"),
        }
    }

    fn run_python(&self, dir: &Path, program: &str, tests: &TestSuite) -> Result<ExecOutcome> {
        let source = format!("{program}\n\n{}\n\ncheck({})\n", tests.test_code, tests.entry_point);
        let file = dir.join("main.py");
        write_file(&file, &source)?;
        let run = self.spawn(dir, &self.config.python, &["-I".into(), file.to_string_lossy().into_owned()], tests)?;
        let status = match run.status {
            None => ExecStatus::Timeout,
            Some(s) if s.success() => ExecStatus::Passed,
            Some(s) if is_limit_signal(s) => ExecStatus::Timeout,
            Some(_) if run.stderr.contains("AssertionError") => ExecStatus::Failed,
            Some(_) => ExecStatus::Error,
        };
        Ok(self.outcome(status, run))
    }

    fn run_cpp(&self, dir: &Path, program: &str, tests: &TestSuite) -> Result<ExecOutcome> {
        let source = format!("{program}\n\n{}\n", tests.test_code);
        let file = dir.join("main.cpp");
        let binary = dir.join("main");
        write_file(&file, &source)?;
        let started = Instant::now();
        let compile = Command::new(&self.config.cxx)
            .args(["-std=c++17", "-O0", "-o"])
            .arg(&binary)
            .arg(&file)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Harness(format!("spawning {}: {e}", self.config.cxx)))?;
        let output = wait_with_timeout(compile, self.config.compile_timeout)?;
        match output {
            Some((status, stderr)) if !status.success() => {
                return Ok(ExecOutcome {
                    status: ExecStatus::Error,
                    stdout_excerpt: String::new(),
                    stderr_excerpt: excerpt(&stderr, self.config.excerpt_bytes),
                    duration: started.elapsed().as_secs_f64(),
                })
            }
            Some(_) => {}
            None => return Err(Error::Harness(format!("compilation exceeded {}s", self.config.compile_timeout))),
        }
        let run = self.spawn(dir, &binary.to_string_lossy(), &[], tests)?;
        let status = match run.status {
            None => ExecStatus::Timeout,
            Some(s) if s.success() => ExecStatus::Passed,
            Some(s) if is_limit_signal(s) => ExecStatus::Timeout,
            Some(s) if s.code() == Some(1) => ExecStatus::Failed,
            Some(_) => ExecStatus::Error,
        };
        Ok(self.outcome(status, run))
    }

    fn outcome(&self, status: ExecStatus, run: Run) -> ExecOutcome {
        ExecOutcome {
            status,
            stdout_excerpt: excerpt(&run.stdout, self.config.excerpt_bytes),
            stderr_excerpt: excerpt(&run.stderr, self.config.excerpt_bytes),
            duration: run.duration,
        }
    }

    fn spawn(&self, dir: &Path, program: &str, args: &[String], tests: &TestSuite) -> Result<Run> {
        let harness = |what: &str, e: std::io::Error| Error::Harness(format!("{what}: {e}"));
        let mut stdout = tempfile::tempfile().map_err(|e| harness("stdout capture", e))?;
        let mut stderr = tempfile::tempfile().map_err(|e| harness("stderr capture", e))?;
        let mut cmd = if self.config.isolate_network && unshare_available() {
            let mut c = Command::new("unshare");
            c.args(["-rn", "--", program]);
            c
        } else {
            Command::new(program)
        };
        let cpu = tests.time_limit.ceil().max(1.0) as libc::rlim_t;
        let memory = tests.memory_limit as libc::rlim_t;
        cmd.args(args)
            .current_dir(dir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .stdin(Stdio::null())
            .stdout(Stdio::from(stdout.try_clone().map_err(|e| harness("stdout capture", e))?))
            .stderr(Stdio::from(stderr.try_clone().map_err(|e| harness("stderr capture", e))?));
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                set_limit(libc::RLIMIT_CPU, cpu)?;
                set_limit(libc::RLIMIT_AS, memory)?;
                set_limit(libc::RLIMIT_CORE, 0)?;
                libc::setpgid(0, 0);
                Ok(())
            });
        }
        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| harness(&format!("spawning {program}"), e))?;
        let wall = Duration::from_secs_f64(tests.time_limit + self.config.grace);
        let status = match child.wait_timeout(wall).map_err(|e| harness("waiting for child", e))? {
            Some(status) => Some(status),
            None => {
                // SAFETY: signalling the child's own process group.
                unsafe {
                    libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
                }
                let _ = child.kill();
                let _ = child.wait();
                None
            }
        };
        let duration = started.elapsed().as_secs_f64();
        Ok(Run {
            status,
            stdout: read_back(&mut stdout, self.config.excerpt_bytes),
            stderr: read_back(&mut stderr, 64 * 1024),
            duration,
        })
    }
}

fn set_limit(resource: libc::__rlimit_resource_t, value: libc::rlim_t) -> std::io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: value,
        rlim_max: value,
    };
    // SAFETY: plain syscall with a valid pointer.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(std::io::Error::last_os_error());
    }
    Ok(())
}

fn is_limit_signal(status: ExitStatus) -> bool {
    matches!(status.signal(), Some(libc::SIGXCPU) | Some(libc::SIGKILL))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::Harness(format!("writing {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::Harness(format!("writing {}: {e}", path.display())))
}

fn read_back(file: &mut File, limit: usize) -> String {
    let mut buf = Vec::new();
    if file.seek(SeekFrom::Start(0)).is_ok() {
        let _ = file.take(limit as u64).read_to_end(&mut buf);
    }
    String::from_utf8_lossy(&buf).into_owned()
}

fn excerpt(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_owned();
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_owned()
}

fn wait_with_timeout(mut child: std::process::Child, secs: f64) -> Result<Option<(ExitStatus, String)>> {
    let mut pipe = child.stderr.take().expect("stderr piped");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = pipe.read_to_string(&mut s);
        s
    });
    let status = child
        .wait_timeout(Duration::from_secs_f64(secs))
        .map_err(|e| Error::Harness(format!("waiting for compiler: {e}")))?;
    match status {
        Some(status) => Ok(Some((status, reader.join().unwrap_or_default()))),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            Ok(None)
        }
    }
}
