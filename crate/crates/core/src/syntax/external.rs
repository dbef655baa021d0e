use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::process::ExitStatusExt;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use wait_timeout::ChildExt;

use super::{CheckerKind, SyntaxChecker, SyntaxStatus, SyntaxVerdict, DEFAULT_CPP_TIMEOUT_SECS};
use crate::error::{Error, Result};

/// Counting semaphore bounding concurrent checker processes.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    available: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.available.wait(&mut free);
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.available.notify_one();
    }
}

/// Runs a toolchain front end on a temporary file. Exit status 0 means
/// valid, any other exit code invalid; signals, timeouts and spawn failures
/// are checker errors.
#[derive(Debug)]
pub struct ExternalChecker {
    id: String,
    command: Vec<String>,
    extension: String,
    timeout: f64,
    slots: Slots,
}

impl ExternalChecker {
    pub fn new(
        id: impl Into<String>,
        command: Vec<String>,
        extension: impl Into<String>,
        timeout: f64,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("external checker command is empty".into()));
        }
        if !(timeout > 0.0) {
            return Err(Error::Config(format!(
                "external checker timeout must be positive, got {timeout}"
            )));
        }
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        Ok(ExternalChecker {
            id: id.into(),
            command,
            extension: extension.into(),
            timeout,
            slots: Slots::new(workers),
        })
    }

    /// `g++ -fsyntax-only` with the default 2 s budget.
    pub fn gxx() -> Self {
        ExternalChecker::new(
            "cpp/g++-fsyntax-only",
            ["g++", "-fsyntax-only", "-std=c++17", "-x", "c++", "{file}"]
                .map(String::from)
                .to_vec(),
            "cpp",
            DEFAULT_CPP_TIMEOUT_SECS,
        )
        .expect("static checker config is valid")
    }

    fn error_verdict(&self, started: Instant, message: String) -> SyntaxVerdict {
        SyntaxVerdict {
            status: SyntaxStatus::CheckerError,
            checker_id: self.id.clone(),
            latency: started.elapsed().as_secs_f64(),
            diagnostic: Some(message),
        }
    }

    fn run(&self, source: &str, started: Instant) -> std::io::Result<SyntaxVerdict> {
        let mut file = tempfile::Builder::new()
            .prefix("fimroute-")
            .suffix(&format!(".{}", self.extension))
            .tempfile()?;
        file.write_all(source.as_bytes())?;
        file.flush()?;
        let path = file.path().to_string_lossy().into_owned();
        // Diagnostics go to a file so a chatty compiler cannot fill a pipe and stall.
        let mut stderr = tempfile::tempfile()?;

        let args: Vec<String> = self.command[1..]
            .iter()
            .map(|a| a.replace("{file}", &path))
            .collect();
        let _slot = self.slots.acquire();
        let mut child = Command::new(&self.command[0])
            .args(&args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::from(stderr.try_clone()?))
            .spawn()?;

        let status = match child.wait_timeout(Duration::from_secs_f64(self.timeout))? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(self.error_verdict(
                    started,
                    format!("checker timed out after {:.1}s", self.timeout),
                ));
            }
        };

        if let Some(signal) = status.signal() {
            return Ok(self.error_verdict(started, format!("checker killed by signal {signal}")));
        }
        if status.success() {
            return Ok(SyntaxVerdict::from_parse(&self.id, started, None));
        }
        let mut text = String::new();
        stderr.seek(SeekFrom::Start(0))?;
        stderr.take(64 * 1024).read_to_string(&mut text).ok();
        let first = text
            .lines()
            .find(|l| l.contains("error"))
            .or_else(|| text.lines().next())
            .unwrap_or("checker exited with failure")
            .replace(&path, "<source>");
        Ok(SyntaxVerdict::from_parse(&self.id, started, Some(first)))
    }
}

impl SyntaxChecker for ExternalChecker {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> CheckerKind {
        CheckerKind::ExternalProcess
    }

    fn timeout(&self) -> f64 {
        self.timeout
    }

    fn check(&self, source: &str) -> SyntaxVerdict {
        let started = Instant::now();
        self.run(source, started)
            .unwrap_or_else(|e| self.error_verdict(started, format!("checker failed to run: {e}")))
    }
}
