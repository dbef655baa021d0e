//! Cumulative counters and latency histograms with a text exposition.

use std::fmt::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use fimroute::model::RouteReason;
use serde::{Deserialize, Serialize};

/// Upper bucket bounds in seconds.
pub const LATENCY_BUCKETS: [f64; 14] = [
    0.0005, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0,
];

#[derive(Debug, Default)]
pub struct Histogram {
    buckets: [AtomicU64; LATENCY_BUCKETS.len()],
    count: AtomicU64,
    /// Sum in microseconds.
    sum_us: AtomicU64,
}

impl Histogram {
    pub fn observe(&self, seconds: f64) {
        let seconds = seconds.max(0.0);
        if let Some(i) = LATENCY_BUCKETS.iter().position(|&b| seconds <= b) {
            self.buckets[i].fetch_add(1, Ordering::Relaxed);
        }
        self.count.fetch_add(1, Ordering::Relaxed);
        self.sum_us.fetch_add((seconds * 1e6).round() as u64, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    /// Cumulative counts per bucket.
    pub fn cumulative(&self) -> Vec<u64> {
        let mut acc = 0;
        self.buckets
            .iter()
            .map(|b| {
                acc += b.load(Ordering::Relaxed);
                acc
            })
            .collect()
    }
}

pub const STAGES: [&str; 5] = ["total", "overhead", "local", "gate", "remote"];

#[derive(Debug, Default)]
pub struct Metrics {
    requests: AtomicU64,
    kept_local: AtomicU64,
    escalated: AtomicU64,
    by_reason: [AtomicU64; RouteReason::ALL.len()],
    checker_errors: AtomicU64,
    client_errors: AtomicU64,
    server_errors: AtomicU64,
    unavailable: AtomicU64,
    latency: [Histogram; STAGES.len()],
}

/// Point-in-time copy of the counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub kept_local: u64,
    pub escalated: u64,
    pub by_reason: Vec<(String, u64)>,
    pub checker_errors: u64,
    pub client_errors: u64,
    pub server_errors: u64,
    pub unavailable: u64,
}

impl MetricsSnapshot {
    pub fn reason(&self, reason: RouteReason) -> u64 {
        self.by_reason
            .iter()
            .find(|(r, _)| r == reason.as_str())
            .map_or(0, |(_, n)| *n)
    }
}

pub struct Latencies {
    pub total: f64,
    pub overhead: f64,
    pub local: f64,
    pub gate: f64,
    pub remote: f64,
}

impl Metrics {
    pub fn record_decision(&self, kept_local: bool, reason: RouteReason, checker_error: bool, lat: &Latencies) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        if kept_local {
            self.kept_local.fetch_add(1, Ordering::Relaxed);
        } else {
            self.escalated.fetch_add(1, Ordering::Relaxed);
        }
        let idx = RouteReason::ALL.iter().position(|&r| r == reason).expect("reason listed in ALL");
        self.by_reason[idx].fetch_add(1, Ordering::Relaxed);
        if checker_error {
            self.checker_errors.fetch_add(1, Ordering::Relaxed);
        }
        for (h, v) in self
            .latency
            .iter()
            .zip([lat.total, lat.overhead, lat.local, lat.gate, lat.remote])
        {
            h.observe(v);
        }
    }

    /// Counts a request that ended without a decision.
    pub fn record_failure(&self, status: u16) {
        let counter = match status {
            503 => &self.unavailable,
            400..=499 => &self.client_errors,
            _ => &self.server_errors,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        MetricsSnapshot {
            requests: get(&self.requests),
            kept_local: get(&self.kept_local),
            escalated: get(&self.escalated),
            by_reason: RouteReason::ALL
                .iter()
                .zip(&self.by_reason)
                .map(|(r, n)| (r.as_str().to_owned(), get(n)))
                .collect(),
            checker_errors: get(&self.checker_errors),
            client_errors: get(&self.client_errors),
            server_errors: get(&self.server_errors),
            unavailable: get(&self.unavailable),
        }
    }

    pub fn latency(&self, stage: &str) -> Option<&Histogram> {
        STAGES.iter().position(|&s| s == stage).map(|i| &self.latency[i])
    }

    /// Prometheus-style text exposition.
    pub fn render(&self) -> String {
        let s = self.snapshot();
        let mut out = String::new();
        let mut counter = |name: &str, help: &str, value: u64| {
            let _ = writeln!(out, "# HELP {name} {help}\n# TYPE {name} counter\n{name} {value}");
        };
        counter("fimroute_requests_total", "Routed requests.", s.requests);
        counter("fimroute_kept_local_total", "Requests answered by the local model.", s.kept_local);
        counter("fimroute_escalated_total", "Requests answered by the remote model.", s.escalated);
        counter("fimroute_checker_errors_total", "Syntax checker failures.", s.checker_errors);
        let _ = writeln!(out, "# HELP fimroute_decisions_total Routed requests by reason.\n# TYPE fimroute_decisions_total counter");
        for (reason, n) in &s.by_reason {
            let _ = writeln!(out, "fimroute_decisions_total{{reason=\"{reason}\"}} {n}");
        }
        let _ = writeln!(out, "# HELP fimroute_request_errors_total Requests without a decision.\n# TYPE fimroute_request_errors_total counter");
        for (class, n) in [("client", s.client_errors), ("server", s.server_errors), ("unavailable", s.unavailable)] {
            let _ = writeln!(out, "fimroute_request_errors_total{{class=\"{class}\"}} {n}");
        }
        let rate = if s.requests == 0 { 0.0 } else { s.kept_local as f64 / s.requests as f64 };
        let _ = writeln!(out, "# HELP fimroute_local_rate Fraction of requests kept local.\n# TYPE fimroute_local_rate gauge\nfimroute_local_rate {rate}");
        let _ = writeln!(out, "# HELP fimroute_latency_seconds Per-stage latency.\n# TYPE fimroute_latency_seconds histogram");
        for (stage, h) in STAGES.iter().zip(&self.latency) {
            for (bound, n) in LATENCY_BUCKETS.iter().zip(h.cumulative()) {
                let _ = writeln!(out, "fimroute_latency_seconds_bucket{{stage=\"{stage}\",le=\"{bound}\"}} {n}");
            }
            let _ = writeln!(out, "fimroute_latency_seconds_bucket{{stage=\"{stage}\",le=\"+Inf\"}} {}", h.count());
            let _ = writeln!(
                out,
                "fimroute_latency_seconds_sum{{stage=\"{stage}\"}} {}",
                h.sum_us.load(Ordering::Relaxed) as f64 / 1e6
            );
            let _ = writeln!(out, "fimroute_latency_seconds_count{{stage=\"{stage}\"}} {}", h.count());
        }
        out
    }
}
