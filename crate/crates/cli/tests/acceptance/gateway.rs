use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use fimroute::backend::{Backend, GenerationParams, SyntheticBackend};
use fimroute::model::{Completion, FimTask};
use fimroute::routers::{Policy, Router};
use fimroute::synth::{generate_tasks, MaskPolicy, SynthConfig};
use fimroute::syntax::{CheckerRegistry, SyntaxGate};
use fimroute_gateway::{app, parse_request, AppState, CompleteResponse};
use http_body_util::BodyExt;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use crate::support::{percentile, router_config, ConstantBackend, Failures, Outcome};

const CONCURRENCY: usize = 32;
const LOAD_REQUESTS: usize = 4_000;
const OVERHEAD_P99_SECS: f64 = 0.005;
const FUZZ_BODIES: usize = 10_000;

/// Remote stand-in that records every byte of task content it receives.
struct Recording {
    inner: Arc<dyn Backend>,
    seen: Mutex<Vec<(String, usize)>>,
}

impl Backend for Recording {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, task: &FimTask, params: &GenerationParams) -> fimroute::Result<Completion> {
        self.seen
            .lock()
            .push((task.id.clone(), task.prefix.len() + task.suffix.len()));
        self.inner.generate(task, params)
    }
}

fn body_for(task: &FimTask) -> Value {
    json!({
        "id": task.id,
        "prefix": task.prefix,
        "suffix": task.suffix,
        "language": task.language.as_str(),
    })
}

fn stub(id: &str, confidence: f64) -> Arc<dyn Backend> {
    Arc::new(ConstantBackend {
        model_id: id.into(),
        text: "return 1".into(),
        confidence,
    })
}

async fn post(router: &axum::Router, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/v1/fim/complete")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn synthetic_state(policy: Policy) -> (AppState, Arc<Recording>, Vec<FimTask>) {
    let config = SynthConfig::reference_rates(400, 808);
    let tasks = generate_tasks(&config.language, config.n_tasks, config.seed, config.mask);
    let local = SyntheticBackend::new(config.local.clone()).unwrap().with_tasks(&tasks);
    let remote = Arc::new(Recording {
        inner: Arc::new(SyntheticBackend::new(config.remote.clone()).unwrap().with_tasks(&tasks)),
        seen: Mutex::new(Vec::new()),
    });
    let router = Router::new(router_config(policy, 0.7), None).unwrap();
    let gate = SyntaxGate::uncached(Arc::new(CheckerRegistry::with_defaults()));
    let state = AppState::new(router, Arc::new(local), Some(remote.clone() as Arc<dyn Backend>), gate, 64);
    (state, remote, tasks)
}

async fn privacy(fails: &mut Failures) -> String {
    let mut summary = Vec::new();
    for policy in [Policy::Synconf, Policy::ConfidenceOnly, Policy::Cascade] {
        let (state, remote, tasks) = synthetic_state(policy);
        let router = app(state);
        let (mut kept, mut escalated_bytes, mut escalated) = (Vec::new(), 0usize, 0usize);
        for task in &tasks {
            let (status, bytes) = post(&router, serde_json::to_vec(&body_for(task)).unwrap()).await;
            if status != StatusCode::OK {
                fails.push(format!("privacy {policy}: status {status}"));
                continue;
            }
            let resp: CompleteResponse = serde_json::from_slice(&bytes).unwrap();
            if resp.kept_local {
                kept.push(task.id.clone());
            } else {
                escalated += 1;
                escalated_bytes += task.prefix.len() + task.suffix.len();
            }
        }
        let seen = remote.seen.lock();
        let leaked = seen.iter().filter(|(id, _)| kept.contains(id)).count();
        let seen_bytes: usize = seen.iter().map(|(_, b)| b).sum();
        if leaked > 0 || seen.len() != escalated || seen_bytes != escalated_bytes {
            fails.push(format!(
                "privacy {policy}: {leaked} kept-local requests reached the remote; {} calls for {escalated} escalations",
                seen.len()
            ));
        }
        summary.push(format!("{policy} {} kept local", kept.len()));
    }
    summary.join(", ")
}

async fn overhead(fails: &mut Failures) -> (f64, f64) {
    let registry = Arc::new(CheckerRegistry::with_defaults());
    let router = Router::new(router_config(Policy::Synconf, 0.7), None).unwrap();
    let state = AppState::new(
        router,
        stub("local", 0.9),
        Some(stub("remote", 0.9)),
        SyntaxGate::uncached(registry),
        CONCURRENCY,
    );
    let router = app(state);
    let tasks = Arc::new(generate_tasks(&fimroute::model::Language::Python, 400, 808, MaskPolicy::AnyLine));
    let mut workers = Vec::new();
    for w in 0..CONCURRENCY {
        let router = router.clone();
        let tasks = tasks.clone();
        workers.push(tokio::spawn(async move {
            let mut samples = Vec::new();
            for i in 0..LOAD_REQUESTS / CONCURRENCY {
                let task = &tasks[(w * 131 + i * 7) % tasks.len()];
                let (status, bytes) = post(&router, serde_json::to_vec(&body_for(task)).unwrap()).await;
                assert_eq!(status, StatusCode::OK);
                let resp: CompleteResponse = serde_json::from_slice(&bytes).unwrap();
                samples.push((resp.latency.overhead, resp.latency.total));
            }
            samples
        }));
    }
    let mut overheads = Vec::new();
    let mut totals = Vec::new();
    for w in workers {
        for (o, t) in w.await.unwrap() {
            overheads.push(o);
            totals.push(t);
        }
    }
    let p99 = percentile(&mut overheads, 0.99);
    if p99 >= OVERHEAD_P99_SECS {
        fails.push(format!("routing overhead p99 {:.2} ms", 1e3 * p99));
    }
    (p99, percentile(&mut totals, 0.99))
}

fn fuzz_body(rng: &mut ChaCha8Rng, seeds: &[Value]) -> Vec<u8> {
    let base = &seeds[rng.random_range(0..seeds.len())];
    let text = serde_json::to_vec(base).unwrap();
    let junk = [
        Value::Null,
        json!(1),
        json!(-3.5e300),
        json!(true),
        json!([]),
        json!({}),
        json!(["a", 1]),
        json!(""),
        json!("\u{0}\u{ffff}"),
        json!("klingon"),
        json!("x".repeat(5000)),
    ];
    match rng.random_range(0..12) {
        0 => (0..rng.random_range(0..300)).map(|_| rng.random()).collect(),
        1 => {
            let mut b = text;
            for _ in 0..rng.random_range(1..6) {
                let i = rng.random_range(0..b.len());
                b[i] = rng.random();
            }
            b
        }
        2 => {
            let cut = rng.random_range(0..text.len());
            text[..cut].to_vec()
        }
        3 => {
            let mut b = text;
            let i = rng.random_range(0..=b.len());
            let extra: Vec<u8> = (0..rng.random_range(1..20)).map(|_| rng.random()).collect();
            b.splice(i..i, extra);
            b
        }
        4 | 5 => {
            let mut v = base.clone();
            let field = ["prefix", "suffix", "language", "id", "subtype"][rng.random_range(0..5)];
            v[field] = junk[rng.random_range(0..junk.len())].clone();
            serde_json::to_vec(&v).unwrap()
        }
        6 => {
            let mut v = base.clone();
            let field = ["prefix", "suffix", "language"][rng.random_range(0..3)];
            v.as_object_mut().unwrap().remove(field);
            serde_json::to_vec(&v).unwrap()
        }
        7 => {
            let mut v = base.clone();
            v[format!("extra{}", rng.random_range(0..5))] = junk[rng.random_range(0..junk.len())].clone();
            serde_json::to_vec(&v).unwrap()
        }
        8 => serde_json::to_vec(&junk[rng.random_range(0..junk.len())]).unwrap(),
        9 => {
            let depth = rng.random_range(1..5000);
            let mut b = vec![b'['; depth];
            b.extend(std::iter::repeat_n(b']', rng.random_range(0..=depth)));
            b
        }
        10 => {
            let mut b = b"{\"prefix\": \"".to_vec();
            b.extend((0..rng.random_range(1..10)).map(|_| rng.random_range(0x80..=0xffu8)));
            b.extend_from_slice(b"\", \"suffix\": \"\", \"language\": \"python\"}");
            b
        }
        _ => {
            let mut v = base.clone();
            v["subtype"] = json!(["single-line", "control", "block", "api", "Block", "loop"][rng.random_range(0..6)]);
            serde_json::to_vec(&v).unwrap()
        }
    }
}

async fn fuzz(fails: &mut Failures) -> String {
    let registry = Arc::new(CheckerRegistry::with_defaults());
    let router = Router::new(router_config(Policy::Synconf, 0.7), None).unwrap();
    let state = AppState::new(router, stub("local", 0.9), Some(stub("remote", 0.9)), SyntaxGate::uncached(registry.clone()), 64);
    let service = app(state);
    let tasks = generate_tasks(&fimroute::model::Language::Python, 50, 1, MaskPolicy::AnyLine);
    let seeds: Vec<Value> = tasks.iter().map(body_for).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut client, mut ok, mut server) = (0, 0, 0);
    for i in 0..FUZZ_BODIES {
        let body = fuzz_body(&mut rng, &seeds);
        let acceptable = parse_request(&body).is_ok_and(|t| registry.supports(&t.language));
        let (status, _) = post(&service, body.clone()).await;
        if status.is_server_error() {
            server += 1;
            fails.push(format!("fuzz body {i}: {status} for {:?}", String::from_utf8_lossy(&body[..body.len().min(80)])));
        } else if status.is_client_error() {
            client += 1;
            if acceptable {
                fails.push(format!("fuzz body {i}: {status} for a well-formed request"));
            }
        } else {
            ok += 1;
            if !acceptable {
                fails.push(format!("fuzz body {i}: {status} for a malformed request"));
            }
        }
    }
    let req = Request::get("/healthz").body(Body::empty()).unwrap();
    if service.clone().oneshot(req).await.unwrap().status() != StatusCode::OK {
        fails.push("gateway unhealthy after fuzzing".to_owned());
    }
    format!("{FUZZ_BODIES} fuzzed bodies: {client} 4xx, {ok} 200 (still well-formed), {server} 5xx")
}

pub fn criterion() -> Outcome {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let mut fails = Failures::default();
    let (privacy, (p99, total_p99), fuzz) = runtime.block_on(async {
        let privacy = privacy(&mut fails).await;
        let overhead = overhead(&mut fails).await;
        let fuzz = fuzz(&mut fails).await;
        (privacy, overhead, fuzz)
    });
    let notes = vec![
        format!("privacy: {privacy}; remote saw zero bytes of kept-local requests"),
        format!(
            "load: {LOAD_REQUESTS} requests at concurrency {CONCURRENCY}, overhead p99 {:.3} ms, total p99 {:.3} ms",
            1e3 * p99,
            1e3 * total_p99
        ),
        fuzz,
    ];
    Outcome::check(
        fails.is_empty(),
        if fails.is_empty() {
            format!("privacy holds, overhead p99 {:.3} ms (< 5 ms), fuzzing produced no 5xx", 1e3 * p99)
        } else {
            fails.summary()
        },
    )
    .with_notes(notes)
}
