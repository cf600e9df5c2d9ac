#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use main_annotate::chat::{parse_file, Overrides, Story, Transcript};
use main_annotate::config::ModelConfig;
use main_annotate::rubric::{AnnotationSet, ElementId};

pub const APPENDIX_A_DICT: &str = "{‘A0’: [1], ‘A1’: Null, ‘A2’: Null, ‘A3’: Null, ‘A4’: [3], ‘A5’: [6, 7], ‘A6’: Null, ‘A7’: [8, 9], ‘A8’: Null, ‘A9’: Null, ‘A10’: [12], ‘A11’: Null, ‘A12’: [11], ‘A13’: [11], ‘A14’: Null, ‘A15’: [13], ‘A16’: Null}";

pub const APPENDIX_A_DICT_ASCII: &str = "{'A0': [1], 'A1': Null, 'A2': Null, 'A3': Null, 'A4': [3], 'A5': [6, 7], 'A6': Null, 'A7': [8, 9], 'A8': Null, 'A9': Null, 'A10': [12], 'A11': Null, 'A12': [11], 'A13': [11], 'A14': Null, 'A15': [13], 'A16': Null}";

pub const APPENDIX_B_DICT_ZH: &str = "{‘A0’: [3], ‘A1’: Null, ‘A2’: [3], ‘A3’: [4], ‘A4’: Null, ‘A5’: [6, 7], ‘A6’: [8], ‘A7’: [12, 15], ‘A8’: Null, ‘A9’: Null, ‘A10’: [16], ‘A11’: Null, ‘A12’: [13], ‘A13’: [14], ‘A14’: Null, ‘A15’: [18], ‘A16’: Null}";

pub const APPENDIX_B_DICT_EN: &str = "{‘A0’: [1], ‘A1’: Null, ‘A2’: [1], ‘A3’: [2], ‘A4’: Null, ‘A5’: [5], ‘A6’: [6], ‘A7’: [10, 13], ‘A8’: Null, ‘A9’: [14], ‘A10’: [14], ‘A11’: Null, ‘A12’: [11], ‘A13’: [12], ‘A14’: Null, ‘A15’: [16], ‘A16’: Null}";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus_dir() -> PathBuf {
    fixtures().join("corpus")
}

pub fn fixture(name: &str) -> Transcript {
    let path = corpus_dir().join(name);
    let path = if path.exists() {
        path
    } else {
        fixtures().join(name)
    };
    parse_file(&path, &Overrides::default()).expect("fixture parses")
}

/// Table 7 element labels per line for a rater column.
fn table7_column(rater: &str) -> [&'static str; 15] {
    match rater {
        "human1" => [
            "T,I1", "I1", "G1", "O1", "O1", "", "", "I2", "", "G2", "G3", "O2", "O3,R3", "R2", "R3",
        ],
        "human2" => [
            "T,I1", "I1", "G1", "O1", "", "", "", "I2", "", "G2", "G3", "O2", "O3,R3", "R2", "R3",
        ],
        "deepseek-r1" => [
            "T", "I1", "G1", "O1", "O1", "", "", "", "A2", "G2", "I3,G3", "O2", "O3,R3", "R2", "R3",
        ],
        other => panic!("no Table 7 column {other}"),
    }
}

pub fn table7_set(rater: &str) -> AnnotationSet {
    let mut a = AnnotationSet::new("chi_dog_table7", rater, Story::Dog);
    for (i, cell) in table7_column(rater).iter().enumerate() {
        for label in cell.split(',').filter(|s| !s.is_empty()) {
            let e = ElementId::from_label(label).expect("rubric label");
            a.positions.insert(e, i as u32 + 1);
        }
    }
    a
}

pub fn write_set(dir: &std::path::Path, a: &AnnotationSet) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(
        dir.join(format!("{}.json", a.narrative_id)),
        a.to_json_pretty(),
    )
    .unwrap();
}

pub fn completion_body(content: &str, prompt_tokens: u64, completion_tokens: u64) -> Value {
    json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens,
                  "total_tokens": prompt_tokens + completion_tokens},
    })
}

/// Request body and zero-based call number in, status and body out.
pub type Responder = Arc<dyn Fn(&Value, usize) -> (u16, Value) + Send + Sync>;

#[derive(Default)]
pub struct MockStats {
    pub calls: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub peak: AtomicUsize,
    pub bodies: Mutex<Vec<Value>>,
    pub auth: Mutex<Vec<Option<String>>>,
}

pub struct MockLlm {
    pub base_url: String,
    pub stats: Arc<MockStats>,
}

#[derive(Clone)]
struct MockState {
    responder: Responder,
    delay: Duration,
    stats: Arc<MockStats>,
}

async fn handle(
    State(s): State<MockState>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let n = s.stats.calls.fetch_add(1, Ordering::SeqCst);
    let now = s.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.stats.peak.fetch_max(now, Ordering::SeqCst);
    s.stats.bodies.lock().unwrap().push(body.clone());
    s.stats.auth.lock().unwrap().push(
        headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    );
    if !s.delay.is_zero() {
        tokio::time::sleep(s.delay).await;
    }
    let (status, out) = (s.responder)(&body, n);
    s.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(status).unwrap(), Json(out))
}

pub async fn start_mock(responder: Responder, delay: Duration) -> MockLlm {
    let stats = Arc::new(MockStats::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .with_state(MockState {
            responder,
            delay,
            stats: stats.clone(),
        });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    MockLlm {
        base_url: format!("http://{addr}/v1"),
        stats,
    }
}

/// User message text of a recorded request.
pub fn user_content(body: &Value) -> &str {
    body["messages"][0]["content"].as_str().unwrap_or("")
}

/// Fast-retry profile pointing at a mock.
pub fn mock_config(base_url: &str) -> ModelConfig {
    let mut cfg = ModelConfig::new("deepseek-r1", base_url);
    cfg.retry_base_delay_ms = 5;
    cfg.request_timeout_secs = 10;
    cfg
}

/// Responder that answers each fixture with a valid dictionary, chosen by a
/// line unique to that fixture.
pub fn fixture_responder(usage: (u64, u64)) -> Responder {
    Arc::new(move |body, _| {
        let full = user_content(body);
        let text = full.rsplit("““““").next().unwrap_or(full);
        let dict = if text.contains("\n1 有一天有一个小老鼠\n") {
            APPENDIX_A_DICT.to_string()
        } else if text.contains("\n16 小猫吃了他里面的一条鱼") {
            APPENDIX_B_DICT_EN.to_string()
        } else if text.contains("\n1 有一天小狗出来玩。\n") {
            table7_set("deepseek-r1").positions.to_dict_string()
        } else {
            "{'A0': Null}".to_string()
        };
        let content = format!("思考过程略。\n位置字典={dict}");
        (200, completion_body(&content, usage.0, usage.1))
    })
}
