use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use commexp::annotation::{read_log, session_agreement, AnnotationSession, SessionStore};
use commexp::explain::ExplanationRecord;
use commexp::game::agreement;
use commexp::text::Task;
use commexp_cli::server::router;

const LABELS: [&str; 2] = ["neg", "pos"];
const SECRET_EXPLAINER: &str = "topk_secretmethod@3";

fn records(n: usize) -> Vec<ExplanationRecord> {
    (0..n)
        .map(|i| ExplanationRecord {
            example_id: format!("ex-{i}"),
            explainer: SECRET_EXPLAINER.into(),
            k: Some(3),
            message_tokens: vec![format!("tok{i}a"), format!("tok{i}b"), "shared".into()],
            message_ids: vec![10 + i, 100 + i, 5],
            // ŷ and y follow different patterns so a leak of either is visible.
            y_hat: i % 2,
            y: usize::from(i % 3 == 0),
            hypothesis: None,
            hypothesis_ids: None,
            y_tilde: None,
        })
        .collect()
}

struct Harness {
    dir: tempfile::TempDir,
    app: Router,
}

fn harness(ids: &[&str], n: usize) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
    for id in ids {
        let s =
            AnnotationSession::from_records(*id, Task::TextClf, labels.clone(), &records(n), n, 11)
                .unwrap();
        store.create(&s).unwrap();
    }
    let app = router(SessionStore::open(dir.path()).unwrap());
    Harness { dir, app }
}

impl Harness {
    fn store(&self) -> SessionStore {
        SessionStore::open(self.dir.path()).unwrap()
    }

    async fn call(
        &self,
        method: Method,
        uri: &str,
        body: Option<Value>,
    ) -> (StatusCode, Value, String) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        let v = serde_json::from_str(&text).unwrap_or(Value::Null);
        (status, v, text)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value, String) {
        self.call(Method::GET, uri, None).await
    }

    async fn answer(
        &self,
        id: &str,
        item: &str,
        label: &str,
        unsure: bool,
    ) -> (StatusCode, Value, String) {
        self.call(
            Method::POST,
            &format!("/session/{id}/answer"),
            Some(json!({ "item": item, "label": label, "unsure": unsure })),
        )
        .await
    }

    /// Item ids in the order the session presents them.
    async fn items(&self, id: &str) -> Vec<String> {
        let (_, v, _) = self.get(&format!("/session/{id}")).await;
        v["items"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| i["id"].as_str().unwrap().to_string())
            .collect()
    }

    fn y_hat(&self, id: &str, item: &str) -> usize {
        let s = self.store().load(id).unwrap();
        s.items.iter().find(|it| it.id == item).unwrap().y_hat
    }
}

fn assert_no_leak(text: &str) {
    for field in [
        "y_hat",
        "\"y\"",
        "y_tilde",
        "explainer",
        SECRET_EXPLAINER,
        "message_ids",
    ] {
        assert!(!text.contains(field), "{field} leaked in {text}");
    }
}

#[tokio::test]
async fn views_hide_decisions_gold_labels_and_explainer() {
    let h = harness(&["s1"], 6);
    let (status, v, text) = h.get("/session/s1").await;
    assert_eq!(status, StatusCode::OK);
    assert_no_leak(&text);
    assert_eq!(v["labels"], json!(LABELS));
    assert_eq!(v["items"].as_array().unwrap().len(), 6);
    assert_eq!(v["complete"], false);

    let (_, _, list) = h.get("/sessions").await;
    assert_no_leak(&list);
    let items = h.items("s1").await;
    let (status, ack, text) = h.answer("s1", &items[0], "pos", false).await;
    assert_eq!(status, StatusCode::OK);
    assert_no_leak(&text);
    assert_eq!(ack["answered"], 1);
    assert_eq!(ack["total"], 6);
    let (_, v, text) = h.get("/session/s1").await;
    assert_no_leak(&text);
    assert_eq!(v["answered"], json!([items[0]]));
    // Error bodies must not leak either.
    let (_, _, text) = h.get("/session/s1/report").await;
    assert_no_leak(&text);
}

#[tokio::test]
async fn answering_the_decision_everywhere_gives_full_human_csr() {
    let h = harness(&["s1"], 8);
    let items = h.items("s1").await;
    for (i, item) in items.iter().enumerate() {
        let label = LABELS[h.y_hat("s1", item)];
        let (status, ack, _) = h.answer("s1", item, label, i == 0).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["complete"], i + 1 == items.len());
    }
    let (status, r, _) = h.get("/session/s1/report").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["csr_h"], 1.0);
    assert_eq!(r["csr_h_excluding_unsure"], 1.0);
    assert_eq!(r["unsure"], 1.0 / 8.0);
    assert_eq!(r["n"], 8);
    assert_eq!(r["explainer"], SECRET_EXPLAINER);
    let gold = records(8);
    let acc = gold.iter().filter(|r| r.y == r.y_hat).count() as f64 / 8.0;
    assert_eq!(r["acc_h"], acc);
}

#[tokio::test]
async fn report_before_completion_is_a_conflict() {
    let h = harness(&["s1"], 4);
    let (status, v, _) = h.get("/session/s1/report").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "conflict");
}

#[tokio::test]
async fn closed_sessions_and_repeat_answers_are_conflicts() {
    let h = harness(&["s1"], 2);
    let items = h.items("s1").await;
    h.answer("s1", &items[0], "neg", false).await;
    let (status, _, _) = h.answer("s1", &items[0], "pos", false).await;
    assert_eq!(status, StatusCode::CONFLICT);
    h.answer("s1", &items[1], "neg", false).await;
    let (status, v, _) = h.answer("s1", &items[1], "neg", false).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "conflict");
    // The rejected answers never reached the log.
    let log = read_log(&h.dir.path().join("s1.answers.jsonl")).unwrap();
    assert_eq!(log.len(), 2);
}

#[tokio::test]
async fn malformed_answers_are_rejected() {
    let h = harness(&["s1"], 2);
    let items = h.items("s1").await;
    let (status, v, _) = h.answer("s1", &items[0], "maybe", false).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "data");
    let (status, _, _) = h
        .call(
            Method::POST,
            "/session/s1/answer",
            Some(json!({ "label": "pos" })),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _, _) = h.answer("s1", "no-such-item", "pos", false).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, v, _) = h.get("/session/ghost").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (status, _, _) = h.get("/session/..%2Fetc").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn agreement_endpoint_matches_offline_kappa() {
    let h = harness(&["a", "b"], 10);
    for (id, flip) in [("a", 0usize), ("b", 3)] {
        for item in h.items(id).await {
            let n: usize = item.trim_start_matches("ex-").parse().unwrap();
            let label = LABELS[usize::from((n + flip) % 4 < 2)];
            h.answer(id, &item, label, false).await;
        }
    }
    let (status, v, _) = h.get("/agreement?a=a&b=b").await;
    assert_eq!(status, StatusCode::OK);
    let store = h.store();
    let offline = session_agreement(&store.load("a").unwrap(), &store.load("b").unwrap()).unwrap();
    assert_eq!(v["kappa"].as_f64().unwrap(), offline.kappa);
    assert_eq!(v["p_o"].as_f64().unwrap(), offline.p_o);

    // Independently: both sessions cover ex-0..ex-9 with the label rule above.
    let la: Vec<usize> = (0..10).map(|n| usize::from(n % 4 < 2)).collect();
    let lb: Vec<usize> = (0..10).map(|n| usize::from((n + 3) % 4 < 2)).collect();
    assert_eq!(agreement(&la, &lb).unwrap().kappa, offline.kappa);

    let (status, _, _) = h.get("/agreement?a=a").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn replaying_the_log_reproduces_the_report() {
    let h = harness(&["s1"], 6);
    let items = h.items("s1").await;
    for (i, item) in items.iter().enumerate() {
        h.answer("s1", item, LABELS[i % 2], i % 3 == 0).await;
    }
    let (_, live, _) = h.get("/session/s1/report").await;

    let log = read_log(&h.dir.path().join("s1.answers.jsonl")).unwrap();
    let mut fresh: AnnotationSession = serde_json::from_str(
        &std::fs::read_to_string(h.dir.path().join("s1.session.json")).unwrap(),
    )
    .unwrap();
    assert!(fresh.answers.is_empty());
    fresh.replay(&log).unwrap();
    assert_eq!(serde_json::to_value(fresh.report().unwrap()).unwrap(), live);

    // A restarted server sees the same state.
    let restarted = Harness {
        app: router(h.store()),
        dir: h.dir,
    };
    let (_, again, _) = restarted.get("/session/s1/report").await;
    assert_eq!(again, live);
}
