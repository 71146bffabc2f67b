mod common;

use std::sync::Arc;

use chacha_cli::server::{ApiMessage, ApiSession, Created, Reply, ServerOptions};
use chacha_core::log::FaultPlan;
use chacha_core::{Phase, SessionStatus, Turn};
use common::*;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

async fn create(client: &Client, run: &Running, body: Value) -> (StatusCode, Value) {
    let r = client.post(run.url("/sessions")).json(&body).send().await.unwrap();
    let status = r.status();
    (status, r.json().await.unwrap())
}

async fn say(client: &Client, run: &Running, id: &str, body: Value) -> (StatusCode, Value) {
    let r = client
        .post(run.url(&format!("/sessions/{id}/messages")))
        .json(&body)
        .send()
        .await
        .unwrap();
    let status = r.status();
    (status, r.json().await.unwrap())
}

async fn transcript(client: &Client, run: &Running, id: &str) -> ApiSession {
    let r = client.get(run.url(&format!("/sessions/{id}"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().await.unwrap()
}

async fn export(client: &Client, run: &Running, id: &str) -> (StatusCode, String) {
    let r = client.get(run.url(&format!("/sessions/{id}/export"))).send().await.unwrap();
    let status = r.status();
    (status, r.text().await.unwrap())
}

/// Plays a bundled script over HTTP and returns the session id.
async fn play(client: &Client, run: &Running, name: &str) -> String {
    let s = script(name);
    let (status, body) = create(
        client,
        run,
        json!({"name": s.user.name, "age": s.user.age, "locale": s.locale}),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let created: Created = serde_json::from_value(body).unwrap();
    for m in &s.messages {
        let (status, body) = say(
            client,
            run,
            &created.session_id,
            json!({"text": m.text, "picked_emotion_ids": m.picks}),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let reply: Reply = serde_json::from_value(body).unwrap();
        if let Some(p) = m.expect_phase {
            assert_eq!(reply.phase, p);
        }
    }
    created.session_id
}

#[tokio::test]
async fn create_validates_input() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(1, 0, 0), dir.path(), ServerOptions::default())).await;
    let client = Client::new();

    let (status, body) = create(&client, &run, json!({"name": "James", "age": 9})).await;
    assert_eq!(status, StatusCode::CREATED);
    let created: Created = serde_json::from_value(body).unwrap();
    assert_eq!(created.session_id, "s0001");
    assert_eq!(created.messages.len(), 1);
    assert_eq!(created.messages[0].phase, Phase::Explore);
    assert!(!created.messages[0].pending);

    for bad in [
        json!({"name": "", "age": 9}),
        json!({"name": "Mina", "age": -1}),
        json!({"name": "Mina", "age": "nine"}),
        json!({"name": "Mina", "age": 9, "locale": "fr"}),
    ] {
        let (status, body) = create(&client, &run, bad.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}: {body}");
        assert!(body["error"].is_string());
    }
    let r = client
        .post(run.url("/sessions"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn happy_path_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let s = script("positive_record");
    let run = spawn(state(Arc::new(s.backend().unwrap()), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let id = play(&client, &run, "positive_record").await;

    let t = transcript(&client, &run, &id).await;
    assert_eq!(t.status, SessionStatus::Ended);
    assert_eq!(t.messages.len(), 1 + 2 * s.messages.len());
    assert_eq!(t.user_name, "James");
    let (status, body) = say(&client, &run, &id, json!({"text": "one more"})).await;
    assert_eq!(status, StatusCode::GONE, "{body}");

    let (status, text) = export(&client, &run, &id).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(text.lines().count(), t.messages.len());
    for line in text.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec.get("user_name").is_none() && rec.get("user_age").is_none());
    }
    let (_, again) = export(&client, &run, &id).await;
    assert_eq!(text, again);
    check_golden("positive_record_export.jsonl", text.as_bytes()).unwrap();
}

#[tokio::test]
async fn picks_reach_the_transcript_and_phase_matches_storage() {
    let dir = tempfile::tempdir().unwrap();
    let s = script("negative_picker_loop");
    let run = spawn(state(Arc::new(s.backend().unwrap()), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "민아", "age": 10})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let mut saw_picker = false;
    for m in &s.messages {
        let (status, body) = say(
            &client,
            &run,
            &id,
            json!({"text": m.text, "picked_emotion_ids": m.picks}),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let reply: Reply = serde_json::from_value(body).unwrap();
        assert_eq!(reply.phase, transcript(&client, &run, &id).await.phase);
        if let Some(p) = &reply.picker {
            saw_picker = true;
            assert_eq!(reply.phase, Phase::Label);
            assert_eq!(p.emotions.len(), 20);
            assert!(p.multi_select);
        }
    }
    assert!(saw_picker);
    let t = transcript(&client, &run, &id).await;
    let picked: Vec<_> = t
        .messages
        .iter()
        .filter_map(|m| m.attachments.as_ref())
        .flat_map(|a| a.picked_emotion_ids.clone())
        .collect();
    assert_eq!(picked, ["joy", "fear"]);
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(0, 0, 0), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    for path in ["/sessions/nope", "/sessions/nope/export", "/sessions//export", "/sessions/..%2Fx/export"] {
        let r = client.get(run.url(path)).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::NOT_FOUND, "{path}");
    }
    let r = client.delete(run.url("/sessions/nope")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let (status, _) = say(&client, &run, "nope", json!({"text": "hi"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn delete_is_idempotent_and_ends() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(1, 1, 0), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let (status, _) = say(&client, &run, &id, json!({"text": "hi"})).await;
    assert_eq!(status, StatusCode::OK);
    let (_, text) = export(&client, &run, &id).await;
    assert_eq!(text.lines().count(), 3);

    for _ in 0..2 {
        let r = client.delete(run.url(&format!("/sessions/{id}"))).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::NO_CONTENT);
    }
    assert_eq!(transcript(&client, &run, &id).await.status, SessionStatus::Ended);
    let (status, _) = say(&client, &run, &id, json!({"text": "hello?"})).await;
    assert_eq!(status, StatusCode::GONE);
}

#[tokio::test]
async fn gateway_failure_is_502_and_logs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let backend = backend_json(
        r#"[
        {"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Hi!"},
        {"tier":"analyzer","match":{"kind":"substring","pattern":""},"response":"{\"key_event_shared\":false}"},
        {"tier":"generator","match":{"kind":"substring","pattern":""},"fault":{"kind":"transient","status":503}}
    ]"#,
    );
    let run = spawn(state(backend, dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let before = transcript(&client, &run, &id).await;
    let (_, log_before) = export(&client, &run, &id).await;

    let (status, body) = say(&client, &run, &id, json!({"text": "hello"})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["retry_safe"], true);
    assert_eq!(transcript(&client, &run, &id).await, before);
    assert_eq!(export(&client, &run, &id).await.1, log_before);
}

#[tokio::test]
async fn second_post_in_flight_is_409_without_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(1, 1, 300), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let (first, second) = tokio::join!(say(&client, &run, &id, json!({"text": "first"})), async {
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
        let during = transcript(&client, &run, &id).await;
        let r = say(&client, &run, &id, json!({"text": "second"})).await;
        (during, r)
    });
    assert_eq!(first.0, StatusCode::OK);
    let (during, (status, _)) = second;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(during.messages.len(), 1, "reads see the last committed state");
    let after = transcript(&client, &run, &id).await;
    let users: Vec<_> = after.messages.iter().filter(|m| m.content == "first" || m.content == "second").collect();
    assert_eq!(users.len(), 1);
    assert_eq!(users[0].content, "first");
}

#[tokio::test]
async fn restart_recovers_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(1, 1, 0), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    say(&client, &run, &id, json!({"text": "hi"})).await;
    let before = transcript(&client, &run, &id).await;
    run.kill();

    let run = spawn(state(idle_steps(0, 1, 0), dir.path(), ServerOptions::default())).await;
    assert_eq!(transcript(&client, &run, &id).await, before);
    let (status, _) = say(&client, &run, &id, json!({"text": "still here"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(transcript(&client, &run, &id).await.messages.len(), 5);
}

#[tokio::test]
async fn failed_append_resyncs_memory_with_disk() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(1, 2, 0), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    run.state.store().inject_fault(FaultPlan {
        cut_log_after: Some(30),
        ..Default::default()
    });
    let (status, _) = say(&client, &run, &id, json!({"text": "lost"})).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(transcript(&client, &run, &id).await.messages.len(), 1);
    let (status, _) = say(&client, &run, &id, json!({"text": "kept"})).await;
    assert_eq!(status, StatusCode::OK);
    let (_, text) = export(&client, &run, &id).await;
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("kept") && !text.contains("lost"));
}

#[tokio::test]
async fn session_cap_ends_old_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let options = ServerOptions {
        max_session_minutes: Some(0),
    };
    let run = spawn(state(idle_steps(1, 0, 0), dir.path(), options)).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let (status, _) = say(&client, &run, &id, json!({"text": "hi"})).await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(transcript(&client, &run, &id).await.status, SessionStatus::Ended);
}

#[tokio::test]
async fn picks_outside_label_are_422() {
    let dir = tempfile::tempdir().unwrap();
    let run = spawn(state(idle_steps(1, 0, 0), dir.path(), ServerOptions::default())).await;
    let client = Client::new();
    let (_, body) = create(&client, &run, json!({"name": "Mina", "age": 9})).await;
    let id = body["session_id"].as_str().unwrap();
    let (status, _) = say(&client, &run, id, json!({"picked_emotion_ids": ["joy"]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = say(&client, &run, id, json!({})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[test]
fn api_message_round_trips() {
    use proptest::prelude::*;
    let mut runner = proptest::test_runner::TestRunner::default();
    runner
        .run(
            &(0usize..500, any::<bool>(), ".{0,40}", 0i64..2_000_000_000, prop::collection::vec("[a-z]{1,8}", 0..3)),
            |(index, user, content, secs, picks)| {
                let turn = Turn {
                    index,
                    role: if user { chacha_core::Role::User } else { chacha_core::Role::System },
                    content,
                    phase: Phase::Label,
                    attachments: (!picks.is_empty()).then(|| chacha_core::Attachments {
                        picker_shown: false,
                        picked_emotion_ids: picks,
                    }),
                    timestamp: chrono::DateTime::from_timestamp(secs, 0).unwrap(),
                };
                let wire = serde_json::to_string(&ApiMessage::from(&turn)).unwrap();
                let back: ApiMessage = serde_json::from_str(&wire).unwrap();
                prop_assert_eq!(Turn::from(&back), turn);
                Ok(())
            },
        )
        .unwrap();
}
