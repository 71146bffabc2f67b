use std::sync::Arc;

use chacha_core::analyzers::PhaseSummary;
use chacha_core::gateway::ScriptedBackend;
use chacha_core::script::{self, scripted_engine, ConversationScript};
use chacha_core::{
    Engine, EngineError, Phase, Role, SequentialIds, SessionCell, SessionStatus, SteppingClock,
    Tier, TraceEvent,
};
use chrono::{Duration, TimeZone, Utc};

fn engine_for(backend: Arc<ScriptedBackend>) -> Engine {
    let clock = SteppingClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap(), Duration::seconds(7));
    scripted_engine(backend, Arc::new(clock), Arc::new(SequentialIds::new("s")))
}

fn script(name: &str) -> ConversationScript {
    script::bundled().into_iter().find(|s| s.name == name).unwrap()
}

#[tokio::test]
async fn bundled_scripts_play_through() {
    for s in script::bundled() {
        let backend = Arc::new(s.backend().unwrap());
        let engine = engine_for(backend.clone());
        let run = s.run(&engine).await.unwrap_or_else(|e| panic!("{}: {e}", s.name));
        assert_eq!(backend.remaining(Tier::Generator), 0, "{}", s.name);
        assert_eq!(backend.remaining(Tier::Analyzer), 0, "{}", s.name);
        run.session.check_invariants().unwrap();
        assert_eq!(run.session.turns.len(), 1 + 2 * s.messages.len());
        for out in &run.outcomes {
            assert_eq!(out.system_turns.len(), 1);
            let shown = out.system_turns[0].picker_shown();
            assert_eq!(shown, out.picker.is_some());
            if shown {
                assert_eq!(out.phase_after, Phase::Label);
            }
        }
    }
}

#[tokio::test]
async fn analyzer_and_generator_use_their_tiers() {
    let s = script("positive_record");
    let backend = Arc::new(s.backend().unwrap());
    s.run(&engine_for(backend.clone())).await.unwrap();
    for call in backend.calls() {
        match call.tier {
            Tier::Generator => assert_eq!(call.temperature, 0.7),
            Tier::Analyzer => assert_eq!(call.temperature, 0.0),
        }
    }
}

#[tokio::test]
async fn picks_fold_into_the_label_summary() {
    let s = script("negative_picker_loop");
    let run = s.run(&engine_for(Arc::new(s.backend().unwrap()))).await.unwrap();
    let after_picks = &run.outcomes[2];
    let summary = after_picks
        .trace
        .iter()
        .find_map(|e| match e {
            TraceEvent::Analyzed { summary: PhaseSummary::Label(l), .. } => Some(l.clone()),
            _ => None,
        })
        .unwrap();
    let ids: Vec<_> = summary.emotions.iter().map(|e| e.id_or_free_text.as_str()).collect();
    assert_eq!(ids, ["joy", "fear"]);
    assert!(summary.emotions.iter().all(|e| e.from_picker));
    assert!(summary.emotions[1].is_negative && !summary.emotions[0].is_negative);
    assert_eq!(
        run.session.turns[after_picks.user_turn.index].picked_emotion_ids(),
        ["joy".to_string(), "fear".to_string()]
    );
}

#[tokio::test]
async fn share_loop_resets_goal_summaries() {
    let s = script("negative_picker_loop");
    let run = s.run(&engine_for(Arc::new(s.backend().unwrap()))).await.unwrap();
    // Message 6 loops back to Explore: the first story's summaries are gone
    // until the second story produces new ones.
    let explore = run
        .outcomes
        .iter()
        .position(|o| o.phase_after == Phase::Explore)
        .unwrap();
    let bundle = &run.outcomes[explore].bundle;
    assert!(bundle.dynamic_status.contains("key event"));
    assert!(!run.session.summaries.contains_key(&Phase::Find));
    assert_eq!(run.session.status, SessionStatus::Ended);
}

#[tokio::test]
async fn help_takes_precedence_and_holds() {
    let s = script("help_from_label");
    let run = s.run(&engine_for(Arc::new(s.backend().unwrap()))).await.unwrap();
    let flagged = &run.outcomes[1];
    assert!(flagged.safety.flagged);
    assert!(flagged.decision.is_none());
    assert!(!flagged.trace.iter().any(|e| matches!(e, TraceEvent::Analyzed { .. })));
    assert!(flagged.bundle.dynamic_status.is_empty());
    assert!(flagged.bundle.phase_static.contains("trusted adult"));
    let held = &run.outcomes[2];
    assert_eq!(held.phase_after, Phase::Help);
    assert!(held.trace.iter().all(|e| !matches!(e, TraceEvent::SafetyScreened { .. })));
}

#[tokio::test]
async fn gateway_failure_leaves_the_session_untouched() {
    let backend = Arc::new(
        ScriptedBackend::from_json(
            r#"[
            {"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Hi!"},
            {"tier":"analyzer","match":{"kind":"substring","pattern":"Phase: explore"},"response":"{\"key_event_shared\":false}"},
            {"tier":"generator","match":{"kind":"substring","pattern":""},"fault":{"kind":"transient","status":503}}
        ]"#,
        )
        .unwrap(),
    );
    let engine = engine_for(backend);
    let (mut session, _) = engine.create_session("Mina", 9, None).await.unwrap();
    let before = session.clone();
    let err = engine.handle_user_message(&mut session, "hello", &[]).await.unwrap_err();
    assert!(matches!(err, EngineError::Upstream(_)));
    assert_eq!(session, before);
}

#[tokio::test]
async fn validation_errors() {
    let engine = engine_for(Arc::new(ScriptedBackend::from_json(
        r#"[{"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Hi!"}]"#,
    ).unwrap()));
    for (name, age) in [("", 9), ("   ", 9), ("Mina", -1), ("Mina", 0), ("Mina", 151)] {
        assert!(matches!(
            engine.create_session(name, age, None).await,
            Err(EngineError::Validation(_))
        ));
    }
    assert!(matches!(
        engine.create_session("Mina", 9, Some("fr")).await,
        Err(EngineError::Validation(_))
    ));
    let (mut session, greeting) = engine.create_session("  Mina ", 9, None).await.unwrap();
    assert_eq!(session.user_name, "Mina");
    assert_eq!(session.locale, "ko");
    assert_eq!(session.session_id, "s0001");
    assert_eq!(greeting.turn.role, Role::System);
    assert_eq!(greeting.prompt_digest, greeting.bundle.digest());

    let before = session.clone();
    assert!(matches!(
        engine.handle_user_message(&mut session, "  ", &[]).await,
        Err(EngineError::Validation(_))
    ));
    assert!(matches!(
        engine.handle_user_message(&mut session, "", &["joy".into()]).await,
        Err(EngineError::Validation(_))
    ));
    assert_eq!(session, before);
}

#[tokio::test]
async fn ended_sessions_reject_messages() {
    let engine = engine_for(Arc::new(ScriptedBackend::from_json(
        r#"[{"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Hi!"}]"#,
    ).unwrap()));
    let (mut session, _) = engine.create_session("Mina", 9, None).await.unwrap();
    assert!(!engine.end_session(&mut session).already_ended);
    assert!(engine.end_session(&mut session).already_ended);
    assert!(matches!(
        engine.handle_user_message(&mut session, "hi", &[]).await,
        Err(EngineError::Ended)
    ));
}

#[tokio::test]
async fn second_message_in_flight_is_busy() {
    let backend = Arc::new(
        ScriptedBackend::from_json(
            r#"[
            {"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Hi!"},
            {"tier":"analyzer","match":{"kind":"substring","pattern":""},"response":"{\"key_event_shared\":false}","delay_ms":100},
            {"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Tell me more!"}
        ]"#,
        )
        .unwrap(),
    );
    let engine = engine_for(backend);
    let (session, _) = engine.create_session("Mina", 9, None).await.unwrap();
    let cell = SessionCell::new(session);
    let (a, b) = tokio::join!(engine.handle_in_cell(&cell, "hi", &[]), async {
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        engine.handle_in_cell(&cell, "hello?", &[]).await
    });
    assert!(a.is_ok());
    assert!(matches!(b, Err(EngineError::Busy(_))));
    assert_eq!(cell.acquire().await.turns.len(), 3);
}
