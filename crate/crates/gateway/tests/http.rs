use std::collections::BTreeMap;
use std::time::Duration;

use futures_util::StreamExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use crisis_core::event::{decode_event, encode_event, Event};
use crisis_core::pattern::Pattern;
use crisis_core::scenario::{builtin, check_milestones, DecisionMode, Driver};
use crisis_gateway::{bind, serve, Engine, EngineThread, GatewayError, Speed};

struct Running {
    engine: Engine,
    thread: EngineThread,
    base: String,
    ws: String,
}

async fn start(mode: DecisionMode) -> Running {
    let (engine, thread) = Engine::new(builtin::nuclear(), mode, Speed::Max).unwrap();
    let listener = bind("127.0.0.1", 0).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, engine.clone()));
    Running { engine, thread, base: format!("http://{addr}"), ws: format!("ws://{addr}") }
}

async fn wait_for_subscriptions(engine: &Engine, n: usize) {
    for _ in 0..500 {
        if engine.broker().subscription_count() >= n {
            return;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("sessions did not subscribe");
}

async fn open_stream(
    ws: &str,
    pattern: &Pattern,
) -> tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>> {
    let encoded: String = form_urlencoded::byte_serialize(pattern.to_json().as_bytes()).collect();
    let (socket, _) = tokio_tungstenite::connect_async(format!("{ws}/stream?pattern={encoded}")).await.unwrap();
    socket
}

async fn collect_until_finished(
    mut socket: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
    expected: usize,
) -> Vec<Event> {
    let mut out = Vec::new();
    while out.len() < expected {
        let msg = tokio::time::timeout(Duration::from_secs(20), socket.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(line) = msg {
            out.push(decode_event(&line).unwrap());
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn second_bind_is_port_in_use() {
    let first = bind("127.0.0.1", 0).await.unwrap();
    let port = first.local_addr().unwrap().port();
    assert!(matches!(bind("127.0.0.1", port).await, Err(GatewayError::PortInUse(p)) if p == port));
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_receive_only_their_matches() {
    let r = start(DecisionMode::Scripted).await;
    let alerts = open_stream(&r.ws, &Pattern::etype("AlertRSN")).await;
    let plans = open_stream(&r.ws, &Pattern::etype("CirculationPlan")).await;
    wait_for_subscriptions(&r.engine, 2).await;
    r.engine.start();
    let log = tokio::task::spawn_blocking(move || r.thread.join().unwrap()).await.unwrap();
    let n_alerts = log.events.iter().filter(|e| e.etype == "AlertRSN").count();
    let got = collect_until_finished(alerts, n_alerts).await;
    assert!(got.iter().all(|e| e.etype == "AlertRSN"));
    assert_eq!(got[0].ts, 420_000);
    let got = collect_until_finished(plans, 1).await;
    assert_eq!(got[0].etype, "CirculationPlan");
    assert_eq!(got[0].num("roads_closed"), Some(8.0));
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_equals_log() {
    let r = start(DecisionMode::Scripted).await;
    let all = open_stream(&r.ws, &Pattern::any()).await;
    wait_for_subscriptions(&r.engine, 1).await;
    r.engine.start();
    let engine = r.engine.clone();
    let log = tokio::task::spawn_blocking(move || r.thread.join().unwrap()).await.unwrap();
    let got = collect_until_finished(all, log.events.len()).await;
    let lines = |events: &[Event]| {
        let mut v: Vec<String> = events.iter().map(|e| encode_event(e).unwrap()).collect();
        v.sort();
        v
    };
    assert_eq!(lines(&got), lines(&log.events));
    assert!(got.windows(2).all(|w| w[0].order_key() < w[1].order_key()));
    drop(got);
    // Closing the session removes its subscription.
    for _ in 0..200 {
        if engine.broker().subscription_count() == 0 {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("subscription outlived its session");
}

#[tokio::test(flavor = "multi_thread")]
async fn closing_a_session_unsubscribes() {
    let r = start(DecisionMode::Scripted).await;
    let mut s = open_stream(&r.ws, &Pattern::any()).await;
    wait_for_subscriptions(&r.engine, 1).await;
    s.close(None).await.unwrap();
    for _ in 0..200 {
        if r.engine.broker().subscription_count() == 0 {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("subscription outlived its session");
}

async fn get(client: &reqwest::Client, url: String) -> Value {
    client.get(url).send().await.unwrap().json().await.unwrap()
}

async fn post_choice(client: &reqwest::Client, base: &str, body: Value) -> (u16, Value) {
    let resp = client.post(format!("{base}/choices")).json(&body).send().await.unwrap();
    (resp.status().as_u16(), resp.json().await.unwrap())
}

/// Operates the whole scenario through the HTTP API, as two console roles.
#[tokio::test(flavor = "multi_thread")]
async fn interactive_run_over_http() {
    let r = start(DecisionMode::External).await;
    let script = builtin::nuclear();
    let client = reqwest::Client::new();
    r.engine.start();
    let mut posted = 0;
    let mut checked_errors = false;
    loop {
        let state = get(&client, format!("{}/state/processes", r.base)).await;
        if state["finished"] == json!(true) {
            break;
        }
        let points = get(&client, format!("{}/decision-points", r.base)).await;
        for p in points.as_array().unwrap().iter().filter(|p| p["state"] == "Open") {
            let id = p["id"].as_str().unwrap();
            let spec = script.decision_point(id).unwrap();
            let chooser = format!("console:{}", spec.role);
            if !checked_errors {
                let (status, body) =
                    post_choice(&client, &r.base, json!({"point": id, "option": "not-an-option", "chooser": chooser})).await;
                assert_eq!((status, body["error"].as_str()), (404, Some("UnknownPoint")));
            }
            let body = json!({"point": id, "option": spec.choice.clone().unwrap(), "chooser": chooser});
            let (status, ack) = post_choice(&client, &r.base, body.clone()).await;
            assert_eq!(status, 200, "{ack}");
            assert!(ack["seq"].as_u64().unwrap() > 0);
            if !checked_errors {
                let (status, again) = post_choice(&client, &r.base, body).await;
                assert_eq!((status, again["error"].as_str()), (409, Some("AlreadyDecided")));
                checked_errors = true;
            }
            posted += 1;
        }
        let proposals = get(&client, format!("{}/proposals", r.base)).await;
        for p in proposals.as_array().unwrap().iter().filter(|p| p["state"]["state"] == "Open") {
            let id = p["proposal_id"].as_str().unwrap();
            let kind = p["gap"]["kind"].as_str().unwrap();
            let choose = script.proposal_policy.iter().find(|x| x.gap.as_str() == kind).unwrap().choose.clone();
            let body = json!({"proposal": id, "option": choose, "chooser": "console:OfficeOfInfrastructureRepresentative"});
            let (status, _) = post_choice(&client, &r.base, body.clone()).await;
            assert_eq!(status, 200);
            let (status, again) = post_choice(&client, &r.base, body).await;
            assert_eq!((status, again["error"].as_str()), (409, Some("AlreadyDecided")));
            if kind == "ResourceGap" {
                let inv = get(&client, format!("{}/state/inventory", r.base)).await;
                assert_eq!(inv["stock"]["vehicle"]["committed"], 2);
            }
            posted += 1;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert_eq!(posted, 9);
    let log = tokio::task::spawn_blocking(move || r.thread.join().unwrap()).await.unwrap();
    let scripted = Driver::new(script.clone(), DecisionMode::Scripted).unwrap().run().unwrap();
    let ours = check_milestones(&log.events, &script.milestones);
    let theirs = check_milestones(&scripted.events, &script.milestones);
    assert!(ours.iter().all(|m| m.pass));
    assert_eq!(
        ours.iter().map(|m| (&m.name, m.actual)).collect::<Vec<_>>(),
        theirs.iter().map(|m| (&m.name, m.actual)).collect::<Vec<_>>()
    );
    let choosers: BTreeMap<String, usize> =
        log.events.iter().filter(|e| e.etype == "DecisionChoice").fold(BTreeMap::new(), |mut m, e| {
            *m.entry(e.text("chooser").unwrap().to_string()).or_default() += 1;
            m
        });
    assert!(choosers.keys().all(|c| c.starts_with("console:")), "{choosers:?}");
    assert_eq!(choosers.values().sum::<usize>(), 9);

    let (status, body) = post_choice(&client, &r.base, json!({"point": "confinement", "option": "confine-5km"})).await;
    assert_eq!((status, body["error"].as_str()), (409, Some("Finished")));
}

#[tokio::test(flavor = "multi_thread")]
async fn history_and_metrics_endpoints() {
    let r = start(DecisionMode::Scripted).await;
    r.engine.start();
    let base = r.base.clone();
    tokio::task::spawn_blocking(move || r.thread.join().unwrap()).await.unwrap();
    let client = reqwest::Client::new();
    let text = client
        .get(format!("{base}/history?etype=RadiationMeasure&from=0&to=300000"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(text.lines().count(), 50);
    assert!(text.lines().all(|l| decode_event(l).is_ok()));
    let text = client
        .get(format!("{base}/history?etype=RadiationMeasure&where={}", form_urlencoded::byte_serialize(b"value>2").collect::<String>()))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(text.lines().count(), 30, "3 sensors x 10 samples in [15, 20)");
    let bad = client.get(format!("{base}/history?from=9&to=1")).send().await.unwrap();
    assert_eq!(bad.status().as_u16(), 400);
    let m = get(&client, format!("{base}/metrics")).await;
    let rates: Vec<f64> = m["metrics"]["rates"].as_array().unwrap().iter().map(|r| r["per_minute"].as_f64().unwrap()).collect();
    assert_eq!(rates, vec![30.0, 70.0, 660.0]);
    assert!(m["table"].as_str().unwrap().contains("vehicles-released"));
    let bad = client.post(format!("{base}/choices")).body("{").header("content-type", "application/json").send().await.unwrap();
    assert_eq!(bad.status().as_u16(), 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_stream_pattern_is_rejected() {
    let r = start(DecisionMode::Scripted).await;
    let err = tokio_tungstenite::connect_async(format!("{}/stream?pattern=%7Bnot", r.ws)).await;
    assert!(err.is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn dropped_connection_unsubscribes() {
    let r = start(DecisionMode::Scripted).await;
    let s = open_stream(&r.ws, &Pattern::any()).await;
    wait_for_subscriptions(&r.engine, 1).await;
    drop(s);
    for _ in 0..200 {
        if r.engine.broker().subscription_count() == 0 {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("subscription outlived its session");
}
