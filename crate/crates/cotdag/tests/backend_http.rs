//! Client behavior against a scripted local stub: success parsing, retry on
//! 429/5xx, the in-flight bound, ledger bookkeeping, and the response cache.
//! No test touches a real network endpoint.

mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{chat_body, chat_body_with_usage, StubResponse, StubServer};
use cotdag::backend::{BackendConfig, BackendError, ChatClient};

const KEY_ENV: &str = "COTDAG_STUB_KEY";

fn config_for(server: &StubServer) -> BackendConfig {
    // One shared env var across tests; set it process-wide once.
    std::env::set_var(KEY_ENV, "test-key");
    BackendConfig {
        endpoint_url: server.url(),
        model_name: "stub-model".to_string(),
        api_key_env: KEY_ENV.to_string(),
        timeout_secs: 10,
        max_concurrent_requests: 4,
        max_retries: 3,
        retry_backoff_ms: 5,
        price_per_1k_input_tokens: 0.3,
        price_per_1k_output_tokens: 0.6,
    }
}

#[test]
fn passes_through_stub_response_and_counts_usage() {
    let server = StubServer::start(vec![StubResponse::ok(chat_body_with_usage(
        "{\"fixed\": true}",
        1000,
        500,
    ))]);
    let client = ChatClient::new(config_for(&server));
    let completion = client.complete("hello there").unwrap();
    assert_eq!(completion.text, "{\"fixed\": true}");
    assert!(!completion.usage.estimated);

    let ledger = client.ledger();
    assert_eq!(ledger.requests, 1);
    assert_eq!(ledger.input_tokens, 1000);
    assert_eq!(ledger.output_tokens, 500);
    // 1000/1k * 0.3 + 500/1k * 0.6
    assert!((ledger.estimated_cost - 0.6).abs() < 1e-12);
    assert!(!ledger.contains_estimates);
    assert_eq!(server.hits(), 1);
}

#[test]
fn missing_usage_falls_back_to_estimates() {
    let server = StubServer::start(vec![StubResponse::ok(chat_body("two words"))]);
    let client = ChatClient::new(config_for(&server));
    let completion = client.complete("one two three").unwrap();
    assert!(completion.usage.estimated);
    assert_eq!(completion.usage.input_tokens, 3);
    assert_eq!(completion.usage.output_tokens, 2);
    assert!(client.ledger().contains_estimates);
}

#[test]
fn retries_429_then_succeeds() {
    let server = StubServer::start(vec![
        StubResponse::status(429, "slow down"),
        StubResponse::ok(chat_body("after retry")),
    ]);
    let client = ChatClient::new(config_for(&server));
    let completion = client.complete("prompt").unwrap();
    assert_eq!(completion.text, "after retry");
    assert_eq!(server.hits(), 2);
    assert_eq!(client.ledger().requests, 1, "only the success is a request");
}

#[test]
fn retries_5xx_then_succeeds() {
    let server = StubServer::start(vec![
        StubResponse::status(500, "boom"),
        StubResponse::status(503, "still down"),
        StubResponse::ok(chat_body("recovered")),
    ]);
    let client = ChatClient::new(config_for(&server));
    let completion = client.complete("prompt").unwrap();
    assert_eq!(completion.text, "recovered");
    assert_eq!(server.hits(), 3);
}

#[test]
fn exhausted_retries_surface_provider_error() {
    let server = StubServer::start(vec![
        StubResponse::status(500, "boom 1"),
        StubResponse::status(500, "boom 2"),
        StubResponse::status(500, "boom 3"),
    ]);
    let mut config = config_for(&server);
    config.max_retries = 2;
    let client = ChatClient::new(config);
    match client.complete("prompt") {
        Err(BackendError::Provider { status, body_excerpt }) => {
            assert_eq!(status, 500);
            assert_eq!(body_excerpt, "boom 3");
        }
        other => panic!("expected provider error, got {other:?}"),
    }
    assert_eq!(server.hits(), 3, "1 attempt + 2 retries");
    assert_eq!(client.ledger().requests, 0);
}

#[test]
fn auth_status_maps_to_auth_error() {
    let server = StubServer::start(vec![StubResponse::status(401, "who are you")]);
    let client = ChatClient::new(config_for(&server));
    assert!(matches!(
        client.complete("prompt"),
        Err(BackendError::Auth(_))
    ));
    assert_eq!(server.hits(), 1, "auth failures are not retried");
}

#[test]
fn in_flight_bound_is_honored() {
    let responses: Vec<StubResponse> = (0..8)
        .map(|i| StubResponse::slow(chat_body(&format!("r{i}")), Duration::from_millis(60)))
        .collect();
    let server = StubServer::start(responses);
    let mut config = config_for(&server);
    config.max_concurrent_requests = 3;
    let client = Arc::new(ChatClient::new(config));

    let handles: Vec<_> = (0..8)
        .map(|i| {
            let client = Arc::clone(&client);
            std::thread::spawn(move || client.complete(&format!("prompt {i}")).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    assert_eq!(server.hits(), 8);
    assert!(
        server.max_in_flight() <= 3,
        "gate leaked: {} in flight",
        server.max_in_flight()
    );
    assert!(
        server.max_in_flight() >= 2,
        "stub never observed overlap; the test has no power"
    );
    assert_eq!(client.ledger().requests, 8);
}

#[test]
fn ledger_equals_sum_of_per_request_deltas() {
    let server = StubServer::start(vec![
        StubResponse::ok(chat_body_with_usage("a", 10, 1)),
        StubResponse::ok(chat_body_with_usage("b b", 20, 2)),
        StubResponse::ok(chat_body("c c c")),
    ]);
    let client = ChatClient::new(config_for(&server));
    let mut input = 0u64;
    let mut output = 0u64;
    let mut cost = 0.0f64;
    for prompt in ["p1", "p2 p2", "p3"] {
        let completion = client.complete(prompt).unwrap();
        input += completion.usage.input_tokens;
        output += completion.usage.output_tokens;
        cost += completion.usage.cost;
    }
    let ledger = client.ledger();
    assert_eq!(ledger.requests, 3);
    assert_eq!(ledger.input_tokens, input);
    assert_eq!(ledger.output_tokens, output);
    assert_eq!(ledger.estimated_cost, cost, "exact bookkeeping");
}

#[test]
fn slow_responses_map_to_timeout() {
    let server = StubServer::start(vec![StubResponse::slow(
        chat_body("too late"),
        Duration::from_millis(1600),
    )]);
    let mut config = config_for(&server);
    config.timeout_secs = 1;
    let client = ChatClient::new(config);
    assert!(matches!(
        client.complete("prompt"),
        Err(BackendError::Timeout(_))
    ));
}

#[test]
fn response_cache_skips_network_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");

    let server = StubServer::start(vec![StubResponse::ok(chat_body("cached answer"))]);
    let client = ChatClient::with_cache(config_for(&server), &cache_path).unwrap();
    assert_eq!(client.complete("same prompt").unwrap().text, "cached answer");
    assert_eq!(client.complete("same prompt").unwrap().text, "cached answer");
    assert_eq!(server.hits(), 1, "second call came from the cache");
    assert_eq!(client.ledger().requests, 1);

    // A fresh client reloads the persisted cache; no network at all.
    let dead_config = BackendConfig {
        endpoint_url: "http://127.0.0.1:1/unreachable".to_string(),
        ..config_for(&server)
    };
    let client = ChatClient::with_cache(dead_config, &cache_path).unwrap();
    assert_eq!(client.complete("same prompt").unwrap().text, "cached answer");

    let raw = std::fs::read_to_string(&cache_path).unwrap();
    assert_eq!(raw.lines().count(), 1);
    assert!(raw.contains("request_hash"));
}
