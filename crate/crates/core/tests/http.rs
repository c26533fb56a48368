#[path = "support/mock_http.rs"]
mod mock_http;

use std::sync::Arc;
use std::time::{Duration, Instant};

use mock_http::{completion_body, MockServer, Reply};
use stindex_core::geo::{Gazetteer, GeoQuery, Geocoder, NominatimClient, Provider};
use stindex_core::ingest::{DocumentSpec, FetchPolicy, IngestError, Loader, Origin};
use stindex_core::llm::{complete, ChatBackend, CompletionRequest, LlmError, OpenAiCompatibleBackend, RetryPolicy};
use stindex_core::net::RateLimiter;

fn request() -> CompletionRequest {
    CompletionRequest {
        model: "test-model".into(),
        system: "sys".into(),
        user: "hello".into(),
        temperature: 0.0,
        max_tokens: 64,
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        base_delay: Duration::from_millis(5),
        factor: 2.0,
    }
}

#[test]
fn chat_completion_sends_bearer_and_parses_reply() {
    let server = MockServer::start(|_, _| Reply::json(200, completion_body("{\"entities\": []}")));
    let backend = OpenAiCompatibleBackend::new(&server.url, Some("sk-mock-123".into()));
    let resp = backend.complete(&request()).unwrap();
    assert_eq!(resp.text, "{\"entities\": []}");
    assert_eq!(resp.finish_reason, "stop");
    assert_eq!(resp.usage.prompt_tokens, 12);
    assert_eq!(resp.usage.completion_tokens, 5);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].target, "/v1/chat/completions");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sk-mock-123"));
    let body: serde_json::Value = serde_json::from_str(&reqs[0].body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hello");
}

#[test]
fn no_key_means_no_authorization_header() {
    let server = MockServer::start(|_, _| Reply::json(200, completion_body("ok")));
    let backend = OpenAiCompatibleBackend::new(&server.url, None);
    backend.complete(&request()).unwrap();
    assert!(server.requests()[0].header("authorization").is_none());
}

#[test]
fn auth_failure_is_not_retried() {
    let server = MockServer::start(|_, _| Reply::json(401, "{\"error\": \"bad key\"}"));
    let backend = OpenAiCompatibleBackend::new(&server.url, Some("wrong".into()));
    let err = complete(&backend, &request(), &fast_retry()).unwrap_err();
    assert!(matches!(err, LlmError::Auth(401)), "{err:?}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn server_errors_are_retried_until_success() {
    let server = MockServer::start(|n, _| match n {
        0 => Reply::json(503, "busy"),
        1 => Reply::json(429, "slow down"),
        _ => Reply::json(200, completion_body("fine")),
    });
    let backend = OpenAiCompatibleBackend::new(&server.url, None);
    let resp = complete(&backend, &request(), &fast_retry()).unwrap();
    assert_eq!(resp.text, "fine");
    assert_eq!(server.hits(), 3);
}

#[test]
fn retries_stop_at_max_attempts() {
    let server = MockServer::start(|_, _| Reply::json(500, "down"));
    let backend = OpenAiCompatibleBackend::new(&server.url, None);
    let err = complete(&backend, &request(), &fast_retry()).unwrap_err();
    assert!(err.is_transient());
    assert_eq!(server.hits(), 3);
}

#[test]
fn client_errors_surface_as_invalid_request() {
    let server = MockServer::start(|_, _| Reply::json(400, "unknown model"));
    let backend = OpenAiCompatibleBackend::new(&server.url, None);
    let err = complete(&backend, &request(), &fast_retry()).unwrap_err();
    match err {
        LlmError::InvalidRequest { status, message } => {
            assert_eq!(status, 400);
            assert!(message.contains("unknown model"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.hits(), 1);
}

#[test]
fn unreachable_backend_is_transient() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let backend = OpenAiCompatibleBackend::new(&url, None).with_timeout(Duration::from_secs(2));
    let err = backend.complete(&request()).unwrap_err();
    assert!(err.is_transient(), "{err:?}");
}

fn nominatim_hit() -> String {
    serde_json::json!([{
        "lat": "-31.7437",
        "lon": "115.7693",
        "name": "Lakeside Joondalup",
        "display_name": "Lakeside Joondalup, Joondalup, Western Australia, Australia",
        "address": {"country_code": "au", "state": "Western Australia", "city": "Joondalup"},
    }])
    .to_string()
}

fn fast_limiter() -> Arc<RateLimiter> {
    Arc::new(RateLimiter::new(Duration::from_millis(1)))
}

#[test]
fn nominatim_resolves_names_missing_from_gazetteer() {
    let server = MockServer::start(|_, _| Reply::json(200, nominatim_hit()));
    let geocoder = Geocoder::offline(Arc::new(Gazetteer::builtin()))
        .with_http(NominatimClient::new(&server.url).with_rate_limiter(fast_limiter()));
    let value = geocoder.geocode(&GeoQuery::new("Lakeside Joondalup"));
    assert_eq!(value.provider, Provider::Http);
    assert_eq!(value.resolved_name.as_deref(), Some("Lakeside Joondalup"));
    assert_eq!(value.country_code.as_deref(), Some("AU"));
    assert_eq!(value.admin_name.as_deref(), Some("Western Australia"));
    assert!((value.lat.unwrap() + 31.7437).abs() < 1e-9);
    assert!((value.lon.unwrap() - 115.7693).abs() < 1e-9);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert!(reqs[0].target.starts_with("/search?"));
    assert!(reqs[0].target.contains("format=json"));
    assert!(reqs[0].target.contains("Lakeside"));

    // Second lookup is served from the cache.
    geocoder.geocode(&GeoQuery::new("Lakeside Joondalup"));
    assert_eq!(server.hits(), 1);
}

#[test]
fn nominatim_bias_becomes_countrycodes() {
    let server = MockServer::start(|_, _| Reply::json(200, nominatim_hit()));
    let geocoder = Geocoder::offline(Arc::new(Gazetteer::builtin()))
        .with_http(NominatimClient::new(&server.url).with_rate_limiter(fast_limiter()));
    geocoder.geocode(&GeoQuery::new("Lakeside Joondalup").with_bias("AU"));
    assert!(server.requests()[0].target.contains("countrycodes=au"));
}

#[test]
fn nominatim_failure_falls_back_to_gazetteer() {
    let server = MockServer::start(|_, _| Reply::json(500, "down"));
    let geocoder = Geocoder::offline(Arc::new(Gazetteer::builtin()))
        .with_http(NominatimClient::new(&server.url).with_rate_limiter(fast_limiter()));
    let value = geocoder.geocode(&GeoQuery::new("Joondalup"));
    assert_eq!(value.provider, Provider::Gazetteer);
    assert_eq!(value.country_code.as_deref(), Some("AU"));
}

#[test]
fn nominatim_empty_result_falls_back_to_gazetteer() {
    let server = MockServer::start(|_, _| Reply::json(200, "[]"));
    let geocoder = Geocoder::offline(Arc::new(Gazetteer::builtin()))
        .with_http(NominatimClient::new(&server.url).with_rate_limiter(fast_limiter()));
    let value = geocoder.geocode(&GeoQuery::new("Joondalup"));
    assert_eq!(value.provider, Provider::Gazetteer);
    assert!(server.hits() >= 1);
}

#[test]
fn nominatim_requests_respect_rate_limit() {
    let server = MockServer::start(|_, _| Reply::json(200, nominatim_hit()));
    let limiter = Arc::new(RateLimiter::new(Duration::from_millis(150)));
    let geocoder = Geocoder::offline(Arc::new(Gazetteer::builtin()))
        .with_http(NominatimClient::new(&server.url).with_rate_limiter(limiter));
    let started = Instant::now();
    for name in ["Alpha Place", "Beta Place", "Gamma Place"] {
        geocoder.geocode(&GeoQuery::new(name));
    }
    assert_eq!(server.hits(), 3);
    assert!(
        started.elapsed() >= Duration::from_millis(300),
        "{:?}",
        started.elapsed()
    );
}

fn fetch_policy() -> FetchPolicy {
    FetchPolicy {
        min_interval: Duration::from_millis(1),
        timeout: Duration::from_secs(5),
    }
}

#[test]
fn url_fetch_strips_html() {
    let page = "<html><head><title>Outbreak notice</title>\
                <script>var x = 1;</script></head>\
                <body><p>Measles case reported in Perth on 3 January 2025.</p></body></html>";
    let server = MockServer::start(move |_, _| Reply::with_type(200, "text/html; charset=utf-8", page));
    let url = format!("{}/notice", server.url);
    let doc = Loader::new(fetch_policy())
        .load(&DocumentSpec::Url(url.clone()))
        .unwrap();
    assert_eq!(doc.origin, Origin::Url);
    assert_eq!(doc.locator, url);
    assert!(doc.body.contains("Measles case reported in Perth on 3 January 2025."));
    assert!(!doc.body.contains('<'));
    assert!(!doc.body.contains("var x"));
    assert_eq!(server.requests()[0].target, "/notice");
}

#[test]
fn url_fetch_plain_text_is_kept() {
    let server = MockServer::start(|_, _| Reply::with_type(200, "text/plain", "Flooding in Bunbury."));
    let doc = Loader::new(fetch_policy())
        .load(&DocumentSpec::from_input(&format!("{}/a.txt", server.url)))
        .unwrap();
    assert_eq!(doc.body, "Flooding in Bunbury.");
}

#[test]
fn url_fetch_error_status_is_fetch_error() {
    let server = MockServer::start(|_, _| Reply::with_type(404, "text/plain", "missing"));
    let err = Loader::new(fetch_policy())
        .load(&DocumentSpec::Url(format!("{}/gone", server.url)))
        .unwrap_err();
    assert!(matches!(err, IngestError::Fetch { .. }), "{err:?}");
    assert!(err.to_string().contains("404"));
}
