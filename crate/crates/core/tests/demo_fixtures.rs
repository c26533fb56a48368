use stindex_core::demo::{record_demo_replay, DEMO_REPLAY};

#[test]
#[ignore = "rewrites fixtures/demo/replay.json"]
fn regenerate_replay() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo/replay.json");
    std::fs::write(path, record_demo_replay().unwrap()).unwrap();
}

#[test]
fn replay_fixture_is_current() {
    assert!(
        record_demo_replay().unwrap() == DEMO_REPLAY,
        "replay fixture is stale; run the ignored regenerate_replay test"
    );
}
