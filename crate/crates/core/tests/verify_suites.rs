use helloc_core::verify::run_suite;

fn assert_suite(name: &str) {
    let results = run_suite(name, 0).unwrap();
    assert!(!results.is_empty());
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}.{}: {}", r.suite, r.name, r.detail))
        .collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

#[test]
fn core() {
    assert_suite("core");
}

#[test]
fn divergences() {
    assert_suite("divergences");
}

#[test]
fn models_markov() {
    assert_suite("models_markov");
}

#[test]
fn models_dynamics() {
    assert_suite("models_dynamics");
}

#[test]
fn estimation() {
    assert_suite("estimation");
}

#[test]
fn localization() {
    assert_suite("localization");
}

#[test]
fn harness() {
    assert_suite("harness");
}

#[test]
fn cli() {
    assert_suite("cli");
}

#[test]
fn unknown_suite_is_rejected() {
    assert!(run_suite("nope", 0).is_err());
}
