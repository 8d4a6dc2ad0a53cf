//! Loopback tests: the HTTP client against the in-process mock server.

use std::sync::Arc;

use gem::attacks::{fd_attack, ifd_attack, AttackBudget, AttackConfig};
use gem::losses::{AttackMode, LossSpec};
use gem::model::{ArchSpec, MlpModel};
use gem::numerics::{Mat, Rng};
use gem::oracle::{
    remote_classify, serve_mock, with_counter, FaultPlan, LocalOracle, MockServerConfig, Oracle, OracleEndpoint,
    RemoteOracle,
};
use gem::query_reduction::Reduction;
use gem::Error;

fn model(d: usize, c: usize, seed: u64) -> Arc<MlpModel> {
    let arch = ArchSpec {
        input_dim: d,
        hidden: vec![10],
        num_classes: c,
        data_range: (0.0, 1.0),
    };
    Arc::new(MlpModel::init(&arch, &mut Rng::seeded(seed)).unwrap())
}

fn point(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::seeded(seed);
    (0..d).map(|_| rng.uniform()).collect()
}

fn fast_endpoint(url: String) -> OracleEndpoint {
    OracleEndpoint {
        backoff_base_ms: 10,
        ..OracleEndpoint::new(url)
    }
}

#[test]
fn remote_probabilities_match_local_bit_for_bit() {
    let m = model(12, 4, 1);
    let server = serve_mock(m.clone(), "127.0.0.1:0", MockServerConfig::default()).unwrap();
    let remote = RemoteOracle::connect(fast_endpoint(server.base_url())).unwrap();
    let local = LocalOracle::new(m.clone());
    assert_eq!(remote.input_dim(), 12);
    assert_eq!(remote.num_classes(), 4);
    for seed in 0..20 {
        let x = point(12, seed);
        let r = remote.query_probs(&x).unwrap();
        let l = local.query_probs(&x).unwrap();
        assert_eq!(r, l);
        assert_eq!(l.as_slice(), m.forward(&x).unwrap().probs.as_slice());
    }
    assert_eq!(server.ledger().total(), 20);
}

#[test]
fn seeded_attack_is_identical_over_http() {
    let m = model(10, 3, 2);
    let x = point(10, 5);
    let label = m.predict(&x).unwrap();
    let mut cfg = AttackConfig::new(
        AttackBudget::new(0.3, (0.0, 1.0)).unwrap(),
        LossSpec::logit(AttackMode::Untargeted { label }),
    );
    cfg.iterations = 4;
    cfg.reduction = Reduction::random_groups(3);
    cfg.seed = 77;

    let (local, local_ledger) = with_counter(LocalOracle::new(m.clone()));
    let expected = ifd_attack(&local, &x, &cfg).unwrap();

    let plan = MockServerConfig {
        faults: FaultPlan {
            fail_first: 1,
            ..FaultPlan::default()
        },
        ..MockServerConfig::default()
    };
    let server = serve_mock(m.clone(), "127.0.0.1:0", plan).unwrap();
    let remote = RemoteOracle::connect(fast_endpoint(server.base_url())).unwrap();
    let (counted, remote_ledger) = with_counter(&remote);
    let got = ifd_attack(&counted, &x, &cfg).unwrap();

    assert_eq!(got, expected);
    assert_eq!(remote_ledger.total(), local_ledger.total());
    assert_eq!(server.ledger().total(), local_ledger.total());
    assert_eq!(remote.retries(), 1);
}

#[test]
fn timeout_is_retried() {
    let m = model(4, 2, 3);
    let plan = MockServerConfig {
        faults: FaultPlan {
            delay_first: 1,
            delay_ms: 800,
            ..FaultPlan::default()
        },
        ..MockServerConfig::default()
    };
    let server = serve_mock(m.clone(), "127.0.0.1:0", plan).unwrap();
    let endpoint = OracleEndpoint {
        timeout_ms: 200,
        ..fast_endpoint(server.base_url())
    };
    let remote = RemoteOracle::connect(endpoint).unwrap();
    let x = point(4, 1);
    let p = remote.query_probs(&x).unwrap();
    assert_eq!(p, LocalOracle::new(m).query_probs(&x).unwrap());
    assert_eq!(remote.retries(), 1);
}

#[test]
fn persistent_failure_becomes_transport_error() {
    let m = model(4, 2, 4);
    let plan = MockServerConfig {
        faults: FaultPlan {
            fail_first: 100,
            ..FaultPlan::default()
        },
        ..MockServerConfig::default()
    };
    let server = serve_mock(m, "127.0.0.1:0", plan).unwrap();
    let endpoint = OracleEndpoint {
        retry_limit: 2,
        ..fast_endpoint(server.base_url())
    };
    let err = remote_classify(&endpoint, &[0.1; 4]).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");
}

#[test]
fn bad_requests_are_protocol_errors() {
    let m = model(4, 2, 5);
    let server = serve_mock(m, "127.0.0.1:0", MockServerConfig::default()).unwrap();
    let endpoint = fast_endpoint(server.base_url());
    let err = remote_classify(&endpoint, &[0.1; 3]).unwrap_err();
    match err {
        Error::Protocol(msg) => assert!(msg.contains("400") && msg.contains("expected 4 features"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(server.ledger().total(), 0);

    let raw = reqwest::blocking::Client::new()
        .post(format!("{}/v1/classify", server.base_url()))
        .body("{not json")
        .header("content-type", "application/json")
        .send()
        .unwrap();
    assert_eq!(raw.status().as_u16(), 400);
    let body: serde_json::Value = raw.json().unwrap();
    assert!(body["error"].is_string());
}

#[test]
fn bearer_token_is_enforced() {
    let m = model(4, 2, 6);
    let config = MockServerConfig {
        auth_token: Some("s3cret".into()),
        ..MockServerConfig::default()
    };
    let server = serve_mock(m, "127.0.0.1:0", config).unwrap();
    let anonymous = fast_endpoint(server.base_url());
    assert!(matches!(RemoteOracle::connect(anonymous), Err(Error::Protocol(_))));
    let authed = OracleEndpoint {
        auth_token: Some("s3cret".into()),
        ..fast_endpoint(server.base_url())
    };
    let remote = RemoteOracle::connect(authed).unwrap();
    assert!(remote.query_probs(&[0.5; 4]).is_ok());
}

#[test]
fn named_scores_follow_the_configured_category_order() {
    // zero weights with biases ln 0.96 and ln 0.04 give probabilities (0.96, 0.04)
    let m = Arc::new(MlpModel::linear(Mat::zeros(2, 3), vec![0.96f64.ln(), 0.04f64.ln()], (0.0, 1.0)).unwrap());
    let config = MockServerConfig {
        labels: Some(vec!["safe".into(), "unsafe".into()]),
        named_scores: true,
        ..MockServerConfig::default()
    };
    let server = serve_mock(m, "127.0.0.1:0", config).unwrap();
    let x = [0.2, 0.4, 0.6];

    let endpoint = OracleEndpoint {
        categories: Some(vec!["safe".into(), "unsafe".into()]),
        ..fast_endpoint(server.base_url())
    };
    let p = remote_classify(&endpoint, &x).unwrap();
    assert!((p.get(0) - 0.96).abs() < 1e-12 && (p.get(1) - 0.04).abs() < 1e-12);

    let reversed = OracleEndpoint {
        categories: Some(vec!["unsafe".into(), "safe".into()]),
        ..fast_endpoint(server.base_url())
    };
    let remote = RemoteOracle::connect(reversed).unwrap();
    let p = remote.query_probs(&x).unwrap();
    assert!((p.get(0) - 0.04).abs() < 1e-12 && (p.get(1) - 0.96).abs() < 1e-12);
}

#[test]
fn thousand_sequential_requests_are_all_counted() {
    let m = model(6, 3, 7);
    let server = serve_mock(m, "127.0.0.1:0", MockServerConfig::default()).unwrap();
    let remote = RemoteOracle::connect(fast_endpoint(server.base_url())).unwrap();
    let (counted, ledger) = with_counter(&remote);
    for i in 0..1000u64 {
        counted.query_probs(&point(6, i)).unwrap();
    }
    assert_eq!(ledger.total(), 1000);
    assert_eq!(server.ledger().total(), 1000);
}

#[test]
fn single_step_attack_matches_over_http() {
    let m = model(8, 3, 8);
    let server = serve_mock(m.clone(), "127.0.0.1:0", MockServerConfig::default()).unwrap();
    let remote = RemoteOracle::connect(fast_endpoint(server.base_url())).unwrap();
    let x = point(8, 9);
    let cfg = AttackConfig::new(
        AttackBudget::new(0.2, (0.0, 1.0)).unwrap(),
        LossSpec::xent(AttackMode::Targeted { target: 1 }),
    );
    let local = fd_attack(&LocalOracle::new(m), &x, &cfg).unwrap();
    let over_http = fd_attack(&remote, &x, &cfg).unwrap();
    assert_eq!(local, over_http);
    assert_eq!(server.ledger().total(), 2 * 8 + 1);
}
