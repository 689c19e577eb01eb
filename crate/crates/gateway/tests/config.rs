use std::collections::BTreeMap;
use std::path::Path;

use holonsim_gateway::{Backend, ConfigError, GatewayConfig};

fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
    let map: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    move |k| map.get(k).cloned()
}

#[test]
fn defaults() {
    let cfg = GatewayConfig::default();
    assert_eq!(cfg.server.port, 8080);
    assert_eq!(cfg.sim.ticks_per_second, 2.0);
    assert_eq!(cfg.reasoner.backend, Backend::Mock);
    assert!(cfg.sim.approval_timeout.is_none());
}

#[test]
fn toml_file_then_environment() {
    let text = r#"
        [server]
        port = 9000
        runs_dir = "/tmp/holonsim-runs"

        [sim]
        ticks_per_second = 4.0
        approval_timeout = 12

        [reasoner]
        budget_ms = 500
    "#;
    let mut cfg = GatewayConfig::from_toml(text, Path::new("holonsim.toml")).unwrap();
    assert_eq!(cfg.server.port, 9000);
    assert_eq!(cfg.sim.approval_timeout, Some(12));
    assert_eq!(cfg.reasoner.budget_ms, 500);
    cfg.apply_env(env(&[
        ("HOLONSIM_PORT", "9100"),
        ("HOLONSIM_TICKS_PER_SECOND", "0.5"),
        ("HOLONSIM_APPROVAL_TIMEOUT", "7"),
        ("HOLONSIM_REASONER_URL", "http://127.0.0.1:9/reason"),
    ]))
    .unwrap();
    assert_eq!(cfg.server.port, 9100);
    assert_eq!(cfg.sim.ticks_per_second, 0.5);
    assert_eq!(cfg.sim.approval_timeout, Some(7));
    assert_eq!(cfg.reasoner.backend, Backend::Remote);
    assert!(cfg.reasoner.layer().is_ok());

    cfg.apply_env(env(&[("HOLONSIM_REASONER", "mock")])).unwrap();
    assert_eq!(cfg.reasoner.backend, Backend::Mock);
}

#[test]
fn bad_values_are_reported() {
    let err = GatewayConfig::default()
        .apply_env(env(&[("HOLONSIM_PORT", "eighty")]))
        .unwrap_err();
    assert!(matches!(err, ConfigError::Env { var: "HOLONSIM_PORT", .. }));
    let err = GatewayConfig::from_toml("[server]\nprot = 1\n", Path::new("x.toml")).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }));
    let mut cfg = GatewayConfig::default();
    cfg.reasoner.backend = Backend::Remote;
    assert!(matches!(cfg.reasoner.layer(), Err(ConfigError::MissingRemoteUrl)));
    assert!(GatewayConfig::default()
        .apply_env(env(&[("HOLONSIM_REASONER", "oracle")]))
        .is_err());
}
