use std::collections::HashMap;

use revise::config::{env_var_name, RunConfig, SettingsError, Source};
use revise_core::protocol::SummaryMode;

#[test]
fn defaults_build_valid_configs() {
    let c = RunConfig::default();
    c.validate().unwrap();
    let e = c.episode_config().unwrap();
    assert_eq!((e.max_rounds, e.max_frames_per_round, e.initial_frame_count), (4, 3, 3));
    let w = c.reward_weights();
    assert_eq!((w.conf, w.sum, w.stop, w.beta, w.t_stop), (1.0, 1.0, 0.5, 1.0, 2));
    assert_eq!(c.parallelism(), 1);
    assert!(!c.backend_is_http());
}

#[test]
fn precedence_is_flag_env_file_default() {
    let mut c = RunConfig::default();
    c.apply_text("max_rounds=2\nmax_frames_per_round=5\nseed=3\ntop_p=0.5\n", Source::File)
        .unwrap();
    let env: HashMap<String, String> = [("max_frames_per_round", "6"), ("seed", "4")]
        .into_iter()
        .map(|(k, v)| (env_var_name(k), v.to_string()))
        .collect();
    c.apply_env(|k| env.get(k).cloned()).unwrap();
    c.set("seed", "5", Source::Flag).unwrap();

    assert_eq!((c.get("max_rounds"), c.source("max_rounds")), ("2", Some(Source::File)));
    assert_eq!(
        (c.get("max_frames_per_round"), c.source("max_frames_per_round")),
        ("6", Some(Source::Env))
    );
    assert_eq!((c.get("seed"), c.source("seed")), ("5", Some(Source::Flag)));
    assert_eq!(c.source("gamma"), Some(Source::Default));
    assert_eq!(c.seed(), 5);
    assert_eq!(c.episode_config().unwrap().sampling.top_p, 0.5);
}

#[test]
fn layered_reads_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("run.conf");
    std::fs::write(&f, "# comment\nsummary_mode=free_text\nparallelism=3\n").unwrap();
    let c = RunConfig::layered(Some(&f), &[("parallelism".into(), "7".into())]).unwrap();
    assert_eq!(c.parallelism(), 7);
    assert_eq!(c.episode_config().unwrap().summary_mode, SummaryMode::FreeText);
    assert!(matches!(
        RunConfig::layered(Some(&dir.path().join("missing")), &[]),
        Err(SettingsError::File { .. })
    ));
}

#[test]
fn echo_reads_back_to_the_same_values() {
    let mut c = RunConfig::default();
    c.set("endpoint", "http://h:1/v1/chat/completions", Source::Flag).unwrap();
    c.set("lambda_stop", "0.25", Source::File).unwrap();
    let echo = c.to_kv();
    assert!(echo.starts_with("# set: endpoint (flag), lambda_stop (file)\n"));
    let mut back = RunConfig::default();
    back.apply_text(&echo, Source::File).unwrap();
    for k in RunConfig::keys() {
        assert_eq!(back.get(k), c.get(k), "{k}");
    }
}

#[test]
fn rejects_secrets_unknown_keys_and_bad_values() {
    let mut c = RunConfig::default();
    for k in ["api_key", "API_KEY", "password", "secret"] {
        assert_eq!(c.set(k, "x", Source::File), Err(SettingsError::Secret(k.into())));
    }
    assert!(matches!(
        c.set("max_round", "3", Source::Flag),
        Err(SettingsError::UnknownKey { .. })
    ));
    for (k, v) in [("max_rounds", "-1"), ("gamma", "nan"), ("carry_state", "maybe"), ("backend", "grpc")] {
        assert!(matches!(c.set(k, v, Source::Env), Err(SettingsError::BadValue { .. })), "{k}={v}");
    }
    c.set("carry_state", "OFF", Source::Env).unwrap();
    assert_eq!(c.get("carry_state"), "false");
    c.set("backend", "HTTP", Source::Env).unwrap();
    assert!(c.backend_is_http());
}

#[test]
fn cross_field_validation() {
    let mut c = RunConfig::default();
    c.set("initial_frames", "5", Source::Flag).unwrap();
    assert!(matches!(c.validate(), Err(SettingsError::Invalid(_))));
    let mut c = RunConfig::default();
    c.set("max_rounds", "0", Source::Flag).unwrap();
    assert!(c.validate().is_err());
    let mut c = RunConfig::default();
    c.set("timeout_ms", "0", Source::Flag).unwrap();
    assert!(c.validate().is_err());
}

#[test]
fn http_settings() {
    let mut c = RunConfig::default();
    c.apply_text(
        "timeout_ms=1500\nmax_retries=4\nmax_concurrency=2\nmodel=m\napi_key_env=MY_KEY\ndebug_log=true\n",
        Source::File,
    )
    .unwrap();
    let dir = std::path::Path::new("/tmp/run");
    let h = c.http_config(Some(dir));
    assert_eq!((h.timeout_ms, h.max_retries, h.max_concurrency), (1500, 4, 2));
    assert_eq!(h.api_key_env.as_deref(), Some("MY_KEY"));
    assert_eq!(h.debug_log, Some(dir.join("http_debug.jsonl")));
}
