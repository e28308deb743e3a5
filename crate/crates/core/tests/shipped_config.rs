use riskpath::config::RunConfig;

#[test]
fn shipped_config_matches_fixture() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let cfg = RunConfig::load(std::path::Path::new(path)).unwrap();
    let fixture = RunConfig::default_fixture();
    assert_eq!(cfg.canonical_json(), fixture.canonical_json());
    assert_eq!(cfg.content_hash(), fixture.content_hash());
}

#[test]
fn hash_ignores_output_dir() {
    let mut a = RunConfig::default_fixture();
    let h = a.content_hash();
    a.output_dir = "elsewhere".into();
    assert_eq!(a.content_hash(), h);
    a.scenarios.seed += 1;
    assert_ne!(a.content_hash(), h);
}
