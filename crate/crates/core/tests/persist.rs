use std::fs;

use trapwalk::persist::{
    load_environment, load_lambda_field, load_site_set, load_site_values, load_survival_field,
    save_environment, save_lambda_field, save_site_set, save_site_values, save_survival_field,
};
use trapwalk::spectral::lambda_field;
use trapwalk::survival::{survival_field, survival_field_with, FieldOptions, SurvivalQuery};
use trapwalk::{region_in, BoxSpec, Environment, Error, FormatError, Norm, Site, SiteValues};

#[test]
fn large_field_roundtrips_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let env = Environment::generate(BoxSpec::new(2, 50).unwrap(), 0.8, 17).unwrap();
    assert!(env.box_spec().volume() >= 10_000);
    let field = survival_field(&env, &SurvivalQuery::new(25)).unwrap();
    let path = tmp.path().join("h.bin");
    save_survival_field(&field, &path).unwrap();
    let back = load_survival_field(&path).unwrap();
    let mut max_diff = 0.0f64;
    let mut entries = 0usize;
    for t in 0..=25 {
        let (a, b) = (field.dense(t), back.dense(t));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            max_diff = max_diff.max((x - y).abs());
            assert_eq!(x.to_bits(), y.to_bits());
            entries += 1;
        }
    }
    assert!(entries >= 10_000);
    assert_eq!(max_diff, 0.0);
}

#[test]
fn checkpointed_field_roundtrips() {
    let tmp = tempfile::tempdir().unwrap();
    let env = Environment::generate(BoxSpec::new(2, 8).unwrap(), 0.75, 3).unwrap();
    let q = SurvivalQuery::new(300);
    let opts = FieldOptions {
        max_entries: 1 << 20,
        checkpointing: true,
        checkpoint_every: Some(16),
    };
    let field = survival_field_with(&env, &q, opts).unwrap();
    assert!(field.is_checkpointed());
    let plain = survival_field(&env, &q).unwrap();
    let path = tmp.path().join("h.bin");
    save_survival_field(&field, &path).unwrap();
    let back = load_survival_field(&path).unwrap();
    for t in [0, 1, 17, 150, 300] {
        assert_eq!(back.dense(t), plain.dense(t));
    }
}

#[test]
fn site_values_and_lambda_fields_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs: Vec<(Site, f64)> = (0..10_000)
        .map(|i| {
            (
                Site::new(&[i % 100, i / 100]),
                (i as f64).sin() * 1e-300 + i as f64,
            )
        })
        .collect();
    let values = SiteValues::from_pairs(pairs);
    let path = tmp.path().join("v.bin");
    save_site_values(&values, "test", serde_json::json!({"k": 1}), &path).unwrap();
    let (back, kind, meta) = load_site_values(&path).unwrap();
    assert_eq!(kind, "test");
    assert_eq!(meta["k"], 1);
    assert_eq!(back, values);

    let env = Environment::generate(BoxSpec::new(2, 6).unwrap(), 0.7, 1).unwrap();
    let target = region_in(env.box_spec(), &Site::origin(2), 4.0, Norm::Linf);
    let lf = lambda_field(&env, &target, 3.0, 1e-10).unwrap();
    let path = tmp.path().join("l.bin");
    save_lambda_field(&lf, &path).unwrap();
    let back = load_lambda_field(&path).unwrap();
    assert_eq!(back.values(), lf.values());
    assert_eq!(back.radius(), 3.0);
}

#[test]
fn environments_and_site_sets_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let env = Environment::generate(BoxSpec::new(3, 5).unwrap(), 0.6, 99).unwrap();
    let path = tmp.path().join("env.bin");
    save_environment(&env, &path).unwrap();
    let back = load_environment(&path).unwrap();
    assert_eq!(back.mask_bytes(), env.mask_bytes());
    assert_eq!(back.p(), env.p());
    assert_eq!(back.seed(), env.seed());

    let set = env.open_sites();
    let path = tmp.path().join("set.txt");
    save_site_set(&set, &path).unwrap();
    assert_eq!(load_site_set(&path).unwrap(), set);
}

#[test]
fn corrupted_data_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let env = Environment::generate(BoxSpec::new(2, 5).unwrap(), 0.8, 2).unwrap();
    let field = survival_field(&env, &SurvivalQuery::new(10)).unwrap();
    let path = tmp.path().join("h.bin");
    save_survival_field(&field, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[100] ^= 0x01;
    fs::write(&path, &bytes).unwrap();
    match load_survival_field(&path) {
        Err(Error::Format(FormatError::Checksum { .. })) => {}
        other => panic!("expected a checksum error, got {other:?}"),
    }

    bytes.truncate(bytes.len() - 8);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_survival_field(&path), Err(Error::Format(_))));

    let env_path = tmp.path().join("env.bin");
    save_environment(&env, &env_path).unwrap();
    let mut raw = fs::read(&env_path).unwrap();
    let last = raw.len() - 1;
    raw[last] ^= 0xFF;
    fs::write(&env_path, &raw).unwrap();
    assert!(matches!(load_environment(&env_path), Err(Error::Format(_))));
}
