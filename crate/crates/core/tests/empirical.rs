use cygan::arith::build_tables;
use cygan::empirical::{empirical_moment, ks_self, sample_points, scan, Estimator, ScanConfig};
use cygan::profile::{density, CharModel, DensitySpec, ModelConfig};

#[test]
fn stratified_and_uniform_agree() {
    let t = build_tables(4 * 200 * 200 + 1).unwrap();
    let base = ScanConfig::new(200.0, 10_000, 17);
    let (u, su) = empirical_moment(2, &base, &t).unwrap();
    let strat = ScanConfig { estimator: Estimator::Stratified, ..base };
    let (s, ss) = empirical_moment(2, &strat, &t).unwrap();
    assert!((u - s).abs() <= 3.0 * su.hypot(ss), "{u} +- {su} vs {s} +- {ss}");
}

#[test]
fn identical_configs_give_identical_bits() {
    let t = build_tables(4 * 50 * 50 + 1).unwrap();
    let cfg = ScanConfig::new(50.0, 500, 99);
    let a = scan(&cfg, true, &t).unwrap();
    let b = scan(&cfg, true, &t).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let other = sample_points(&ScanConfig::new(50.0, 500, 100)).unwrap();
    assert_ne!(a.x, other);
}

#[test]
fn limit_cdf_against_itself() {
    let t = build_tables(1_000_000).unwrap();
    let model = CharModel::build(ModelConfig { m_cutoff: 2000, sigma_cal: 8.0 }, &t).unwrap();
    let g = density(&DensitySpec::default(), &model).unwrap();
    assert!(ks_self(&g).unwrap() < 1e-15);
    assert!(g.cdf_at(13.0).is_err());
    let q = g.quantile(0.5);
    assert!((g.cdf_at(q).unwrap() - 0.5).abs() < 1e-12);
}
