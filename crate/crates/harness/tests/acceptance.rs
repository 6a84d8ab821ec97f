use primwalk::acceptance;
use primwalk::config::ExperimentConfig;

#[test]
fn acceptance_suite() {
    let work = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let report = acceptance::run(&cfg, work.path(), |r| println!("{r}")).unwrap();
    assert_eq!(report.criteria.len(), 12);
    let failed: Vec<u8> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
