use sepqmm::model::KernelKind;
use sepqmm::sampler::ChainConfig;
use sepqmm::simstudy::{
    apply_censoring, generate_dataset, run_scenario, write_table2, SimFitConfig, SimGrid,
    SimScenario,
};

#[test]
fn censoring_hits_the_requested_share() {
    let s = SimScenario::new(0.1, 0.8, (0.5, 2.0));
    let data = generate_dataset(&s, s.rep_seed(3)).unwrap();
    let censored = apply_censoring(&data, 0.1).unwrap();
    let expected = (0.1 * data.n_obs() as f64).ceil() as usize;
    assert!(censored.n_censored() >= expected);
    // every censored row sits at or below the bound, and only the lowest values were replaced
    let bound = censored
        .observations()
        .iter()
        .find(|o| !o.censor.is_observed())
        .unwrap()
        .response;
    for (a, b) in data.observations().iter().zip(censored.observations()) {
        if b.censor.is_observed() {
            assert_eq!(a.response, b.response);
            assert!(a.response > bound);
        } else {
            assert!(a.response <= bound);
        }
    }
}

#[test]
fn replicate_seeds_are_stable_and_distinct() {
    let s = SimScenario::new(0.05, 0.5, (1.0, 1.0));
    assert_eq!(
        generate_dataset(&s, s.rep_seed(0)).unwrap(),
        generate_dataset(&s, s.rep_seed(0)).unwrap()
    );
    assert_ne!(s.rep_seed(0), s.rep_seed(1));
}

#[test]
fn small_scenario_produces_table() {
    let s = SimScenario {
        n_reps: 3,
        ..SimScenario::new(0.05, 0.5, (1.0, 1.0))
    };
    let cfg = SimFitConfig {
        chains: ChainConfig::with_lengths(2, 500, 500, 1),
        rhat_threshold: 1.5,
    };
    let result = run_scenario(&s, &[KernelKind::Sl, KernelKind::Sep], &cfg).unwrap();
    assert_eq!(result.fits.len(), 6);
    assert!((result.mean_censored_share - 0.05).abs() < 0.02);
    for kernel in [KernelKind::Sl, KernelKind::Sep] {
        let row = result.row(kernel, "beta[1]").unwrap();
        assert_eq!(row.n_used + row.n_excluded, 3);
        assert!(row.bias.abs() < 0.5, "{kernel:?}: {}", row.bias);
    }
    let mut buf = Vec::new();
    write_table2(&[result], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("Cen.,p0,kappa1,kappa2,Param.,True,SKL_Bias"));
    assert!(lines.iter().all(|l| l.split(',').count() == 16));
}

#[test]
fn grid_file() {
    let grid = SimGrid::parse(
        "censor = 0.05\np0 = 0.5\nkappa = 2:0.5, 0.5:2\nreps = 7  # desk scale\nkeep = 100\n",
    )
    .unwrap();
    assert_eq!(grid.scenarios.len(), 2);
    assert!(grid.scenarios.iter().all(|s| s.n_reps == 7));
    assert_eq!(grid.fit.chains.n_keep, 100);
    assert!(SimGrid::parse("bogus = 1").is_err());
    assert_eq!(SimGrid::default().scenarios.len(), 12);
}
