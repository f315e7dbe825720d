use homodyne_core::config::RunConfig;
use homodyne_core::noise_models::{LossBudget, OpoParams};
use homodyne_core::spectral::{VacuumReference, WindowPlan};
use homodyne_core::suite::{
    closure_study, simulate_and_analyze, squeezed_scenario, AnalysisOptions, RunSpec, Suite,
    Tolerances, VacuumStudy,
};
use homodyne_core::synth::{DarkNoiseModel, SimScenario, Squeezer};
use homodyne_core::verify::{check_linearity, measured_squeezing};

fn params() -> homodyne_core::spectral::WelchParams {
    Default::default()
}

fn resolved(name: &str, mut scenario: SimScenario<f64>, plan: &WindowPlan<f64>) -> RunSpec {
    let fs = scenario.sample_rate_hz;
    scenario.duration_s = plan.required_samples(fs, 0.5).unwrap() as f64 / fs;
    RunSpec {
        name: name.into(),
        scenario,
        plan: plan.clone(),
    }
}

#[test]
fn measured_squeezing_closes_on_the_model() {
    let plan = WindowPlan::single(10.0, 3200.0, 4.0, 100).unwrap();
    for (i, (g, l)) in [(1.0, 0.0), (12.0, 0.15), (40.0, 0.15), (5.0, 0.3)]
        .into_iter()
        .enumerate()
    {
        let mut s = SimScenario::vacuum(464e-6, 16384.0, 1.0, 100 + i as u64);
        s.squeezer = Some(Squeezer {
            opo: OpoParams::with_gain(g).unwrap(),
            losses: LossBudget::lumped(l),
        });
        let spectrum = simulate_and_analyze(&resolved("sq", s, &plan), params()).unwrap();
        let expected = -10.0 * (l + (1.0 - l) / g).log10();
        let r = measured_squeezing(
            &spectrum,
            VacuumReference::Flat(1.0),
            (10.0, 3200.0),
            None,
            expected,
            0.5,
        )
        .unwrap();
        let sd = r.info["estimator_uncertainty_db"];
        assert!(
            (r.measured.value - expected).abs() < 4.0 * sd,
            "g={g} l={l}: {} vs {expected} (sd {sd})",
            r.measured.value
        );
    }
}

#[test]
fn calibration_closes_after_dark_subtraction() {
    let mut closure = closure_study(&squeezed_scenario(12.0, 0.15).unwrap()).unwrap();
    closure.plan = WindowPlan::single(0.9, 1.1, 0.0625, 10_000).unwrap();
    let suite = Suite {
        name: "closure".into(),
        seed: 77,
        vacuum: None,
        squeezing: None,
        closure: Some(closure),
        analysis: AnalysisOptions::default(),
        tolerances: Tolerances::uniform(0.2),
        duration_s: None,
    };
    let reports = suite.verify_simulated().unwrap();
    let rec = reports
        .iter()
        .find(|r| r.name == "closure_recovered")
        .unwrap();
    assert!(rec.passed, "{}", rec.summary_line());
}

fn vacuum_suite(dark: Option<DarkNoiseModel<f64>>, subtract: bool) -> Suite {
    let mut base = SimScenario::vacuum(464e-6, 16384.0, 1.0, 1);
    base.dark = dark;
    Suite {
        name: "linearity".into(),
        seed: 9,
        vacuum: Some(VacuumStudy {
            base,
            lo_powers_w: vec![232e-6, 464e-6, 928e-6],
            plan: WindowPlan::single(10.0, 3200.0, 4.0, 100).unwrap(),
            linearity: true,
            whiteness: true,
            whiteness_band_hz: (10.0, 3200.0),
        }),
        squeezing: None,
        closure: None,
        analysis: AnalysisOptions {
            subtract_dark: subtract,
            ..Default::default()
        },
        tolerances: Tolerances::defaults(false),
        duration_s: None,
    }
}

#[test]
fn linearity_passes_on_ideal_vacuum_and_fails_with_dark_left_in() {
    let ideal = vacuum_suite(None, false).verify_simulated().unwrap();
    assert!(
        ideal.iter().all(|r| r.passed),
        "{:?}",
        ideal.iter().map(|r| r.summary_line()).collect::<Vec<_>>()
    );

    let dark = DarkNoiseModel {
        floor_rel_vacuum: 0.1,
        knee_hz: 0.0,
    };
    let polluted = vacuum_suite(Some(dark), false).verify_simulated().unwrap();
    assert!(!polluted[0].passed, "{}", polluted[0].summary_line());

    let cleaned = vacuum_suite(Some(dark), true).verify_simulated().unwrap();
    assert!(cleaned[0].passed, "{}", cleaned[0].summary_line());
}

#[test]
fn linearity_check_on_direct_spectra() {
    let plan = WindowPlan::single(10.0, 3200.0, 4.0, 100).unwrap();
    let spectra: Vec<(f64, _)> = [232e-6, 464e-6, 928e-6]
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = SimScenario::vacuum(p, 16384.0, 1.0, 40 + i as u64);
            (
                p,
                simulate_and_analyze(&resolved("v", s, &plan), params()).unwrap(),
            )
        })
        .collect();
    let r = check_linearity(&spectra, None, 0.5).unwrap();
    assert!(r.passed);
    assert!(check_linearity(&spectra, None, 0.0)
        .map(|r| !r.passed)
        .unwrap());
}

#[test]
fn written_runs_verify_like_in_memory_runs() {
    let cfg = RunConfig::from_toml_str(
        r#"
        seed = 3
        [scenario]
        sample_rate_hz = 8192.0
        [scenario.opo]
        gain = 12.0
        [[scenario.loss]]
        name = "lumped"
        efficiency = 0.85
        [scenario.dark]
        floor_rel_vacuum = 0.0316
        knee_hz = 7.26
        [scenario.mains]
        [[plan.band]]
        f_lo_hz = 10.0
        f_hi_hz = 1000.0
        rbw_hz = 4.0
        n_averages = 100
        [verify]
        checks = ["squeezing", "linearity", "whiteness"]
        "#,
    )
    .unwrap();
    let suite = cfg.to_suite().unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(suite.verify_from_dir(dir.path()).is_err());
    let metas = suite.write_runs(dir.path(), false).unwrap();
    assert_eq!(metas.len(), suite.runs().unwrap().len());
    assert!(suite.write_runs(dir.path(), false).is_err());

    let from_disk = suite.verify_from_dir(dir.path()).unwrap();
    let in_memory = suite.verify_simulated().unwrap();
    assert_eq!(from_disk, in_memory);
    assert!(from_disk.iter().all(|r| r.passed), "{:#?}", from_disk);
}
