mod common;

use hemslab::agent::{evaluate, train, DqnAgent, EpisodeSource};
use hemslab::appliances::PreferenceMode;
use hemslab::cli::{build_scenario, evaluation_starts, training_starts};
use hemslab::env::{episode_cost, Environment, ModeSelection};
use hemslab::oracle::oracle_total_cost;

use common::default_config;

#[test]
fn mode0_evaluation_equals_backup_rollout() {
    let cfg = default_config();
    let sc = build_scenario(&cfg).unwrap();
    let arch = cfg.training.architecture(sc.roster.observation_len(), sc.roster.action_count());
    let agent = DqnAgent::new(arch, cfg.training.adam.clone(), 1).unwrap();
    let modes = ModeSelection::uniform(PreferenceMode::Mode0, &sc.roster);
    let mut env = Environment::new(&sc, 0);
    for start in evaluation_starts(&cfg, sc.len()).into_iter().take(3) {
        let greedy = evaluate(&agent.main, &mut env, start, &modes).unwrap();
        for action in [0, sc.roster.action_count() - 1] {
            let trace = env.rollout(start, &modes, |_| action).unwrap();
            let cost = episode_cost(&trace, sc.grid.dt_hours());
            assert_eq!(cost, greedy.costs);
        }
        let plan = sc.plan(start, &[PreferenceMode::Mode0; 4]).unwrap();
        assert_eq!(oracle_total_cost(&sc, &plan).unwrap().total(), greedy.costs.total);
    }
}

#[test]
fn training_narrows_the_gap_and_flexibility_pays() {
    let mut cfg = default_config();
    cfg.training.episodes = 100;
    let sc = build_scenario(&cfg).unwrap();
    let source = EpisodeSource {
        starts: training_starts(&cfg, sc.len()),
        modes: cfg.training_modes(),
    };
    let mut env = Environment::new(&sc, cfg.seed);
    let outcome = train(&mut env, &cfg.training, &source, cfg.seed).unwrap();
    assert_eq!(outcome.curve.len(), 100);
    let arch = cfg.training.architecture(sc.roster.observation_len(), sc.roster.action_count());
    let untrained = DqnAgent::new(arch, cfg.training.adam.clone(), cfg.seed).unwrap();

    let starts = evaluation_starts(&cfg, sc.len());
    let total = |net: &hemslab::neural::DuelingNetwork, mode: PreferenceMode, env: &mut Environment| -> f64 {
        let modes = ModeSelection::uniform(mode, &sc.roster);
        starts.iter().map(|&s| evaluate(net, env, s, &modes).unwrap().costs.total).sum()
    };
    let mut env = Environment::new(&sc, 0);
    let oracle: f64 = starts
        .iter()
        .map(|&s| oracle_total_cost(&sc, &sc.plan(s, &[PreferenceMode::Mode2; 4]).unwrap()).unwrap().total())
        .sum();
    let trained_m2 = total(&outcome.agent.main, PreferenceMode::Mode2, &mut env);
    let trained_m0 = total(&outcome.agent.main, PreferenceMode::Mode0, &mut env);
    let untrained_m2 = total(&untrained.main, PreferenceMode::Mode2, &mut env);
    assert!(trained_m2 >= oracle - 1e-9);
    assert!(
        untrained_m2 - oracle > trained_m2 - oracle,
        "untrained {untrained_m2}, trained {trained_m2}, oracle {oracle}"
    );
    assert!(trained_m2 <= trained_m0, "Mode2 {trained_m2} vs Mode0 {trained_m0}");
}
