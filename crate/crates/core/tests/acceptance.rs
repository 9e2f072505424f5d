mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hemslab::agent::{compute_targets, Transition};
use hemslab::appliances::{
    etp_next_temperature, hvac_required_heat_rate_unclamped, hvac_step, HvacParams, HvacState, PreferenceMode,
};
use hemslab::cli::{cmd_compare, cmd_train, evaluation_starts, ModeArg};
use hemslab::env::{Environment, ModeSelection, HVAC_ID};
use hemslab::neural::{Architecture, Checkpoint, DuelingNetwork};
use hemslab::oracle::{brute_force_reference, oracle_total_cost};

use common::{constraint_violations, default_config, synthetic_scenario};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn thermostat_inversion() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let params = HvacParams {
            q_max_kw: f64::INFINITY,
            r: rng.random_range(0.5..5.0),
            c: rng.random_range(0.5..5.0),
            ..HvacParams::default()
        };
        let t_out = rng.random_range(-10.0..40.0);
        let t_in = rng.random_range(15.0..32.0);
        let dt = rng.random_range(0.05..1.0);
        let q = hvac_required_heat_rate_unclamped(t_in, t_out, &params, dt).map_err(|e| e.to_string())?;
        let state = HvacState::new(t_in, t_out, (20.0, 26.0), 0.0).map_err(|e| e.to_string())?;
        let next = hvac_step(&state, true, q, t_out, &params, dt);
        worst = worst.max((next.t_in_c - params.t_set_c).abs());
        n += 1;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    check(worst <= 1e-9, format!("max |T_in - T_set| = {worst:e}"))?;
    check(elapsed < 1.0, format!("took {elapsed:.3} s"))?;
    Ok(format!("{n} tuples, max error {worst:.1e}, {elapsed:.3} s"))
}

fn free_response() -> Outcome {
    let params = HvacParams::default();
    let dt = 0.25;
    let t_out = 31.0;
    let factor = (-dt / (params.r * params.c)).exp();
    let mut t_in = 21.0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let next = etp_next_temperature(t_in, t_out, 0.0, false, &params, dt);
        let expected = t_out - (t_out - t_in) * factor;
        worst = worst.max((next - expected).abs());
        t_in = next;
    }
    let closed_form = t_out - (t_out - 21.0) * factor.powi(100);
    worst = worst.max((t_in - closed_form).abs());
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("100 steps, max deviation {worst:.1e}"))
}

fn dueling_and_gradients() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = Architecture::new(18, 16);
    let net = DuelingNetwork::new(arch, &mut rng).map_err(|e| e.to_string())?;
    let l = arch_layout_value_index(&arch);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..arch.input).map(|_| rng.random_range(0.0..1.0)).collect();
        let cache = net.forward_cached(&x).map_err(|e| e.to_string())?;
        let q = &cache.q;
        let v = cache.value;
        let sum: f64 = q.iter().map(|qa| qa - v).sum();
        worst_identity = worst_identity.max(sum.abs());
    }
    check(worst_identity <= 1e-12, format!("dueling identity residual {worst_identity:e}"))?;

    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..arch.input).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = rng.random_range(0..arch.actions);
        let y = rng.random_range(-5.0..5.0);
        let (_, grad) = net.loss_and_gradient(&[&x], &[a], &[y]).map_err(|e| e.to_string())?;
        for _ in 0..8 {
            let i = if checked % 8 == 0 { l } else { rng.random_range(0..net.param_count()) };
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let lp = plus.loss_and_gradient(&[&x], &[a], &[y]).map_err(|e| e.to_string())?.0;
            let lm = minus.loss_and_gradient(&[&x], &[a], &[y]).map_err(|e| e.to_string())?.0;
            let numeric = (lp - lm) / (2.0 * h);
            let scale = numeric.abs().max(grad[i].abs());
            let rel = if scale < 1e-7 { 0.0 } else { (numeric - grad[i]).abs() / scale };
            worst_rel = worst_rel.max(rel);
            checked += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    check(worst_rel < 1e-5, format!("max relative gradient error {worst_rel:e}"))?;
    check(elapsed < 30.0, format!("took {elapsed:.1} s"))?;
    Ok(format!(
        "identity residual {worst_identity:.1e}; {checked} gradient entries over 100 triples, max rel error {worst_rel:.1e}"
    ))
}

/// Offset of the value-head bias in the flat parameter vector.
fn arch_layout_value_index(arch: &Architecture) -> usize {
    let (i, h1, h2) = (arch.input, arch.hidden1, arch.hidden2);
    i * h1 + h1 + h1 * h2 + h2 + h2
}

fn double_target() -> Outcome {
    // Both networks output a constant Q through the biases only.
    let arch = Architecture {
        input: 2,
        hidden1: 2,
        hidden2: 2,
        actions: 2,
    };
    let vb = arch_layout_value_index(&arch);
    let mut main = DuelingNetwork::from_params(arch, vec![0.0; arch.param_count()]).map_err(|e| e.to_string())?;
    let mut target = main.clone();
    // Main prefers action 1; the target values it at 0.5 and action 0 at 9.
    let ab = vb + 1 + arch.hidden2 * arch.actions;
    main.params_mut()[ab] = 0.0;
    main.params_mut()[ab + 1] = 1.0;
    target.params_mut()[vb] = 4.75;
    target.params_mut()[ab] = 4.25;
    target.params_mut()[ab + 1] = -4.25;
    let tq = target.forward(&[0.0, 0.0]).map_err(|e| e.to_string())?;
    check(tq == vec![9.0, 0.5], format!("target Q {tq:?}"))?;
    let row = |terminal| Transition {
        observation: vec![0.0, 0.0],
        action: 0,
        reward: 1.0,
        next_observation: vec![0.0, 0.0],
        terminal,
    };
    let live = row(false);
    let done = row(true);
    let y = compute_targets(&main, &target, &[&live, &done], 0.99).map_err(|e| e.to_string())?;
    check(y[0] == 1.0 + 0.99 * 0.5, format!("y = {}", y[0]))?;
    check(y[0] == 1.495, format!("y = {} differs from 1.495", y[0]))?;
    check(y[1] == 1.0, format!("terminal y = {}", y[1]))?;
    Ok(format!("y = {}, terminal y = {}", y[0], y[1]))
}

fn oracle_exactness() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut instances = 0;
    let mut with_jobs = 0;
    let mut with_ev = 0;
    let mut worst_hvac_excess: f64 = 0.0;
    while instances < 200 {
        // A third of the instances start at an EV arrival so the 14-step
        // charge fits the short horizon.
        let at_ev = instances % 3 == 0;
        let horizon = if at_ev { 16 } else { rng.random_range(8..=16) };
        let (_, sc) = synthetic_scenario(rng.random(), horizon, 3);
        let ev: Vec<_> = sc.events.events().iter().filter(|e| (e.appliance_id == "EV") == at_ev).collect();
        let start = if ev.is_empty() {
            rng.random_range(0..sc.len() - horizon)
        } else {
            let e = ev[rng.random_range(0..ev.len())];
            if at_ev {
                e.step
            } else {
                e.step.saturating_sub(rng.random_range(0..4))
            }
        };
        if start + horizon > sc.len() {
            continue;
        }
        let modes: Vec<PreferenceMode> = (0..sc.roster.len())
            .map(|_| PreferenceMode::from_index(rng.random_range(0..3)).unwrap())
            .collect();
        let plan = sc.plan(start, &modes).map_err(|e| e.to_string())?;
        let oracle = oracle_total_cost(&sc, &plan).map_err(|e| e.to_string())?;
        let brute = brute_force_reference(&sc, &plan).map_err(|e| e.to_string())?;
        if plan.shiftable_jobs.iter().any(|j| !j.is_empty()) {
            with_jobs += 1;
        }
        if !plan.ev_sessions.is_empty() {
            with_ev += 1;
        }
        for ((id, o), (_, b)) in oracle.costs.per_appliance.iter().zip(&brute.per_appliance) {
            if id == HVAC_ID {
                check(*o >= *b - 1e-12, format!("HVAC oracle {o} below exhaustive optimum {b} at start {start}"))?;
                check(
                    *o - *b <= oracle.hvac_error_bound,
                    format!("HVAC oracle {o} exceeds optimum {b} by more than {}", oracle.hvac_error_bound),
                )?;
                worst_hvac_excess = worst_hvac_excess.max(*o - *b);
            } else {
                check(o == b, format!("{id}: oracle {o} vs exhaustive {b} at start {start}, modes {modes:?}"))?;
            }
        }
        instances += 1;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    check(elapsed < 120.0, format!("took {elapsed:.1} s"))?;
    Ok(format!(
        "{instances} instances ({with_jobs} with shiftable jobs, {with_ev} with EV sessions), max HVAC excess {worst_hvac_excess:.2e}, {elapsed:.1} s"
    ))
}

fn hard_constraints() -> Outcome {
    let (_, sc) = synthetic_scenario(11, 192, 20);
    let mut env = Environment::new(&sc, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let actions = sc.roster.action_count();
    let mut steps = 0;
    let mut jobs = 0;
    let mut sessions = 0;
    while steps < 10_000 {
        let start = rng.random_range(0..=sc.len() - 192);
        let trace = env
            .rollout(start, &ModeSelection::Sample, |_| rng.random_range(0..actions))
            .map_err(|e| e.to_string())?;
        let plan = env.plan().expect("plan after rollout");
        let v = constraint_violations(&sc, plan, &trace);
        check(v.is_empty(), format!("episode at {start}: {}", v.join("; ")))?;
        jobs += plan.shiftable_jobs.iter().map(Vec::len).sum::<usize>();
        sessions += plan.ev_sessions.len();
        steps += trace.len();
    }
    Ok(format!("{steps} steps, {jobs} shiftable jobs, {sessions} EV sessions, 0 violations"))
}

fn mode_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..50 {
        let (_, sc) = synthetic_scenario(rng.random(), 192, 6);
        let start = rng.random_range(0..=sc.len() - 192);
        let cost = |m: PreferenceMode| -> Result<f64, String> {
            let plan = sc.plan(start, &vec![m; sc.roster.len()]).map_err(|e| e.to_string())?;
            Ok(oracle_total_cost(&sc, &plan).map_err(|e| e.to_string())?.total())
        };
        let (c0, c1, c2) = (cost(PreferenceMode::Mode0)?, cost(PreferenceMode::Mode1)?, cost(PreferenceMode::Mode2)?);
        check(c2 <= c1 && c1 <= c0, format!("scenario {i}: Mode0 {c0}, Mode1 {c1}, Mode2 {c2}"))?;
    }
    Ok("50 scenarios, cost(Mode2) <= cost(Mode1) <= cost(Mode0)".into())
}

fn desk_scale_training() -> Outcome {
    let mut cfg = default_config();
    cfg.training.episodes = 300;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let report = cmd_train(&cfg, dir.path(), true).map_err(|e| e.to_string())?;
    let train_s = t0.elapsed().as_secs_f64();
    let mean = |xs: &[hemslab::agent::CurvePoint]| xs.iter().map(|p| p.cum_reward).sum::<f64>() / xs.len() as f64;
    let first = mean(&report.curve[..50]);
    let last = mean(&report.curve[report.curve.len() - 50..]);
    let cmp = cmd_compare(
        &cfg,
        &report.checkpoint,
        ModeArg::Uniform(PreferenceMode::Mode2),
        None,
        dir.path(),
    )
    .map_err(|e| e.to_string())?;
    let summary = format!(
        "train {train_s:.0} s; reward first-50 {first:.2}, last-50 {last:.2}; Mode2 agent {:.3} vs oracle {:.3} over {} days, gap {:.1}% (full-scale reference 2.5%)",
        cmp.agent_cost,
        cmp.oracle_cost,
        cmp.starts.len(),
        100.0 * cmp.relative_gap
    );
    check(train_s < 600.0, format!("training took {train_s:.0} s; {summary}"))?;
    check(last > first, format!("reward did not improve; {summary}"))?;
    check(cmp.starts.len() == 10, format!("{} held-out days; {summary}", cmp.starts.len()))?;
    check(cmp.relative_gap.abs() <= 0.15, summary.clone())?;
    Ok(summary)
}

fn determinism_and_mode0() -> (Outcome, Outcome) {
    let mut cfg = default_config();
    cfg.training.episodes = 12;
    let run = || -> Result<(tempfile::TempDir, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        cmd_train(&cfg, dir.path(), true).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(dir.path().join("curve.csv")).map_err(|e| e.to_string())?;
        Ok((dir, bytes))
    };
    let determinism = (|| -> Outcome {
        let (a, ca) = run()?;
        let (_, cb) = run()?;
        check(ca == cb, "curve.csv differs between identical runs")?;
        let path = a.path().join("checkpoint.bin");
        let ck = Checkpoint::load(&path).map_err(|e| e.to_string())?;
        let copy = a.path().join("copy.bin");
        ck.save(&copy).map_err(|e| e.to_string())?;
        let back = Checkpoint::load(&copy).map_err(|e| e.to_string())?;
        check(
            std::fs::read(&path).map_err(|e| e.to_string())? == std::fs::read(&copy).map_err(|e| e.to_string())?,
            "re-saved checkpoint bytes differ",
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x: Vec<f64> = (0..ck.network.architecture().input).map(|_| rng.random_range(0.0..1.0)).collect();
            let qa = ck.network.forward(&x).map_err(|e| e.to_string())?;
            let qb = back.network.forward(&x).map_err(|e| e.to_string())?;
            let same = qa.iter().zip(&qb).all(|(p, q)| p.to_bits() == q.to_bits());
            check(same, "forward outputs differ after reload")?;
        }
        Ok(format!("curve.csv identical ({} bytes); 100 forward passes bit-exact after reload", ca.len()))
    })();
    let mode0 = (|| -> Outcome {
        let (dir, _) = run()?;
        let ck = dir.path().join("checkpoint.bin");
        let r = cmd_compare(&cfg, &ck, ModeArg::Uniform(PreferenceMode::Mode0), None, dir.path())
            .map_err(|e| e.to_string())?;
        for (i, (a, o)) in r.agent_costs.iter().zip(&r.oracle_costs).enumerate() {
            check(a == o, format!("episode {i}: agent {a} vs oracle {o}"))?;
        }
        check(r.agent_cost == r.oracle_cost, format!("agent {} vs oracle {}", r.agent_cost, r.oracle_cost))?;
        let days = evaluation_starts(&cfg, usize::MAX).len();
        Ok(format!("agent = oracle = {:.6} over {} of {days} days", r.agent_cost, r.starts.len()))
    })();
    (determinism, mode0)
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "thermostat inversion", thermostat_inversion()),
        (2, "ETP free response", free_response()),
        (3, "dueling identity and gradient check", dueling_and_gradients()),
        (4, "double-DQN target", double_target()),
        (5, "oracle exactness", oracle_exactness()),
        (6, "hard-constraint supremacy", hard_constraints()),
        (7, "mode monotonicity", mode_monotonicity()),
        (8, "desk-scale training", desk_scale_training()),
    ];
    let (det, m0) = determinism_and_mode0();
    results.push((9, "determinism", det));
    results.push((10, "Mode0 degeneracy", m0));
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
