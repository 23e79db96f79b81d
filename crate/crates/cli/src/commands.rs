use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dualsched::analysis::{compare_with_reference, link_weighted_mean, policy_structure, recurrent_queue_states, ReferenceTable};
use dualsched::config::{ChannelSpec, Experiment, ExperimentId};
use dualsched::learning::{read_qtable, train, write_qtable, LearnedPolicy, ModelEnv, QTable, QTableHeader};
use dualsched::mdp::{write_state_legend, MmwaveRates, SystemModel, Variant};
use dualsched::pipeline::{compare, solve_exact, RateComparison};
use dualsched::policy::{tabulate, threshold_policy, InfoLevel, SchedulingPolicy, Sub6OnlyPolicy};
use dualsched::sim::{run, write_metrics_csv, write_trace_csv, Metrics};
use dualsched::solvers::policy_evaluation;
use serde::Serialize;

use crate::artifacts::{config_problem, load_experiment, Bundled, Check, OutDir};
use crate::Common;

fn model_of(exp: &Experiment) -> Result<SystemModel> {
    exp.model().map_err(config_problem)
}

pub fn solve(common: &Common) -> Result<bool> {
    let exp = load_experiment(common, Bundled::A)?;
    let model = model_of(&exp)?;
    let solver = &exp.config.solver;
    let mut out = OutDir::create(&common.out)?;
    let sol = solve_exact(&model, solver)?;
    let gap = sol.gap();
    println!(
        "RVI g = {:.9} ({} iterations, {:.2} s); LP g = {:.9} ({} pivots, {:.2} s); gap {gap:.2e}",
        sol.values.avg_cost, sol.values.iterations, sol.rvi_seconds, sol.lp.avg_cost, sol.lp.pivots, sol.lp_seconds
    );

    sol.rvi_policy.write_csv(&model, out.file("policy.csv")?)?;
    sol.lp.policy.write_csv(&model, out.file("lp_policy.csv")?)?;
    sol.values.write_csv(out.file("values.csv")?)?;
    sol.lp.occupation.write_csv(&sol.kernel, out.file("occupation.csv")?)?;
    write_state_legend(&model, out.file("state_legend.csv")?)?;

    let mut checks = vec![Check::new(
        "rvi_lp_agreement",
        gap <= solver.agreement_tol,
        format!("|g_rvi - g_lp| = {gap:.3e}, tolerance {:.1e}", solver.agreement_tol),
    )];
    if gap > solver.agreement_tol {
        out.json(
            "diagnostic.json",
            &serde_json::json!({
                "rvi_avg_cost": sol.values.avg_cost,
                "rvi_iterations": sol.values.iterations,
                "rvi_final_span": sol.values.final_span,
                "lp_avg_cost": sol.lp.avg_cost,
                "lp_pivots": sol.lp.pivots,
                "lp_states": sol.lp.lp_states,
                "balance_residual": sol.lp.balance_residual,
                "gap": gap,
            }),
        )?;
    }
    checks.push(Check::new(
        "occupation_balance",
        sol.lp.balance_residual <= 1e-8,
        format!("balance residual {:.2e}", sol.lp.balance_residual),
    ));

    let recurrent = recurrent_queue_states(&model, &sol.lp.occupation, solver.recurrence_tol);
    let space = model.space();
    let mass_q1_above_1: f64 = (0..space.len()).filter(|&s| space.state(s).queue.q1 > 1).map(|s| sol.lp.occupation.state_mass(s)).sum();
    let statement = if mass_q1_above_1 < solver.recurrence_tol {
        "no recurrent state has q1 > 1".to_string()
    } else {
        format!("states with q1 > 1 carry occupation mass {mass_q1_above_1:.3e}")
    };
    println!("{statement}");
    out.json(
        "recurrent.json",
        &serde_json::json!({
            "statement": statement,
            "mass_q1_above_1": mass_q1_above_1,
            "tolerance": solver.recurrence_tol,
            "states": recurrent.iter().map(|(q0, q1, s_mm, s_sub6)| [*q0, *q1, usize::from(*s_mm), usize::from(*s_sub6)]).collect::<Vec<_>>(),
        }),
    )?;
    if model.variant() == Variant::MmwaveBuffer {
        checks.push(Check::new("no_recurrent_q1_above_1", mass_q1_above_1 < solver.recurrence_tol, statement));
    }

    if exp.config.experiment == ExperimentId::A {
        let structure = policy_structure(&model, &sol.rvi_policy);
        out.json("structure.json", &structure)?;
        checks.push(Check::new(
            "policy_structure",
            structure.passed(),
            format!(
                "{} sub-6-busy, {} both-busy, {} threshold violations",
                structure.sub6_busy.len(),
                structure.both_busy.len(),
                structure.threshold.len()
            ),
        ));
        let rows = compare_with_reference(&model, &sol.rvi_policy, &ReferenceTable::bundled_a());
        let mut w = csv::Writer::from_writer(out.file("reference_rows.csv")?);
        w.write_record(["row", "description", "expected", "states", "mismatches", "first_mismatch"])?;
        for r in &rows {
            let first = r.mismatches.first().map(|(s, c, a)| format!("{s} {c} -> {a}")).unwrap_or_default();
            w.write_record([r.row.to_string(), r.description.clone(), r.expected.clone(), r.states.to_string(), r.mismatches.len().to_string(), first])?;
        }
        w.flush()?;
        let matched = rows.iter().filter(|r| r.states > 0 && r.matches()).count();
        let applicable = rows.iter().filter(|r| r.states > 0).count();
        println!("reference rows matched: {matched}/{applicable}");
    }
    report_checks(&checks);
    out.finish("solve", &exp, &checks)
}

fn qtable_header(env: &ModelEnv, exp: &Experiment) -> QTableHeader {
    QTableHeader {
        version: env!("CARGO_PKG_VERSION").to_string(),
        info_level: env.level(),
        config: exp.config.learning.clone(),
        seed: exp.config.learning.seed,
    }
}

fn rate_model(exp: &Experiment, rate: Option<f64>) -> Result<(SystemModel, f64)> {
    let base = model_of(exp)?;
    let rate = match rate {
        Some(r) => r,
        None => base.mu_sub6(0),
    };
    let model = base.with_sub6_rate(rate).map_err(config_problem)?;
    Ok((model, rate))
}

pub fn learn(common: &Common, rate: Option<f64>, steps: Option<u64>) -> Result<bool> {
    let mut exp = load_experiment(common, Bundled::B)?;
    if let Some(n) = steps {
        exp.config.learning.steps = n;
    }
    exp.config.learning.validate().map_err(config_problem)?;
    let (model, rate) = rate_model(&exp, rate)?;
    let level = exp.config.sweep.learner_info;
    let mut out = OutDir::create(&common.out)?;
    let mut env = ModelEnv::new(&model, level, &exp.config.learning)?;
    let header = qtable_header(&env, &exp);
    let training = train(&mut env, &exp.config.learning);
    let training = match training {
        Ok(t) => t,
        Err(e) => {
            let checks = [Check::new("divergence_guard", false, e.to_string())];
            report_checks(&checks);
            return out.finish("learn", &exp, &checks);
        }
    };
    let doc = training.table.to_doc(&env, header);
    let mut f = out.file("qtable.json")?;
    write_qtable(&doc, &mut f)?;
    f.flush()?;

    let mut w = csv::Writer::from_writer(out.file("convergence.csv")?);
    for entry in &training.log {
        w.serialize(entry)?;
    }
    w.flush()?;

    let learned = LearnedPolicy::from_table(&training.table, &model, level, "q-learning")?;
    let table = tabulate(&learned, &model, level);
    table.write_csv(&model, out.file("learned_policy.csv")?)?;
    let unvisited = learned.flagged().iter().filter(|f| **f).count();
    let kernel = dualsched::build_kernel(&model)?;
    let evaluation = policy_evaluation(&kernel, table.dists(), &model.cost_vector());
    let (avg_occupancy, evaluation_note) = match &evaluation {
        Ok(e) => (Some(e.avg_cost), None),
        Err(e) => (None, Some(e.to_string())),
    };
    out.json(
        "learn_summary.json",
        &serde_json::json!({
            "sub6_rate": rate,
            "steps": exp.config.learning.steps,
            "observations": training.table.len(),
            "unvisited_observations": unvisited,
            "exact_mean_occupancy": avg_occupancy,
            "exact_mean_delay_s": avg_occupancy.map(|l| l / model.config.lambda),
            "evaluation_error": evaluation_note,
        }),
    )?;
    match avg_occupancy {
        Some(l) => println!("rate {rate}: learned policy L = {l:.5} (exact), {unvisited} unvisited observations"),
        None => println!("rate {rate}: learned policy could not be evaluated exactly: {}", evaluation_note.unwrap_or_default()),
    }
    let last = training.log.last().map_or(0.0, |e| e.max_delta);
    let checks = [Check::new("divergence_guard", true, format!("{} steps, final window max |dQ| = {last:.3e}", exp.config.learning.steps))];
    report_checks(&checks);
    out.finish("learn", &exp, &checks)
}

fn load_cached_table(path: &Path, env: &ModelEnv, exp: &Experiment) -> Option<QTable> {
    let doc = read_qtable(BufReader::new(File::open(path).ok()?)).ok()?;
    let same = doc.header.info_level == env.level() && serde_json::to_value(&doc.header.config).ok()? == serde_json::to_value(&exp.config.learning).ok()?;
    if !same {
        return None;
    }
    QTable::from_doc(&doc, env).ok()
}

#[derive(Serialize)]
struct ChannelStats {
    stationary_link_law: [f64; 3],
    mean_departure_ms: f64,
    reference_ms: Option<f64>,
    relative_difference: Option<f64>,
}

fn channel_stats(exp: &Experiment) -> Option<Result<ChannelStats>> {
    let ChannelSpec::TwoLayer { model, .. } = &exp.channel else { return None };
    let MmwaveRates::MeanDeparture { mean_departure_ms } = &exp.rates.mmwave else { return None };
    Some((|| {
        let (law, mean) = link_weighted_mean(model.link_kernel(), mean_departure_ms)?;
        let reference = exp.config.sweep.reference_mean_departure_ms;
        Ok(ChannelStats {
            stationary_link_law: law,
            mean_departure_ms: mean,
            reference_ms: reference,
            relative_difference: reference.map(|r| (mean - r) / r),
        })
    })())
}

pub fn sweep(common: &Common, rates: Option<Vec<f64>>, steps: Option<u64>) -> Result<bool> {
    let mut exp = load_experiment(common, Bundled::B)?;
    if let Some(n) = steps {
        exp.config.learning.steps = n;
    }
    if let Some(r) = rates {
        exp.config.sweep.sub6_rates = r;
    }
    exp.config.learning.validate().map_err(config_problem)?;
    if exp.config.sweep.sub6_rates.is_empty() {
        return Err(config_problem("no sub-6 rates to sweep"));
    }
    if exp.config.sweep.thetas.is_empty() {
        return Err(config_problem("no candidate thresholds"));
    }
    let base = model_of(&exp)?;
    let sweep_cfg = exp.config.sweep.clone();
    let mut out = OutDir::create(&common.out)?;
    let mut checks = Vec::new();

    if let Some(stats) = channel_stats(&exp) {
        let stats = stats?;
        println!("stationary mean mmWave departure time {:.3} ms", stats.mean_departure_ms);
        if let (Some(r), Some(d)) = (stats.reference_ms, stats.relative_difference) {
            checks.push(Check::new(
                "channel_mean_departure",
                d.abs() <= 0.05,
                format!("{:.3} ms vs reference {r} ms ({:+.2}%)", stats.mean_departure_ms, 100.0 * d),
            ));
        }
        out.json("channel_stats.json", &stats)?;
    }

    let mut results: Vec<RateComparison> = Vec::new();
    for &rate in &sweep_cfg.sub6_rates {
        let model = base.with_sub6_rate(rate).map_err(config_problem)?;
        let mut env = ModelEnv::new(&model, sweep_cfg.learner_info, &exp.config.learning)?;
        let name = format!("qtable_rate_{rate}.json");
        let path = out.path(&name);
        let table = match load_cached_table(&path, &env, &exp) {
            Some(t) => {
                println!("rate {rate}: reusing {name}");
                t
            }
            None => {
                let header = qtable_header(&env, &exp);
                let t = train(&mut env, &exp.config.learning)?.table;
                let mut f = out.file(&name)?;
                write_qtable(&t.to_doc(&env, header), &mut f)?;
                f.flush()?;
                t
            }
        };
        let c = compare(&model, rate, &table, &sweep_cfg, &exp.config.sim)?;
        println!(
            "rate {rate}: learned {:.3} ms, threshold(theta={}) {:.3} ms, diff {:+.3} ms, upper {:+.3} ms",
            1e3 * c.learned.mean_delay_s,
            c.theta,
            1e3 * c.threshold.mean_delay_s,
            1e3 * c.mean_diff_s,
            1e3 * c.upper_diff_s
        );
        checks.push(Check::new(
            format!("learned_not_slower_rate_{rate}"),
            c.learned_wins(),
            format!("95% upper bound of learned - threshold delay: {:+.4} ms", 1e3 * c.upper_diff_s),
        ));
        results.push(c);
    }

    let mut w = csv::Writer::from_writer(out.file("comparison.csv")?);
    w.write_record([
        "sub6_rate",
        "theta",
        "learned_delay_s",
        "learned_ci_halfwidth",
        "threshold_delay_s",
        "threshold_ci_halfwidth",
        "mean_diff_s",
        "upper_diff_s",
        "unvisited",
        "learned_not_slower",
    ])?;
    for c in &results {
        w.write_record([
            c.sub6_rate.to_string(),
            c.theta.to_string(),
            format!("{:e}", c.learned.mean_delay_s),
            format!("{:e}", c.learned.ci_halfwidth),
            format!("{:e}", c.threshold.mean_delay_s),
            format!("{:e}", c.threshold.ci_halfwidth),
            format!("{:e}", c.mean_diff_s),
            format!("{:e}", c.upper_diff_s),
            c.unvisited.to_string(),
            c.learned_wins().to_string(),
        ])?;
    }
    w.flush()?;

    let rows: Vec<Metrics> = results.iter().flat_map(|c| [c.learned.clone(), c.threshold.clone()]).collect();
    write_metrics_csv(&rows, out.file("sweep.csv")?)?;

    let mut w = csv::Writer::from_writer(out.file("theta_tuning.csv")?);
    w.write_record(["sub6_rate", "theta", "mean_delay_s"])?;
    for c in &results {
        for (theta, d) in &c.theta_scores {
            w.write_record([c.sub6_rate.to_string(), theta.to_string(), format!("{d:e}")])?;
        }
    }
    w.flush()?;

    report_checks(&checks);
    out.finish("sweep", &exp, &checks)
}

enum PolicyChoice {
    Optimal,
    Threshold(usize),
    Sub6Only,
    QTable(String),
}

fn parse_policy(spec: &str) -> Result<PolicyChoice> {
    Ok(match spec {
        "optimal" => PolicyChoice::Optimal,
        "sub6-only" => PolicyChoice::Sub6Only,
        _ => match spec.split_once(':') {
            Some(("threshold", n)) => {
                let theta: usize = n.parse().map_err(|_| config_problem(format!("bad threshold in {spec:?}")))?;
                if theta == 0 {
                    return Err(config_problem("threshold must be at least 1"));
                }
                PolicyChoice::Threshold(theta)
            }
            Some(("qtable", path)) => PolicyChoice::QTable(path.to_string()),
            _ => return Err(config_problem(format!("unknown policy {spec:?}; use optimal, threshold:N, sub6-only or qtable:PATH"))),
        },
    })
}

pub fn simulate(common: &Common, policy: &str, horizon: Option<u64>, trace: Option<usize>) -> Result<bool> {
    let choice = parse_policy(policy)?;
    let mut exp = load_experiment(common, Bundled::B)?;
    if let Some(h) = horizon {
        if h <= exp.config.sim.warmup {
            return Err(config_problem(format!("--horizon {h} must exceed the warmup of {} slots", exp.config.sim.warmup)));
        }
        exp.config.sim.horizon = h;
    }
    exp.config.sim.trace_len = trace.unwrap_or(0);
    let model = model_of(&exp)?;
    let mut out = OutDir::create(&common.out)?;
    let mut checks = Vec::new();
    let mut cfg = exp.config.sim.clone();

    let mut exact = None;
    let policy: Box<dyn SchedulingPolicy> = match choice {
        PolicyChoice::Optimal => {
            let sol = solve_exact(&model, &exp.config.solver)?;
            exact = Some(sol.lp.avg_cost);
            cfg.info = InfoLevel::FullCsi;
            Box::new(sol.rvi_policy.with_label("optimal"))
        }
        PolicyChoice::Threshold(theta) => Box::new(threshold_policy(theta, &model)),
        PolicyChoice::Sub6Only => Box::new(Sub6OnlyPolicy),
        PolicyChoice::QTable(path) => {
            let file = File::open(&path).map_err(|e| config_problem(format!("{path}: {e}")))?;
            let doc = read_qtable(BufReader::new(file)).map_err(|e| config_problem(format!("{path}: {e}")))?;
            let env = ModelEnv::new(&model, doc.header.info_level, &exp.config.learning)?;
            let table = QTable::from_doc(&doc, &env).map_err(|e| config_problem(format!("{path}: {e}")))?;
            cfg.info = doc.header.info_level;
            Box::new(LearnedPolicy::from_table(&table, &model, doc.header.info_level, "q-learning")?)
        }
    };
    let (metrics, trace_rows) = run(&model, policy.as_ref(), &cfg)?;
    println!(
        "{}: L = {:.5}, W = {:.4} ms +- {:.4} ms, {} drops, {} fallbacks",
        metrics.policy,
        metrics.mean_occupancy,
        1e3 * metrics.mean_delay_s,
        1e3 * metrics.ci_halfwidth,
        metrics.drops,
        metrics.fallbacks
    );
    write_metrics_csv(std::slice::from_ref(&metrics), out.file("metrics.csv")?)?;
    let mut w = csv::Writer::from_writer(out.file("replications.csv")?);
    w.write_record(["replication", "slots", "mean_occupancy", "arrivals", "drops", "lambda_eff", "mean_delay_s", "tagged_delay_s", "tagged_packets", "fallbacks"])?;
    for (i, r) in metrics.replications.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.slots.to_string(),
            r.mean_occupancy.to_string(),
            r.arrivals.to_string(),
            r.drops.to_string(),
            r.lambda_eff.to_string(),
            format!("{:e}", r.mean_delay_s),
            format!("{:e}", r.tagged_delay_s),
            r.tagged_packets.to_string(),
            r.fallbacks.to_string(),
        ])?;
    }
    w.flush()?;
    if trace.is_some() {
        write_trace_csv(&trace_rows, out.file("trace.csv")?)?;
    }
    if let Some(g) = exact {
        let rel = (metrics.mean_occupancy - g).abs() / g;
        checks.push(Check::new("simulated_vs_exact_occupancy", rel <= 0.02, format!("simulated {:.5} vs exact {g:.5} ({:.2}%)", metrics.mean_occupancy, 100.0 * rel)));
    }
    checks.push(Check::new("not_saturated", !metrics.saturated, format!("mean occupancy {:.4}", metrics.mean_occupancy)));
    report_checks(&checks);
    out.finish("simulate", &exp, &checks)
}

const COMMANDS: [&str; 4] = ["solve", "learn", "sweep", "simulate"];

pub fn report(common: &Common) -> Result<bool> {
    let dir = &common.out;
    let mut found = BTreeMap::new();
    let mut missing = Vec::new();
    for cmd in COMMANDS {
        let path = dir.join(format!("checks_{cmd}.json"));
        if path.exists() {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let checks: Vec<Check> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            found.insert(cmd, checks);
        } else {
            missing.push(path.display().to_string());
        }
    }
    if found.is_empty() {
        return Err(config_problem(format!("no check files found; missing: {}", missing.join(", "))));
    }

    let mut md = String::from("# Run report\n\n");
    md.push_str(&format!("Output directory: `{}`\n\n", dir.display()));
    let mut all = true;
    for (cmd, checks) in &found {
        md.push_str(&format!("## {cmd}\n\n| check | result | detail |\n|---|---|---|\n"));
        for c in checks {
            all &= c.passed;
            md.push_str(&format!("| {} | {} | {} |\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail));
        }
        md.push('\n');
    }
    if let Some(table) = csv_as_markdown(&dir.join("comparison.csv"))? {
        md.push_str("## Learned policy against the best threshold\n\n");
        md.push_str(&table);
        md.push('\n');
    }
    if let Some(table) = csv_as_markdown(&dir.join("reference_rows.csv"))? {
        md.push_str("## Optimal policy against the reference rows\n\n");
        md.push_str(&table);
        md.push('\n');
    }
    if !missing.is_empty() {
        md.push_str("## Not run\n\n");
        for m in &missing {
            md.push_str(&format!("- `{m}`\n"));
        }
        md.push('\n');
    }
    md.push_str(if all { "All checks passed.\n" } else { "Some checks failed.\n" });
    fs::write(dir.join("report.md"), &md).with_context(|| format!("writing {}", dir.join("report.md").display()))?;
    for (cmd, checks) in &found {
        for c in checks.iter().filter(|c| !c.passed) {
            println!("FAIL {cmd}/{}: {}", c.name, c.detail);
        }
    }
    println!("{}", if all { "all checks passed" } else { "some checks failed" });
    Ok(all)
}

fn csv_as_markdown(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() {
        bail!("{} has no header", path.display());
    }
    let mut s = format!("| {} |\n|{}\n", headers.join(" | "), "---|".repeat(headers.len()));
    for rec in r.records() {
        let rec = rec?;
        s.push_str(&format!("| {} |\n", rec.iter().collect::<Vec<_>>().join(" | ")));
    }
    Ok(Some(s))
}

fn report_checks(checks: &[Check]) {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}
