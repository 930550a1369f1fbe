use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mcast_core::centralized::{solution_to_json, solve_cp};
use mcast_core::equilibrium::{
    a4_desk_instance, br_dynamics, certify_instance, construct_ne, default_epsilon, trajectory_csv,
    CertifyAttempt, CurvatureReport, LemmaReport, PipelineOptions, Settled, ShrinkStep,
};
use mcast_core::mechanism::{
    evaluate, outcome_to_json, profile_from_json, profile_to_json, MechanismParams, MessageProfile,
    Variant,
};
use mcast_core::model::{instance_from_json, validate, NetworkInstance};
use mcast_core::parallel::Exec;
use serde::Serialize;

use crate::args::{
    CertifyArgs, Command, DynamicsArgs, EvaluateArgs, MechanismArgs, SearchArgs, SolveArgs,
    StartArg,
};
use crate::error::{CliError, Kind};
use crate::output::{pretty, Out};

pub fn run(command: &Command, out: &mut Out) -> Result<(), CliError> {
    match command {
        Command::Solve(a) => solve(a, out),
        Command::Certify(a) => certify(a, out),
        Command::Dynamics(a) => dynamics(a, out),
        Command::Evaluate(a) => evaluate_profile(a, out),
    }
}

fn read(path: &Path, what: &str) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::new(
            Kind::Validation,
            format!("{what} file {} does not exist", path.display()),
        ));
    }
    fs::read_to_string(path)
        .map_err(|e| CliError::new(Kind::Io, format!("cannot read {}: {e}", path.display())))
}

fn load_instance(path: &Path) -> Result<NetworkInstance, CliError> {
    let instance = instance_from_json(&read(path, "instance")?)?;
    let report = validate(&instance);
    if !report.is_ok() {
        return Err(CliError::invalid_report(&report));
    }
    Ok(instance)
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::new(
            Kind::Validation,
            format!("--{name} must be positive, got {v}"),
        ))
    }
}

fn check_mechanism(m: &MechanismArgs) -> Result<MechanismParams, CliError> {
    positive("eta", m.eta)?;
    positive("xi", m.xi)?;
    positive("zeta", m.zeta)?;
    Ok(m.params())
}

fn check_search(s: &SearchArgs) -> Result<(), CliError> {
    if let Some(e) = s.epsilon {
        positive("epsilon", e)?;
    }
    if s.budget == 0 || s.restarts == 0 {
        return Err(CliError::new(
            Kind::Validation,
            "--budget and --restarts must be positive",
        ));
    }
    Ok(())
}

fn labelled<T: Copy>(instance: &NetworkInstance, values: &[T]) -> BTreeMap<String, T> {
    instance
        .agents()
        .iter()
        .zip(values)
        .map(|(a, &v)| (a.id.to_string(), v))
        .collect()
}

fn solve(a: &SolveArgs, out: &mut Out) -> Result<(), CliError> {
    let instance = load_instance(&a.instance)?;
    positive("tol", a.tol)?;
    let (primal, dual) = solve_cp(&instance, a.tol)?;
    out.write(
        "solution.json",
        &(solution_to_json(&instance, &primal, &dual) + "\n"),
    )?;
    for (agent, x) in instance.agents().iter().zip(&primal.x) {
        println!("x[{}] = {x}", agent.id);
    }
    let residual = dual.residuals.max_residual();
    if residual > a.tol {
        return Err(CliError::new(
            Kind::Numeric,
            format!("KKT residual {residual:e} exceeds tol {:e}", a.tol),
        ));
    }
    if a.require_a4 && !dual.residuals.a4.holds {
        return Err(
            CliError::new(Kind::A4, "A4 fails at the optimum").with_details(&dual.residuals.a4)
        );
    }
    Ok(())
}

/// Bounds each lemma entry must meet for a run to pass.
#[derive(Debug, Clone, Copy, Serialize)]
struct Thresholds {
    /// Equal and neighbour prices, dual feasibility, complementary
    /// slackness and stationarity.
    structural: f64,
    ir: f64,
    wbb: f64,
    sbb: f64,
    rho_consensus: f64,
}

const THRESHOLDS: Thresholds = Thresholds {
    structural: 1e-6,
    ir: 1e-12,
    wbb: 1e-12,
    sbb: 1e-9,
    rho_consensus: 1e-6,
};

impl Thresholds {
    fn failing(&self, l: &LemmaReport) -> Vec<&'static str> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("equal_prices", l.equal_prices),
            ("neighbour_prices", l.neighbour_prices),
            ("dual_feas", l.dual_feas),
            ("comp_slack", l.comp_slack),
            ("stationarity", l.stationarity),
        ] {
            if v > self.structural {
                bad.push(name);
            }
        }
        if l.ir > self.ir {
            bad.push("ir");
        }
        if l.wbb.is_some_and(|v| v > self.wbb) {
            bad.push("wbb");
        }
        if l.sbb.is_some_and(|v| v > self.sbb) {
            bad.push("sbb");
        }
        if l.rho_consensus.is_some_and(|v| v > self.rho_consensus) {
            bad.push("rho_consensus");
        }
        bad
    }
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    instance: String,
    agents: usize,
    links: usize,
    requested: MechanismParams,
    params: MechanismParams,
    epsilon: f64,
    certified: bool,
    passes: bool,
    failing_lemmas: Vec<&'static str>,
    gains: BTreeMap<String, f64>,
    evaluations: BTreeMap<String, usize>,
    /// Curvature halvings of the final attempt.
    shrink: &'a [ShrinkStep],
    attempts: &'a [CertifyAttempt],
    lemmas: &'a LemmaReport,
    thresholds: Thresholds,
    curvature: &'a CurvatureReport,
    allocation_error: f64,
    total_tax: f64,
    x: BTreeMap<String, f64>,
    x_star: BTreeMap<String, f64>,
}

impl<'a> CertifyReport<'a> {
    fn new(
        instance: &NetworkInstance,
        label: String,
        requested: MechanismParams,
        s: &'a Settled,
    ) -> Self {
        let failing_lemmas = THRESHOLDS.failing(&s.lemmas);
        let out = evaluate(instance, &s.candidate.profile, &s.candidate.params)
            .expect("certified profile evaluates");
        Self {
            instance: label,
            agents: instance.num_agents(),
            links: instance.num_links(),
            requested,
            params: s.candidate.params,
            epsilon: s.certification.epsilon,
            certified: s.certified(),
            passes: s.certified() && failing_lemmas.is_empty(),
            failing_lemmas,
            gains: labelled(instance, &s.certification.gains),
            evaluations: labelled(instance, &s.certification.evaluations),
            shrink: &s.shrink.steps,
            attempts: &s.attempts,
            lemmas: &s.lemmas,
            thresholds: THRESHOLDS,
            curvature: &s.shrink.curvature,
            allocation_error: s.allocation_error,
            total_tax: out.total_tax,
            x: labelled(instance, &out.allocation.x),
            x_star: labelled(instance, &s.primal.x),
        }
    }
}

fn pipeline_options(a: &CertifyArgs, exec: Exec) -> Result<PipelineOptions, CliError> {
    let params = check_mechanism(&a.mechanism)?;
    check_search(&a.search)?;
    positive("tol", a.tol)?;
    let mut opts = PipelineOptions::new(params.variant);
    opts.params = params;
    opts.tol = a.tol;
    opts.epsilon = a.search.epsilon;
    opts.search = a.search.options();
    opts.certify_retries = a.retries;
    opts.exec = exec;
    Ok(opts)
}

fn log_shrink(label: &str, s: &Settled) {
    for (i, step) in s.shrink.steps.iter().enumerate() {
        eprintln!(
            "{label}: shrink {i}: eta {:e} xi {:e} zeta {:e}: curvature {}",
            step.eta,
            step.xi,
            step.zeta,
            if step.passes { "passes" } else { "fails" }
        );
    }
}

fn certify(a: &CertifyArgs, out: &mut Out) -> Result<(), CliError> {
    match (&a.instance, a.seeds) {
        (Some(path), _) => certify_file(a, path, out),
        (None, Some(range)) => certify_sweep(a, &range.seeds(), out),
        (None, None) => unreachable!("clap requires one of --instance and --seeds"),
    }
}

fn certify_file(a: &CertifyArgs, path: &Path, out: &mut Out) -> Result<(), CliError> {
    let instance = load_instance(path)?;
    let opts = pipeline_options(a, Exec::Parallel)?;
    let s = certify_instance(&instance, &opts)?;
    let label = path.display().to_string();
    log_shrink(&label, &s);
    let report = CertifyReport::new(&instance, label, opts.params, &s);
    out.write_json("report.json", &report)?;
    out.write(
        "profile.json",
        &(profile_to_json(&instance, &s.candidate.profile) + "\n"),
    )?;
    println!(
        "certified {} max gain {:e} epsilon {:e}",
        report.certified,
        s.certification.max_gain(),
        report.epsilon
    );
    if !report.passes {
        return Err(
            CliError::new(Kind::Numeric, "candidate failed certification").with_details(
                serde_json::json!({
                    "certified": report.certified,
                    "failing_lemmas": report.failing_lemmas,
                }),
            ),
        );
    }
    Ok(())
}

struct SweepRow {
    seed: u64,
    redraws: usize,
    result: Result<(NetworkInstance, Settled), CliError>,
}

fn certify_sweep(a: &CertifyArgs, seeds: &[u64], out: &mut Out) -> Result<(), CliError> {
    let opts = pipeline_options(a, Exec::Sequential)?;
    let rows = Exec::Parallel.map(seeds.len(), |i| {
        let seed = seeds[i];
        match a4_desk_instance(seed, opts.tol) {
            Ok((instance, redraws)) => SweepRow {
                seed,
                redraws,
                result: certify_instance(&instance, &opts)
                    .map(|s| (instance, s))
                    .map_err(CliError::from),
            },
            Err(e) => SweepRow {
                seed,
                redraws: 0,
                result: Err(e.into()),
            },
        }
    });

    let sbb = opts.params.variant == Variant::Sbb;
    let mut csv = String::from(
        "seed,redraws,agents,links,eta,xi,zeta,shrink_steps,attempts,epsilon,max_gain,allocation_error,lemma_max,certified,passes",
    );
    if sbb {
        csv.push_str(",abs_sum_t");
    }
    csv.push_str(",error\n");
    let mut reports = Vec::new();
    let mut first_failure = None;
    let mut passed = 0;
    for row in &rows {
        match &row.result {
            Ok((instance, s)) => {
                let label = format!("desk seed {}", row.seed);
                log_shrink(&label, s);
                let report = CertifyReport::new(instance, label, opts.params, s);
                let p = s.candidate.params;
                let _ = write!(
                    csv,
                    "{},{},{},{},{:e},{:e},{:e},{},{},{:e},{:e},{:e},{:e},{},{}",
                    row.seed,
                    row.redraws,
                    instance.num_agents(),
                    instance.num_links(),
                    p.eta,
                    p.xi,
                    p.zeta,
                    s.shrink.steps.len(),
                    s.attempts.len(),
                    s.certification.epsilon,
                    s.certification.max_gain(),
                    s.allocation_error,
                    s.lemmas.max_violation(),
                    report.certified,
                    report.passes
                );
                if sbb {
                    let _ = write!(csv, ",{:e}", report.total_tax.abs());
                }
                csv.push_str(",\n");
                passed += usize::from(report.passes);
                if !report.passes && first_failure.is_none() {
                    first_failure = Some(CliError::new(
                        Kind::Numeric,
                        format!("seed {} failed certification", row.seed),
                    ));
                }
                reports.push(serde_json::to_value(&report).expect("report serialises"));
            }
            Err(e) => {
                let _ = write!(csv, "{},{},,,,,,,,,,,,false,false", row.seed, row.redraws);
                if sbb {
                    csv.push(',');
                }
                let _ = writeln!(csv, ",{}", serde_json::to_value(e.kind).expect("kind"));
                if first_failure.is_none() {
                    first_failure = Some(CliError {
                        message: format!("seed {}: {}", row.seed, e.message),
                        ..e.clone()
                    });
                }
                reports.push(serde_json::json!({ "seed": row.seed, "error": e }));
            }
        }
    }
    out.write("summary.csv", &csv)?;
    out.write("reports.json", &pretty(&reports))?;
    println!("{passed} of {} seeds pass", rows.len());
    first_failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct DynamicsSummary {
    rounds: usize,
    fixed_point: bool,
    epsilon: f64,
    final_max_gain: f64,
    all_feasible: bool,
}

fn dynamics(a: &DynamicsArgs, out: &mut Out) -> Result<(), CliError> {
    let instance = load_instance(&a.instance)?;
    let params = check_mechanism(&a.mechanism)?;
    check_search(&a.search)?;
    positive("tol", a.tol)?;
    let (primal, dual) = solve_cp(&instance, a.tol)?;
    let epsilon = a
        .search
        .epsilon
        .unwrap_or_else(|| default_epsilon(&instance, &primal));
    let start = match a.start {
        StartArg::Ne => construct_ne(&instance, &primal, &dual, &params)?.profile,
        StartArg::Zero => MessageProfile::zero(&instance, params.variant),
        StartArg::Profile => {
            let path = a.profile.as_ref().expect("clap requires --profile");
            profile_from_json(&instance, &read(path, "profile")?)?
        }
    };
    let trajectory = br_dynamics(
        &instance,
        &start,
        &params,
        a.schedule.into(),
        a.rounds,
        epsilon,
        &a.search.options(),
        Exec::Parallel,
    )?;
    out.write("trajectory.csv", &trajectory_csv(&instance, &trajectory))?;
    out.write(
        "final_profile.json",
        &(profile_to_json(&instance, &trajectory.profile) + "\n"),
    )?;
    let summary = DynamicsSummary {
        rounds: trajectory.rounds.len(),
        fixed_point: trajectory.fixed_point,
        epsilon,
        final_max_gain: trajectory.rounds.last().map_or(0.0, |r| r.max_gain),
        all_feasible: trajectory.rounds.iter().all(|r| r.feasible),
    };
    out.write_json("dynamics.json", &summary)?;
    println!(
        "{} rounds, fixed point {}",
        summary.rounds, summary.fixed_point
    );
    if !summary.all_feasible {
        return Err(CliError::new(
            Kind::Numeric,
            "a round produced an infeasible allocation",
        ));
    }
    Ok(())
}

fn evaluate_profile(a: &EvaluateArgs, out: &mut Out) -> Result<(), CliError> {
    let instance = load_instance(&a.instance)?;
    let params = check_mechanism(&a.mechanism)?;
    let profile = profile_from_json(&instance, &read(&a.profile, "profile")?)?;
    let outcome = evaluate(&instance, &profile, &params)?;
    out.write(
        "outcome.json",
        &(outcome_to_json(&instance, &outcome) + "\n"),
    )?;
    println!("total tax {:e}", outcome.total_tax);
    Ok(())
}
