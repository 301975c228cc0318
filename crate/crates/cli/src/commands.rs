use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::Rng;
use reluopt::experiments::production::{
    plan_violations, trained_instance, ProductionBounds, ProductionModel, SHALLOW_RISER,
    SHALLOW_WELL,
};
use reluopt::experiments::quadratic::surrogate_train_config;
use reluopt::experiments::{
    build_production_model, choose_alpha, gen_quadratic, field_topology, run_output_bound_study, solve_qn,
    surrogate_architecture, tighten_production, tiny_instance, ProductionInstance, ProductionTopology, StudyConfig,
};
use reluopt::net::{mape_with, ZeroTargetPolicy};
use reluopt::{
    he_initialize, rng, save_network, sgd_train, solve_milp, BtError, BtParams, BtScheme, EncodingStyle,
    ExperimentError, LabeledDataset, MilpStatus, SolveParams, TrainConfig,
};
use serde_json::{json, Value};

use crate::io::{parse_box, read_bounds, read_network, read_text, write_atomic};
use crate::{
    Command, Instance, ProductionArgs, SolveFlags, SolveQnArgs, Status, StudyArgs, Style, TightenArgs, TrainArgs,
    VerifyArgs,
};

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Train(a) => train(a),
        Command::Tighten(a) => tighten(a),
        Command::SolveQn(a) => solve_qn_cmd(a),
        Command::SolveProduction(a) => solve_production(a),
        Command::StudyOutputBounds(a) => study(a),
        Command::Verify(a) => verify(a),
    }
}

fn emit(out: Option<&Path>, doc: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match out {
        Some(p) => write_atomic(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn milp_status(status: MilpStatus) -> Status {
    match status {
        MilpStatus::Optimal => Status::Success,
        MilpStatus::Feasible => Status::LimitWithSolution,
        MilpStatus::Infeasible => Status::Infeasible,
        MilpStatus::BoundOnly => Status::LimitWithoutSolution,
    }
}

fn scheme(text: &str, sub_time_limit: Option<f64>) -> Result<BtScheme> {
    let s = text.parse::<BtScheme>()?;
    Ok(match sub_time_limit {
        Some(t) => s.with_time_limit(t)?,
        None => s,
    })
}

/// Puts the resolved run configuration at the top of a report object.
fn with_config(config: Value, report: Value) -> Value {
    let mut doc = serde_json::Map::new();
    doc.insert("config".into(), config);
    if let Value::Object(fields) = report {
        doc.extend(fields);
    }
    Value::Object(doc)
}

fn solve_params(flags: &SolveFlags) -> Result<SolveParams> {
    ensure(flags.gap >= 0.0, "--gap must be nonnegative")?;
    if let Some(t) = flags.time_limit {
        ensure(t >= 0.0, "--time-limit must be nonnegative")?;
    }
    Ok(SolveParams {
        time_limit_seconds: flags.time_limit,
        gap_tolerance: flags.gap,
        ..SolveParams::default()
    })
}

fn ensure(ok: bool, msg: &str) -> Result<()> {
    if !ok {
        bail!("{msg}");
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<Status> {
    let (dims, data, defaults) = match (a.quadratic, &a.dataset) {
        (Some(n), _) => {
            let (arch, samples) = surrogate_architecture(n)?;
            let dims = if a.dims.is_empty() { arch } else { a.dims.clone() };
            let spec = gen_quadratic(n, a.seed)?;
            (dims, spec.sample(samples, a.seed), surrogate_train_config(n, a.seed))
        }
        (None, Some(path)) => {
            ensure(a.dims.len() >= 2, "--dims needs at least an input and an output size")?;
            let file = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
            let data = LabeledDataset::from_csv(file, a.dims[0])?;
            (a.dims.clone(), data, TrainConfig::default())
        }
        (None, None) => bail!("give --data or --quadratic"),
    };
    ensure(dims[0] == data.input_dim(), "first layer size does not match the data")?;
    ensure(*dims.last().unwrap() == data.target_dim(), "last layer size does not match the data")?;
    let config = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        l2_lambda: a.l2,
        seed: a.seed,
        ..defaults
    };
    let net = sgd_train(&he_initialize(&dims, a.seed)?, &data, &config)?;
    write_atomic(&a.out, &save_network(&net))?;
    let mape = mape_with(&net, &data, ZeroTargetPolicy::Exclude)?;
    let source = match (&a.dataset, a.quadratic) {
        (Some(p), _) => json!({ "dataset": p }),
        (None, n) => json!({ "quadratic": n, "seed": a.seed }),
    };
    let doc = json!({ "config": { "source": source, "dims": dims, "train": config }, "samples": data.len(), "mape": mape });
    match &a.report {
        Some(p) => emit(Some(p), &doc)?,
        None => eprintln!("trained {dims:?} on {} samples, MAPE {mape:.3}%", data.len()),
    }
    Ok(Status::Success)
}

fn tighten(a: TightenArgs) -> Result<Status> {
    let net = read_network(&a.net)?;
    let input = parse_box(&a.input_box, net.input_dim())?;
    let output = a.output_box.as_deref().map(|s| parse_box(s, net.output_dim())).transpose()?;
    let scheme = scheme(&a.scheme, a.sub_time_limit)?.with_rounds(a.rounds)?;
    match reluopt::tighten(&net, &input, output.as_deref(), &scheme, &BtParams::default()) {
        Ok(r) => {
            write_atomic(&a.out, &r.bounds.to_json())?;
            let config = json!({ "net": a.net, "input_box": input, "output_box": output, "scheme": scheme.to_string(), "rounds": a.rounds });
            let doc = with_config(config, serde_json::to_value(&r)?);
            match &a.report {
                Some(p) => emit(Some(p), &doc)?,
                None => eprintln!("{scheme}: MAD {:.6}, {:.3}s, {} subproblem timeouts", r.mad, r.total_time, r.subproblem_timeouts),
            }
            Ok(Status::Success)
        }
        Err(e @ BtError::Infeasible { .. }) => {
            eprintln!("{e}");
            Ok(Status::Infeasible)
        }
        Err(e) => Err(e.into()),
    }
}

fn solve_qn_cmd(a: SolveQnArgs) -> Result<Status> {
    let net1 = read_network(&a.net1)?;
    let net2 = read_network(&a.net2)?;
    ensure(net1.output_dim() == 1 && net2.output_dim() == 1, "both networks need a single output")?;
    ensure(net1.input_dim() == net2.input_dim(), "the networks must share their input dimension")?;
    let alpha = match a.alpha {
        Some(v) => v,
        None => choose_alpha(&net2, a.alpha_samples, a.seed)?,
    };
    let scheme = scheme(&a.scheme, a.solve.sub_time_limit)?;
    let params = solve_params(&a.solve)?;
    let outcome = solve_qn(&net1, &net2, alpha, &scheme, &BtParams::default(), &params)?;
    let config = json!({
        "net1": a.net1,
        "net2": a.net2,
        "alpha": alpha,
        "alpha_from_samples": a.alpha.is_none().then_some(a.alpha_samples),
        "seed": a.seed,
        "scheme": scheme.to_string(),
        "solve": params,
    });
    emit(a.out.as_deref(), &with_config(config, serde_json::to_value(&outcome)?))?;
    Ok(milp_status(outcome.status))
}

fn load_instance(a: &ProductionArgs) -> Result<ProductionInstance> {
    let inst = match &a.topology {
        Some(path) => {
            let topology: ProductionTopology =
                serde_json::from_str(&read_text(path)?).with_context(|| format!("bad topology file {}", path.display()))?;
            let nets = |paths: &[std::path::PathBuf]| paths.iter().map(|p| read_network(p)).collect::<Result<Vec<_>>>();
            ProductionInstance {
                topology,
                well_nets: nets(&a.well_nets)?,
                riser_nets: nets(&a.riser_nets)?,
            }
        }
        None => match a.instance {
            Instance::Tiny => tiny_instance(),
            Instance::Field => {
                let config = TrainConfig {
                    epochs: 300,
                    batch_size: 32,
                    learning_rate: 0.01,
                    ..TrainConfig::default()
                };
                trained_instance(field_topology(), &SHALLOW_WELL, &SHALLOW_RISER, a.seed, &config)?
            }
        },
    };
    inst.validate()?;
    Ok(inst)
}

fn solve_production(a: ProductionArgs) -> Result<Status> {
    let inst = load_instance(&a)?;
    let params = solve_params(&a.solve)?;
    let style = match a.style {
        Style::Compact => EncodingStyle::Compact,
        Style::Full => EncodingStyle::Full,
    };
    let scheme = scheme(&a.scheme, a.solve.sub_time_limit)?;
    let config = json!({
        "instance": match &a.topology {
            Some(p) => json!({ "topology": p, "well_nets": a.well_nets, "riser_nets": a.riser_nets }),
            None => json!(format!("{:?}", a.instance).to_lowercase()),
        },
        "seed": a.seed,
        "scheme": scheme.to_string(),
        "style": format!("{:?}", a.style).to_lowercase(),
        "solve": params,
    });
    let bounds: ProductionBounds = match tighten_production(&inst, &scheme, &BtParams::default()) {
        Ok(b) => b,
        Err(ExperimentError::Bt(e @ BtError::Infeasible { .. })) => {
            eprintln!("{e}");
            emit(a.out.as_deref(), &with_config(config, json!({ "status": MilpStatus::Infeasible })))?;
            return Ok(Status::Infeasible);
        }
        Err(e) => return Err(e.into()),
    };
    let bt_seconds: f64 = bounds.reports.iter().map(|r| r.total_time).sum();
    let pm: ProductionModel = build_production_model(&inst, &bounds, style)?;
    let r = solve_milp(&pm.model, &params)?;
    let plan = match &r.incumbent {
        Some(x) => {
            let plan = pm.plan(&inst.topology, x)?;
            let v = plan_violations(&inst, &plan)?;
            Some(json!({ "plan": plan, "violations": { "balance": v.balance, "max_open_per_well": v.max_open_per_well, "riser": v.riser } }))
        }
        None => None,
    };
    let doc = json!({
        "status": r.status,
        "objective": r.objective_value,
        "best_bound": r.best_bound,
        "gap": r.gap,
        "nodes": r.node_count,
        "binaries": pm.model.binaries().len(),
        "bt_seconds": bt_seconds,
        "opt_seconds": r.wall_time,
        "solution": plan,
    });
    emit(a.out.as_deref(), &with_config(config, doc))?;
    Ok(milp_status(r.status))
}

fn study(a: StudyArgs) -> Result<Status> {
    let config: StudyConfig = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("bad study config {}", p.display()))?,
        None => StudyConfig::default(),
    };
    config.parsed_schemes()?;
    let report = run_output_bound_study(&config)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    write_atomic(&a.out_dir.join("mad.csv"), &report.mad_csv()?)?;
    write_atomic(&a.out_dir.join("ratios.csv"), &report.ratio_csv()?)?;
    write_atomic(&a.out_dir.join("timing.csv"), &report.timing_csv()?)?;
    write_atomic(&a.out_dir.join("config.json"), &(serde_json::to_string_pretty(&config)? + "\n"))?;
    for (s, ratio) in report.ratios() {
        eprintln!("{s:>8}  {ratio:7.2}");
    }
    Ok(Status::Success)
}

fn verify(a: VerifyArgs) -> Result<Status> {
    let net = read_network(&a.net)?;
    let bounds = read_bounds(&a.bounds)?;
    bounds.check_dims(&net)?;
    let input: Vec<(f64, f64)> = bounds.lower[0].iter().copied().zip(bounds.upper[0].iter().copied()).collect();
    ensure(input.iter().all(|(l, u)| l.is_finite() && u.is_finite()), "the input bounds must be finite")?;
    let output = a.output_box.as_deref().map(|s| parse_box(s, net.output_dim())).transpose()?;
    let mut r = rng::stream(a.seed, "verify");
    let (mut checked, mut rejected, mut violations) = (0usize, 0usize, Vec::new());
    for _ in 0..a.samples {
        let x: Vec<f64> = input.iter().map(|&(l, u)| r.random_range(l..=u)).collect();
        let trace = net.forward_trace(&x)?;
        if let Some(e) = &output {
            if trace.output().iter().zip(e).any(|(&y, &(l, u))| y < l || y > u) {
                rejected += 1;
                continue;
            }
        }
        checked += 1;
        if let Some((node, value)) = bounds.violation(&trace, a.tolerance) {
            let (l, u) = bounds.get(node);
            violations.push(json!({ "layer": node.layer, "node": node.index, "value": value, "lower": l, "upper": u, "input": x }));
        }
    }
    let config = json!({
        "net": a.net,
        "bounds": a.bounds,
        "samples": a.samples,
        "output_box": output,
        "tolerance": a.tolerance,
        "seed": a.seed,
    });
    let doc = json!({ "checked": checked, "rejected": rejected, "violations": violations });
    emit(None, &with_config(config, doc))?;
    Ok(if violations.is_empty() { Status::Success } else { Status::Infeasible })
}
