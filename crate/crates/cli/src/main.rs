use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Arg, ArgAction, ArgMatches, Command};

use redistnet_core::adversary::Generator;
use redistnet_core::config::{parse_pairs, ConfigBuilder, Objective, TrainConfig, KEYS};
use redistnet_core::evaluation::{build_test_set, compare_with_baselines, default_test_size, evaluate, EvalReport};
use redistnet_core::features::FeatureMap;
use redistnet_core::nn::{gradcheck, load_checkpoint, CheckpointMeta, Role};
use redistnet_core::priors::Prior;
use redistnet_core::rng::{self, Stream};
use redistnet_core::training;
use redistnet_core::{Error, NeuralH};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

fn config_flags(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("config").long("config").short('c').value_name("FILE").help("key = value config file"))
        .arg(Arg::new("out").long("out").short('o').value_name("DIR").required(true).help("run directory to create"));
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        let long: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        cmd.arg(Arg::new(*key).long(long).value_name("VALUE").help(*help))
    })
}

fn cli() -> Command {
    Command::new("redistnet")
        .about("Train and audit neural redistribution mechanisms for the public project problem")
        .subcommand_required(true)
        .subcommand(config_flags(Command::new("train").about("Train a mechanism; flags override config keys")))
        .subcommand(
            config_flags(Command::new("contrast").about("Train on random profiles only, then audit with a trained adversary"))
                .arg(Arg::new("size").long("size").value_name("N").default_value("20000").help("profiles per audit set")),
        )
        .subcommand(
            Command::new("eval")
                .about("Evaluate a checkpoint on a fresh test set")
                .arg(Arg::new("run").long("run").value_name("DIR").help("run directory (uses its model, adversary and config)"))
                .arg(Arg::new("model").long("model").value_name("FILE").help("h checkpoint"))
                .arg(Arg::new("generator").long("generator").value_name("FILE").help("adversary checkpoint for half the test set"))
                .arg(Arg::new("size").long("size").value_name("N").help("test-set size (default: per-n table)"))
                .arg(Arg::new("tolerance").long("tolerance").value_name("REL").help("relative violation tolerance (default 1e-3)"))
                .arg(
                    Arg::new("prior")
                        .long("prior")
                        .value_name("PRIOR")
                        .action(ArgAction::Append)
                        .help("test prior; repeat for one report per prior"),
                )
                .arg(Arg::new("seed").long("seed").value_name("SEED").help("test-set seed (default: the model's seed)"))
                .arg(Arg::new("out").long("out").value_name("DIR").help("report directory (default: the run directory or .)")),
        )
        .subcommand(
            Command::new("compare")
                .about("Print published baselines next to an evaluation")
                .arg(Arg::new("run").long("run").value_name("DIR").help("run directory with eval_report.json or train_report.json"))
                .arg(Arg::new("report").long("report").value_name("FILE").help("an eval_report.json"))
                .arg(Arg::new("objective").long("objective").value_name("OBJ").help("worstcase | expectation"))
                .arg(Arg::new("prior").long("prior").value_name("PRIOR").help("prior of the evaluation (default uniform)"))
                .arg(Arg::new("out").long("out").value_name("DIR").help("where to write comparison.txt/.csv")),
        )
        .subcommand(
            Command::new("gen-data")
                .about("Write sampled type profiles as CSV")
                .arg(Arg::new("n").long("n").value_name("N").required(true))
                .arg(Arg::new("prior").long("prior").value_name("PRIOR").default_value("uniform"))
                .arg(Arg::new("size").long("size").value_name("N").default_value("1000"))
                .arg(Arg::new("seed").long("seed").value_name("SEED").default_value("0"))
                .arg(Arg::new("generator").long("generator").value_name("FILE").help("adversary checkpoint for half the profiles"))
                .arg(Arg::new("out").long("out").value_name("FILE").help("output file (default stdout)")),
        )
        .subcommand(
            Command::new("grad-check")
                .about("Compare backward passes against central finite differences")
                .arg(Arg::new("seed").long("seed").value_name("SEED").default_value("0"))
                .arg(Arg::new("networks").long("networks").value_name("N").default_value("20"))
                .arg(Arg::new("inputs").long("inputs").value_name("N").default_value("10"))
                .arg(Arg::new("step").long("step").value_name("H").default_value("1e-5"))
                .arg(Arg::new("tolerance").long("tolerance").value_name("REL").default_value("1e-4")),
        )
}

fn get<T: std::str::FromStr>(m: &ArgMatches, key: &str) -> anyhow::Result<Option<T>> {
    m.get_one::<String>(key)
        .map(|s| s.trim().parse::<T>().map_err(|_| Error::Config { key: key.into(), reason: format!("cannot parse `{s}`") }.into()))
        .transpose()
}

fn load_config(m: &ArgMatches) -> anyhow::Result<TrainConfig> {
    let mut b = ConfigBuilder::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        for (k, v) in parse_pairs(&text)? {
            b.set(&k, &v)?;
        }
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            b.set(key, v)?;
        }
    }
    Ok(b.build()?)
}

fn write_eval(dir: &Path, stem: &str, report: &EvalReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
    let hist = if stem == "eval_report" { "histogram.csv".to_string() } else { format!("{stem}_histogram.csv") };
    fs::write(dir.join(hist), report.histogram.to_csv())?;
    Ok(())
}

fn cmd_train(m: &ArgMatches) -> anyhow::Result<u8> {
    let cfg = load_config(m)?;
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    let outcome = training::train(&cfg, Some(&out))?;
    write_eval(&out, "eval_report", &outcome.report.test)?;
    println!("{}", outcome.report.test.summary_line());
    Ok(0)
}

fn cmd_contrast(m: &ArgMatches) -> anyhow::Result<u8> {
    let cfg = load_config(m)?;
    let size: usize = get(m, "size")?.expect("defaulted");
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    let (_, report) = training::contrast(&cfg, size, Some(&out))?;
    print!("{}", report.to_text());
    Ok(0)
}

fn load_h(path: &Path) -> anyhow::Result<(NeuralH, CheckpointMeta)> {
    let (net, meta) = load_checkpoint(path)?;
    if meta.role != Role::H {
        bail!(Error::Checkpoint { path: path.into(), reason: "expected an h checkpoint, found an adversary".into() });
    }
    let map = FeatureMap::new(meta.features, meta.top_k, meta.n)?;
    Ok((NeuralH::new(net, map, meta.n)?, meta))
}

fn load_generator(path: &Path, n: usize) -> anyhow::Result<Generator> {
    let (net, meta) = load_checkpoint(path)?;
    if meta.role != Role::Adversary {
        bail!(Error::Checkpoint { path: path.into(), reason: "expected an adversary checkpoint".into() });
    }
    if meta.n != n {
        bail!(Error::Config { key: "generator".into(), reason: format!("generator is for n = {}, model for n = {n}", meta.n) });
    }
    Ok(Generator::from_net(net)?)
}

fn cmd_eval(m: &ArgMatches) -> anyhow::Result<u8> {
    let run = m.get_one::<String>("run").map(PathBuf::from);
    let run_cfg = match &run {
        Some(dir) => Some(TrainConfig::from_file(&dir.join("config.txt"))?),
        None => None,
    };
    let model = match (m.get_one::<String>("model"), &run) {
        (Some(p), _) => PathBuf::from(p),
        (None, Some(dir)) => dir.join("model.json"),
        (None, None) => bail!(Error::Config { key: "model".into(), reason: "pass --model or --run".into() }),
    };
    let (h, meta) = load_h(&model)?;
    let n = meta.n;
    if let Some(cfg) = &run_cfg {
        if cfg.n != n {
            bail!(Error::Config { key: "n".into(), reason: format!("run config has n = {}, checkpoint n = {n}", cfg.n) });
        }
    }
    let gen_path = match (m.get_one::<String>("generator"), &run) {
        (Some(p), _) => Some(PathBuf::from(p)),
        (None, Some(dir)) if dir.join("adversary.json").exists() => Some(dir.join("adversary.json")),
        _ => None,
    };
    let gen = gen_path.map(|p| load_generator(&p, n)).transpose()?;
    let size = get::<usize>(m, "size")?
        .or(run_cfg.as_ref().and_then(|c| c.test_size))
        .unwrap_or_else(|| default_test_size(n));
    let tolerance = get::<f64>(m, "tolerance")?.or(run_cfg.as_ref().map(|c| c.tolerance)).unwrap_or(1e-3);
    let seed = get::<u64>(m, "seed")?.unwrap_or(meta.seed);
    let priors: Vec<Prior> = match m.get_many::<String>("prior") {
        Some(ps) => ps.map(|p| p.parse()).collect::<Result<_, _>>()?,
        None => vec![meta.prior],
    };
    let out = m
        .get_one::<String>("out")
        .map(PathBuf::from)
        .or(run.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut code = 0;
    for (k, prior) in priors.iter().enumerate() {
        let set = build_test_set(n, prior, gen.as_ref(), size, &mut rng::stream(seed, Stream::Test))?;
        let report = evaluate(&h, &set, n, tolerance)?;
        let stem = if priors.len() == 1 { "eval_report".to_string() } else { format!("eval_report_{k}") };
        write_eval(&out, &stem, &report)?;
        if priors.len() > 1 {
            println!("prior={prior} {}", report.summary_line());
        } else {
            println!("{}", report.summary_line());
        }
        if report.infeasible {
            code = EXIT_INFEASIBLE;
        }
    }
    Ok(code)
}

fn cmd_compare(m: &ArgMatches) -> anyhow::Result<u8> {
    let run = m.get_one::<String>("run").map(PathBuf::from);
    let run_cfg = match &run {
        Some(dir) => Some(TrainConfig::from_file(&dir.join("config.txt"))?),
        None => None,
    };
    let report: EvalReport = match (m.get_one::<String>("report"), &run) {
        (Some(p), _) => serde_json::from_str(&fs::read_to_string(p)?)?,
        (None, Some(dir)) if dir.join("eval_report.json").exists() => {
            serde_json::from_str(&fs::read_to_string(dir.join("eval_report.json"))?)?
        }
        (None, Some(dir)) => {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("train_report.json"))?)?;
            serde_json::from_value(v.get("test").cloned().ok_or_else(|| anyhow!("train_report.json has no test report"))?)?
        }
        (None, None) => bail!(Error::Config { key: "report".into(), reason: "pass --report or --run".into() }),
    };
    let objective: Objective = match get(m, "objective")? {
        Some(o) => o,
        None => run_cfg.as_ref().map(|c| c.objective).ok_or_else(|| Error::Config {
            key: "objective".into(),
            reason: "needed when no run directory is given".into(),
        })?,
    };
    let prior: Prior = get(m, "prior")?.or(run_cfg.as_ref().map(|c| c.prior)).unwrap_or(Prior::Uniform01);
    let cmp = compare_with_baselines(&report, objective, &prior);
    print!("{}", cmp.to_text());
    if let Some(dir) = m.get_one::<String>("out").map(PathBuf::from).or(run) {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("comparison.txt"), cmp.to_text())?;
        fs::write(dir.join("comparison.csv"), cmp.to_csv())?;
    }
    Ok(0)
}

fn cmd_gen_data(m: &ArgMatches) -> anyhow::Result<u8> {
    let n: usize = get(m, "n")?.expect("required");
    let prior: Prior = get(m, "prior")?.expect("defaulted");
    let size: usize = get(m, "size")?.expect("defaulted");
    let seed: u64 = get(m, "seed")?.expect("defaulted");
    let gen = m.get_one::<String>("generator").map(|p| load_generator(Path::new(p), n)).transpose()?;
    let set = build_test_set(n, &prior, gen.as_ref(), size, &mut rng::stream(seed, Stream::Data))?;
    let mut csv = (0..n).map(|i| format!("theta{i}")).collect::<Vec<_>>().join(",");
    csv.push('\n');
    for p in &set {
        csv.push_str(&p.values().iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    match m.get_one::<String>("out") {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_grad_check(m: &ArgMatches) -> anyhow::Result<u8> {
    let seed: u64 = get(m, "seed")?.expect("defaulted");
    let nets: usize = get(m, "networks")?.expect("defaulted");
    let inputs: usize = get(m, "inputs")?.expect("defaulted");
    let step: f64 = get(m, "step")?.expect("defaulted");
    let tol: f64 = get(m, "tolerance")?.expect("defaulted");
    let report = gradcheck::random_suite(seed, nets, inputs, step)?;
    println!("checked={} max_rel_error={:.3e}", report.checked, report.max_rel_error);
    if report.passes(tol) {
        Ok(0)
    } else {
        eprintln!("gradient check failed: {:.3e} > {tol:e}", report.max_rel_error);
        Ok(EXIT_NUMERIC)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("contrast", m)) => cmd_contrast(m),
        Some(("eval", m)) => cmd_eval(m),
        Some(("compare", m)) => cmd_compare(m),
        Some(("gen-data", m)) => cmd_gen_data(m),
        Some(("grad-check", m)) => cmd_grad_check(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
