use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use spectrum_game::dp::NoiseControl;
use spectrum_game::equilibrium::{eta_budget, eta_budget_at_horizon};
use spectrum_game::learning::LearnerParams;
use spectrum_game::mediator::{collect_reports, opt_in_flags, realized_utilities, run_epoch};
use spectrum_game::sim::charts::render_charts;
use spectrum_game::sim::dynamics::MoveRule;
use spectrum_game::sim::experiments::{
    budget_params, default_horizons, default_user_sweep, experiment_channels, experiment_dynamics,
    experiment_optin, experiment_users, OptinRow,
};
use spectrum_game::sim::records::{write_records, Format, RunRecord, SimulateReport, Table};
use spectrum_game::sim::scenario::{gen_scenario, ScenarioSpec};
use spectrum_game::sim::verify::run_verification;

#[derive(Parser)]
#[command(name = "specshare", version, about = "Private mediated spectrum sharing simulator")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML scenario file; keys mirror the scenario fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the number of Monte Carlo runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Disables every privacy noise draw (testing only).
    #[arg(long, global = true)]
    no_noise: bool,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Also write an SVG chart next to the data.
    #[arg(long, global = true)]
    charts: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the approximation budget for the configured scenario.
    Bounds,
    /// Run one mediator epoch and write its suggestions.
    Simulate,
    /// Run one of the sweep experiments.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Run the quick property suites.
    Verify,
}

#[derive(Subcommand)]
enum Experiment {
    /// Budget versus number of users.
    Users,
    /// Per-channel budget versus number of channels.
    Channels {
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Opt-in versus opt-out utilities at several ratios.
    Optin {
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 0.8])]
        ratios: Vec<f64>,
    },
    /// Cell-selection dynamics.
    Dynamics {
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        move_prob: f64,
    },
}

fn load_spec(cli: &Cli) -> Result<ScenarioSpec> {
    let mut spec = match &cli.config {
        Some(path) => ScenarioSpec::load(path)?,
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(runs) = cli.runs {
        spec.runs = runs;
    }
    spec.validate()?;
    Ok(spec)
}

fn emit(cli: &Cli, record: &RunRecord) -> Result<()> {
    let mut files = write_records(record, &cli.out, cli.format.into())?;
    if cli.charts {
        files.extend(render_charts(record, &cli.out)?);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn bounds(spec: &ScenarioSpec) -> Result<()> {
    let p = budget_params(spec, spec.n, spec.k);
    let (b, learner) = match spec.horizon {
        Some(t) => (
            eta_budget_at_horizon(&p, t)?,
            LearnerParams::at_horizon(spec.k, t, spec.epsilon, spec.delta)?,
        ),
        None => {
            let b = eta_budget(&p)?;
            let l = LearnerParams::prescribed(spec.n, spec.k, p.gamma, b.e2, spec.epsilon, spec.delta)?;
            (b, l)
        }
    };
    println!("n        {}", spec.n);
    println!("k        {}", spec.k);
    println!("m        {}", spec.m);
    println!("gamma    {:.6}", p.gamma);
    println!("T*       {:.3}", b.horizon);
    println!("periods  {}", learner.horizon);
    println!("zeta     {:.6}", b.zeta);
    println!("alpha    {:.6}", b.alpha);
    println!("E1       {:.6}", b.e1);
    println!("E2       {:.6}", b.e2);
    println!("xi       {:.6}", b.xi);
    println!("eta      {:.6}", b.eta);
    Ok(())
}

fn simulate(cli: &Cli, spec: &ScenarioSpec) -> Result<()> {
    let sc = gen_scenario(spec)?;
    let flags = opt_in_flags(spec.n, spec.optin_ratio, spec.seed);
    let reports = collect_reports(&sc.submitted, &flags)?;
    let noise = NoiseControl {
        seed: spec.seed,
        enabled: !cli.no_noise,
    };
    let epoch = run_epoch(&sc.game, &reports, &spec.epoch_config(), noise)?;
    let utilities = realized_utilities(&sc.game, &sc.submitted, &epoch.suggestions)?;
    println!(
        "T={} eta={:.6} threshold={:.6} fallbacks={} total_epsilon={}",
        epoch.learner.horizon, epoch.budget.eta, epoch.threshold, epoch.fallbacks, epoch.privacy.total_epsilon
    );
    if let Some(r) = &epoch.regret {
        println!("max regret {:.6}", r.max);
    }
    emit(
        cli,
        &RunRecord {
            experiment: "simulate".into(),
            scenario: spec.clone(),
            noise: !cli.no_noise,
            table: Table::Simulate(Box::new(SimulateReport::from_epoch(&epoch, utilities))),
        },
    )
}

fn experiment(cli: &Cli, spec: &ScenarioSpec, which: &Experiment) -> Result<()> {
    let (name, table) = match which {
        Experiment::Users => (
            "users",
            Table::Users(experiment_users(spec, &default_user_sweep(), &default_horizons())?),
        ),
        Experiment::Channels { n } => (
            "channels",
            Table::Channels(experiment_channels(spec, &(5..=20).collect::<Vec<_>>(), &default_horizons(), *n)?),
        ),
        Experiment::Optin { ratios } => {
            let res = experiment_optin(spec, ratios, spec.runs, !cli.no_noise)?;
            let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
            for s in &res {
                println!(
                    "ratio {:.2}: opt-in {} opt-out {} gap {} p {}",
                    s.ratio_in,
                    show(s.mean_opt_in),
                    show(s.mean_opt_out),
                    show(s.gap),
                    show(s.p_value)
                );
            }
            ("optin", Table::Optin(res.iter().map(OptinRow::from).collect()))
        }
        Experiment::Dynamics { steps, move_prob } => {
            if !(0.0..=1.0).contains(move_prob) {
                bail!("--move-prob must lie in [0, 1]");
            }
            (
                "dynamics",
                Table::Dynamics(experiment_dynamics(spec, *steps, MoveRule { move_prob: *move_prob })?),
            )
        }
    };
    emit(
        cli,
        &RunRecord {
            experiment: name.into(),
            scenario: spec.clone(),
            noise: !cli.no_noise,
            table,
        },
    )
}

fn verify(seed: u64) -> Result<bool> {
    let mut ok = true;
    for c in run_verification(seed)? {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn run(cli: &Cli) -> Result<bool> {
    let spec = load_spec(cli).with_context(|| match &cli.config {
        Some(p) => format!("loading scenario from {}", p.display()),
        None => "building default scenario".into(),
    })?;
    match &cli.command {
        Command::Bounds => bounds(&spec)?,
        Command::Simulate => simulate(cli, &spec)?,
        Command::Experiment { which } => experiment(cli, &spec, which)?,
        Command::Verify => return verify(spec.seed),
    }
    Ok(true)
}

fn out_dir_is_usable(dir: &Path) -> bool {
    !dir.exists() || dir.is_dir()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if !out_dir_is_usable(&cli.out) {
        eprintln!("error: {} exists and is not a directory", cli.out.display());
        return ExitCode::from(2);
    }
    let start = Instant::now();
    let result = run(&cli);
    // wall-clock goes to the log only so written records stay reproducible
    info!("finished in {:.3}s", start.elapsed().as_secs_f64());
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
