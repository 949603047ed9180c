use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dtc_sensor::ensemble::{run_ensemble, sample_initial_state, sample_realization};
use dtc_sensor::experiments::{
    crossover_time_ac, fit_growth_exponent, run_sweep, staggered, thermalization_time,
};
use dtc_sensor::io::manifest::ManifestWriter;
use dtc_sensor::io::table::{format_float, sha256_hex};
use dtc_sensor::io::{emit_plot, emit_table, parse_config, preset, read_table, PlotKind, RunConfig, Table};
use dtc_sensor::qfi::{three_way_qfi, ORACLE_MAX_SPINS};
use dtc_sensor::{Error, Result};

const ORACLE_REL_TOL: f64 = 1e-3;
const ORACLE_ABS_FLOOR: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "dtc-sensor", version, about = "Kicked disordered spin chain as an AC-field sensor")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named preset; combined with --config, file keys override it.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Overrides ensemble.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the ensemble (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one ensemble and write its trajectory table.
    Run,
    /// Run the [sweep] section of the configuration.
    Sweep,
    /// Fit exponent, thermalization time or crossover on a trajectory CSV.
    Fit {
        input: PathBuf,
        /// Inclusive period window of the log-log fit.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        window: Option<Vec<usize>>,
        /// Threshold on the staggered magnetization.
        #[arg(long)]
        eps: Option<f64>,
        /// AC amplitude of the run, enables crossover detection.
        #[arg(long)]
        h_ac: Option<f64>,
    },
    /// Render a CSV table as an SVG plot.
    Plot {
        input: PathBuf,
        /// qfi_vs_time_loglog, magnetization_vs_time, qfi_vs_omega or dh_vs_time_loglog.
        #[arg(long)]
        kind: PlotKind,
    },
    /// Compare pair-state, fidelity and generator QFI on one small realization.
    Oracle {
        /// Realization index within the ensemble.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Number of periods compared (capped by drive.n_periods).
        #[arg(long, default_value_t = 20)]
        periods: usize,
        /// Finite-difference step of the fidelity estimate.
        #[arg(long, default_value_t = dtc_sensor::qfi::DEFAULT_FD_DELTA)]
        delta: f64,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), p) => parse_config(path, p.as_deref())?,
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::Config(
                "either --config or --preset is required".into(),
            ))
        }
    };
    if let Some(seed) = cli.seed {
        config.ensemble.master_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn workers(cli: &Cli) -> usize {
    cli.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn emit_recorded(writer: &mut ManifestWriter, file: &str, table: &Table) -> Result<()> {
    let path = writer.path(file);
    let digest = emit_table(table, &path)?;
    println!("wrote {} (sha256 {digest})", path.display());
    writer.record(file, digest);
    Ok(())
}

fn cmd_run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let workers = workers(cli);
    let mut writer = ManifestWriter::start(&out_dir(cli), "run", &config, workers)?;
    let stats = run_ensemble(&config.ensemble, &config.drive, workers)?;
    if stats.n_failed > 0 {
        log::warn!("{} of {} realizations excluded", stats.n_failed, config.ensemble.n_dis);
    }
    emit_recorded(&mut writer, "trajectory.csv", &Table::from_stats(&stats))?;
    writer.finish()?;
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let spec = config.sweep_spec()?;
    let workers = workers(cli);
    let mut writer = ManifestWriter::start(&out_dir(cli), "sweep", &config, workers)?;
    let table = run_sweep(&spec, workers)?;
    let failed = table.points.iter().filter(|p| p.outcome.is_err()).count();
    emit_recorded(&mut writer, "sweep.csv", &Table::from_sweep(&table))?;
    writer.finish()?;
    if failed > 0 {
        return Err(Error::Ensemble {
            failed,
            total: table.points.len(),
            first: "sweep points failed; see the status column of sweep.csv".into(),
        });
    }
    Ok(())
}

fn cmd_fit(
    cli: &Cli,
    input: &Path,
    window: Option<&[usize]>,
    eps: Option<f64>,
    h_ac: Option<f64>,
) -> Result<()> {
    if window.is_none() && eps.is_none() && h_ac.is_none() {
        return Err(Error::Config(
            "fit needs at least one of --window, --eps, --h-ac".into(),
        ));
    }
    let table = read_table(input)?;
    let periods = table.column_f64("period")?;
    if periods.iter().enumerate().any(|(i, &p)| p != i as f64) {
        return Err(Error::Config(format!(
            "{} is not a trajectory table with periods 0, 1, 2, ...",
            input.display()
        )));
    }
    let time = table.column_f64("time")?;
    let qfi = table.column_f64("qfi_mean")?;
    let mut report = String::new();
    if let Some(w) = window {
        let fit = fit_growth_exponent(&time, &qfi, (w[0], w[1]))?;
        report += &format!(
            "[growth]\nwindow = [{}, {}]\nexponent = {}\nintercept = {}\nresidual = {}\n\n",
            w[0],
            w[1],
            format_float(fit.exponent),
            format_float(fit.intercept),
            format_float(fit.residual)
        );
    }
    if let Some(eps) = eps {
        let mag = table.column_f64("mag_mean")?;
        let t_th = thermalization_time(&staggered(&mag), eps)?;
        report += &format!("[thermalization]\neps = {}\n", format_float(eps));
        report += &match t_th {
            Some(p) => format!("period = {p}\n\n"),
            None => format!("reached = false\nhorizon = {}\n\n", mag.len() - 1),
        };
    }
    if let Some(h) = h_ac {
        let onset = crossover_time_ac(&time, &qfi, h)?;
        report += &format!("[crossover]\nh_ac = {}\nperiod = {onset}\n\n", format_float(h));
    }
    print!("{report}");
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("fit.toml");
        std::fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
        println!("# wrote {} (sha256 {})", path.display(), sha256_hex(report.as_bytes()));
    }
    Ok(())
}

fn cmd_plot(cli: &Cli, input: &Path, kind: PlotKind) -> Result<()> {
    let table = read_table(input)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".into());
    let path = dir.join(format!("{stem}_{}.svg", kind.name()));
    emit_plot(&table, kind, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_oracle(cli: &Cli, index: u64, periods: usize, delta: f64) -> Result<()> {
    let mut config = load_config(cli)?;
    if config.ensemble.n_spins > ORACLE_MAX_SPINS {
        return Err(Error::Capacity {
            n_spins: config.ensemble.n_spins,
            limit: ORACLE_MAX_SPINS,
        });
    }
    config.drive.n_periods = config.drive.n_periods.min(periods);
    let realization = sample_realization(&config.ensemble, index);
    let initial = sample_initial_state(&config.ensemble, index);
    let rows = three_way_qfi(&config.drive, &realization, &initial, delta)?;

    let mut table = Table::new(&["period", "qfi_pair", "qfi_fidelity", "qfi_generator", "max_rel_dev"]);
    for r in &rows {
        table.rows.push(vec![
            r.period.to_string(),
            format_float(r.pair),
            format_float(r.fidelity),
            format_float(r.generator),
            format_float(r.max_relative_deviation()),
        ]);
    }
    let workers = workers(cli);
    let mut writer = ManifestWriter::start(&out_dir(cli), "oracle", &config, workers)?;
    emit_recorded(&mut writer, "oracle.csv", &table)?;
    writer.finish()?;

    let bad: Vec<_> = rows
        .iter()
        .filter(|r| !r.agrees(ORACLE_REL_TOL, ORACLE_ABS_FLOOR))
        .collect();
    let worst = rows
        .iter()
        .map(|r| r.max_relative_deviation())
        .fold(0.0, f64::max);
    println!(
        "{} periods compared, largest relative deviation {worst:.3e}, {} outside {ORACLE_REL_TOL:e} (floor {ORACLE_ABS_FLOOR:e})",
        rows.len(),
        bad.len()
    );
    match bad.first() {
        Some(r) => Err(Error::OracleMismatch {
            period: r.period,
            pair: r.pair,
            fidelity: r.fidelity,
            generator: r.generator,
        }),
        None => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run => cmd_run(cli),
        Command::Sweep => cmd_sweep(cli),
        Command::Fit {
            input,
            window,
            eps,
            h_ac,
        } => cmd_fit(cli, input, window.as_deref(), *eps, *h_ac),
        Command::Plot { input, kind } => cmd_plot(cli, input, *kind),
        Command::Oracle {
            index,
            periods,
            delta,
        } => cmd_oracle(cli, *index, *periods, *delta),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
