//! Command-line harness: reads a scenario JSON, runs the requested study and
//! writes CSV tables, SVG plots and a flags file into the output directory.
//!
//! Exit codes: 0 = all convergence flags pass, 2 = a convergence flag
//! failed, 3 = configuration error, 1 = unexpected runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use popscale::drivers::{self, ExecCtx};
use popscale::error::Error;
use popscale::report::{self, flags_csv, line_plot_svg};
use popscale::scenario::Scenario;

#[derive(Parser)]
#[command(name = "popscale", version, about = "Population-chain scaling-limit studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the scenario's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable the thread pool (serial execution; output is identical).
    #[arg(long)]
    serial: bool,
    /// Extra seed folded into the scenario seed (reruns under a different
    /// randomization while keeping the scenario file fixed).
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-sup residuals |G^N(H) - G(H)| across the N list.
    Characteristics(Common),
    /// Tail check: sup_x v_N P(|increment| > b) decreasing in b.
    H0 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated b grid.
        #[arg(long, default_value = "0.5,1.0,2.0,4.0")]
        b_grid: String,
    },
    /// Increment-functional discrepancy along simulated paths.
    Increments {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, default_value_t = 0.0)]
        ell: f64,
    },
    /// Wasserstein distances between discrete and limiting marginal laws.
    Law(Common),
    /// Explosion fractions: discrete chain vs jump-diffusion integrator.
    Explosion {
        #[command(flatten)]
        common: Common,
        /// Horizon for the explosion study (defaults to the scenario horizon).
        #[arg(long)]
        t: Option<f64>,
    },
    /// Emit discrete and SDE sample paths as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scale N (defaults to the largest entry of the scenario's N list).
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 10)]
        paths: usize,
    },
    /// Parse and validate a scenario file.
    ValidateConfig(Common),
}

fn load(common: &Common) -> Result<(Scenario, ExecCtx, PathBuf), Error> {
    let text = std::fs::read_to_string(&common.config)?;
    let scn = Scenario::from_json(&text)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&scn.output_dir));
    let ctx = ExecCtx { seed: common.seed_offset, parallel: !common.serial };
    Ok((scn, ctx, out))
}

fn print_flags(flags: &[(&str, bool)]) -> bool {
    let mut all = true;
    for (name, ok) in flags {
        println!("{}: {}", name, if *ok { "PASS" } else { "FAIL" });
        all &= *ok;
    }
    all
}

fn write_meta(dir: &Path, scn: &Scenario, ctx: &ExecCtx, extra: &[(String, String)]) -> Result<(), Error> {
    let mut meta = serde_json::Map::new();
    meta.insert("scenario".into(), serde_json::Value::String(scn.name.clone()));
    meta.insert("seed".into(), serde_json::Value::from(scn.seed));
    meta.insert("seed_offset".into(), serde_json::Value::from(ctx.seed));
    for (k, v) in extra {
        meta.insert(k.clone(), serde_json::Value::String(v.clone()));
    }
    report::write_file(dir, "meta.json", &serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Characteristics(common) => {
            let (scn, ctx, out) = load(&common)?;
            let rep = drivers::run_characteristic_convergence(&scn, ctx)?;
            report::write_file(&out, "characteristics.csv", &rep.points_csv())?;
            report::write_file(&out, "characteristics_sup.csv", &rep.sup_csv())?;
            report::write_file(
                &out,
                "characteristics.svg",
                &line_plot_svg("sup residual vs N", &rep.sup_series()),
            )?;
            let flags = [("characteristic_residuals_decreasing", rep.all_trends_decreasing)];
            report::write_file(&out, "flags.csv", &flags_csv(&flags))?;
            write_meta(&out, &scn, &ctx, &[])?;
            Ok(print_flags(&flags))
        }
        Command::H0 { common, b_grid } => {
            let (scn, ctx, out) = load(&common)?;
            let bs: Vec<f64> = b_grid
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::config("b_grid", e.to_string()))?;
            let rep = drivers::run_h0_check(&scn, &bs, ctx)?;
            report::write_file(&out, "h0.csv", &rep.csv())?;
            let flags = [("h0_tail_nonincreasing_in_b", rep.nonincreasing_in_b)];
            report::write_file(&out, "flags.csv", &flags_csv(&flags))?;
            write_meta(&out, &scn, &ctx, &[])?;
            Ok(print_flags(&flags))
        }
        Command::Increments { common, k, ell } => {
            let (scn, ctx, out) = load(&common)?;
            let rep = drivers::run_increment_functional(&scn, k, ell, scn.horizon, ctx)?;
            report::write_file(&out, "increments.csv", &rep.csv())?;
            let flags = [("increment_discrepancy_decreasing", rep.decreasing)];
            report::write_file(&out, "flags.csv", &flags_csv(&flags))?;
            write_meta(&out, &scn, &ctx, &[])?;
            Ok(print_flags(&flags))
        }
        Command::Law(common) => {
            let (scn, ctx, out) = load(&common)?;
            let rep = drivers::run_law_convergence(&scn, ctx)?;
            report::write_file(&out, "law.csv", &rep.csv())?;
            report::write_file(&out, "law.svg", &line_plot_svg("W1(pop) vs N", &rep.pop_series()))?;
            let flags = [
                ("law_pop_distance_decreasing", rep.pop_decreasing),
                ("law_env_distance_not_increasing", rep.env_not_increasing),
            ];
            report::write_file(&out, "flags.csv", &flags_csv(&flags))?;
            write_meta(
                &out,
                &scn,
                &ctx,
                &[
                    ("floor_factor".into(), format!("{}", rep.floor_factor)),
                    ("explosions_discrete".into(), format!("{}", rep.explosions_discrete)),
                    ("explosions_sde".into(), format!("{}", rep.explosions_sde)),
                ],
            )?;
            Ok(print_flags(&flags))
        }
        Command::Explosion { common, t } => {
            let (scn, ctx, out) = load(&common)?;
            let rep = drivers::run_explosion_study(&scn, t.unwrap_or(scn.horizon), ctx)?;
            report::write_file(&out, "explosion.csv", &rep.csv())?;
            let flags = [("explosion_fractions_agree", rep.all_overlap)];
            report::write_file(&out, "flags.csv", &flags_csv(&flags))?;
            write_meta(&out, &scn, &ctx, &[])?;
            Ok(print_flags(&flags))
        }
        Command::Simulate { common, n, paths } => {
            let (scn, ctx, out) = load(&common)?;
            let n = n.unwrap_or_else(|| *scn.n_list.last().unwrap());
            let sim = drivers::simulate_paths(&scn, n, paths, ctx)?;
            report::write_file(&out, "paths.csv", &sim.discrete_csv)?;
            report::write_file(&out, "sde_paths.csv", &sim.sde_csv)?;
            report::write_file(&out, "sde_jumps.csv", &sim.jumps_csv)?;
            write_meta(&out, &scn, &ctx, &[("n".into(), format!("{n}"))])?;
            println!("wrote {} discrete and SDE paths at N = {n}", paths);
            Ok(true)
        }
        Command::ValidateConfig(common) => {
            let (scn, _, _) = load(&common)?;
            println!("scenario `{}` is valid", scn.name);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e @ (Error::Config { .. } | Error::Json(_) | Error::Io(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
