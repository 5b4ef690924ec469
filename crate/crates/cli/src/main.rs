//! Command-line front end: plan scenarios, sweep representations and gate
//! treatments, study detour topologies, and run the closed replanning loop.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use racetraj::export;
use racetraj::flatness::flat_map;
use racetraj::scenario::Scenario;
use racetraj_cli::experiments::{
    run_gate_sweep, run_plan, run_replan_sim, run_timing_sweep, run_topology_study,
};
use racetraj_cli::output::{
    gnuplot_script, read_trajectory_csv, write_crossings_csv, write_gate_sweep_csv,
    write_replan_csv, write_timing_csv, write_topology_csv, PlotKind,
};

#[derive(Parser)]
#[command(
    name = "racetraj",
    about = "minimum-time polynomial trajectories through static and moving gates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan the scenario's first window and export trajectory/constraint CSVs.
    Plan {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
        /// Sample count for the exported CSVs.
        #[arg(long, default_value_t = 400)]
        samples: usize,
    },
    /// Audit a previously exported trajectory CSV against a scenario's limits.
    Replay {
        scenario: PathBuf,
        trajectory: PathBuf,
    },
    /// Compare per-iteration solve+gradient cost of the cached equal-duration
    /// representation against the general one over a (segments, pieces) grid.
    SweepTiming {
        #[arg(long, default_value_t = 97)]
        seed: u64,
        /// Timing repetitions per grid cell (median is reported).
        #[arg(long, default_value_t = 41)]
        iterations: usize,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
    },
    /// Sweep hard and soft gate treatments over time/pull weight grids.
    SweepGate {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
    },
    /// Seed detour candidates around the most intrusive obstacle, optimize
    /// each, and report the fastest feasible one.
    Topology {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
    },
    /// Closed-loop noiseless replanning simulation over the whole track.
    ReplanSim {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 4000)]
        max_steps: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Plan {
            scenario,
            output,
            samples,
        } => cmd_plan(&scenario, &output, samples),
        Command::Replay {
            scenario,
            trajectory,
        } => cmd_replay(&scenario, &trajectory),
        Command::SweepTiming {
            seed,
            iterations,
            output,
        } => cmd_sweep_timing(seed, iterations, &output),
        Command::SweepGate { scenario, output } => cmd_sweep_gate(&scenario, &output),
        Command::Topology { scenario, output } => cmd_topology(&scenario, &output),
        Command::ReplanSim {
            scenario,
            output,
            max_steps,
        } => cmd_replan_sim(&scenario, &output, max_steps),
    }
}

fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn cmd_plan(scenario: &Path, output: &Path, samples: usize) -> anyhow::Result<bool> {
    let sc = load_scenario(scenario)?;
    let (result, topology) = run_plan(&sc)?;

    export::write_trajectory_csv(create(output, "trajectory.csv")?, &result.trajectory, samples)?;
    export::write_constraint_csv(
        create(output, "constraints.csv")?,
        &result.trajectory,
        &sc.obstacles,
        &sc.config.penalty,
        samples,
    )?;
    write!(
        create(output, "trajectory.gp")?,
        "{}",
        gnuplot_script(PlotKind::Trajectory, "trajectory.csv")
    )?;
    if let Some(outcome) = &topology {
        write_topology_csv(create(output, "topology.csv")?, outcome)?;
    }

    println!("scenario         {}", sc.name);
    println!("flight time      {:.4} s", result.total_time);
    println!("cost             {:.6}", result.cost);
    println!(
        "iterations       {} ({} evaluations, stop: {:?})",
        result.iterations, result.evaluations, result.stop
    );
    println!("max constraint   {:.3e}", result.residuals.max_hinge);
    for (i, e) in result.gate_errors.iter().enumerate() {
        println!("gate {i} distance  {e:.3e} m");
    }
    if let Some(outcome) = &topology {
        println!(
            "topology         {} candidates, selected #{}",
            outcome.candidates.len(),
            outcome.selected_index
        );
    }
    println!("wrote {}", output.display());

    Ok(result.is_feasible(sc.config.feasibility_tolerance))
}

fn cmd_replay(scenario: &Path, trajectory: &Path) -> anyhow::Result<bool> {
    let sc = load_scenario(scenario)?;
    let file = File::open(trajectory)
        .with_context(|| format!("opening {}", trajectory.display()))?;
    let rows = read_trajectory_csv(BufReader::new(file))?;
    if rows.is_empty() {
        bail!("{} has no data rows", trajectory.display());
    }

    let penalty = &sc.config.penalty;
    let limits = &penalty.limits;
    let mut thrust_low = f64::NEG_INFINITY;
    let mut thrust_high = f64::NEG_INFINITY;
    let mut body_rate = f64::NEG_INFINITY;
    let mut obstacle = f64::NEG_INFINITY;
    let mut degenerate = 0usize;
    for row in &rows {
        let [p, v, a, j] = row.derivatives.map(Vector3::from);
        match flat_map(&v, &a, &j, &penalty.drag) {
            Ok(fo) => {
                thrust_low = thrust_low.max(limits.thrust_min - fo.thrust);
                thrust_high = thrust_high.max(fo.thrust - limits.thrust_max);
                body_rate = body_rate.max(fo.body_rate.norm() - limits.body_rate_max);
            }
            Err(_) => degenerate += 1,
        }
        for ob in &sc.obstacles {
            obstacle = obstacle.max(penalty.obstacle_clearance - ob.quadratic_form(&p, row.t));
        }
    }

    let tolerance = 1e-3;
    let worst = [thrust_low, thrust_high, body_rate, obstacle];
    let names = ["thrust low", "thrust high", "body rate", "obstacle"];
    for (name, value) in names.iter().zip(worst) {
        let status = if value <= tolerance { "ok" } else { "VIOLATED" };
        println!("{name:<12} {value:+.4e}  {status}");
    }
    if degenerate > 0 {
        println!("{degenerate} samples had a degenerate thrust vector");
    }
    Ok(degenerate == 0 && worst.into_iter().all(|v| v <= tolerance))
}

fn cmd_sweep_timing(seed: u64, iterations: usize, output: &Path) -> anyhow::Result<bool> {
    let cells = run_timing_sweep(seed, iterations)?;
    write_timing_csv(create(output, "timing.csv")?, &cells)?;
    write!(
        create(output, "timing.gp")?,
        "{}",
        gnuplot_script(PlotKind::Timing, "timing.csv")
    )?;
    println!("segments pieces   uniform_us   general_us  reduction");
    let mut all_faster = true;
    for c in &cells {
        println!(
            "{:>8} {:>6} {:>12.2} {:>12.2} {:>9.1}%",
            c.segments, c.pieces, c.uniform_us, c.general_us, c.reduction_pct
        );
        all_faster &= c.reduction_pct > 0.0;
    }
    println!("wrote {}", output.display());
    Ok(all_faster)
}

fn cmd_sweep_gate(scenario: &Path, output: &Path) -> anyhow::Result<bool> {
    let sc = load_scenario(scenario)?;
    let time_weights = [1e3, 1e4, 1e5];
    let gate_weights = [1e2, 1e3, 1e4];
    let rows = run_gate_sweep(&sc, &time_weights, &gate_weights)?;
    write_gate_sweep_csv(create(output, "gate_sweep.csv")?, &rows)?;
    write!(
        create(output, "gate_sweep.gp")?,
        "{}",
        gnuplot_script(PlotKind::GateSweep, "gate_sweep.csv")
    )?;
    println!("method  time_w   gate_w   mean_dist    max_dist     flight   converged");
    let mut all_converged = true;
    for r in &rows {
        println!(
            "{:<6} {:>8.0} {:>8} {:>11.3e} {:>11.3e} {:>8.3} s  {}",
            r.method,
            r.time_weight,
            if r.gate_weight.is_nan() {
                "-".to_string()
            } else {
                format!("{:.0}", r.gate_weight)
            },
            r.mean_gate_distance,
            r.max_gate_distance,
            r.flight_time,
            r.converged
        );
        all_converged &= r.converged;
    }
    println!("wrote {}", output.display());
    Ok(all_converged)
}

fn cmd_topology(scenario: &Path, output: &Path) -> anyhow::Result<bool> {
    let sc = load_scenario(scenario)?;
    let outcome = run_topology_study(&sc)?;
    write_topology_csv(create(output, "topology.csv")?, &outcome)?;
    export::write_trajectory_csv(
        create(output, "trajectory.csv")?,
        &outcome.selected.trajectory,
        400,
    )?;
    write!(
        create(output, "trajectory.gp")?,
        "{}",
        gnuplot_script(PlotKind::Trajectory, "trajectory.csv")
    )?;
    println!("candidate        time       length     max_violation  feasible");
    for (i, c) in outcome.candidates.iter().enumerate() {
        let mark = if i == outcome.selected_index { "*" } else { " " };
        println!(
            "{mark}{:<15} {:>8.3} s {:>8.3} m {:>13.3e}  {}",
            c.label, c.total_time, c.arc_length, c.max_hinge, c.feasible
        );
    }
    println!("wrote {}", output.display());
    Ok(outcome.candidates[outcome.selected_index].feasible)
}

fn cmd_replan_sim(scenario: &Path, output: &Path, max_steps: usize) -> anyhow::Result<bool> {
    let sc = load_scenario(scenario)?;
    let summary = run_replan_sim(&sc, max_steps)?;
    write_replan_csv(create(output, "replan.csv")?, &summary)?;
    write_crossings_csv(create(output, "crossings.csv")?, &summary)?;
    write!(
        create(output, "replan.gp")?,
        "{}",
        gnuplot_script(PlotKind::Replan, "replan.csv")
    )?;

    let worst_residual = summary
        .records
        .iter()
        .map(|r| r.max_hinge)
        .fold(f64::NEG_INFINITY, f64::max);
    println!("steps            {}", summary.records.len());
    println!("median latency   {:.2} ms", summary.median_latency_ms());
    println!("stale plans      {}", summary.stale_steps());
    println!("worst residual   {:.3e}", worst_residual);
    for c in &summary.crossings {
        println!(
            "gate {} crossed at t={:.3} s, distance {:.3e} m",
            c.gate, c.time, c.distance
        );
    }
    println!(
        "track {}",
        if summary.finished { "finished" } else { "NOT finished" }
    );
    println!("wrote {}", output.display());

    Ok(summary.finished && summary.worst_crossing_distance() <= 1e-3)
}
