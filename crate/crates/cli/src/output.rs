//! CSV and gnuplot emission for the experiment verbs.
//!
//! Every CSV starts with a `# schema <name>-v1` comment so downstream tooling
//! can detect format changes; gnuplot ignores those lines.

use std::io::{self, BufRead, Write};

use crate::experiments::{GateSweepRow, ReplanSummary, TimingCell};
use racetraj::planner::TopologyOutcome;

pub fn write_timing_csv<W: Write>(mut out: W, cells: &[TimingCell]) -> io::Result<()> {
    writeln!(out, "# schema timing-sweep-v1")?;
    writeln!(out, "segments,pieces,uniform_us,general_us,reduction_pct")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.2}",
            c.segments, c.pieces, c.uniform_us, c.general_us, c.reduction_pct
        )?;
    }
    Ok(())
}

pub fn write_gate_sweep_csv<W: Write>(mut out: W, rows: &[GateSweepRow]) -> io::Result<()> {
    writeln!(out, "# schema gate-sweep-v1")?;
    writeln!(
        out,
        "method,time_weight,gate_weight,mean_gate_distance,max_gate_distance,flight_time,iterations,converged"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6e},{:.6e},{:.9e},{:.9e},{:.6},{},{}",
            r.method,
            r.time_weight,
            r.gate_weight,
            r.mean_gate_distance,
            r.max_gate_distance,
            r.flight_time,
            r.iterations,
            r.converged
        )?;
    }
    Ok(())
}

pub fn write_topology_csv<W: Write>(mut out: W, outcome: &TopologyOutcome) -> io::Result<()> {
    writeln!(out, "# schema topology-v1")?;
    writeln!(
        out,
        "label,execution_time,trajectory_length,cost,max_violation,feasible,selected"
    )?;
    for (i, c) in outcome.candidates.iter().enumerate() {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6e},{},{}",
            c.label,
            c.total_time,
            c.arc_length,
            c.cost,
            c.max_hinge,
            c.feasible,
            i == outcome.selected_index
        )?;
    }
    Ok(())
}

pub fn write_replan_csv<W: Write>(mut out: W, summary: &ReplanSummary) -> io::Result<()> {
    writeln!(out, "# schema replan-v1")?;
    writeln!(out, "step,now,latency_ms,iterations,stale,max_hinge")?;
    for r in &summary.records {
        writeln!(
            out,
            "{},{:.4},{:.4},{},{},{:.6e}",
            r.step, r.now, r.latency_ms, r.iterations, r.stale, r.max_hinge
        )?;
    }
    Ok(())
}

pub fn write_crossings_csv<W: Write>(mut out: W, summary: &ReplanSummary) -> io::Result<()> {
    writeln!(out, "# schema crossings-v1")?;
    writeln!(out, "gate,time,distance")?;
    for c in &summary.crossings {
        writeln!(out, "{},{:.6},{:.9e}", c.gate, c.time, c.distance)?;
    }
    Ok(())
}

/// Rows of a trajectory CSV produced by the `plan` verb (or any file with the
/// same column layout): `t` plus position/velocity/acceleration/jerk triples.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub t: f64,
    pub derivatives: [[f64; 3]; 4],
}

pub fn read_trajectory_csv<R: BufRead>(reader: R) -> io::Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('t') {
            continue;
        }
        let values: Vec<f64> = trimmed
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("line {}: {e}", lineno + 1),
                )
            })?;
        if values.len() != 13 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: expected 13 columns, got {}", lineno + 1, values.len()),
            ));
        }
        let mut derivatives = [[0.0; 3]; 4];
        for (order, d) in derivatives.iter_mut().enumerate() {
            d.copy_from_slice(&values[1 + 3 * order..4 + 3 * order]);
        }
        rows.push(TrajectoryRow {
            t: values[0],
            derivatives,
        });
    }
    Ok(rows)
}

/// Small gnuplot script rendering the CSVs a verb wrote into `datafile`.
pub fn gnuplot_script(kind: PlotKind, datafile: &str) -> String {
    match kind {
        PlotKind::Timing => format!(
            "set datafile separator ','\n\
             set xlabel 'pieces per segment'\n\
             set ylabel 'median solve+backprop (us)'\n\
             set key left top\n\
             plot for [n=2:5] '{datafile}' using 2:($1==n?$4:1/0) with linespoints title sprintf('general N=%d', n), \\\n\
                  for [n=2:5] '{datafile}' using 2:($1==n?$3:1/0) with linespoints title sprintf('uniform N=%d', n)\n"
        ),
        PlotKind::GateSweep => format!(
            "set datafile separator ','\n\
             set logscale xy\n\
             set xlabel 'gate weight'\n\
             set ylabel 'mean crossing distance (m)'\n\
             plot '{datafile}' using 3:(stringcolumn(1) eq 'soft' ? $4 : 1/0) with points pt 7 title 'soft', \\\n\
                  '{datafile}' using (1e2):(stringcolumn(1) eq 'hard' ? $4 : 1/0) with points pt 5 title 'hard'\n"
        ),
        PlotKind::Replan => format!(
            "set datafile separator ','\n\
             set xlabel 'simulated time (s)'\n\
             set ylabel 'replan latency (ms)'\n\
             plot '{datafile}' using 2:3 with linespoints title 'latency'\n"
        ),
        PlotKind::Trajectory => format!(
            "set datafile separator ','\n\
             set xlabel 'x (m)'\n\
             set ylabel 'y (m)'\n\
             set size ratio -1\n\
             plot '{datafile}' using 2:3 with lines title 'path'\n"
        ),
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PlotKind {
    Timing,
    GateSweep,
    Replan,
    Trajectory,
}
