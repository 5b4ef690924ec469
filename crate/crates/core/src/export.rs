//! CSV export for trajectories and constraint audits.
//!
//! Both writers emit a `# schema` comment line first, so downstream tooling
//! can detect format changes, followed by a header row. Comment lines are
//! ignored by gnuplot and most CSV readers.

use std::io::Write;

use crate::costs::PenaltyConfig;
use crate::error::Result;
use crate::flatness::flat_map;
use crate::poly::SegmentedTrajectory;
use crate::world::EllipsoidObstacle;

pub const TRAJECTORY_SCHEMA: &str = "trajectory-v1";
pub const CONSTRAINT_SCHEMA: &str = "constraints-v1";

/// Writes `samples + 1` evenly spaced rows of
/// `t, position, velocity, acceleration, jerk`.
pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    traj: &SegmentedTrajectory,
    samples: usize,
) -> Result<()> {
    writeln!(out, "# schema {TRAJECTORY_SCHEMA}")?;
    writeln!(out, "t,px,py,pz,vx,vy,vz,ax,ay,az,jx,jy,jz")?;
    for j in 0..=samples {
        let t = sample_time(traj, j, samples);
        write!(out, "{t:.9}")?;
        for order in 0..4 {
            let d = traj.eval3(t, order)?;
            write!(out, ",{:.9},{:.9},{:.9}", d.x, d.y, d.z)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes per-sample actuator and clearance values:
/// `t, thrust, body-rate components and norm, worst obstacle quadratic form,
/// body-z alignment with the attitude-window axis`.
///
/// Samples where the thrust vector degenerates (so no attitude exists) get
/// `nan` in the columns that need one. The obstacle column is the *smallest*
/// quadratic form over all obstacles (< 1 means inside one); it is `nan` when
/// there are none, as is the alignment column without an attitude window.
pub fn write_constraint_csv<W: Write>(
    mut out: W,
    traj: &SegmentedTrajectory,
    obstacles: &[EllipsoidObstacle],
    config: &PenaltyConfig,
    samples: usize,
) -> Result<()> {
    writeln!(out, "# schema {CONSTRAINT_SCHEMA}")?;
    writeln!(out, "t,thrust,wx,wy,wz,w_norm,obstacle_qform,gap_alignment")?;
    for j in 0..=samples {
        let t = sample_time(traj, j, samples);
        let pos = traj.eval3(t, 0)?;
        let vel = traj.eval3(t, 1)?;
        let acc = traj.eval3(t, 2)?;
        let jerk = traj.eval3(t, 3)?;
        let (thrust, rate, z_body) = match flat_map(&vel, &acc, &jerk, &config.drag) {
            Ok(fo) => {
                let z = fo.body_z();
                (fo.thrust, fo.body_rate, Some(z))
            }
            Err(_) => (f64::NAN, nalgebra::Vector3::from_element(f64::NAN), None),
        };
        let qform = obstacles
            .iter()
            .map(|o| o.quadratic_form(&pos, t))
            .fold(f64::NAN, f64::min);
        let alignment = match (&config.gap, z_body) {
            (Some(gap), Some(z)) => z.dot(&gap.desired_axis),
            _ => f64::NAN,
        };
        writeln!(
            out,
            "{t:.9},{thrust:.9},{:.9},{:.9},{:.9},{:.9},{qform:.9},{alignment:.9}",
            rate.x,
            rate.y,
            rate.z,
            rate.norm(),
        )?;
    }
    Ok(())
}

fn sample_time(traj: &SegmentedTrajectory, j: usize, samples: usize) -> f64 {
    let span = traj.total_duration();
    (traj.start_time() + span * j as f64 / samples.max(1) as f64).min(traj.end_time())
}
