//! Offline trace inspection: turns a recorded episode back into
//! human-readable tables and plot-ready CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::Result;

use super::trace::{read_trace, TraceData};

/// Rendered views of one trace.
#[derive(Debug, Clone)]
pub struct InspectReport {
    /// Human-readable summary: outcome, metrics, per-track and per-plan
    /// tables.
    pub text: String,
    /// Per-frame track/classification table (one row per track per frame).
    pub tracks_csv: String,
    /// Sampled trajectories for plotting: the executed path plus every
    /// planned spline, re-evaluated from its control points.
    pub samples_csv: String,
}

/// Spacing of trajectory samples in `samples_csv`, s.
const SAMPLE_DT: f64 = 0.05;

/// Reads a trace directory and renders it. An empty directory yields an
/// empty report (not an error); malformed files are errors.
pub fn inspect_trace(dir: &Path) -> Result<InspectReport> {
    let data = read_trace(dir)?;
    if data.is_empty() {
        return Ok(InspectReport {
            text: "empty trace: no frames, no plans\n".into(),
            tracks_csv: String::new(),
            samples_csv: String::new(),
        });
    }
    Ok(InspectReport {
        text: render_text(&data),
        tracks_csv: render_tracks_csv(&data),
        samples_csv: render_samples_csv(&data),
    })
}

fn render_text(data: &TraceData) -> String {
    let mut out = String::new();
    if let Some(m) = &data.meta {
        let _ = writeln!(
            out,
            "scenario {}  seed {}  status {}",
            m.scenario,
            m.seed,
            m.status.as_str()
        );
        let _ = writeln!(
            out,
            "frames {}  plans {}  t_arrive {:.2} s  l_traj {:.2} m  v_mean {:.2} m/s",
            m.frames, m.plans, m.t_arrive, m.l_traj, m.v_mean
        );
        let _ = writeln!(
            out,
            "tracking: error_pos {:.3} m  error_vel {:.3} m/s  ({} samples)  collisions {}",
            m.error_pos, m.error_vel, m.track_samples, m.collision_count
        );
    } else {
        let _ = writeln!(out, "(no meta.json)");
    }

    // Per-track lifetime summary, in id order.
    let mut ids: Vec<u64> = data.tracks.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if !ids.is_empty() {
        let _ = writeln!(out, "\ntracks:");
        let _ = writeln!(out, "  {:>4}  {:>8}  {:>6}  {:>7}  {:>7}  {:>10}", "id", "class", "frames", "first_t", "last_t", "mean_speed");
        for id in ids {
            let rows: Vec<_> = data.tracks.iter().filter(|r| r.id == id).collect();
            let class = &rows.last().unwrap().class;
            let first = rows.first().unwrap().t;
            let last = rows.last().unwrap().t;
            let speed = rows.iter().map(|r| r.vel.norm()).sum::<f64>() / rows.len() as f64;
            let _ = writeln!(
                out,
                "  {:>4}  {:>8}  {:>6}  {:>7.2}  {:>7.2}  {:>10.2}",
                id,
                class,
                rows.len(),
                first,
                last,
                speed
            );
        }
    }

    if !data.plans.is_empty() {
        let _ = writeln!(out, "\nplans:");
        let _ = writeln!(
            out,
            "  {:>4}  {:>6}  {:>7}  {:>8}  {:>11}  {:>10}  {:>5}  {:>10}",
            "id", "frame", "t0", "duration", "search_cost", "expansions", "outer", "cost"
        );
        for p in &data.plans {
            let _ = writeln!(
                out,
                "  {:>4}  {:>6}  {:>7.2}  {:>8.2}  {:>11.3}  {:>10}  {:>5}  {:>10.4}",
                p.plan,
                p.frame,
                p.t0,
                p.duration,
                p.search_cost,
                p.expansions,
                p.outer_iters,
                p.cost_total
            );
        }
    }
    out
}

fn render_tracks_csv(data: &TraceData) -> String {
    let mut out =
        String::from("frame,t,id,class,status,px,py,pz,vx,vy,vz,hx,hy,hz,cx,cy,cz\n");
    for r in &data.tracks {
        let cluster = match r.cluster {
            Some(c) => format!("{},{},{}", c.x, c.y, c.z),
            None => ",,".into(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.frame,
            r.t,
            r.id,
            r.class,
            r.status,
            r.pos.x,
            r.pos.y,
            r.pos.z,
            r.vel.x,
            r.vel.y,
            r.vel.z,
            r.half_extents.x,
            r.half_extents.y,
            r.half_extents.z,
            cluster
        );
    }
    out
}

fn render_samples_csv(data: &TraceData) -> String {
    let mut out = String::from("source,t,px,py,pz,vx,vy,vz\n");
    for e in &data.ego {
        let _ = writeln!(
            out,
            "ego,{},{},{},{},{},{},{}",
            e.t, e.pos.x, e.pos.y, e.pos.z, e.vel.x, e.vel.y, e.vel.z
        );
    }
    for rec in &data.splines {
        let Some(spline) = rec.to_bspline() else {
            continue;
        };
        let d = spline.duration();
        let n = (d / SAMPLE_DT).ceil() as usize;
        for k in 0..=n {
            let s = (k as f64 * SAMPLE_DT).min(d);
            let p = spline.position(s);
            let v = spline.velocity(s);
            let _ = writeln!(
                out,
                "plan{},{},{},{},{},{},{},{}",
                rec.id,
                rec.start + s,
                p.x,
                p.y,
                p.z,
                v.x,
                v.y,
                v.z
            );
        }
    }
    out
}
