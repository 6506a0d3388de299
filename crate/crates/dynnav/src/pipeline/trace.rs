//! Episode trace recording and reading.
//!
//! A trace is a directory of plain-text files describing one episode:
//!
//! * `frames.csv`  — per-frame perception counters.
//! * `ego.csv`     — executed vehicle state per frame.
//! * `tracks.csv`  — per-frame track estimates with classification and the
//!   matched cluster centroid (empty columns when the track coasted).
//! * `plans.csv`   — one row per replan with cost breakdown.
//! * `splines.txt` — every planned trajectory as a structured-text record
//!   (degree, knot spacing, control points, start time).
//! * `grid_final.txt` — occupancy grid dump at episode end.
//! * `meta.json`   — scenario identity, outcome and deterministic metrics.
//!
//! Traces contain no wall-clock measurements: for a fixed scenario and seed
//! the files are byte-identical across runs and machines.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::perception::{Cluster, FrameSummary, KalmanTrack, ObjectClass, TrackStatus};
use crate::plan::{BSpline, TrajectoryPlan};
use crate::{Error, Result, Vec3};

use super::{Ego, EpisodeStatus};

/// Scenario identity, outcome, and the deterministic subset of the metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub seed: u64,
    pub status: EpisodeStatus,
    pub frames: usize,
    pub plans: usize,
    pub error_pos: f64,
    pub error_vel: f64,
    pub track_samples: usize,
    pub t_arrive: f64,
    pub l_traj: f64,
    pub v_mean: f64,
    pub collision_count: usize,
}

/// One planned trajectory in the text form stored in `splines.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineRecord {
    pub id: usize,
    /// Episode time the spline starts at, s.
    pub start: f64,
    pub degree: usize,
    /// Knot spacing, s.
    pub dt: f64,
    pub points: Vec<Vec3>,
}

impl SplineRecord {
    pub fn from_plan(id: usize, start: f64, spline: &BSpline) -> Self {
        Self {
            id,
            start,
            degree: crate::plan::bspline::DEGREE,
            dt: spline.dt,
            points: spline.control.clone(),
        }
    }

    /// Rebuilds the spline; `None` when the record is not a cubic with enough
    /// control points.
    pub fn to_bspline(&self) -> Option<BSpline> {
        if self.degree != crate::plan::bspline::DEGREE || self.points.len() < 4 || self.dt <= 0.0 {
            return None;
        }
        BSpline::new(self.points.clone(), self.dt).ok()
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "spline {}", self.id)?;
        writeln!(w, "start {}", self.start)?;
        writeln!(w, "degree {}", self.degree)?;
        writeln!(w, "dt {}", self.dt)?;
        writeln!(w, "points {}", self.points.len())?;
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    /// Parses every record in a `splines.txt` body.
    pub fn parse_all(text: &str) -> Result<Vec<SplineRecord>> {
        let bad = |m: &str| Error::Trace(format!("splines.txt: {m}"));
        let mut lines = text.lines();
        let mut out = Vec::new();
        while let Some(first) = lines.by_ref().find(|l| !l.trim().is_empty()) {
            let id = first
                .strip_prefix("spline ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("expected `spline <id>`"))?;
            let mut field = |key: &str| -> Result<f64> {
                let line = lines.next().ok_or_else(|| bad("truncated record"))?;
                line.strip_prefix(key)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad(&format!("expected `{key}<value>`")))
            };
            let start = field("start ")?;
            let degree = field("degree ")? as usize;
            let dt = field("dt ")?;
            let n = field("points ")? as usize;
            let mut points = Vec::with_capacity(n);
            for _ in 0..n {
                let line = lines.next().ok_or_else(|| bad("truncated points"))?;
                let mut it = line.split_whitespace().map(str::parse::<f64>);
                let mut next = || -> Result<f64> {
                    it.next()
                        .and_then(|v| v.ok())
                        .ok_or_else(|| bad("bad point line"))
                };
                points.push(Vec3::new(next()?, next()?, next()?));
            }
            out.push(SplineRecord {
                id,
                start,
                degree,
                dt,
                points,
            });
        }
        Ok(out)
    }
}

/// Parsed `frames.csv` row.
#[derive(Debug, Clone)]
pub struct FrameRow {
    pub frame: usize,
    pub t: f64,
    pub dense_points: usize,
    pub filtered_points: usize,
    pub clusters: usize,
    pub tracks: usize,
    pub dynamic: usize,
    pub replanned: bool,
}

/// Parsed `ego.csv` row.
#[derive(Debug, Clone)]
pub struct EgoRow {
    pub frame: usize,
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    pub yaw: f64,
}

/// Parsed `tracks.csv` row.
#[derive(Debug, Clone)]
pub struct TrackRow {
    pub frame: usize,
    pub t: f64,
    pub id: u64,
    pub class: String,
    pub status: String,
    pub pos: Vec3,
    pub vel: Vec3,
    pub half_extents: Vec3,
    /// Centroid of the cluster matched this frame, if any.
    pub cluster: Option<Vec3>,
}

/// Parsed `plans.csv` row.
#[derive(Debug, Clone)]
pub struct PlanRow {
    pub plan: usize,
    pub frame: usize,
    pub t0: f64,
    pub duration: f64,
    pub search_cost: f64,
    pub expansions: usize,
    pub outer_iters: usize,
    pub cost_total: f64,
}

/// Everything read back from a trace directory.
#[derive(Debug, Clone)]
pub struct TraceData {
    pub meta: Option<TraceMeta>,
    pub frames: Vec<FrameRow>,
    pub ego: Vec<EgoRow>,
    pub tracks: Vec<TrackRow>,
    pub plans: Vec<PlanRow>,
    pub splines: Vec<SplineRecord>,
}

impl TraceData {
    pub fn is_empty(&self) -> bool {
        self.meta.is_none() && self.frames.is_empty() && self.splines.is_empty()
    }
}

pub(super) fn class_str(c: ObjectClass) -> &'static str {
    match c {
        ObjectClass::Unknown => "unknown",
        ObjectClass::Dynamic => "dynamic",
        ObjectClass::Static => "static",
    }
}

fn status_str(s: TrackStatus) -> &'static str {
    match s {
        TrackStatus::Tracked => "tracked",
        TrackStatus::Lost { .. } => "lost",
        TrackStatus::Terminated => "terminated",
    }
}

/// Incremental writer for the files of one trace directory.
pub struct TraceWriter {
    dir: PathBuf,
    frames: BufWriter<fs::File>,
    ego: BufWriter<fs::File>,
    tracks: BufWriter<fs::File>,
    plans: BufWriter<fs::File>,
    splines: BufWriter<fs::File>,
}

impl TraceWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let open = |name: &str, header: &str| -> Result<BufWriter<fs::File>> {
            let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
            if !header.is_empty() {
                writeln!(w, "{header}")?;
            }
            Ok(w)
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            frames: open(
                "frames.csv",
                "frame,t,dense_points,filtered_points,clusters,tracks,dynamic,replanned",
            )?,
            ego: open("ego.csv", "frame,t,px,py,pz,vx,vy,vz,ax,ay,az,yaw")?,
            tracks: open(
                "tracks.csv",
                "frame,t,id,class,status,px,py,pz,vx,vy,vz,hx,hy,hz,cx,cy,cz",
            )?,
            plans: open(
                "plans.csv",
                "plan,frame,t0,duration,dt,n_ctrl,search_cost,expansions,outer_iters,\
                 cost_total,cost_smooth,cost_feas,cost_coll,cost_dynamic",
            )?,
            splines: open("splines.txt", "")?,
        })
    }

    pub(super) fn frame_row(
        &mut self,
        frame: usize,
        t: f64,
        summary: &FrameSummary,
        tracks: &[KalmanTrack],
        replanned: bool,
    ) -> Result<()> {
        let dynamic = tracks
            .iter()
            .filter(|tr| tr.class == ObjectClass::Dynamic)
            .count();
        writeln!(
            self.frames,
            "{},{},{},{},{},{},{},{}",
            frame,
            t,
            summary.dense_points,
            summary.filtered.len(),
            summary.clusters.len(),
            tracks.len(),
            dynamic,
            replanned as u8
        )?;
        Ok(())
    }

    pub(super) fn ego_row(&mut self, frame: usize, t: f64, ego: &Ego) -> Result<()> {
        let (p, v, a) = (ego.pos, ego.vel, ego.acc);
        writeln!(
            self.ego,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            frame, t, p.x, p.y, p.z, v.x, v.y, v.z, a.x, a.y, a.z, ego.yaw
        )?;
        Ok(())
    }

    pub(super) fn track_rows(
        &mut self,
        frame: usize,
        t: f64,
        tracks: &[KalmanTrack],
        clusters: &[Cluster],
        assignments: &[(usize, u64)],
    ) -> Result<()> {
        for tr in tracks {
            let matched = assignments
                .iter()
                .find(|(_, tid)| *tid == tr.id)
                .and_then(|(cid, _)| clusters.iter().find(|c| c.id == *cid))
                .map(|c| c.centroid);
            let (p, v, h) = (tr.position(), tr.velocity(), tr.half_extents);
            let cluster = match matched {
                Some(c) => format!("{},{},{}", c.x, c.y, c.z),
                None => ",,".into(),
            };
            writeln!(
                self.tracks,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                frame,
                t,
                tr.id,
                class_str(tr.class),
                status_str(tr.status),
                p.x,
                p.y,
                p.z,
                v.x,
                v.y,
                v.z,
                h.x,
                h.y,
                h.z,
                cluster
            )?;
        }
        Ok(())
    }

    pub(super) fn plan_row(
        &mut self,
        plan_id: usize,
        frame: usize,
        t0: f64,
        plan: &TrajectoryPlan,
    ) -> Result<()> {
        let r = &plan.report;
        writeln!(
            self.plans,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            plan_id,
            frame,
            t0,
            plan.duration(),
            plan.spline.dt,
            plan.spline.control.len(),
            plan.search_cost,
            plan.search_expansions,
            plan.outer_iterations,
            r.total,
            r.smooth,
            r.feas,
            r.coll,
            r.dynamic
        )?;
        SplineRecord::from_plan(plan_id, t0, &plan.spline).write(&mut self.splines)
    }

    /// Flushes the tables and writes `grid_final.txt` and `meta.json`.
    pub(super) fn finish(mut self, meta: &TraceMeta, grid: &crate::env_model::OccupancyGrid) -> Result<()> {
        self.frames.flush()?;
        self.ego.flush()?;
        self.tracks.flush()?;
        self.plans.flush()?;
        self.splines.flush()?;
        let mut gw = BufWriter::new(fs::File::create(self.dir.join("grid_final.txt"))?);
        grid.dump(&mut gw)?;
        gw.flush()?;
        let json = serde_json::to_string_pretty(meta)
            .map_err(|e| Error::Trace(format!("meta.json: {e}")))?;
        fs::write(self.dir.join("meta.json"), json + "\n")?;
        Ok(())
    }
}

fn read_csv(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != columns {
            return Err(Error::Trace(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                k + 1,
                fields.len(),
                columns
            )));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Trace(format!("bad {what}: {s:?}")))
}

fn vec3(f: &[String], i: usize, what: &str) -> Result<Vec3> {
    Ok(Vec3::new(
        num(&f[i], what)?,
        num(&f[i + 1], what)?,
        num(&f[i + 2], what)?,
    ))
}

/// Reads a trace directory back into memory. Missing files yield empty
/// sections so an empty directory parses to an empty [`TraceData`]; malformed
/// content is an error.
pub fn read_trace(dir: &Path) -> Result<TraceData> {
    if !dir.is_dir() {
        return Err(Error::Trace(format!("{} is not a directory", dir.display())));
    }
    let meta = match fs::read_to_string(dir.join("meta.json")) {
        Ok(text) => Some(
            serde_json::from_str(&text).map_err(|e| Error::Trace(format!("meta.json: {e}")))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };

    let mut frames = Vec::new();
    let path = dir.join("frames.csv");
    if path.exists() {
        for f in read_csv(&path, 8)? {
            frames.push(FrameRow {
                frame: num(&f[0], "frame")?,
                t: num(&f[1], "t")?,
                dense_points: num(&f[2], "dense_points")?,
                filtered_points: num(&f[3], "filtered_points")?,
                clusters: num(&f[4], "clusters")?,
                tracks: num(&f[5], "tracks")?,
                dynamic: num(&f[6], "dynamic")?,
                replanned: f[7].trim() == "1",
            });
        }
    }

    let mut ego = Vec::new();
    let path = dir.join("ego.csv");
    if path.exists() {
        for f in read_csv(&path, 12)? {
            ego.push(EgoRow {
                frame: num(&f[0], "frame")?,
                t: num(&f[1], "t")?,
                pos: vec3(&f, 2, "ego position")?,
                vel: vec3(&f, 5, "ego velocity")?,
                acc: vec3(&f, 8, "ego acceleration")?,
                yaw: num(&f[11], "yaw")?,
            });
        }
    }

    let mut tracks = Vec::new();
    let path = dir.join("tracks.csv");
    if path.exists() {
        for f in read_csv(&path, 17)? {
            let cluster = if f[14].is_empty() {
                None
            } else {
                Some(vec3(&f, 14, "cluster centroid")?)
            };
            tracks.push(TrackRow {
                frame: num(&f[0], "frame")?,
                t: num(&f[1], "t")?,
                id: num(&f[2], "track id")?,
                class: f[3].clone(),
                status: f[4].clone(),
                pos: vec3(&f, 5, "track position")?,
                vel: vec3(&f, 8, "track velocity")?,
                half_extents: vec3(&f, 11, "half extents")?,
                cluster,
            });
        }
    }

    let mut plans = Vec::new();
    let path = dir.join("plans.csv");
    if path.exists() {
        for f in read_csv(&path, 14)? {
            plans.push(PlanRow {
                plan: num(&f[0], "plan")?,
                frame: num(&f[1], "frame")?,
                t0: num(&f[2], "t0")?,
                duration: num(&f[3], "duration")?,
                search_cost: num(&f[6], "search_cost")?,
                expansions: num(&f[7], "expansions")?,
                outer_iters: num(&f[8], "outer_iters")?,
                cost_total: num(&f[9], "cost_total")?,
            });
        }
    }

    let splines = match fs::read_to_string(dir.join("splines.txt")) {
        Ok(text) => SplineRecord::parse_all(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };

    Ok(TraceData {
        meta,
        frames,
        ego,
        tracks,
        plans,
        splines,
    })
}
