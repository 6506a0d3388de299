//! Hybrid environment representation.
//!
//! Static structure lives in a log-odds occupancy grid fed by filtered depth
//! clouds (hits at endpoints, misses along the rays). Dynamic obstacles are
//! *removed* from the grid — every position a dynamic track has visited is
//! reset to free — and represented instead as moving ellipsoids with
//! constant-velocity predictions, so the planner can reason about where an
//! obstacle *will* be rather than where it has been.

use nalgebra::Matrix3;
use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::geom::{Mat3, PointCloud, Vec3};
use crate::perception::{KalmanTrack, ObjectClass};
use crate::{Error, Result};

/// Mapping and environment parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingParams {
    /// Grid cell edge, m.
    pub resolution: f64,
    /// Log-odds increment for a hit.
    pub l_hit: f64,
    /// Log-odds increment for a pass-through (negative).
    pub l_miss: f64,
    /// Log-odds clamp bounds.
    pub l_min: f64,
    pub l_max: f64,
    /// Cells with log-odds above this count as occupied.
    pub occ_threshold: f64,
    /// Extra inflation added to the ego radius for dynamic obstacles, m.
    pub dynamic_margin: f64,
    /// Half-axis margin used when clearing dynamic history from the grid, m.
    pub refree_margin: f64,
    /// Cap on how far ellipsoid motion is extrapolated, s.
    pub prediction_horizon: f64,
    /// Whether queries outside the grid volume report occupied.
    pub oob_occupied: bool,
}

impl Default for MappingParams {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            l_hit: 0.85,
            l_miss: -0.4,
            l_min: -2.0,
            l_max: 3.5,
            occ_threshold: 0.0,
            dynamic_margin: 0.1,
            refree_margin: 0.1,
            prediction_horizon: 3.0,
            oob_occupied: false,
        }
    }
}

/// Dense log-odds occupancy grid over a fixed axis-aligned region.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    /// World position of the minimum corner of cell (0,0,0).
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
    pub l_hit: f64,
    pub l_miss: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub threshold: f64,
    /// What queries outside the volume report.
    pub oob_occupied: bool,
    cells: Vec<f32>,
}

impl OccupancyGrid {
    /// Grid covering `[min, max]`, snapped up to whole cells.
    pub fn from_bounds(min: Vec3, max: Vec3, p: &MappingParams) -> Self {
        let dims = [
            ((max.x - min.x) / p.resolution).ceil().max(1.0) as usize,
            ((max.y - min.y) / p.resolution).ceil().max(1.0) as usize,
            ((max.z - min.z) / p.resolution).ceil().max(1.0) as usize,
        ];
        Self {
            origin: min,
            resolution: p.resolution,
            dims,
            l_hit: p.l_hit,
            l_miss: p.l_miss,
            l_min: p.l_min,
            l_max: p.l_max,
            threshold: p.occ_threshold,
            oob_occupied: p.oob_occupied,
            cells: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.resolution).floor();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            c[k] = f as usize;
        }
        Some(c)
    }

    /// World-space center of a cell.
    pub fn center_of(&self, c: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.origin.x + (c[0] as f64 + 0.5) * self.resolution,
            self.origin.y + (c[1] as f64 + 0.5) * self.resolution,
            self.origin.z + (c[2] as f64 + 0.5) * self.resolution,
        )
    }

    pub fn log_odds(&self, c: [usize; 3]) -> f64 {
        self.cells[self.index(c)] as f64
    }

    pub fn set_log_odds(&mut self, c: [usize; 3], v: f64) {
        let i = self.index(c);
        self.cells[i] = v.clamp(self.l_min, self.l_max) as f32;
    }

    pub fn is_occupied_cell(&self, c: [usize; 3]) -> bool {
        self.log_odds(c) > self.threshold
    }

    /// Whether any occupied cell lies within a cube of `inflate` cells
    /// (Chebyshev radius) around the cell containing `p`. Points outside the
    /// grid report `oob_occupied` (default: free, i.e. unknown space is
    /// traversable for mapping purposes; the planner separately confines
    /// flight to the mapped volume).
    pub fn query_occupied(&self, p: Vec3, inflate: usize) -> bool {
        let Some(c) = self.cell_of(p) else {
            return self.oob_occupied;
        };
        let lo = |v: usize| v.saturating_sub(inflate);
        let hi = |v: usize, d: usize| (v + inflate).min(d - 1);
        for z in lo(c[2])..=hi(c[2], self.dims[2]) {
            for y in lo(c[1])..=hi(c[1], self.dims[1]) {
                for x in lo(c[0])..=hi(c[0], self.dims[0]) {
                    if self.is_occupied_cell([x, y, z]) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Integrates one point cloud: every in-bounds point marks a hit in its
    /// cell and a miss in every cell the ray from the sensor origin crosses
    /// on the way (endpoint excluded). Contributions are summed per cell for
    /// the whole frame, then applied and clamped once, so the result is
    /// independent of point order.
    pub fn fuse_frame(&mut self, cloud: &PointCloud) {
        let origin = cloud.source_pose.translation;
        let mut hits: HashMap<usize, u32> = HashMap::new();
        let mut misses: HashMap<usize, u32> = HashMap::new();
        for &p in &cloud.points {
            let Some(end_cell) = self.cell_of(p) else {
                continue;
            };
            *hits.entry(self.index(end_cell)).or_default() += 1;
            self.walk_ray(origin, p, |grid, cell| {
                if cell != end_cell {
                    *misses.entry(grid.index(cell)).or_default() += 1;
                }
            });
        }
        // Apply batch sums (per-cell arithmetic, order independent).
        for (&i, &n) in &hits {
            let delta = n as f64 * self.l_hit;
            self.cells[i] = ((self.cells[i] as f64 + delta).clamp(self.l_min, self.l_max)) as f32;
        }
        for (&i, &n) in &misses {
            let delta = n as f64 * self.l_miss;
            self.cells[i] = ((self.cells[i] as f64 + delta).clamp(self.l_min, self.l_max)) as f32;
        }
    }

    /// Visits every cell crossed by the segment `from -> to` (excluding
    /// nothing; the caller filters). Works when `from` is outside the grid by
    /// clipping the segment to the grid box first.
    fn walk_ray<F: FnMut(&Self, [usize; 3])>(&self, from: Vec3, to: Vec3, mut visit: F) {
        let d = to - from;
        let len = d.norm();
        if len < 1e-12 {
            return;
        }
        // Clip the segment to the grid bounds.
        let min = self.origin;
        let max = self.origin
            + Vec3::new(
                self.dims[0] as f64 * self.resolution,
                self.dims[1] as f64 * self.resolution,
                self.dims[2] as f64 * self.resolution,
            );
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if from[k] < min[k] || from[k] > max[k] {
                    return;
                }
            } else {
                let inv = 1.0 / d[k];
                let (a, b) = ((min[k] - from[k]) * inv, (max[k] - from[k]) * inv);
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return;
                }
            }
        }
        // Nudge inside to get a valid starting cell.
        let eps = 1e-9;
        let start = from + d * (t0 + eps).min(1.0);
        let Some(mut cell) = self.cell_of(start) else {
            return;
        };
        // Amanatides-Woo traversal.
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if d[k] > 1e-15 {
                step[k] = 1;
                let next_boundary = self.origin[k] + (cell[k] as f64 + 1.0) * self.resolution;
                t_max[k] = (next_boundary - from[k]) / d[k];
                t_delta[k] = self.resolution / d[k];
            } else if d[k] < -1e-15 {
                step[k] = -1;
                let next_boundary = self.origin[k] + cell[k] as f64 * self.resolution;
                t_max[k] = (next_boundary - from[k]) / d[k];
                t_delta[k] = self.resolution / -d[k];
            }
        }
        let t_end = t1.min(1.0);
        loop {
            visit(self, cell);
            // Advance along the axis with the nearest boundary.
            let k = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[k] > t_end {
                break;
            }
            let next = cell[k] as i64 + step[k];
            if next < 0 || next >= self.dims[k] as i64 {
                break;
            }
            cell[k] = next as usize;
            t_max[k] += t_delta[k];
        }
    }

    /// Clears an axis-aligned ellipsoid (half-axes inflated by `margin`)
    /// around each center: every cell whose center lies inside is reset to
    /// the minimum log-odds. Idempotent.
    pub fn re_free(&mut self, centers: &[Vec3], half_axes: Vec3, margin: f64) {
        let ax = half_axes + Vec3::repeat(margin);
        for &c in centers {
            let lo = c - ax;
            let hi = c + ax;
            let mut lo_c = [0usize; 3];
            let mut hi_c = [0usize; 3];
            let mut empty = false;
            for k in 0..3 {
                let a = ((lo[k] - self.origin[k]) / self.resolution).floor().max(0.0) as i64;
                let b = ((hi[k] - self.origin[k]) / self.resolution).floor() as i64;
                let b = b.min(self.dims[k] as i64 - 1);
                if a > b {
                    empty = true;
                    break;
                }
                lo_c[k] = a as usize;
                hi_c[k] = b as usize;
            }
            if empty {
                continue;
            }
            for z in lo_c[2]..=hi_c[2] {
                for y in lo_c[1]..=hi_c[1] {
                    for x in lo_c[0]..=hi_c[0] {
                        let p = self.center_of([x, y, z]) - c;
                        let q = (p.x / ax.x).powi(2) + (p.y / ax.y).powi(2) + (p.z / ax.z).powi(2);
                        if q <= 1.0 {
                            let i = self.index([x, y, z]);
                            self.cells[i] = self.l_min as f32;
                        }
                    }
                }
            }
        }
    }

    /// All occupied cells in ascending (z, y, x) index order.
    pub fn occupied_cells(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.is_occupied_cell([x, y, z]) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    /// Plain-text serialization of the grid (occupied + log-odds of every
    /// non-zero cell), used by episode traces.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "grid 1")?;
        writeln!(w, "origin {} {} {}", self.origin.x, self.origin.y, self.origin.z)?;
        writeln!(w, "resolution {}", self.resolution)?;
        writeln!(w, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2])?;
        writeln!(w, "threshold {}", self.threshold)?;
        writeln!(w, "oob {}", u8::from(self.oob_occupied))?;
        let nonzero: Vec<(usize, usize, usize, f32)> = {
            let mut v = Vec::new();
            for z in 0..self.dims[2] {
                for y in 0..self.dims[1] {
                    for x in 0..self.dims[0] {
                        let lo = self.cells[self.index([x, y, z])];
                        if lo != 0.0 {
                            v.push((x, y, z, lo));
                        }
                    }
                }
            }
            v
        };
        writeln!(w, "cells {}", nonzero.len())?;
        for (x, y, z, lo) in nonzero {
            writeln!(w, "{x} {y} {z} {lo}")?;
        }
        Ok(())
    }

    /// Parses a grid dumped by [`OccupancyGrid::dump`].
    pub fn parse<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Trace("truncated grid file".into()))?
                .map_err(Error::from)
        };
        let header = next()?;
        if header.trim() != "grid 1" {
            return Err(Error::Trace(format!("bad grid header: {header}")));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Trace(format!("bad number: {s}")))
        };
        let origin_line = next()?;
        let o: Vec<&str> = origin_line.split_whitespace().collect();
        if o.len() != 4 || o[0] != "origin" {
            return Err(Error::Trace("bad origin line".into()));
        }
        let origin = Vec3::new(parse_f(o[1])?, parse_f(o[2])?, parse_f(o[3])?);
        let res_line = next()?;
        let r_parts: Vec<&str> = res_line.split_whitespace().collect();
        if r_parts.len() != 2 || r_parts[0] != "resolution" {
            return Err(Error::Trace("bad resolution line".into()));
        }
        let resolution = parse_f(r_parts[1])?;
        let dims_line = next()?;
        let d: Vec<&str> = dims_line.split_whitespace().collect();
        if d.len() != 4 || d[0] != "dims" {
            return Err(Error::Trace("bad dims line".into()));
        }
        let dims = [
            parse_f(d[1])? as usize,
            parse_f(d[2])? as usize,
            parse_f(d[3])? as usize,
        ];
        let th_line = next()?;
        let t: Vec<&str> = th_line.split_whitespace().collect();
        if t.len() != 2 || t[0] != "threshold" {
            return Err(Error::Trace("bad threshold line".into()));
        }
        let threshold = parse_f(t[1])?;
        let oob_line = next()?;
        let ob: Vec<&str> = oob_line.split_whitespace().collect();
        if ob.len() != 2 || ob[0] != "oob" {
            return Err(Error::Trace("bad oob line".into()));
        }
        let oob_occupied = parse_f(ob[1])? != 0.0;
        let count_line = next()?;
        let c: Vec<&str> = count_line.split_whitespace().collect();
        if c.len() != 2 || c[0] != "cells" {
            return Err(Error::Trace("bad cells line".into()));
        }
        let n = parse_f(c[1])? as usize;
        let defaults = MappingParams::default();
        let mut grid = OccupancyGrid {
            origin,
            resolution,
            dims,
            l_hit: defaults.l_hit,
            l_miss: defaults.l_miss,
            l_min: defaults.l_min,
            l_max: defaults.l_max,
            threshold,
            oob_occupied,
            cells: vec![0.0; dims[0] * dims[1] * dims[2]],
        };
        for _ in 0..n {
            let line = next()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Trace(format!("bad cell line: {line}")));
            }
            let cell = [
                parse_f(parts[0])? as usize,
                parse_f(parts[1])? as usize,
                parse_f(parts[2])? as usize,
            ];
            let i = grid.index(cell);
            grid.cells[i] = parse_f(parts[3])? as f32;
        }
        Ok(grid)
    }
}

/// A dynamic obstacle as an inflated ellipsoid moving at constant velocity.
///
/// The collision condition for a point `p` at `tau` seconds after `stamp` is
/// `(p - c(tau))' Theta (p - c(tau)) <= 1` with `c(tau) = center + v tau` and
/// `Theta = R' diag(1/(l+r)^2) R`.
#[derive(Debug, Clone)]
pub struct MovingEllipsoid {
    pub track_id: u64,
    /// Center at `stamp`.
    pub center: Vec3,
    pub velocity: Vec3,
    /// Raw half-axes, before inflation.
    pub half_axes: Vec3,
    /// Inflation added to every half-axis (ego radius + margin).
    pub inflation: f64,
    /// World-to-body rotation (identity for axis-aligned obstacles).
    pub rotation: Mat3,
    pub stamp: f64,
    theta: Mat3,
}

impl MovingEllipsoid {
    pub fn new(
        track_id: u64,
        center: Vec3,
        velocity: Vec3,
        half_axes: Vec3,
        inflation: f64,
        rotation: Mat3,
        stamp: f64,
    ) -> Self {
        let d = Matrix3::from_diagonal(&Vec3::new(
            1.0 / (half_axes.x + inflation).powi(2),
            1.0 / (half_axes.y + inflation).powi(2),
            1.0 / (half_axes.z + inflation).powi(2),
        ));
        let theta = rotation.transpose() * d * rotation;
        Self {
            track_id,
            center,
            velocity,
            half_axes,
            inflation,
            rotation,
            stamp,
            theta,
        }
    }

    /// The quadratic-form matrix.
    pub fn theta(&self) -> &Mat3 {
        &self.theta
    }

    /// Predicted center `tau` seconds after the snapshot stamp.
    pub fn center_at(&self, tau: f64) -> Vec3 {
        self.center + self.velocity * tau
    }

    /// Quadratic form value at `p` against the prediction at `tau`;
    /// values <= 1 mean collision.
    pub fn quadratic_form(&self, p: Vec3, tau: f64) -> f64 {
        let x = p - self.center_at(tau);
        (x.transpose() * self.theta * x)[(0, 0)]
    }

    pub fn contains(&self, p: Vec3, tau: f64) -> bool {
        self.quadratic_form(p, tau) <= 1.0
    }
}

/// Frozen view of the environment handed to the planner.
#[derive(Debug, Clone)]
pub struct EnvironmentSnapshot {
    pub stamp: f64,
    pub grid: OccupancyGrid,
    pub ellipsoids: Vec<MovingEllipsoid>,
    /// Chebyshev inflation radius (cells) for grid queries.
    pub inflate_cells: usize,
    /// Constant-velocity predictions expire beyond this many seconds.
    pub prediction_horizon: f64,
}

impl EnvironmentSnapshot {
    /// Whether position `p` is collision-free `tau` seconds after the
    /// snapshot: inside the mapped arena, outside every predicted ellipsoid,
    /// and not within the inflated occupied set of the grid. Positions
    /// outside the grid volume are invalid for flight — the vehicle never
    /// plans through unmapped space. Beyond the prediction horizon the
    /// constant-velocity extrapolation is no longer trustworthy, so expired
    /// ellipsoids stop constraining; replanning re-checks those times with
    /// fresh predictions long before the vehicle reaches them.
    pub fn valid_check(&self, p: Vec3, tau: f64) -> bool {
        if self.grid.cell_of(p).is_none() {
            return false;
        }
        if self.grid.query_occupied(p, self.inflate_cells) {
            return false;
        }
        if tau > self.prediction_horizon {
            return true;
        }
        let tau = tau.max(0.0);
        self.ellipsoids.iter().all(|e| !e.contains(p, tau))
    }
}

/// Owns the grid and applies the perception output frame by frame.
pub struct EnvironmentModel {
    pub params: MappingParams,
    pub grid: OccupancyGrid,
    /// Ego bounding-sphere radius; dynamic ellipsoids are inflated by this
    /// plus `params.dynamic_margin`, grid queries by the cell equivalent.
    pub ego_radius: f64,
}

impl EnvironmentModel {
    pub fn new(bounds_min: Vec3, bounds_max: Vec3, ego_radius: f64, params: MappingParams) -> Self {
        let grid = OccupancyGrid::from_bounds(bounds_min, bounds_max, &params);
        Self {
            params,
            grid,
            ego_radius,
        }
    }

    /// Fuses one filtered cloud and clears newly committed history of every
    /// dynamic track from the grid. `tracks` is mutable only to advance each
    /// track's cleared-history watermark.
    pub fn integrate_frame(&mut self, filtered: &PointCloud, tracks: &mut [KalmanTrack]) {
        self.grid.fuse_frame(filtered);
        for tr in tracks {
            if tr.class != ObjectClass::Dynamic {
                continue;
            }
            let centers: Vec<Vec3> = tr
                .history
                .iter()
                .skip(tr.freed_history)
                .map(|h| h.center)
                .collect();
            if centers.is_empty() {
                continue;
            }
            // Free the full planning-inflated ellipsoid around each
            // historical center, one resolution wider. The estimated axes
            // alone are too tight: the size estimate converges from partial
            // views and the filter lags the true center, so surface cells at
            // the leading face would survive and leave a phantom trail of
            // occupancy crawling along with the agent.
            self.grid.re_free(
                &centers,
                symmetrized(tr.half_extents) + Vec3::repeat(self.inflation()),
                self.params.refree_margin,
            );
            tr.freed_history = tr.history.len();
        }
    }

    /// Ego-inflation radius applied to dynamic obstacles.
    pub fn inflation(&self) -> f64 {
        self.ego_radius + self.params.dynamic_margin
    }

    /// Builds the frozen planning view at `stamp`: a copy of the grid plus
    /// one predicted ellipsoid per dynamic track (lost tracks included while
    /// they coast; the motion model keeps predicting through occlusions).
    pub fn snapshot(&self, tracks: &[KalmanTrack], stamp: f64) -> EnvironmentSnapshot {
        let mut ellipsoids = Vec::new();
        for tr in tracks {
            if tr.class != ObjectClass::Dynamic {
                continue;
            }
            let (center, velocity) = tr.predicted_at(stamp);
            ellipsoids.push(MovingEllipsoid::new(
                tr.id,
                center,
                velocity,
                symmetrized(tr.half_extents),
                self.inflation(),
                Mat3::identity(),
                stamp,
            ));
        }
        ellipsoids.sort_by_key(|e| e.track_id);
        EnvironmentSnapshot {
            stamp,
            grid: self.grid.clone(),
            ellipsoids,
            inflate_cells: (self.ego_radius / self.params.resolution).ceil() as usize,
            prediction_horizon: self.params.prediction_horizon,
        }
    }
}

/// Depth cameras underestimate the half-extent along the view ray, so both
/// horizontal half-axes are replaced by their maximum before building
/// collision ellipsoids or clearing history.
pub fn symmetrized(half_extents: Vec3) -> Vec3 {
    let h = half_extents.x.max(half_extents.y);
    Vec3::new(h, h, half_extents.z)
}
