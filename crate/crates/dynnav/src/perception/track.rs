//! Constant-velocity Kalman tracking of obstacle clusters.
//!
//! State is `[p, v]` in world coordinates with position-only measurements.
//! Process noise follows the white-noise-acceleration model, so both the
//! position and velocity uncertainty grow during occlusions and the tracker
//! can coast through them until a termination timeout.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Matrix6x3, Vector6};
use std::collections::VecDeque;

use crate::geom::Vec3;

/// Classification state of a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectClass {
    Unknown,
    Dynamic,
    Static,
}

/// Lifecycle state of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackStatus {
    /// Updated by a measurement on the most recent frame.
    Tracked,
    /// Missed at least one frame; coasting on the motion model.
    Lost { since: f64 },
    /// Lost longer than the termination timeout; to be removed.
    Terminated,
}

/// Outcome of a single classification vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteDecision {
    Dynamic,
    Static,
    /// Not enough evidence this frame (no reference view, all points
    /// occluded or out of frame).
    Abstain,
}

/// A position estimate the track has committed to at some time.
#[derive(Debug, Clone, Copy)]
pub struct HistoryEntry {
    pub timestamp: f64,
    /// Posterior center estimate after the measurement update.
    pub center: Vec3,
}

/// One tracked obstacle.
#[derive(Debug, Clone)]
pub struct KalmanTrack {
    pub id: u64,
    /// `[position, velocity]` estimate at `stamp`.
    pub state: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    /// Time the state estimate refers to.
    pub stamp: f64,
    /// Time of the last accepted measurement.
    pub last_update: f64,
    pub born_at: f64,
    pub status: TrackStatus,
    pub class: ObjectClass,
    /// Smoothed half-extent estimate of the underlying object.
    pub half_extents: Vec3,
    /// Trail of committed centers, oldest first.
    pub history: VecDeque<HistoryEntry>,
    /// Recent classification votes, oldest first.
    pub votes: VecDeque<(f64, VoteDecision)>,
    /// How many history entries the mapping stage has already cleared.
    pub freed_history: usize,
}

impl KalmanTrack {
    /// Starts a track from a first measurement. Velocity starts at zero with
    /// a large standard deviation so the next few updates can pull it to the
    /// true value quickly.
    pub fn new(id: u64, center: Vec3, half_extents: Vec3, t: f64, sigma_p0: f64, sigma_v0: f64) -> Self {
        let mut state = Vector6::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(&center);
        let mut cov = Matrix6::zeros();
        for k in 0..3 {
            cov[(k, k)] = sigma_p0 * sigma_p0;
            cov[(k + 3, k + 3)] = sigma_v0 * sigma_v0;
        }
        let mut history = VecDeque::new();
        history.push_back(HistoryEntry {
            timestamp: t,
            center,
        });
        Self {
            id,
            state,
            covariance: cov,
            stamp: t,
            last_update: t,
            born_at: t,
            status: TrackStatus::Tracked,
            class: ObjectClass::Unknown,
            half_extents,
            history,
            votes: VecDeque::new(),
            freed_history: 0,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.state.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vec3 {
        self.state.fixed_rows::<3>(3).into()
    }

    /// Constant-velocity extrapolation of the mean to time `at`, leaving the
    /// track untouched.
    pub fn predicted_at(&self, at: f64) -> (Vec3, Vec3) {
        let dt = at - self.stamp;
        let v = self.velocity();
        (self.position() + v * dt, v)
    }

    /// Propagates mean and covariance to time `to` (no-op when `to <= stamp`).
    pub fn predict(&mut self, to: f64, q_acc: f64) {
        let dt = to - self.stamp;
        if dt <= 0.0 {
            return;
        }
        let f = transition(dt);
        let q = process_noise(dt, q_acc);
        self.state = f * self.state;
        self.covariance = f * self.covariance * f.transpose() + q;
        symmetrize(&mut self.covariance);
        self.stamp = to;
    }

    /// Measurement update with gating. Returns `false` (state unchanged) when
    /// the squared Mahalanobis innovation exceeds `chi2_gate`.
    pub fn update(&mut self, z: Vec3, r_var: f64, chi2_gate: f64) -> bool {
        let h = measurement_matrix();
        let r = Matrix3::identity() * r_var;
        let innovation = z - self.position();
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().expect("innovation covariance is PD");
        let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
        if d2 > chi2_gate {
            return false;
        }
        let k: Matrix6x3<f64> = self.covariance * h.transpose() * s_inv;
        self.state += k * innovation;
        // Joseph form keeps the covariance symmetric positive semidefinite.
        let ikh = Matrix6::identity() - k * h;
        self.covariance = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        symmetrize(&mut self.covariance);
        true
    }
}

/// State transition for a constant-velocity model over `dt`.
pub fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for k in 0..3 {
        f[(k, k + 3)] = dt;
    }
    f
}

/// White-noise-acceleration process noise with intensity `q_acc` (m^2/s^3).
pub fn process_noise(dt: f64, q_acc: f64) -> Matrix6<f64> {
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let mut q = Matrix6::zeros();
    for k in 0..3 {
        q[(k, k)] = dt3 / 3.0;
        q[(k, k + 3)] = dt2 / 2.0;
        q[(k + 3, k)] = dt2 / 2.0;
        q[(k + 3, k + 3)] = dt;
    }
    q * q_acc
}

/// Position-only measurement matrix.
pub fn measurement_matrix() -> Matrix3x6<f64> {
    let mut h = Matrix3x6::zeros();
    for k in 0..3 {
        h[(k, k)] = 1.0;
    }
    h
}

fn symmetrize(m: &mut Matrix6<f64>) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Result of track-to-cluster association.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    /// `(track index, cluster index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_clusters: Vec<usize>,
}

/// Greedy nearest-neighbor association over the globally sorted distance
/// list. `gates[i]` is the maximum association distance for track `i`.
/// Ties in distance resolve to the lower track index, then lower cluster
/// index, making the outcome deterministic.
pub fn associate(track_positions: &[Vec3], gates: &[f64], clusters: &[Vec3]) -> Association {
    assert_eq!(track_positions.len(), gates.len());
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, (&tp, &gate)) in track_positions.iter().zip(gates).enumerate() {
        for (ci, &cp) in clusters.iter().enumerate() {
            let d = (tp - cp).norm();
            if d <= gate {
                pairs.push((d, ti, ci));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut track_used = vec![false; track_positions.len()];
    let mut cluster_used = vec![false; clusters.len()];
    let mut matches = Vec::new();
    for (_, ti, ci) in pairs {
        if !track_used[ti] && !cluster_used[ci] {
            track_used[ti] = true;
            cluster_used[ci] = true;
            matches.push((ti, ci));
        }
    }
    matches.sort_unstable();
    Association {
        matches,
        unmatched_tracks: (0..track_positions.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_clusters: (0..clusters.len()).filter(|&i| !cluster_used[i]).collect(),
    }
}
