//! Inertial data containers and preprocessing: interval averaging of raw
//! streams, angle unwrapping, and per-sequence acceleration normalization.

use crate::error::{Error, Result};

/// Per-transition readings for M sensors: 3-axis relative angles in degrees
/// and 3-axis accelerations. Row-major `[n_trans, m, 3]` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub n_trans: usize,
    pub m: usize,
    pub phi: Vec<f64>,
    pub acc: Vec<f64>,
    /// Transitions whose interval held no raw samples and carried the
    /// previous value instead.
    pub carried: Vec<bool>,
}

impl ImuSample {
    pub fn new(n_trans: usize, m: usize, phi: Vec<f64>, acc: Vec<f64>) -> Result<Self> {
        if phi.len() != n_trans * m * 3 || acc.len() != n_trans * m * 3 {
            return Err(Error::shape(
                "imu_sample",
                format!(
                    "expected {} values per field for {} transitions x {} sensors, got phi {} acc {}",
                    n_trans * m * 3,
                    n_trans,
                    m,
                    phi.len(),
                    acc.len()
                ),
            ));
        }
        Ok(ImuSample {
            n_trans,
            m,
            phi,
            acc,
            carried: vec![false; n_trans],
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize, axis: usize) -> usize {
        (i * self.m + j) * 3 + axis
    }

    pub fn phi_at(&self, i: usize, j: usize) -> [f64; 3] {
        let o = self.at(i, j, 0);
        [self.phi[o], self.phi[o + 1], self.phi[o + 2]]
    }

    pub fn acc_at(&self, i: usize, j: usize) -> [f64; 3] {
        let o = self.at(i, j, 0);
        [self.acc[o], self.acc[o + 1], self.acc[o + 2]]
    }

    /// One sensor's angle stream as an `[n_trans, 3]` row-major matrix.
    pub fn phi_rows(&self, j: usize) -> Vec<f64> {
        (0..self.n_trans).flat_map(|i| self.phi_at(i, j)).collect()
    }

    pub fn acc_rows(&self, j: usize) -> Vec<f64> {
        (0..self.n_trans).flat_map(|i| self.acc_at(i, j)).collect()
    }
}

/// Raw sensor stream: samples at arbitrary times in frame units, so frame
/// interval i covers times [i, i+1).
#[derive(Clone, Debug, Default)]
pub struct RawImuStream {
    /// Sample times in frame units, non-decreasing.
    pub times: Vec<f64>,
    /// `[k, m, 3]` angles per sample.
    pub phi: Vec<f64>,
    /// `[k, m, 3]` accelerations per sample.
    pub acc: Vec<f64>,
    pub m: usize,
}

/// Map ±180-wrapped angles to a continuous track: each step moves by the
/// representative of the raw difference in (-180, 180].
fn unwrap_degrees(track: &mut [f64], stride: usize) {
    let steps = track.len().div_ceil(stride);
    for s in 1..steps {
        let prev = track[(s - 1) * stride];
        let cur = track[s * stride];
        let mut d = (cur - prev) % 360.0;
        if d > 180.0 {
            d -= 360.0;
        } else if d <= -180.0 {
            d += 360.0;
        }
        track[s * stride] = prev + d;
    }
}

/// Interval-average a raw stream into per-transition samples, unwrap angles,
/// and normalize accelerations to zero mean and unit variance per sensor axis
/// over the sequence. Empty intervals carry the previous transition's value
/// (flagged); an empty first interval is a contract error.
pub fn preprocess_imu(raw: &RawImuStream, n_trans: usize) -> Result<ImuSample> {
    if raw.m == 0 || n_trans == 0 {
        return Err(Error::contract("preprocess_imu", "need at least one sensor and one transition"));
    }
    let k = raw.times.len();
    let per = raw.m * 3;
    if raw.phi.len() != k * per || raw.acc.len() != k * per {
        return Err(Error::shape(
            "preprocess_imu",
            format!("expected {} angle/accel values for {k} samples, got {} / {}", k * per, raw.phi.len(), raw.acc.len()),
        ));
    }
    let mut phi = vec![0.0; n_trans * per];
    let mut acc = vec![0.0; n_trans * per];
    let mut carried = vec![false; n_trans];
    for i in 0..n_trans {
        let lo = i as f64;
        let hi = (i + 1) as f64;
        let idx: Vec<usize> = (0..k).filter(|&s| raw.times[s] >= lo && raw.times[s] < hi).collect();
        if idx.is_empty() {
            if i == 0 {
                return Err(Error::contract("preprocess_imu", "first frame interval holds no samples"));
            }
            carried[i] = true;
            for v in 0..per {
                phi[i * per + v] = phi[(i - 1) * per + v];
                acc[i * per + v] = acc[(i - 1) * per + v];
            }
            continue;
        }
        let inv = 1.0 / idx.len() as f64;
        for &s in &idx {
            for v in 0..per {
                phi[i * per + v] += raw.phi[s * per + v] * inv;
                acc[i * per + v] += raw.acc[s * per + v] * inv;
            }
        }
    }

    // Unwrap each (sensor, axis) angle track along the transition axis.
    for v in 0..per {
        unwrap_degrees(&mut phi[v..], per);
    }

    normalize_accels(&mut acc, n_trans, per);

    Ok(ImuSample {
        n_trans,
        m: raw.m,
        phi,
        acc,
        carried,
    })
}

/// Already-per-transition data (e.g. from disk): unwrap + normalize only.
pub fn preprocess_per_transition(sample: &ImuSample) -> ImuSample {
    let mut out = sample.clone();
    let per = out.m * 3;
    for v in 0..per {
        unwrap_degrees(&mut out.phi[v..], per);
    }
    normalize_accels(&mut out.acc, out.n_trans, per);
    out
}

/// Zero-mean, unit-variance per (sensor, axis) column; constant columns are
/// centered only (variance floor 1e-8 avoids amplifying numerical dust).
fn normalize_accels(acc: &mut [f64], n_trans: usize, per: usize) {
    for v in 0..per {
        let mut mean = 0.0;
        for i in 0..n_trans {
            mean += acc[i * per + v];
        }
        mean /= n_trans as f64;
        let mut var = 0.0;
        for i in 0..n_trans {
            let d = acc[i * per + v] - mean;
            var += d * d;
        }
        var /= n_trans as f64;
        let scale = if var > 1e-8 { 1.0 / var.sqrt() } else { 1.0 };
        for i in 0..n_trans {
            let cell = &mut acc[i * per + v];
            *cell = (*cell - mean) * scale;
        }
    }
}
