//! 6-DOF pose parameters, rigid transforms, trajectory composition, and the
//! evaluation metrics (drift rates, Hausdorff distance, mean angle error).
//!
//! Conventions, used consistently by the network targets, the simulator and
//! the metrics: rotations compose as R = Rz(phiz) * Ry(phiy) * Rx(phix) with
//! angles in degrees; frame-local coordinates put the image center at the
//! origin with x along columns, y along rows, z out of plane.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Relative transform between consecutive frames: translations in mm,
/// rotation angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseParams {
    pub t: [f64; 3],
    pub phi: [f64; 3],
}

impl PoseParams {
    pub fn new(t: [f64; 3], phi: [f64; 3]) -> Self {
        PoseParams { t, phi }
    }

    pub fn from_row(row: &[f64; 6]) -> Self {
        PoseParams {
            t: [row[0], row[1], row[2]],
            phi: [row[3], row[4], row[5]],
        }
    }

    pub fn to_row(&self) -> [f64; 6] {
        [self.t[0], self.t[1], self.t[2], self.phi[0], self.phi[1], self.phi[2]]
    }
}

/// Homogeneous 4x4 rigid transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub m: [[f64; 4]; 4],
}

impl RigidTransform {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        RigidTransform { m }
    }

    pub fn mul(&self, other: &RigidTransform) -> RigidTransform {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for (k, orow) in other.m.iter().enumerate() {
                    s += self.m[i][k] * orow[j];
                }
                m[i][j] = s;
            }
        }
        RigidTransform { m }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * p[0] + self.m[i][1] * p[1] + self.m[i][2] * p[2] + self.m[i][3];
        }
        out
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Rigid inverse: (R, t) -> (R^T, -R^T t).
    pub fn inverse(&self) -> RigidTransform {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.m[j][i];
            }
            m[i][3] = -(self.m[0][i] * self.m[0][3] + self.m[1][i] * self.m[1][3] + self.m[2][i] * self.m[2][3]);
        }
        m[3][3] = 1.0;
        RigidTransform { m }
    }

    /// Largest deviation from rigidity: max of |R^T R - I| entries,
    /// |det R - 1|, and the bottom row against (0,0,0,1).
    pub fn rigidity_error(&self) -> f64 {
        let r = &self.m;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for row in r.iter().take(3) {
                    dot += row[i] * row[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst = worst.max((det - 1.0).abs());
        for j in 0..4 {
            let expect = if j == 3 { 1.0 } else { 0.0 };
            worst = worst.max((r[3][j] - expect).abs());
        }
        worst
    }
}

/// Pixel grid and physical spacing of one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameGeometry {
    pub h: usize,
    pub w: usize,
    /// mm per pixel along image x (columns) and y (rows).
    pub sx: f64,
    pub sy: f64,
}

impl FrameGeometry {
    pub fn new(h: usize, w: usize, sx: f64, sy: f64) -> Result<Self> {
        if h == 0 || w == 0 || !(sx > 0.0) || !(sy > 0.0) {
            return Err(Error::contract(
                "frame_geometry",
                format!("positive size and spacing required, got {h}x{w} at {sx}x{sy}"),
            ));
        }
        Ok(FrameGeometry { h, w, sx, sy })
    }

    /// Physical position of pixel (row, col) in frame-local mm.
    pub fn pixel_to_local(&self, row: f64, col: f64) -> [f64; 3] {
        [
            (col - (self.w as f64 - 1.0) / 2.0) * self.sx,
            (row - (self.h as f64 - 1.0) / 2.0) * self.sy,
            0.0,
        ]
    }

    /// The four image corners in frame-local mm.
    pub fn corners_local(&self) -> [[f64; 3]; 4] {
        let hm = self.h as f64 - 1.0;
        let wm = self.w as f64 - 1.0;
        [
            self.pixel_to_local(0.0, 0.0),
            self.pixel_to_local(0.0, wm),
            self.pixel_to_local(hm, 0.0),
            self.pixel_to_local(hm, wm),
        ]
    }
}

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Wrap an angle in degrees to [-180, 180).
pub fn wrap_deg(x: f64) -> f64 {
    let w = x - 360.0 * ((x + 180.0) / 360.0).floor();
    // Guard the half-open upper edge against rounding in the floor argument.
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Build the rigid transform: R = Rz(phiz) * Ry(phiy) * Rx(phix), plus t.
pub fn params_to_transform(p: &PoseParams) -> RigidTransform {
    let (sa, ca) = (p.phi[0] * DEG).sin_cos();
    let (sb, cb) = (p.phi[1] * DEG).sin_cos();
    let (sc, cc) = (p.phi[2] * DEG).sin_cos();
    let mut m = [[0.0; 4]; 4];
    m[0][0] = cc * cb;
    m[0][1] = -sc * ca + cc * sb * sa;
    m[0][2] = sc * sa + cc * sb * ca;
    m[1][0] = sc * cb;
    m[1][1] = cc * ca + sc * sb * sa;
    m[1][2] = -cc * sa + sc * sb * ca;
    m[2][0] = -sb;
    m[2][1] = cb * sa;
    m[2][2] = cb * ca;
    m[0][3] = p.t[0];
    m[1][3] = p.t[1];
    m[2][3] = p.t[2];
    m[3][3] = 1.0;
    RigidTransform { m }
}

pub struct EulerOut {
    pub params: PoseParams,
    /// Set when |phiy| is within ~1e-6 degrees of +-90: phix/phiz are then
    /// not separately observable and the conventional split (phix = 0) is
    /// reported instead.
    pub gimbal: bool,
}

/// Recover parameters from a rigid transform (inverse of
/// [`params_to_transform`] away from gimbal lock).
pub fn transform_to_params(t: &RigidTransform) -> EulerOut {
    let r = &t.m;
    let sb = -r[2][0];
    let sb_c = sb.clamp(-1.0, 1.0);
    let phiy = sb_c.asin();
    let cb = (1.0 - sb_c * sb_c).sqrt();
    // cos(phiy) below sin(1e-6 deg) means the x/z axes have collapsed.
    let gimbal = cb < 1e-6 * DEG;
    let (phix, phiz) = if gimbal {
        (0.0, (-r[0][1]).atan2(r[1][1]))
    } else {
        (r[2][1].atan2(r[2][2]), r[1][0].atan2(r[0][0]))
    };
    EulerOut {
        params: PoseParams {
            t: [r[0][3], r[1][3], r[2][3]],
            phi: [phix / DEG, phiy / DEG, phiz / DEG],
        },
        gimbal,
    }
}

/// Absolute poses from relative parameters: the first frame is the identity,
/// then T_{i+1} = T_i * transform(theta_i).
pub fn compose_trajectory(params: &[PoseParams]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(params.len() + 1);
    out.push(RigidTransform::identity());
    for p in params {
        let step = params_to_transform(p);
        let last = out.last().expect("seeded with identity");
        out.push(last.mul(&step));
    }
    out
}

/// Drift metrics between two absolute trajectories (no rebasing): drift
/// d_i = |est_center_i - gt_center_i|; rates normalized by the ground-truth
/// arc length over frame centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftMetrics {
    /// Final drift rate, percent of gt arc length.
    pub fdr: f64,
    /// Average drift rate, percent of gt arc length.
    pub adr: f64,
    /// Maximum drift, mm.
    pub md: f64,
    /// Sum of drift over frames, mm.
    pub sd: f64,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn drift_metrics(est: &[RigidTransform], gt: &[RigidTransform]) -> Result<DriftMetrics> {
    if est.len() != gt.len() {
        return Err(Error::contract(
            "drift_metrics",
            format!("trajectory lengths differ: {} vs {}", est.len(), gt.len()),
        ));
    }
    if est.len() < 2 {
        return Err(Error::contract("drift_metrics", format!("need at least 2 frames, got {}", est.len())));
    }
    let centers = |tr: &[RigidTransform]| -> Vec<[f64; 3]> { tr.iter().map(RigidTransform::translation).collect() };
    let pe = centers(est);
    let pg = centers(gt);
    let mut arc = 0.0;
    for i in 1..pg.len() {
        arc += dist(pg[i], pg[i - 1]);
    }
    if arc < 1e-6 {
        return Err(Error::Numeric(format!(
            "degenerate ground truth: arc length {arc} mm is below 1e-6"
        )));
    }
    let drifts: Vec<f64> = pe.iter().zip(&pg).map(|(a, b)| dist(*a, *b)).collect();
    let sd: f64 = drifts.iter().sum();
    let md = drifts.iter().cloned().fold(0.0, f64::max);
    let mean = sd / drifts.len() as f64;
    Ok(DriftMetrics {
        fdr: 100.0 * (drifts[drifts.len() - 1] / arc),
        adr: 100.0 * (mean / arc),
        md,
        sd,
    })
}

/// All four frame corners of every frame, in world coordinates.
pub fn corner_cloud(traj: &[RigidTransform], geo: &FrameGeometry) -> Vec<[f64; 3]> {
    let corners = geo.corners_local();
    traj.iter().flat_map(|t| corners.iter().map(|c| t.apply(*c)).collect::<Vec<_>>()).collect()
}

/// Symmetric Hausdorff distance between point sets, brute force.
pub fn hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("hausdorff", "point sets must be nonempty"));
    }
    let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| dist(*p, *q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// Mean absolute angle error in degrees over transitions and axes, with
/// differences wrapped to [-180, 180).
pub fn mea(est: &[PoseParams], gt: &[PoseParams]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::contract("mea", format!("length mismatch: {} vs {}", est.len(), gt.len())));
    }
    if est.is_empty() {
        return Err(Error::contract("mea", "need at least one transition"));
    }
    let mut total = 0.0;
    for (e, g) in est.iter().zip(gt) {
        for a in 0..3 {
            total += wrap_deg(e.phi[a] - g.phi[a]).abs();
        }
    }
    Ok(total / (3 * est.len()) as f64)
}

// ------------------------------------------------------------ trajectory csv

pub const TRAJ_HEADER: &str = "frame,tx,ty,tz,phix,phiy,phiz,abs_r00,abs_r01,abs_r02,abs_r10,abs_r11,abs_r12,abs_r20,abs_r21,abs_r22,abs_tx,abs_ty,abs_tz";

/// Serialize a trajectory: row 0 is the identity frame with zero relative
/// parameters, row i >= 1 carries theta_{i-1} plus the composed absolute
/// pose. Numbers use shortest round-trip formatting, so reading back is
/// bit-exact.
pub fn trajectory_to_csv(params: &[PoseParams]) -> String {
    let abs = compose_trajectory(params);
    let mut out = String::from(TRAJ_HEADER);
    out.push('\n');
    for (i, t) in abs.iter().enumerate() {
        let rel = if i == 0 { PoseParams::default() } else { params[i - 1] };
        let row = rel.to_row();
        out.push_str(&format!("{i}"));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        for r in 0..3 {
            for c in 0..3 {
                out.push_str(&format!(",{}", t.m[r][c]));
            }
        }
        for r in 0..3 {
            out.push_str(&format!(",{}", t.m[r][3]));
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(path: &Path, params: &[PoseParams]) -> Result<()> {
    fs::write(path, trajectory_to_csv(params))?;
    Ok(())
}

/// Parse a trajectory CSV back into relative parameters, validating the
/// header, the field count, and that row 0 is the identity convention.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<PoseParams>> {
    let text = fs::read_to_string(path)?;
    parse_trajectory_csv(&text, &path.display().to_string())
}

pub fn parse_trajectory_csv(text: &str, origin: &str) -> Result<Vec<PoseParams>> {
    let fail = |line: usize, detail: String| Error::Parse {
        path: origin.to_string(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(fail(1, "empty trajectory file".into()));
    };
    if header.trim() != TRAJ_HEADER {
        return Err(fail(1, format!("bad header: `{}`", header.trim())));
    }
    let mut params = Vec::new();
    let mut expect_frame = 0usize;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 19 {
            return Err(fail(i + 1, format!("expected 19 fields, got {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| fail(i + 1, format!("bad frame index `{}`", fields[0])))?;
        if frame != expect_frame {
            return Err(fail(i + 1, format!("frame {frame} out of order (expected {expect_frame})")));
        }
        let mut vals = [0.0f64; 18];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = fields[k + 1]
                .parse()
                .map_err(|_| fail(i + 1, format!("bad number `{}`", fields[k + 1])))?;
        }
        if frame == 0 {
            if vals[..6].iter().any(|&v| v != 0.0) {
                return Err(fail(i + 1, "frame 0 must carry zero relative parameters".into()));
            }
        } else {
            params.push(PoseParams::from_row(&[vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]]));
        }
        expect_frame += 1;
    }
    if expect_frame < 2 {
        return Err(fail(expect_frame + 1, format!("trajectory has {expect_frame} frames; need at least 2")));
    }
    Ok(params)
}
