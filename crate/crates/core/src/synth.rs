//! Synthetic scan generator: procedural phantom volumes, probe trajectories
//! for four scan tactics, trilinear frame rendering, and a multi-IMU
//! simulator with per-sensor noise levels. The generator doubles as the
//! ground-truth oracle for end-to-end tests: everything is a deterministic
//! function of (config, seed), and stored scans can be re-rendered bit-exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::imu::ImuSample;
use crate::pose::{
    compose_trajectory, corner_cloud, params_to_transform, transform_to_params, write_trajectory_csv,
    read_trajectory_csv, FrameGeometry, PoseParams, RigidTransform,
};
use crate::rng;

// ------------------------------------------------------------------ phantom

/// Procedural scalar volume: smooth value noise plus a few bright/dark tubes,
/// one voxel per millimetre, values in [0, 1]. World origin sits at the
/// volume center.
pub struct Phantom {
    pub side: usize,
    pub seed: u64,
    data: Vec<f64>,
}

/// Coarse value-noise cell size in mm; small enough for visible structure on
/// 32x32 frames at 0.15 mm spacing, large enough to keep frames smooth.
const NOISE_CELL_MM: usize = 8;
const TUBES: usize = 3;

impl Phantom {
    pub fn new(side_mm: usize, seed: u64) -> Result<Self> {
        if side_mm < 2 * NOISE_CELL_MM {
            return Err(Error::contract(
                "phantom",
                format!("side must be at least {} mm, got {side_mm}", 2 * NOISE_CELL_MM),
            ));
        }
        let side = side_mm;
        let nc = side / NOISE_CELL_MM + 2;
        let mut r = rng::prng(rng::derive(seed, "phantom-noise"));
        let coarse: Vec<f64> = (0..nc * nc * nc).map(|_| rng::uniform(&mut r, 0.2, 0.8)).collect();
        let cval = |i: usize, j: usize, k: usize| coarse[(i * nc + j) * nc + k];

        let mut rt = rng::prng(rng::derive(seed, "phantom-tubes"));
        struct Tube {
            p: [f64; 3],
            d: [f64; 3],
            radius: f64,
            value: f64,
        }
        let tubes: Vec<Tube> = (0..TUBES)
            .map(|t| {
                let half = side as f64 / 2.0;
                let p = [
                    rng::uniform(&mut rt, 0.3 * half, 1.7 * half),
                    rng::uniform(&mut rt, 0.3 * half, 1.7 * half),
                    rng::uniform(&mut rt, 0.3 * half, 1.7 * half),
                ];
                let mut d = [rng::normal(&mut rt), rng::normal(&mut rt), rng::normal(&mut rt)];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
                for v in &mut d {
                    *v /= n;
                }
                Tube {
                    p,
                    d,
                    radius: rng::uniform(&mut rt, 2.0, 5.0),
                    value: if t % 2 == 0 { 0.95 } else { 0.05 },
                }
            })
            .collect();

        let inv_cell = 1.0 / NOISE_CELL_MM as f64;
        let mut data = vec![0.0; side * side * side];
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    // Smooth base field from the coarse grid.
                    let g = [x as f64 * inv_cell, y as f64 * inv_cell, z as f64 * inv_cell];
                    let i0 = g.map(|v| v.floor() as usize);
                    let f = [g[0] - i0[0] as f64, g[1] - i0[1] as f64, g[2] - i0[2] as f64];
                    let mut v = 0.0;
                    for (dx, fx) in [(0, 1.0 - f[0]), (1, f[0])] {
                        for (dy, fy) in [(0, 1.0 - f[1]), (1, f[1])] {
                            for (dz, fz) in [(0, 1.0 - f[2]), (1, f[2])] {
                                v += fx * fy * fz * cval(i0[0] + dx, i0[1] + dy, i0[2] + dz);
                            }
                        }
                    }
                    // Blend tubes in with a smooth radial falloff.
                    let q = [x as f64, y as f64, z as f64];
                    for tube in &tubes {
                        let rel = [q[0] - tube.p[0], q[1] - tube.p[1], q[2] - tube.p[2]];
                        let along = rel[0] * tube.d[0] + rel[1] * tube.d[1] + rel[2] * tube.d[2];
                        let perp = [
                            rel[0] - along * tube.d[0],
                            rel[1] - along * tube.d[1],
                            rel[2] - along * tube.d[2],
                        ];
                        let d2 = perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2];
                        let w = (-(d2 / (tube.radius * tube.radius)).powi(2)).exp();
                        v = v * (1.0 - w) + tube.value * w;
                    }
                    data[(x * side + y) * side + z] = v.clamp(0.0, 1.0);
                }
            }
        }
        Ok(Phantom { side, seed, data })
    }

    /// Uniform volume, for renderer oracles.
    pub fn constant(side_mm: usize, value: f64) -> Self {
        Phantom {
            side: side_mm,
            seed: 0,
            data: vec![value; side_mm * side_mm * side_mm],
        }
    }

    #[inline]
    fn voxel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.side + j) * self.side + k]
    }

    /// Trilinear sample at a world point (mm, origin at volume center).
    /// Returns None outside the volume.
    pub fn sample_world(&self, p: [f64; 3]) -> Option<f64> {
        let half = (self.side as f64 - 1.0) / 2.0;
        let g = [p[0] + half, p[1] + half, p[2] + half];
        let lim = self.side as f64 - 1.0;
        if g.iter().any(|&v| !(0.0..=lim).contains(&v)) {
            return None;
        }
        let i0 = g.map(|v| (v.floor() as usize).min(self.side - 2));
        let f = [g[0] - i0[0] as f64, g[1] - i0[1] as f64, g[2] - i0[2] as f64];
        let mut v = 0.0;
        for (dx, fx) in [(0, 1.0 - f[0]), (1, f[0])] {
            for (dy, fy) in [(0, 1.0 - f[1]), (1, f[1])] {
                for (dz, fz) in [(0, 1.0 - f[2]), (1, f[2])] {
                    v += fx * fy * fz * self.voxel(i0[0] + dx, i0[1] + dy, i0[2] + dz);
                }
            }
        }
        Some(v)
    }
}

// --------------------------------------------------------------- trajectories

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tactic {
    Linear,
    Curved,
    Loop,
    Sector,
}

impl Tactic {
    pub fn parse(s: &str) -> Result<Tactic> {
        match s {
            "linear" => Ok(Tactic::Linear),
            "curved" => Ok(Tactic::Curved),
            "loop" => Ok(Tactic::Loop),
            "sector" => Ok(Tactic::Sector),
            other => Err(Error::Config(format!("unknown tactic `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Tactic::Linear => "linear",
            Tactic::Curved => "curved",
            Tactic::Loop => "loop",
            Tactic::Sector => "sector",
        }
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_traj_args(n: usize, step: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::contract("gen_trajectory", format!("need at least 2 frames, got {n}")));
    }
    if !(step > 0.0) {
        return Err(Error::contract("gen_trajectory", format!("step must be positive, got {step}")));
    }
    Ok(())
}

/// Constant out-of-plane translation with white angular jitter per step.
pub fn linear_trajectory(n: usize, step: f64, jitter_deg: f64, r: &mut rng::Prng) -> Result<Vec<PoseParams>> {
    check_traj_args(n, step)?;
    Ok((0..n - 1)
        .map(|_| {
            let phi = [
                jitter_deg * rng::normal(r),
                jitter_deg * rng::normal(r),
                jitter_deg * rng::normal(r),
            ];
            PoseParams::new([0.0, 0.0, step], phi)
        })
        .collect())
}

/// Constant-curvature sweep: each step translates `step` along local z and
/// turns about local x so frame centers sit exactly on a circle of radius
/// 1/|kappa| (the step is the chord). Sign of kappa sets the turn direction.
pub fn curved_trajectory(n: usize, step: f64, kappa: f64) -> Result<Vec<PoseParams>> {
    check_traj_args(n, step)?;
    let half_chord = kappa.abs() * step / 2.0;
    if kappa == 0.0 || half_chord >= 1.0 {
        return Err(Error::contract(
            "gen_trajectory",
            format!("curvature {kappa} incompatible with step {step}"),
        ));
    }
    let alpha = (2.0 * half_chord.asin()).to_degrees() * kappa.signum();
    Ok(vec![PoseParams::new([0.0, 0.0, step], [alpha, 0.0, 0.0]); n - 1])
}

/// Closed ring: per-step rotation of 360/(n-1) degrees about one local axis
/// (0 = x, 1 = y, 2 = z) while translating `step` along local z.
pub fn loop_trajectory(n: usize, step: f64, axis: usize) -> Result<Vec<PoseParams>> {
    check_traj_args(n, step)?;
    if axis > 2 {
        return Err(Error::contract("gen_trajectory", format!("loop axis must be 0..=2, got {axis}")));
    }
    let alpha = 360.0 / (n - 1) as f64;
    let mut phi = [0.0; 3];
    phi[axis] = alpha;
    Ok(vec![PoseParams::new([0.0, 0.0, step], phi); n - 1])
}

/// Fan sweep about a pivot `pivot_mm` above the image center (along -y):
/// pure rotation about that line, so centers trace an arc of radius pivot.
pub fn sector_trajectory(n: usize, fan_deg: f64, pivot_mm: f64) -> Result<Vec<PoseParams>> {
    check_traj_args(n, pivot_mm)?;
    if fan_deg == 0.0 {
        return Err(Error::contract("gen_trajectory", "sector fan must be nonzero"));
    }
    let beta = fan_deg / (n - 1) as f64;
    let q = [0.0, -pivot_mm, 0.0];
    let rot = params_to_transform(&PoseParams::new([0.0; 3], [beta, 0.0, 0.0]));
    // Step transform: rotate about the x-axis line through q.
    let t = [
        q[0] - (rot.m[0][0] * q[0] + rot.m[0][1] * q[1] + rot.m[0][2] * q[2]),
        q[1] - (rot.m[1][0] * q[0] + rot.m[1][1] * q[1] + rot.m[1][2] * q[2]),
        q[2] - (rot.m[2][0] * q[0] + rot.m[2][1] * q[1] + rot.m[2][2] * q[2]),
    ];
    Ok(vec![PoseParams::new(t, [beta, 0.0, 0.0]); n - 1])
}

/// Per-step angular jitter used by the linear tactic, degrees.
pub const LINEAR_JITTER_DEG: f64 = 0.5;

/// Draw a tactic's per-scan shape parameters from `seed` and build the
/// relative trajectory.
pub fn gen_trajectory(tactic: Tactic, n: usize, step: f64, seed: u64) -> Result<Vec<PoseParams>> {
    let mut r = rng::prng(rng::derive(seed, "trajectory"));
    match tactic {
        Tactic::Linear => {
            let s = step * rng::uniform(&mut r, 0.7, 1.3);
            linear_trajectory(n, s, LINEAR_JITTER_DEG, &mut r)
        }
        Tactic::Curved => {
            let radius = rng::log_uniform(&mut r, 30.0, 80.0);
            let sign = if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            curved_trajectory(n, step, sign / radius)
        }
        Tactic::Loop => loop_trajectory(n, step, 0),
        Tactic::Sector => {
            let fan = rng::uniform(&mut r, 40.0, 80.0);
            let sign = if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            let pivot = rng::uniform(&mut r, 8.0, 15.0);
            sector_trajectory(n, sign * fan, pivot)
        }
    }
}

// ------------------------------------------------------------------ rendering

pub struct RenderOut {
    /// `[n, 1, h, w]` row-major, values in [0, 1].
    pub frames: Vec<f64>,
    /// Number of samples that fell outside the volume and were clamped to 0.
    pub clamped: usize,
}

/// Pure-translation placement that centers the trajectory's corner cloud in
/// the phantom. Deterministic in its inputs, so a stored scan can be
/// re-rendered exactly from (params, geometry, phantom side).
pub fn place_trajectory(traj: &[RigidTransform], geo: &FrameGeometry) -> RigidTransform {
    let cloud = corner_cloud(traj, geo);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut t = RigidTransform::identity();
    for a in 0..3 {
        t.m[a][3] = -(lo[a] + hi[a]) / 2.0;
    }
    t
}

/// Sample every frame's oriented image plane from the phantom.
pub fn render_frames(phantom: &Phantom, poses: &[RigidTransform], geo: &FrameGeometry) -> RenderOut {
    let mut frames = Vec::with_capacity(poses.len() * geo.h * geo.w);
    let mut clamped = 0;
    for t in poses {
        for row in 0..geo.h {
            for col in 0..geo.w {
                let local = geo.pixel_to_local(row as f64, col as f64);
                let world = t.apply(local);
                match phantom.sample_world(world) {
                    Some(v) => frames.push(v),
                    None => {
                        frames.push(0.0);
                        clamped += 1;
                    }
                }
            }
        }
    }
    RenderOut { frames, clamped }
}

/// Compose, center in the volume, and render.
pub fn render_scan(phantom: &Phantom, params: &[PoseParams], geo: &FrameGeometry) -> RenderOut {
    let traj = compose_trajectory(params);
    let place = place_trajectory(&traj, geo);
    let placed: Vec<RigidTransform> = traj.iter().map(|t| place.mul(t)).collect();
    render_frames(phantom, &placed, geo)
}

// -------------------------------------------------------------- imu simulator

#[derive(Clone, Copy, Debug)]
pub struct ImuNoise {
    /// White-noise sigma on relative angles, degrees.
    pub angle_sigma_deg: f64,
    /// Sigma of each sensor's constant per-axis angle bias, degrees.
    pub angle_bias_deg: f64,
    /// White-noise sigma on accelerations.
    pub accel_sigma: f64,
    /// Per-sensor noise multipliers are log-uniform in [1/spread, spread].
    pub spread: f64,
    /// Optionally scale one sensor's angle noise by a factor.
    pub corrupt: Option<(usize, f64)>,
}

impl ImuNoise {
    pub fn noiseless() -> Self {
        ImuNoise {
            angle_sigma_deg: 0.0,
            angle_bias_deg: 0.0,
            accel_sigma: 0.0,
            spread: 1.0,
            corrupt: None,
        }
    }

    pub fn from_config(cfg: &DataConfig) -> Self {
        ImuNoise {
            angle_sigma_deg: cfg.angle_noise_deg,
            angle_bias_deg: cfg.angle_bias_deg,
            accel_sigma: cfg.accel_noise,
            spread: cfg.noise_spread,
            corrupt: cfg.corrupt_imu.map(|i| (i, cfg.corrupt_factor)),
        }
    }
}

pub const GRAVITY: f64 = 9.81;

/// Simulate M sensors over a trajectory. Angles are the true relative Euler
/// angles plus a per-sensor constant bias plus white noise; accelerations are
/// unit-interval second differences of the frame centers plus gravity
/// (world -z) rotated into the probe frame, plus white noise. Noise draws do
/// not depend on the sigma values, so two runs with the same seed but
/// different sigmas see the same underlying randomness, scaled.
pub fn simulate_imus(params: &[PoseParams], m: usize, noise: &ImuNoise, seed: u64) -> Result<ImuSample> {
    if params.is_empty() {
        return Err(Error::contract("simulate_imus", "need at least one transition"));
    }
    if m == 0 {
        return Err(Error::contract("simulate_imus", "need at least one sensor"));
    }
    if let Some((j, _)) = noise.corrupt {
        if j >= m {
            return Err(Error::contract(
                "simulate_imus",
                format!("corrupt sensor {j} out of range for {m} sensors"),
            ));
        }
    }
    let n_trans = params.len();
    let traj = compose_trajectory(params);
    let centers: Vec<[f64; 3]> = traj.iter().map(RigidTransform::translation).collect();

    // Per-sensor quality multipliers and constant biases.
    let mut rq = rng::prng(rng::derive(seed, "imu-quality"));
    let draw_mult = |r: &mut rng::Prng, spread: f64| {
        if spread > 1.0 {
            rng::log_uniform(r, 1.0 / spread, spread)
        } else {
            1.0
        }
    };
    let mut mult_angle = Vec::with_capacity(m);
    let mut mult_acc = Vec::with_capacity(m);
    for _ in 0..m {
        mult_angle.push(draw_mult(&mut rq, noise.spread));
        mult_acc.push(draw_mult(&mut rq, noise.spread));
    }
    let mut rb = rng::prng(rng::derive(seed, "imu-bias"));
    let bias: Vec<[f64; 3]> = (0..m)
        .map(|j| {
            let s = noise.angle_bias_deg * mult_angle[j];
            [s * rng::normal(&mut rb), s * rng::normal(&mut rb), s * rng::normal(&mut rb)]
        })
        .collect();

    let g_world = [0.0, 0.0, -GRAVITY];
    let mut rn = rng::prng(rng::derive(seed, "imu-noise"));
    let mut phi = Vec::with_capacity(n_trans * m * 3);
    let mut acc = Vec::with_capacity(n_trans * m * 3);
    for i in 0..n_trans {
        // True specific force in the frame starting this transition:
        // second difference (previous velocity is zero before the scan)
        // minus gravity, expressed in probe coordinates.
        let v_cur = sub3(centers[i + 1], centers[i]);
        let v_prev = if i == 0 { [0.0; 3] } else { sub3(centers[i], centers[i - 1]) };
        let accel_world = sub3(v_cur, v_prev);
        let f_world = sub3(accel_world, g_world);
        let r = &traj[i];
        let f_probe = [
            r.m[0][0] * f_world[0] + r.m[1][0] * f_world[1] + r.m[2][0] * f_world[2],
            r.m[0][1] * f_world[0] + r.m[1][1] * f_world[1] + r.m[2][1] * f_world[2],
            r.m[0][2] * f_world[0] + r.m[1][2] * f_world[1] + r.m[2][2] * f_world[2],
        ];
        for j in 0..m {
            let corrupt = match noise.corrupt {
                Some((c, f)) if c == j => f,
                _ => 1.0,
            };
            let s_ang = noise.angle_sigma_deg * mult_angle[j] * corrupt;
            for axis in 0..3 {
                phi.push(params[i].phi[axis] + bias[j][axis] + s_ang * rng::normal(&mut rn));
            }
            let s_acc = noise.accel_sigma * mult_acc[j];
            for &f in &f_probe {
                acc.push(f + s_acc * rng::normal(&mut rn));
            }
        }
    }
    ImuSample::new(n_trans, m, phi, acc)
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

// ----------------------------------------------------------------- scan data

/// One complete synthetic scan with ground truth.
#[derive(Clone, Debug)]
pub struct ScanSequence {
    pub id: String,
    /// `[n, 1, h, w]` row-major, values in [0, 1].
    pub frames: Vec<f64>,
    pub n: usize,
    pub geo: FrameGeometry,
    pub gt: Vec<PoseParams>,
    pub imu: ImuSample,
    pub tactic: Tactic,
    pub seed: u64,
}

pub fn generate_scan(cfg: &DataConfig, tactic: Tactic, id: &str, scan_seed: u64) -> Result<ScanSequence> {
    let mut rl = rng::prng(rng::derive(scan_seed, "length"));
    let n = if cfg.n_max > cfg.n_min {
        cfg.n_min + (rng::uniform(&mut rl, 0.0, (cfg.n_max - cfg.n_min + 1) as f64) as usize).min(cfg.n_max - cfg.n_min)
    } else {
        cfg.n_min
    };
    let geo = FrameGeometry::new(cfg.h, cfg.w, cfg.spacing, cfg.spacing)?;
    let gt = gen_trajectory(tactic, n, cfg.step_mm, scan_seed)?;
    let phantom = Phantom::new(cfg.phantom_mm, rng::derive(scan_seed, "phantom"))?;
    let render = render_scan(&phantom, &gt, &geo);
    let imu = simulate_imus(&gt, cfg.imus, &ImuNoise::from_config(cfg), rng::derive(scan_seed, "imu"))?;
    Ok(ScanSequence {
        id: id.to_string(),
        frames: render.frames,
        n,
        geo,
        gt,
        imu,
        tactic,
        seed: scan_seed,
    })
}

// Round frames through f32 so the in-memory values equal what a reader of
// frames.f32 sees; keeps replay comparisons bit-exact.
fn frames_to_f32(frames: &[f64]) -> Vec<f32> {
    frames.iter().map(|&v| v as f32).collect()
}

pub fn save_scan(dir: &Path, scan: &ScanSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(scan.frames.len() * 4);
    for v in frames_to_f32(&scan.frames) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("frames.f32"), bytes)?;
    let meta = format!(
        "N={}\nH={}\nW={}\nsx={}\nsy={}\ntactic={}\nseed={}\n",
        scan.n, scan.geo.h, scan.geo.w, scan.geo.sx, scan.geo.sy, scan.tactic, scan.seed
    );
    fs::write(dir.join("meta.txt"), meta)?;
    write_trajectory_csv(&dir.join("gt_params.csv"), &scan.gt)?;
    let mut imu = String::from("transition,imu_id,phix,phiy,phiz,ax,ay,az\n");
    for i in 0..scan.imu.n_trans {
        for j in 0..scan.imu.m {
            let p = scan.imu.phi_at(i, j);
            let a = scan.imu.acc_at(i, j);
            imu.push_str(&format!(
                "{i},{j},{},{},{},{},{},{}\n",
                p[0], p[1], p[2], a[0], a[1], a[2]
            ));
        }
    }
    fs::write(dir.join("imu.csv"), imu)?;
    Ok(())
}

fn parse_meta(path: &Path) -> Result<(usize, usize, usize, f64, f64, Tactic, u64)> {
    let text = fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let mut n = None;
    let mut h = None;
    let mut w = None;
    let mut sx = None;
    let mut sy = None;
    let mut tactic = None;
    let mut seed = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fail = |detail: String| Error::Parse {
            path: origin.clone(),
            line: i + 1,
            detail,
        };
        let (k, v) = line.split_once('=').ok_or_else(|| fail(format!("expected key=value, got `{line}`")))?;
        let bad = |what: &str| fail(format!("bad {what} `{v}`"));
        match k {
            "N" => n = Some(v.parse().map_err(|_| bad("N"))?),
            "H" => h = Some(v.parse().map_err(|_| bad("H"))?),
            "W" => w = Some(v.parse().map_err(|_| bad("W"))?),
            "sx" => sx = Some(v.parse().map_err(|_| bad("sx"))?),
            "sy" => sy = Some(v.parse().map_err(|_| bad("sy"))?),
            "tactic" => tactic = Some(Tactic::parse(v)?),
            "seed" => seed = Some(v.parse().map_err(|_| bad("seed"))?),
            other => return Err(fail(format!("unknown meta key `{other}`"))),
        }
    }
    let missing = |what: &str| Error::Dataset(format!("{origin}: missing meta key {what}"));
    Ok((
        n.ok_or_else(|| missing("N"))?,
        h.ok_or_else(|| missing("H"))?,
        w.ok_or_else(|| missing("W"))?,
        sx.ok_or_else(|| missing("sx"))?,
        sy.ok_or_else(|| missing("sy"))?,
        tactic.ok_or_else(|| missing("tactic"))?,
        seed.ok_or_else(|| missing("seed"))?,
    ))
}

pub fn load_scan(dir: &Path) -> Result<ScanSequence> {
    load_scan_impl(dir, true)
}

/// Load a scan for reconstruction: ground truth is optional (zero-filled
/// placeholders when `gt_params.csv` is absent). Inference and adaptation
/// never read the labels.
pub fn load_scan_inference(dir: &Path) -> Result<ScanSequence> {
    load_scan_impl(dir, false)
}

fn load_scan_impl(dir: &Path, require_gt: bool) -> Result<ScanSequence> {
    let (n, h, w, sx, sy, tactic, seed) = parse_meta(&dir.join("meta.txt"))?;
    let geo = FrameGeometry::new(h, w, sx, sy)?;
    let bytes = fs::read(dir.join("frames.f32"))?;
    if bytes.len() != n * h * w * 4 {
        return Err(Error::Dataset(format!(
            "{}: frames.f32 holds {} bytes, expected {} for {n} frames of {h}x{w}",
            dir.display(),
            bytes.len(),
            n * h * w * 4
        )));
    }
    let frames: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let gt_file = dir.join("gt_params.csv");
    let gt = if gt_file.is_file() || require_gt {
        let gt = read_trajectory_csv(&gt_file)?;
        if gt.len() != n - 1 {
            return Err(Error::Dataset(format!(
                "{}: gt_params.csv has {} transitions, expected {}",
                dir.display(),
                gt.len(),
                n - 1
            )));
        }
        gt
    } else {
        vec![PoseParams::new([0.0; 3], [0.0; 3]); n - 1]
    };
    let imu = load_imu_csv(&dir.join("imu.csv"), n - 1)?;
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scan".to_string());
    Ok(ScanSequence {
        id,
        frames,
        n,
        geo,
        gt,
        imu,
        tactic,
        seed,
    })
}

fn load_imu_csv(path: &Path, n_trans: usize) -> Result<ImuSample> {
    let text = fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let fail = |line: usize, detail: String| Error::Parse {
        path: origin.clone(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "transition,imu_id,phix,phiy,phiz,ax,ay,az" => {}
        Some((_, h)) => return Err(fail(1, format!("bad header: `{}`", h.trim()))),
        None => return Err(fail(1, "empty imu file".into())),
    }
    let mut rows: Vec<(usize, usize, [f64; 6])> = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(fail(i + 1, format!("expected 8 fields, got {}", fields.len())));
        }
        let t: usize = fields[0].parse().map_err(|_| fail(i + 1, format!("bad transition `{}`", fields[0])))?;
        let j: usize = fields[1].parse().map_err(|_| fail(i + 1, format!("bad imu_id `{}`", fields[1])))?;
        let mut vals = [0.0; 6];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = fields[k + 2].parse().map_err(|_| fail(i + 1, format!("bad number `{}`", fields[k + 2])))?;
        }
        rows.push((t, j, vals));
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{origin}: no imu rows")));
    }
    let m = rows.iter().map(|r| r.1).max().unwrap() + 1;
    if rows.len() != n_trans * m {
        return Err(Error::Dataset(format!(
            "{origin}: {} rows, expected {} for {n_trans} transitions x {m} sensors",
            rows.len(),
            n_trans * m
        )));
    }
    let mut phi = vec![f64::NAN; n_trans * m * 3];
    let mut acc = vec![f64::NAN; n_trans * m * 3];
    for (t, j, vals) in rows {
        if t >= n_trans || j >= m {
            return Err(Error::Dataset(format!("{origin}: row index ({t},{j}) out of range")));
        }
        let o = (t * m + j) * 3;
        if !phi[o].is_nan() {
            return Err(Error::Dataset(format!("{origin}: duplicate row ({t},{j})")));
        }
        phi[o..o + 3].copy_from_slice(&vals[..3]);
        acc[o..o + 3].copy_from_slice(&vals[3..]);
    }
    if phi.iter().chain(acc.iter()).any(|v| v.is_nan()) {
        return Err(Error::Dataset(format!("{origin}: missing rows")));
    }
    ImuSample::new(n_trans, m, phi, acc)
}

// -------------------------------------------------------------------- dataset

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, e.g. `train/scan_0000`.
    pub path: String,
    pub tactic: String,
    pub seed: u64,
    pub n: usize,
}

pub const MANIFEST_HEADER: &str = "path,tactic,seed,n";

/// Generate and write the full dataset: `out/{train,val,test}/scan_XXXX/` plus
/// `out/manifest.csv`. Split sizes are floor(train_frac * scans) and
/// floor(val_frac * scans); test takes the remainder. Tactics cycle over the
/// global scan index. Byte-identical for identical (config, seed).
pub fn make_dataset(cfg: &DataConfig, seed: u64, out: &Path, force: bool) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    if out.exists() {
        if !force {
            return Err(Error::Dataset(format!(
                "output directory {} already exists (pass --force to replace it)",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }
    fs::create_dir_all(out)?;
    let n_train = (cfg.split_train * cfg.scans as f64).floor() as usize;
    let n_val = (cfg.split_val * cfg.scans as f64).floor() as usize;
    let mut entries = Vec::with_capacity(cfg.scans);
    for i in 0..cfg.scans {
        let split = if i < n_train {
            "train"
        } else if i < n_train + n_val {
            "val"
        } else {
            "test"
        };
        let tactic = Tactic::parse(&cfg.tactics[i % cfg.tactics.len()])?;
        let scan_seed = rng::derive_idx(seed, "scan", i as u64);
        let id = format!("scan_{i:04}");
        let scan = generate_scan(cfg, tactic, &id, scan_seed)?;
        save_scan(&out.join(split).join(&id), &scan)?;
        entries.push(ManifestEntry {
            path: format!("{split}/{id}"),
            tactic: tactic.as_str().to_string(),
            seed: scan_seed,
            n: scan.n,
        });
    }
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for e in &entries {
        manifest.push_str(&format!("{},{},{},{}\n", e.path, e.tactic, e.seed, e.n));
    }
    fs::write(out.join("manifest.csv"), manifest)?;
    Ok(entries)
}

/// List the scan directories of one split, sorted by name.
pub fn split_scan_dirs(data_dir: &Path, split: &str) -> Result<Vec<std::path::PathBuf>> {
    let dir = data_dir.join(split);
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing split directory {}", dir.display())));
    }
    let mut dirs: Vec<_> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

// ---------------------------------------------------------------- augmentation

/// Contiguous sub-sequence [start, start+len) of a scan; all labels and
/// sensor rows stay aligned (transition i covers frames i..i+1).
pub fn crop_scan(scan: &ScanSequence, start: usize, len: usize) -> Result<ScanSequence> {
    if len < 2 || start + len > scan.n {
        return Err(Error::contract(
            "crop_scan",
            format!("crop [{start}, {}) invalid for {} frames", start + len, scan.n),
        ));
    }
    let fsz = scan.geo.h * scan.geo.w;
    let frames = scan.frames[start * fsz..(start + len) * fsz].to_vec();
    let gt = scan.gt[start..start + len - 1].to_vec();
    let m = scan.imu.m;
    let row = |i: usize| (i * m) * 3..((i + 1) * m) * 3;
    let mut phi = Vec::with_capacity((len - 1) * m * 3);
    let mut acc = Vec::with_capacity((len - 1) * m * 3);
    for i in start..start + len - 1 {
        phi.extend_from_slice(&scan.imu.phi[row(i)]);
        acc.extend_from_slice(&scan.imu.acc[row(i)]);
    }
    Ok(ScanSequence {
        id: scan.id.clone(),
        frames,
        n: len,
        geo: scan.geo,
        gt,
        imu: ImuSample::new(len - 1, m, phi, acc)?,
        tactic: scan.tactic,
        seed: scan.seed,
    })
}

fn invert_params(p: &PoseParams) -> PoseParams {
    transform_to_params(&params_to_transform(p).inverse()).params
}

/// Frame-order reversal with consistent labels: frame k becomes frame
/// n-1-k, and each relative transform is replaced by the inverse of its
/// mirror. Sensor angle rows get the same inverse treatment (per row, keeping
/// each sensor's noise); acceleration rows are mirrored unchanged, since unit
/// interval second differences are symmetric under time reversal.
pub fn reverse_scan(scan: &ScanSequence) -> ScanSequence {
    let fsz = scan.geo.h * scan.geo.w;
    let mut frames = Vec::with_capacity(scan.frames.len());
    for i in (0..scan.n).rev() {
        frames.extend_from_slice(&scan.frames[i * fsz..(i + 1) * fsz]);
    }
    let gt: Vec<PoseParams> = scan.gt.iter().rev().map(invert_params).collect();
    let m = scan.imu.m;
    let n_trans = scan.imu.n_trans;
    let mut phi = Vec::with_capacity(n_trans * m * 3);
    let mut acc = Vec::with_capacity(n_trans * m * 3);
    for i in (0..n_trans).rev() {
        for j in 0..m {
            let p = scan.imu.phi_at(i, j);
            let inv = invert_params(&PoseParams::new([0.0; 3], p));
            phi.extend_from_slice(&inv.phi);
            acc.extend_from_slice(&scan.imu.acc_at(i, j));
        }
    }
    ScanSequence {
        id: scan.id.clone(),
        frames,
        n: scan.n,
        geo: scan.geo,
        gt,
        imu: ImuSample::new(n_trans, m, phi, acc).expect("reversal preserves row counts"),
        tactic: scan.tactic,
        seed: scan.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{drift_metrics, hausdorff, mea};

    #[test]
    fn phantom_is_deterministic_bounded_and_structured() {
        let a = Phantom::new(32, 7).unwrap();
        let b = Phantom::new(32, 7).unwrap();
        assert_eq!(a.data, b.data);
        let c = Phantom::new(32, 8).unwrap();
        assert_ne!(a.data, c.data);
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Not constant: the field has real structure.
        let lo = a.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo > 0.2, "range {lo}..{hi}");
        assert!(Phantom::new(8, 0).is_err());

        // Out-of-volume samples are None; the center is inside.
        assert!(a.sample_world([0.0, 0.0, 0.0]).is_some());
        assert!(a.sample_world([100.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn linear_trajectory_is_pure_translation_without_jitter() {
        let mut r = rng::prng(1);
        let t = linear_trajectory(8, 1.5, 0.0, &mut r).unwrap();
        assert_eq!(t.len(), 7);
        for p in &t {
            assert_eq!(p.t, [0.0, 0.0, 1.5]);
            assert_eq!(p.phi, [0.0; 3]);
        }
        assert!(linear_trajectory(1, 1.0, 0.0, &mut r).is_err());
        assert!(linear_trajectory(4, 0.0, 0.0, &mut r).is_err());
    }

    #[test]
    fn curved_centers_sit_on_the_expected_circle() {
        // Least-squares circle fit (Kasa) in the y-z plane as the oracle.
        let kappa = 0.02;
        let params = curved_trajectory(32, 1.0, kappa).unwrap();
        let traj = compose_trajectory(&params);
        let pts: Vec<[f64; 2]> = traj
            .iter()
            .map(|t| {
                let c = t.translation();
                assert!(c[0].abs() < 1e-9, "motion must stay in the y-z plane");
                [c[1], c[2]]
            })
            .collect();
        // Normal equations for y^2+z^2 + D y + E z + F = 0.
        let mut a = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for p in &pts {
            let row = [p[0], p[1], 1.0];
            let b = -(p[0] * p[0] + p[1] * p[1]);
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] += row[i] * row[j];
                }
                rhs[i] += row[i] * b;
            }
        }
        // Gaussian elimination.
        for col in 0..3 {
            let piv = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            rhs.swap(col, piv);
            for r in col + 1..3 {
                let f = a[r][col] / a[col][col];
                for c in col..3 {
                    a[r][c] -= f * a[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
        let mut sol = [0.0f64; 3];
        for r in (0..3).rev() {
            let mut s = rhs[r];
            for c in r + 1..3 {
                s -= a[r][c] * sol[c];
            }
            sol[r] = s / a[r][r];
        }
        let radius = (sol[0] * sol[0] / 4.0 + sol[1] * sol[1] / 4.0 - sol[2]).sqrt();
        assert!((radius - 1.0 / kappa).abs() < 1e-3, "fit radius {radius}");
        // Residuals: every center on the fitted circle.
        let (cy, cz) = (-sol[0] / 2.0, -sol[1] / 2.0);
        for p in &pts {
            let d = ((p[0] - cy).powi(2) + (p[1] - cz).powi(2)).sqrt();
            assert!((d - radius).abs() < 1e-6);
        }
        assert!(curved_trajectory(8, 1.0, 0.0).is_err());
        assert!(curved_trajectory(8, 1.0, 3.0).is_err());
    }

    #[test]
    fn loop_closes_orientation_and_position() {
        let params = loop_trajectory(5, 1.0, 2).unwrap();
        let traj = compose_trajectory(&params);
        let last = traj.last().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((last.m[i][j] - expect).abs() < 1e-6, "orientation fails to close");
            }
        }
        // About-x loop also returns near the start point (chord polygon).
        let ring = compose_trajectory(&loop_trajectory(17, 1.0, 0).unwrap());
        let end = ring.last().unwrap().translation();
        assert!((end[0].powi(2) + end[1].powi(2) + end[2].powi(2)).sqrt() < 1e-6);
        assert!(loop_trajectory(5, 1.0, 3).is_err());
    }

    #[test]
    fn sector_pivots_about_a_fixed_line() {
        let pivot = 10.0;
        let params = sector_trajectory(9, 64.0, pivot).unwrap();
        let traj = compose_trajectory(&params);
        // The pivot point is invariant; centers stay at distance `pivot`.
        let q = [0.0, -pivot, 0.0];
        for t in &traj {
            let qq = t.apply(q);
            assert!(dist3(qq, q) < 1e-9, "pivot moved: {qq:?}");
            let c = t.translation();
            assert!((dist3(c, q) - pivot).abs() < 1e-9);
        }
        // Total sweep equals the fan: last orientation rotates x-axis plane by 64 deg.
        let e = transform_to_params(traj.last().unwrap());
        assert!((e.params.phi[0] - 64.0).abs() < 1e-9);
        assert!(sector_trajectory(9, 0.0, 10.0).is_err());
    }

    fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn gen_trajectory_is_seeded_and_covers_tactics() {
        for tactic in [Tactic::Linear, Tactic::Curved, Tactic::Loop, Tactic::Sector] {
            let a = gen_trajectory(tactic, 12, 1.0, 5).unwrap();
            let b = gen_trajectory(tactic, 12, 1.0, 5).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 11);
        }
        let a = gen_trajectory(Tactic::Linear, 12, 1.0, 5).unwrap();
        let c = gen_trajectory(Tactic::Linear, 12, 1.0, 6).unwrap();
        assert_ne!(a, c);
        assert!(Tactic::parse("spiral").is_err());
        assert_eq!(Tactic::parse("loop").unwrap(), Tactic::Loop);
    }

    #[test]
    fn renderer_matches_simple_oracles() {
        let geo = FrameGeometry::new(8, 8, 0.5, 0.5).unwrap();
        // Constant phantom -> constant frames, no clamping when centered.
        let ph = Phantom::constant(24, 0.375);
        let poses = vec![RigidTransform::identity(); 3];
        let out = render_frames(&ph, &poses, &geo);
        assert_eq!(out.clamped, 0);
        assert!(out.frames.iter().all(|&v| v == 0.375));
        // Identical poses -> identical frames on a structured phantom.
        let ph = Phantom::new(24, 3).unwrap();
        let out = render_frames(&ph, &poses, &geo);
        assert_eq!(out.frames[..64], out.frames[64..128]);
        // A pose far outside the volume clamps every sample and counts it.
        let mut far = RigidTransform::identity();
        far.m[0][3] = 1000.0;
        let out = render_frames(&ph, &[far], &geo);
        assert_eq!(out.clamped, 64);
        assert!(out.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_voxel_shift_moves_frame_content() {
        // Pixel spacing = 1 voxel: translating the pose one voxel along +x
        // must reproduce the neighbour columns (NCC > 0.99 on the overlap).
        let ph = Phantom::new(48, 11).unwrap();
        let geo = FrameGeometry::new(16, 16, 1.0, 1.0).unwrap();
        let base = RigidTransform::identity();
        let mut shifted = base;
        shifted.m[0][3] = 1.0; // one voxel along image x (columns)
        let a = render_frames(&ph, &[base], &geo).frames;
        let b = render_frames(&ph, &[shifted], &geo).frames;
        // b at column c equals a at column c+1 -> compare overlaps.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in 0..16 {
            for c in 0..15 {
                xs.push(a[r * 16 + c + 1]);
                ys.push(b[r * 16 + c]);
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            cov += (x - mx) * (y - my);
            vx += (x - mx) * (x - mx);
            vy += (y - my) * (y - my);
        }
        let ncc = cov / (vx.sqrt() * vy.sqrt());
        assert!(ncc > 0.99, "ncc {ncc}");
        // In fact exact here: the sampling lattice lands on the same points.
        for (x, y) in xs.iter().zip(&ys) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn default_tactics_stay_inside_the_phantom() {
        let cfg = DataConfig::default();
        let geo = FrameGeometry::new(cfg.h, cfg.w, cfg.spacing, cfg.spacing).unwrap();
        let ph = Phantom::new(cfg.phantom_mm, 1).unwrap();
        for tactic in [Tactic::Linear, Tactic::Curved, Tactic::Loop, Tactic::Sector] {
            for seed in 0..4 {
                let params = gen_trajectory(tactic, cfg.n_max, cfg.step_mm, seed).unwrap();
                let out = render_scan(&ph, &params, &geo);
                assert_eq!(out.clamped, 0, "{tactic} seed {seed} left the volume");
            }
        }
    }

    #[test]
    fn imu_noise_free_equals_ground_truth_exactly() {
        let params = gen_trajectory(Tactic::Curved, 10, 1.0, 3).unwrap();
        let s = simulate_imus(&params, 3, &ImuNoise::noiseless(), 9).unwrap();
        for i in 0..9 {
            for j in 0..3 {
                assert_eq!(s.phi_at(i, j), params[i].phi);
            }
        }
        // Accumulated noise-free angles reproduce gt orientation within 1e-6 deg.
        let angles: Vec<PoseParams> = (0..9)
            .map(|i| PoseParams::new([0.0; 3], s.phi_at(i, 0)))
            .collect();
        let got = compose_trajectory(&angles);
        let want = compose_trajectory(&params);
        for (g, w) in got.iter().zip(&want) {
            let eg = transform_to_params(g).params.phi;
            let ew = transform_to_params(w).params.phi;
            for a in 0..3 {
                assert!((eg[a] - ew[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn static_pose_measures_rotated_gravity_only() {
        // A zero-motion trajectory with a fixed 90 deg roll: gravity (world -z)
        // appears on the probe's y axis after the first transition's frame.
        let still = vec![PoseParams::new([0.0; 3], [90.0, 0.0, 0.0]), PoseParams::default()];
        let s = simulate_imus(&still, 2, &ImuNoise::noiseless(), 4).unwrap();
        // Transition 0 starts at identity: f = (0, 0, +g).
        assert!(dist3(s.acc_at(0, 0), [0.0, 0.0, GRAVITY]) < 1e-12);
        // Transition 1 starts rolled +90 deg about x: the probe y axis points
        // along world +z, so the specific force lands on +y.
        assert!(dist3(s.acc_at(1, 0), [0.0, GRAVITY, 0.0]) < 1e-9);
    }

    #[test]
    fn angle_noise_statistics_match_sigma() {
        let params = vec![PoseParams::new([0.0, 0.0, 1.0], [1.0, -2.0, 0.5]); 1000];
        let noise = ImuNoise {
            angle_sigma_deg: 1.0,
            angle_bias_deg: 0.0,
            accel_sigma: 0.0,
            spread: 1.0,
            corrupt: None,
        };
        let s = simulate_imus(&params, 1, &noise, 77).unwrap();
        let devs: Vec<f64> = (0..1000).flat_map(|i| {
            let p = s.phi_at(i, 0);
            [p[0] - 1.0, p[1] + 2.0, p[2] - 0.5]
        }).collect();
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let std = (devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / devs.len() as f64).sqrt();
        assert!((0.9..=1.1).contains(&std), "std {std}");

        // Same seed, corrupted sensor: identical draws scaled by the factor.
        let corrupted = ImuNoise {
            corrupt: Some((0, 10.0)),
            ..noise
        };
        let c = simulate_imus(&params, 1, &corrupted, 77).unwrap();
        for i in 0..1000 {
            let p = s.phi_at(i, 0);
            let q = c.phi_at(i, 0);
            assert!((q[0] - 1.0 - 10.0 * (p[0] - 1.0)).abs() < 1e-9);
        }
        assert!(simulate_imus(&params, 1, &ImuNoise { corrupt: Some((3, 2.0)), ..noise }, 1).is_err());
    }

    #[test]
    fn dataset_generation_is_byte_identical_and_replayable() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            scans: 5,
            n_min: 6,
            n_max: 9,
            h: 12,
            w: 12,
            phantom_mm: 32,
            imus: 2,
            split_train: 0.6,
            split_val: 0.2,
            ..DataConfig::default()
        };
        let d1 = tmp.path().join("a");
        let d2 = tmp.path().join("b");
        let entries = make_dataset(&cfg, 42, &d1, false).unwrap();
        make_dataset(&cfg, 42, &d2, false).unwrap();
        assert_eq!(entries.len(), 5);
        // floor splits: 3 train, 1 val, 1 test.
        let counts: Vec<usize> = ["train", "val", "test"]
            .iter()
            .map(|s| entries.iter().filter(|e| e.path.starts_with(s)).count())
            .collect();
        assert_eq!(counts, vec![3, 1, 1]);
        // Byte-identical regeneration, file by file.
        for e in &entries {
            for f in ["frames.f32", "meta.txt", "gt_params.csv", "imu.csv"] {
                let x = fs::read(d1.join(&e.path).join(f)).unwrap();
                let y = fs::read(d2.join(&e.path).join(f)).unwrap();
                assert_eq!(x, y, "{}/{f} differs between runs", e.path);
            }
        }
        assert_eq!(
            fs::read(d1.join("manifest.csv")).unwrap(),
            fs::read(d2.join("manifest.csv")).unwrap()
        );
        // Refusal without --force, accepted with it.
        assert!(make_dataset(&cfg, 42, &d1, false).is_err());
        make_dataset(&cfg, 43, &d1, true).unwrap();

        // Replay: reload each scan of the second dir, re-render from gt, and
        // compare the stored f32 bytes bit-exactly.
        for e in &entries {
            let dir = d2.join(&e.path);
            let scan = load_scan(&dir).unwrap();
            assert_eq!(scan.n, e.n);
            assert_eq!(scan.tactic.as_str(), e.tactic);
            let ph = Phantom::new(cfg.phantom_mm, rng::derive(scan.seed, "phantom")).unwrap();
            let rendered = render_scan(&ph, &scan.gt, &scan.geo);
            let stored = fs::read(dir.join("frames.f32")).unwrap();
            let mut replay = Vec::with_capacity(stored.len());
            for v in rendered.frames {
                replay.extend_from_slice(&(v as f32).to_le_bytes());
            }
            assert_eq!(replay, stored, "{} replay drifted", e.path);
            // The loaded imu matches a re-simulation as well.
            let imu = simulate_imus(
                &scan.gt,
                cfg.imus,
                &ImuNoise::from_config(&cfg),
                rng::derive(scan.seed, "imu"),
            )
            .unwrap();
            for i in 0..imu.n_trans {
                for j in 0..imu.m {
                    let a = imu.phi_at(i, j);
                    let b = scan.imu.phi_at(i, j);
                    for k in 0..3 {
                        assert_eq!(a[k], b[k], "imu angle round-trip at ({i},{j},{k})");
                    }
                }
            }
        }
        assert!(split_scan_dirs(&d2, "train").unwrap().len() == 3);
        assert!(split_scan_dirs(&d2, "nope").is_err());
    }

    #[test]
    fn crop_keeps_labels_aligned() {
        let cfg = DataConfig {
            n_min: 10,
            n_max: 10,
            h: 8,
            w: 8,
            phantom_mm: 32,
            imus: 2,
            ..DataConfig::default()
        };
        let scan = generate_scan(&cfg, Tactic::Linear, "s", 3).unwrap();
        let c = crop_scan(&scan, 2, 5).unwrap();
        assert_eq!(c.n, 5);
        assert_eq!(c.gt.len(), 4);
        assert_eq!(c.gt[0], scan.gt[2]);
        assert_eq!(c.imu.phi_at(0, 1), scan.imu.phi_at(2, 1));
        let fsz = 64;
        assert_eq!(c.frames[..fsz], scan.frames[2 * fsz..3 * fsz]);
        assert!(crop_scan(&scan, 8, 3).is_err());
        assert!(crop_scan(&scan, 0, 1).is_err());
    }

    #[test]
    fn reversal_inverts_labels_consistently() {
        let cfg = DataConfig {
            n_min: 8,
            n_max: 8,
            h: 8,
            w: 8,
            phantom_mm: 32,
            imus: 2,
            ..DataConfig::default()
        };
        let scan = generate_scan(&cfg, Tactic::Curved, "s", 9).unwrap();
        let rev = reverse_scan(&scan);
        // Frames mirrored.
        let fsz = 64;
        assert_eq!(rev.frames[..fsz], scan.frames[7 * fsz..8 * fsz]);
        // Composing reversed labels retraces the path: the reversed
        // trajectory's endpoint equals the inverse of the original endpoint.
        let fwd = compose_trajectory(&scan.gt);
        let bwd = compose_trajectory(&rev.gt);
        let want = fwd.last().unwrap().inverse();
        let got = bwd.last().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((got.m[i][j] - want.m[i][j]).abs() < 1e-9);
            }
        }
        // Double reversal is the identity on labels and frames.
        let back = reverse_scan(&rev);
        assert_eq!(back.frames, scan.frames);
        for (a, b) in back.gt.iter().zip(&scan.gt) {
            for k in 0..3 {
                assert!((a.t[k] - b.t[k]).abs() < 1e-9);
                assert!((a.phi[k] - b.phi[k]).abs() < 1e-9);
            }
        }
        // Sensor angle rows mirrored + inverted.
        let p = scan.imu.phi_at(7 - 1, 0);
        let want = invert_params(&PoseParams::new([0.0; 3], p)).phi;
        assert_eq!(rev.imu.phi_at(0, 0), want);
        assert_eq!(rev.imu.acc_at(0, 1), scan.imu.acc_at(6, 1));
    }

    #[test]
    fn scan_metrics_run_end_to_end_on_generated_data() {
        // The generated gt plugs straight into the metric stack.
        let cfg = DataConfig {
            n_min: 12,
            n_max: 12,
            h: 8,
            w: 8,
            phantom_mm: 32,
            imus: 2,
            ..DataConfig::default()
        };
        for tactic in [Tactic::Linear, Tactic::Curved, Tactic::Loop, Tactic::Sector] {
            let scan = generate_scan(&cfg, tactic, "s", 1).unwrap();
            let gt = compose_trajectory(&scan.gt);
            let d = drift_metrics(&gt, &gt).unwrap();
            assert_eq!((d.fdr, d.adr, d.md, d.sd), (0.0, 0.0, 0.0, 0.0));
            let cloud = corner_cloud(&gt, &scan.geo);
            assert_eq!(hausdorff(&cloud, &cloud).unwrap(), 0.0);
            assert_eq!(mea(&scan.gt, &scan.gt).unwrap(), 0.0);
        }
    }
}
