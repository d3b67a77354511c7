//! Run configuration: network shape, training/adaptation hyperparameters,
//! and synthetic-dataset settings, parsed from plain `key = value` files with
//! `[section]` headers. Unknown sections or keys are hard errors so typos
//! cannot silently fall back to defaults.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Network architecture settings.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Input frame height/width in pixels.
    pub h: usize,
    pub w: usize,
    /// Channels after the x4 stem downsample.
    pub stem_channels: usize,
    /// Channels per stage; one residual-downsample + scan block pair each.
    pub stage_channels: Vec<usize>,
    /// Latent state size per channel in the selective scans.
    pub dstate: usize,
    /// Kernel width of the causal 1D conv on each scan path.
    pub conv_kernel: usize,
    /// Expansion factor for the scan-path up-projection.
    pub expand: usize,
    /// Width of the coarse per-frame token stream.
    pub coarse_dim: usize,
    /// Final per-transition feature width d.
    pub feature_dim: usize,
    /// Attention heads in the fusion decoder.
    pub heads: usize,
    /// Number of IMUs the fusion stage expects.
    pub imus: usize,
    /// Nominal training sequence length.
    pub n_frames: usize,
    /// Share conv+scan parameters between the two spatial scan directions.
    pub share_dir_params: bool,
    /// Share the IMU embedding MLPs across IMUs.
    pub share_imu_embed: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            h: 64,
            w: 64,
            stem_channels: 8,
            stage_channels: vec![8, 16, 32, 64],
            dstate: 16,
            conv_kernel: 4,
            expand: 2,
            coarse_dim: 64,
            feature_dim: 64,
            heads: 4,
            imus: 4,
            n_frames: 32,
            share_dir_params: false,
            share_imu_embed: true,
        }
    }
}

impl NetConfig {
    pub fn num_stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |d: String| Err(Error::Config(d));
        if self.h % 4 != 0 || self.w % 4 != 0 {
            return err(format!("image size {}x{} must be divisible by 4 (stem)", self.h, self.w));
        }
        if self.stage_channels.is_empty() {
            return err("at least one stage is required".into());
        }
        let down = 1usize << self.num_stages();
        if (self.h / 4) % down != 0 || (self.w / 4) % down != 0 {
            return err(format!(
                "post-stem size {}x{} must be divisible by 2^{} (one halving per stage)",
                self.h / 4,
                self.w / 4,
                self.num_stages()
            ));
        }
        if !self.stage_channels.windows(2).all(|p| p[0] < p[1]) {
            return err(format!("stage channels {:?} must strictly increase", self.stage_channels));
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 {
            return err(format!(
                "feature dim {} must be divisible by heads {}",
                self.feature_dim, self.heads
            ));
        }
        if self.n_frames < 2 {
            return err("sequence length must be at least 2".into());
        }
        for (name, v) in [
            ("stem_channels", self.stem_channels),
            ("dstate", self.dstate),
            ("conv_kernel", self.conv_kernel),
            ("expand", self.expand),
            ("coarse_dim", self.coarse_dim),
            ("feature_dim", self.feature_dim),
            ("imus", self.imus),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, at: &Loc) -> Result<()> {
        match key {
            "h" => self.h = parse_usize(value, at)?,
            "w" => self.w = parse_usize(value, at)?,
            "stem_channels" => self.stem_channels = parse_usize(value, at)?,
            "stage_channels" => self.stage_channels = parse_usize_list(value, at)?,
            "dstate" => self.dstate = parse_usize(value, at)?,
            "conv_kernel" => self.conv_kernel = parse_usize(value, at)?,
            "expand" => self.expand = parse_usize(value, at)?,
            "coarse_dim" => self.coarse_dim = parse_usize(value, at)?,
            "feature_dim" => self.feature_dim = parse_usize(value, at)?,
            "heads" => self.heads = parse_usize(value, at)?,
            "imus" => self.imus = parse_usize(value, at)?,
            "n_frames" => self.n_frames = parse_usize(value, at)?,
            "share_dir_params" => self.share_dir_params = parse_bool(value, at)?,
            "share_imu_embed" => self.share_imu_embed = parse_bool(value, at)?,
            _ => return at.unknown_key("net", key),
        }
        Ok(())
    }
}

/// Training-loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate halves every this many epochs.
    pub lr_halve_every: usize,
    pub seed: u64,
    /// Also minimize the alignment and angle-prior losses during training
    /// (default: supervised loss only).
    pub all_losses: bool,
    /// L2-normalize feature rows before the alignment similarity matrix.
    pub align_l2_normalize: bool,
    /// Minimum length of random sub-sequence crops; 0 disables cropping.
    pub aug_crop_min: usize,
    /// Randomly reverse frame order (labels transformed to match).
    pub aug_reverse: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1,
            lr: 2e-4,
            lr_halve_every: 30,
            seed: 0,
            all_losses: false,
            align_l2_normalize: false,
            aug_crop_min: 16,
            aug_reverse: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halve_every == 0 {
            return Err(Error::Config("epochs, batch_size and lr_halve_every must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch: halves at each interval boundary.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let halvings = (epoch.saturating_sub(1)) / self.lr_halve_every;
        self.lr * 0.5f64.powi(halvings as i32)
    }

    fn set(&mut self, key: &str, value: &str, at: &Loc) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_usize(value, at)?,
            "batch_size" => self.batch_size = parse_usize(value, at)?,
            "lr" => self.lr = parse_f64(value, at)?,
            "lr_halve_every" => self.lr_halve_every = parse_usize(value, at)?,
            "seed" => self.seed = parse_u64(value, at)?,
            "all_losses" => self.all_losses = parse_bool(value, at)?,
            "align_l2_normalize" => self.align_l2_normalize = parse_bool(value, at)?,
            "aug_crop_min" => self.aug_crop_min = parse_usize(value, at)?,
            "aug_reverse" => self.aug_reverse = parse_bool(value, at)?,
            _ => return at.unknown_key("train", key),
        }
        Ok(())
    }
}

/// Per-scan test-time adaptation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Softmax temperature of the alignment loss.
    pub tau: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            iterations: 60,
            lr: 2e-6,
            tau: 0.1,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config("adaptation lr and tau must be positive".into()));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, at: &Loc) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse_usize(value, at)?,
            "lr" => self.lr = parse_f64(value, at)?,
            "tau" => self.tau = parse_f64(value, at)?,
            _ => return at.unknown_key("adapt", key),
        }
        Ok(())
    }
}

/// Synthetic dataset generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Total number of scans across all splits.
    pub scans: usize,
    /// Per-scan frame count, uniform in [n_min, n_max].
    pub n_min: usize,
    pub n_max: usize,
    pub h: usize,
    pub w: usize,
    /// Pixel spacing in mm.
    pub spacing: f64,
    /// IMUs per scan.
    pub imus: usize,
    /// Phantom cube side in mm (one voxel per mm).
    pub phantom_mm: usize,
    /// Translation per frame for translating tactics, mm.
    pub step_mm: f64,
    /// Base white-noise sigma on simulated IMU angles, degrees.
    pub angle_noise_deg: f64,
    /// Per-IMU constant angle bias magnitude, degrees.
    pub angle_bias_deg: f64,
    /// White-noise sigma on simulated accelerations.
    pub accel_noise: f64,
    /// Per-(scan, IMU) noise multipliers are log-uniform in [1/spread, spread].
    pub noise_spread: f64,
    /// Optional IMU index whose angle noise is scaled by `corrupt_factor`.
    pub corrupt_imu: Option<usize>,
    pub corrupt_factor: f64,
    /// Fractions for the train and val splits; test takes the remainder.
    pub split_train: f64,
    pub split_val: f64,
    /// Tactic cycle assigned round-robin over scans.
    pub tactics: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scans: 40,
            n_min: 16,
            n_max: 48,
            h: 32,
            w: 32,
            spacing: 0.15,
            imus: 4,
            phantom_mm: 64,
            step_mm: 1.0,
            angle_noise_deg: 1.0,
            angle_bias_deg: 0.5,
            accel_noise: 0.05,
            noise_spread: 2.0,
            corrupt_imu: None,
            corrupt_factor: 10.0,
            split_train: 0.6,
            split_val: 0.2,
            tactics: ["linear", "curved", "loop", "sector"].map(String::from).to_vec(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |d: String| Err(Error::Config(d));
        if self.scans == 0 {
            return err("scan count must be positive".into());
        }
        if self.n_min < 2 || self.n_max < self.n_min {
            return err(format!("frame count range [{}, {}] invalid (need 2 <= min <= max)", self.n_min, self.n_max));
        }
        if self.h == 0 || self.w == 0 || self.imus == 0 || self.phantom_mm == 0 {
            return err("h, w, imus and phantom_mm must be positive".into());
        }
        if !(self.spacing > 0.0) || !(self.step_mm > 0.0) {
            return err("spacing and step_mm must be positive".into());
        }
        if !(self.split_train > 0.0) || !(self.split_val >= 0.0) || self.split_train + self.split_val >= 1.0 {
            return err(format!(
                "splits train={} val={} must be positive and leave room for test",
                self.split_train, self.split_val
            ));
        }
        if let Some(i) = self.corrupt_imu {
            if i >= self.imus {
                return err(format!("corrupt_imu {} out of range for {} IMUs", i, self.imus));
            }
        }
        if !(self.noise_spread >= 1.0) {
            return err(format!("noise_spread must be >= 1, got {}", self.noise_spread));
        }
        if self.tactics.is_empty() {
            return err("at least one tactic is required".into());
        }
        for t in &self.tactics {
            if !matches!(t.as_str(), "linear" | "curved" | "loop" | "sector") {
                return err(format!("unknown tactic `{t}`"));
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, at: &Loc) -> Result<()> {
        match key {
            "scans" => self.scans = parse_usize(value, at)?,
            "n_min" => self.n_min = parse_usize(value, at)?,
            "n_max" => self.n_max = parse_usize(value, at)?,
            "h" => self.h = parse_usize(value, at)?,
            "w" => self.w = parse_usize(value, at)?,
            "spacing" => self.spacing = parse_f64(value, at)?,
            "imus" => self.imus = parse_usize(value, at)?,
            "phantom_mm" => self.phantom_mm = parse_usize(value, at)?,
            "step_mm" => self.step_mm = parse_f64(value, at)?,
            "angle_noise_deg" => self.angle_noise_deg = parse_f64(value, at)?,
            "angle_bias_deg" => self.angle_bias_deg = parse_f64(value, at)?,
            "accel_noise" => self.accel_noise = parse_f64(value, at)?,
            "noise_spread" => self.noise_spread = parse_f64(value, at)?,
            "corrupt_imu" => self.corrupt_imu = Some(parse_usize(value, at)?),
            "corrupt_factor" => self.corrupt_factor = parse_f64(value, at)?,
            "split_train" => self.split_train = parse_f64(value, at)?,
            "split_val" => self.split_val = parse_f64(value, at)?,
            "tactics" => {
                self.tactics = value.split(',').map(|s| s.trim().to_string()).collect();
            }
            _ => return at.unknown_key("data", key),
        }
        Ok(())
    }
}

/// All sections together. Absent sections/keys keep their defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.adapt.validate()?;
        self.data.validate()
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)?;
        Config::parse_str(&text, &path.display().to_string())
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let at = Loc {
                path: origin.to_string(),
                line: i + 1,
            };
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return at.fail("unterminated section header");
                };
                let name = name.trim();
                if !matches!(name, "net" | "train" | "adapt" | "data") {
                    return at.fail(&format!("unknown section `[{name}]`"));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some(eq) = line.find('=') else {
                return at.fail("expected `key = value` or `[section]`");
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() || value.is_empty() {
                return at.fail("empty key or value");
            }
            match section.as_deref() {
                Some("net") => cfg.net.set(key, value, &at)?,
                Some("train") => cfg.train.set(key, value, &at)?,
                Some("adapt") => cfg.adapt.set(key, value, &at)?,
                Some("data") => cfg.data.set(key, value, &at)?,
                Some(_) => unreachable!("section names are validated above"),
                None => return at.fail("key before any [section] header"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Loc {
    path: String,
    line: usize,
}

impl Loc {
    fn fail<T>(&self, detail: &str) -> Result<T> {
        Err(Error::Parse {
            path: self.path.clone(),
            line: self.line,
            detail: detail.to_string(),
        })
    }

    fn unknown_key<T>(&self, section: &str, key: &str) -> Result<T> {
        self.fail(&format!("unknown key `{key}` in section [{section}]"))
    }
}

fn parse_usize(v: &str, at: &Loc) -> Result<usize> {
    v.parse().map_err(|_| Error::Parse {
        path: at.path.clone(),
        line: at.line,
        detail: format!("expected a non-negative integer, got `{v}`"),
    })
}

fn parse_u64(v: &str, at: &Loc) -> Result<u64> {
    v.parse().map_err(|_| Error::Parse {
        path: at.path.clone(),
        line: at.line,
        detail: format!("expected a non-negative integer, got `{v}`"),
    })
}

fn parse_f64(v: &str, at: &Loc) -> Result<f64> {
    v.parse().map_err(|_| Error::Parse {
        path: at.path.clone(),
        line: at.line,
        detail: format!("expected a number, got `{v}`"),
    })
}

fn parse_bool(v: &str, at: &Loc) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse {
            path: at.path.clone(),
            line: at.line,
            detail: format!("expected true/false, got `{v}`"),
        }),
    }
}

fn parse_usize_list(v: &str, at: &Loc) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_usize(p.trim(), at)).collect()
}
