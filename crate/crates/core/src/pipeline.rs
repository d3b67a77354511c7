//! Training, test-time adaptation, reconstruction, and evaluation over scan
//! directories. Everything here is deterministic given (dataset, seed): scan
//! order, augmentation draws, and optimizer state all derive from the train
//! seed, and reports format floats with shortest round-trip notation so two
//! identical runs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{AdaptConfig, Config, NetConfig};
use crate::error::{Error, Result};
use crate::imu::{preprocess_per_transition, ImuSample};
use crate::losses::{loss_align, loss_prior, loss_sup, weighted_mean_angle};
use crate::model::{Model, ModelKind};
use crate::pose::{
    compose_trajectory, corner_cloud, drift_metrics, hausdorff, mea, read_trajectory_csv, PoseParams,
};
use crate::rng;
use crate::synth::{crop_scan, load_scan, reverse_scan, split_scan_dirs, ScanSequence};
use crate::tensor::checkpoint::{load_params, save_params};
use crate::tensor::graph::{Graph, TensorId};
use crate::tensor::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

// ------------------------------------------------------------------ optimizer

/// Adaptive-moment optimizer with bias correction, one moment pair per
/// parameter tensor.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, t)| t.numel()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One update from per-tensor gradients in registration order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::contract(
                "adam_step",
                format!("expected {} gradient tensors, got {}", self.m.len(), grads.len()),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in store
            .tensors_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if grad.len() != m.len() {
                return Err(Error::contract(
                    "adam_step",
                    format!("gradient length {} does not match parameter {}", grad.len(), m.len()),
                ));
            }
            let data = tensor.data_mut();
            for k in 0..grad.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|&v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

pub const CLIP_NORM: f64 = 1.0;

// ------------------------------------------------------------- loss assembly

fn frames_tensor(scan: &ScanSequence) -> Result<Tensor> {
    Tensor::from_vec(vec![scan.n, 1, scan.geo.h, scan.geo.w], scan.frames.clone())
}

fn target_tensor(gt: &[PoseParams]) -> Result<Tensor> {
    let rows: Vec<f64> = gt.iter().flat_map(|p| p.to_row()).collect();
    Tensor::from_vec(vec![gt.len(), 6], rows)
}

/// Supervised training objective for one scan; with `all_losses` the
/// alignment and angle-prior terms are added on top (fused model only).
fn build_train_loss(
    model: &Model,
    g: &mut Graph,
    bp: &BoundParams,
    scan: &ScanSequence,
    all_losses: bool,
    tau: f64,
    l2: bool,
) -> Result<TensorId> {
    let frames = frames_tensor(scan)?;
    let imu = preprocess_per_transition(&scan.imu);
    let out = model.forward(g, bp, &frames, Some(&imu))?;
    let target = g.leaf(&target_tensor(&scan.gt)?);
    let sup = loss_sup(g, out.theta, target, false)?.value;
    if !all_losses {
        return Ok(sup);
    }
    let extra = alignment_objective(model, g, &imu, &out, tau, l2)?;
    g.add(sup, extra)
}

/// Label-free objective used at test time: feature alignment against both
/// sensor streams plus the angle-consistency prior against the fusion-weighted
/// mean of measured angles.
fn alignment_objective(
    model: &Model,
    g: &mut Graph,
    imu: &ImuSample,
    out: &crate::model::ModelOutput,
    tau: f64,
    l2: bool,
) -> Result<TensorId> {
    if model.kind != ModelKind::Fused {
        return Err(Error::contract(
            "alignment_objective",
            "the alignment losses need sensor features; use the fused model",
        ));
    }
    let (f_acc, f_ang, w_ang) = match (out.f_acc, out.f_ang, out.w_ang) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::contract(
                "alignment_objective",
                "forward output carries no sensor features",
            ))
        }
    };
    let a_acc = loss_align(g, out.f_img, f_acc, tau, l2)?;
    let a_ang = loss_align(g, out.f_img, f_ang, tau, l2)?;
    let align = g.add(a_acc, a_ang)?;
    // Weighted mean of measured angles as the prior target. The weights stay
    // on the gradient path: making the weighted mean correlate with the
    // prediction is what teaches the attention to favor consistent sensors.
    let n = imu.n_trans;
    let phi = g.leaf(&Tensor::from_vec(vec![n, imu.m, 3], imu.phi.clone())?);
    let phi_bar = weighted_mean_angle(g, w_ang, phi)?;
    let phi_hat = g.slice(out.theta, 1, 3, 3)?;
    let prior = loss_prior(g, phi_hat, phi_bar)?.value;
    g.add(align, prior)
}

// ----------------------------------------------------------------- checkpoint

/// Sidecar metadata stored as JSON next to the binary weights; carries what a
/// later `reconstruct` needs to rebuild the network.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkptMeta {
    pub kind: String,
    pub net: NetConfig,
    /// Whether alignment rows were L2-normalized at training time; adaptation
    /// reuses the same setting.
    pub align_l2_normalize: bool,
    pub best_epoch: usize,
    pub best_val: f64,
    pub seed: u64,
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    PathBuf::from(format!("{}.meta.json", ckpt.display()))
}

pub fn save_checkpoint(ckpt: &Path, store: &ParamStore, meta: &CkptMeta) -> Result<()> {
    save_params(store, ckpt)?;
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Checkpoint(format!("meta serialization failed: {e}")))?;
    fs::write(meta_path(ckpt), text)?;
    Ok(())
}

/// Rebuild the model and parameters from a checkpoint plus its sidecar.
pub fn load_checkpoint(ckpt: &Path) -> Result<(Model, ParamStore, CkptMeta)> {
    let meta_file = meta_path(ckpt);
    let text = fs::read_to_string(&meta_file)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", meta_file.display())))?;
    let meta: CkptMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("bad meta {}: {e}", meta_file.display())))?;
    meta.net.validate()?;
    let kind = ModelKind::parse(&meta.kind)?;
    let mut store = ParamStore::new();
    // Init values are placeholders; the checkpoint overwrites every tensor.
    let model = Model::new(&mut store, &meta.net, kind, &mut rng::prng(0))?;
    store.load(load_params(ckpt)?)?;
    Ok((model, store, meta))
}

// ------------------------------------------------------------------- training

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
    pub ckpt: PathBuf,
    pub log: PathBuf,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_loss";

fn load_split(data_dir: &Path, split: &str) -> Result<Vec<ScanSequence>> {
    let dirs = split_scan_dirs(data_dir, split)?;
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("split `{split}` of {} holds no scans", data_dir.display())));
    }
    dirs.iter().map(|d| load_scan(d)).collect()
}

fn check_scan_compat(scan: &ScanSequence, net: &NetConfig, kind: ModelKind) -> Result<()> {
    let down = 4 << net.num_stages();
    if scan.geo.h % down != 0 || scan.geo.w % down != 0 {
        return Err(Error::Dataset(format!(
            "scan {}: {}x{} frames are not divisible by the encoder stride {down}",
            scan.id, scan.geo.h, scan.geo.w
        )));
    }
    if kind == ModelKind::Fused && scan.imu.m != net.imus {
        return Err(Error::Dataset(format!(
            "scan {}: {} sensors but the network expects {}",
            scan.id, scan.imu.m, net.imus
        )));
    }
    Ok(())
}

/// Full training run: per-scan first-order updates on the train split, mean
/// supervised loss on the val split after every epoch, best-val checkpoint
/// kept with its meta sidecar, and a CSV log of every epoch.
pub fn train(cfg: &Config, kind: ModelKind, data_dir: &Path, ckpt_out: &Path, seed: u64) -> Result<TrainOutcome> {
    cfg.net.validate()?;
    cfg.train.validate()?;
    if cfg.train.all_losses && kind != ModelKind::Fused {
        return Err(Error::Config(
            "all_losses training needs sensor features; use the fused model kind".into(),
        ));
    }
    let train_scans = load_split(data_dir, "train")?;
    let val_scans = load_split(data_dir, "val")?;
    for s in train_scans.iter().chain(&val_scans) {
        check_scan_compat(s, &cfg.net, kind)?;
    }

    let mut store = ParamStore::new();
    let mut init_rng = rng::prng(rng::derive(seed, "model-init"));
    let model = Model::new(&mut store, &cfg.net, kind, &mut init_rng)?;
    let mut adam = Adam::new(&store, cfg.train.lr);

    let log_path = PathBuf::from(format!("{}.log.csv", ckpt_out.display()));
    let mut log = String::from(LOG_HEADER);
    log.push('\n');

    let tau = cfg.adapt.tau;
    let l2 = cfg.train.align_l2_normalize;
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=cfg.train.epochs {
        adam.set_lr(cfg.train.lr_at_epoch(epoch));

        // Deterministic shuffle of scan order.
        let mut order: Vec<usize> = (0..train_scans.len()).collect();
        let mut r_order = rng::prng(rng::derive_idx(seed, "order", epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng::uniform(&mut r_order, 0.0, (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        let mut r_aug = rng::prng(rng::derive_idx(seed, "aug", epoch as u64));

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.train.batch_size.max(1)) {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &idx in batch {
                let scan = augment(&train_scans[idx], &cfg.train, &mut r_aug)?;
                let mut g = Graph::new();
                let bp = store.bind(&mut g);
                let total = build_train_loss(&model, &mut g, &bp, &scan, cfg.train.all_losses, tau, l2)?;
                let value = g.item(total);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite training loss {value} on scan {} at epoch {epoch}",
                        scan.id
                    )));
                }
                epoch_loss += value;
                seen += 1;
                g.backward(total)?;
                let grads = store.collect_grads(&g, &bp);
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (dst, src) in a.iter_mut().zip(&grads) {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f64;
                for t in grads.iter_mut() {
                    for v in t.iter_mut() {
                        *v *= inv;
                    }
                }
            }
            clip_global_norm(&mut grads, CLIP_NORM);
            adam.step(&mut store, &grads)?;
        }
        let train_loss = epoch_loss / seen as f64;

        let val_loss = mean_val_loss(&model, &store, &val_scans)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        log.push_str(&format!("{epoch},{},{train_loss},{val_loss}\n", adam.lr()));
        fs::write(&log_path, &log)?;

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            let meta = CkptMeta {
                kind: kind.as_str().to_string(),
                net: cfg.net.clone(),
                align_l2_normalize: l2,
                best_epoch,
                best_val,
                seed,
            };
            save_checkpoint(ckpt_out, &store, &meta)?;
        }
    }
    Ok(TrainOutcome {
        best_epoch,
        best_val,
        epochs_run: cfg.train.epochs,
        ckpt: ckpt_out.to_path_buf(),
        log: log_path,
    })
}

/// Mean supervised loss over scans, no augmentation, no gradients kept.
pub fn mean_val_loss(model: &Model, store: &ParamStore, scans: &[ScanSequence]) -> Result<f64> {
    let mut total = 0.0;
    for scan in scans {
        let mut g = Graph::new();
        let bp = store.bind(&mut g);
        let frames = frames_tensor(scan)?;
        let imu = preprocess_per_transition(&scan.imu);
        let out = model.forward(&mut g, &bp, &frames, Some(&imu))?;
        let target = g.leaf(&target_tensor(&scan.gt)?);
        let sup = loss_sup(&mut g, out.theta, target, false)?.value;
        total += g.item(sup);
    }
    Ok(total / scans.len() as f64)
}

fn augment(scan: &ScanSequence, train: &crate::config::TrainConfig, r: &mut rng::Prng) -> Result<ScanSequence> {
    let mut out = None;
    let min_len = train.aug_crop_min.max(2);
    if scan.n > min_len {
        let span = (scan.n - min_len + 1) as f64;
        let len = min_len + (rng::uniform(r, 0.0, span) as usize).min(scan.n - min_len);
        if len < scan.n {
            let start_span = (scan.n - len + 1) as f64;
            let start = (rng::uniform(r, 0.0, start_span) as usize).min(scan.n - len);
            out = Some(crop_scan(scan, start, len)?);
        }
    }
    if train.aug_reverse && rng::uniform(r, 0.0, 1.0) < 0.5 {
        out = Some(reverse_scan(out.as_ref().unwrap_or(scan)));
    }
    Ok(out.unwrap_or_else(|| scan.clone()))
}

// --------------------------------------------------- inference and adaptation

fn theta_to_params(values: &[f64], n_trans: usize) -> Vec<PoseParams> {
    (0..n_trans)
        .map(|i| {
            let r = &values[i * 6..(i + 1) * 6];
            PoseParams::from_row(&[r[0], r[1], r[2], r[3], r[4], r[5]])
        })
        .collect()
}

/// Plain inference: decode relative transition parameters for one scan.
pub fn infer_params(model: &Model, store: &ParamStore, scan: &ScanSequence) -> Result<Vec<PoseParams>> {
    let mut g = Graph::new();
    let bp = store.bind(&mut g);
    let frames = frames_tensor(scan)?;
    let imu = preprocess_per_transition(&scan.imu);
    let out = model.forward(&mut g, &bp, &frames, Some(&imu))?;
    Ok(theta_to_params(g.value(out.theta), scan.n - 1))
}

#[derive(Debug)]
pub struct AdaptOutcome {
    pub params: Vec<PoseParams>,
    /// Objective value at the start of each iteration.
    pub losses: Vec<f64>,
}

/// Test-time adaptation: clone the weights, take `iterations` label-free
/// steps (alignment + angle prior) on this scan alone with a fresh optimizer,
/// then decode. The base parameters are untouched; zero iterations is plain
/// inference.
pub fn adapt_and_infer(
    model: &Model,
    base: &ParamStore,
    scan: &ScanSequence,
    acfg: &AdaptConfig,
    l2: bool,
) -> Result<AdaptOutcome> {
    acfg.validate()?;
    if model.kind != ModelKind::Fused {
        return Err(Error::contract("adapt", "adaptation requires the fused model"));
    }
    let mut store = base.clone();
    let mut adam = Adam::new(&store, acfg.lr);
    let imu = preprocess_per_transition(&scan.imu);
    let frames = frames_tensor(scan)?;
    let mut losses = Vec::with_capacity(acfg.iterations);
    for it in 0..acfg.iterations {
        let mut g = Graph::new();
        let bp = store.bind(&mut g);
        let out = model.forward(&mut g, &bp, &frames, Some(&imu))?;
        let total = alignment_objective(model, &mut g, &imu, &out, acfg.tau, l2)?;
        let value = g.item(total);
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite adaptation loss {value} on scan {} at iteration {it}",
                scan.id
            )));
        }
        losses.push(value);
        g.backward(total)?;
        let grads = store.collect_grads(&g, &bp);
        adam.step(&mut store, &grads)?;
    }
    let params = infer_params(model, &store, scan)?;
    Ok(AdaptOutcome { params, losses })
}

// ------------------------------------------------------------------ evaluation

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct MetricSet {
    pub fdr: f64,
    pub adr: f64,
    pub md: f64,
    pub sd: f64,
    pub hd: f64,
    pub mea: f64,
}

impl MetricSet {
    fn values(&self) -> [f64; 6] {
        [self.fdr, self.adr, self.md, self.sd, self.hd, self.mea]
    }

    fn from_values(v: [f64; 6]) -> Self {
        MetricSet {
            fdr: v[0],
            adr: v[1],
            md: v[2],
            sd: v[3],
            hd: v[4],
            mea: v[5],
        }
    }
}

pub const METRIC_NAMES: [&str; 6] = ["fdr", "adr", "md", "sd", "hd", "mea"];

#[derive(Clone, Debug, serde::Serialize)]
pub struct ScanMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EvalReport {
    pub scans: Vec<ScanMetrics>,
    pub mean: MetricSet,
    /// Population standard deviation over scans.
    pub std: MetricSet,
    /// Ids present on only one side, or skipped for incompatible data,
    /// with the reason.
    pub skipped: Vec<String>,
}

/// Score predicted trajectories against ground truth: `pred_dir` holds one
/// `<scan_id>.csv` per scan, `gt_dir` is a dataset split directory of scan
/// folders. Ids missing on either side are listed and skipped.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let mut pred_ids = Vec::new();
    for e in fs::read_dir(pred_dir)? {
        let p = e?.path();
        if p.extension().and_then(|s| s.to_str()) == Some("csv") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                pred_ids.push(stem.to_string());
            }
        }
    }
    pred_ids.sort();
    let mut gt_ids = Vec::new();
    for e in fs::read_dir(gt_dir)? {
        let p = e?.path();
        if p.is_dir() && p.join("gt_params.csv").is_file() {
            if let Some(name) = p.file_name().and_then(|s| s.to_str()) {
                gt_ids.push(name.to_string());
            }
        }
    }
    gt_ids.sort();

    let mut skipped = Vec::new();
    for id in &pred_ids {
        if !gt_ids.contains(id) {
            skipped.push(format!("{id}: no matching ground-truth scan"));
        }
    }
    for id in &gt_ids {
        if !pred_ids.contains(id) {
            skipped.push(format!("{id}: no matching prediction"));
        }
    }

    let mut scans = Vec::new();
    for id in gt_ids.iter().filter(|id| pred_ids.contains(id)) {
        let pred = read_trajectory_csv(&pred_dir.join(format!("{id}.csv")))?;
        let gt_scan = load_scan(&gt_dir.join(id))?;
        if pred.len() != gt_scan.gt.len() {
            skipped.push(format!(
                "{id}: prediction has {} transitions, ground truth {}",
                pred.len(),
                gt_scan.gt.len()
            ));
            continue;
        }
        let est_traj = compose_trajectory(&pred);
        let gt_traj = compose_trajectory(&gt_scan.gt);
        let d = drift_metrics(&est_traj, &gt_traj)?;
        let hd = hausdorff(
            &corner_cloud(&est_traj, &gt_scan.geo),
            &corner_cloud(&gt_traj, &gt_scan.geo),
        )?;
        let angle = mea(&pred, &gt_scan.gt)?;
        scans.push(ScanMetrics {
            id: id.clone(),
            metrics: MetricSet {
                fdr: d.fdr,
                adr: d.adr,
                md: d.md,
                sd: d.sd,
                hd,
                mea: angle,
            },
        });
    }
    if scans.is_empty() {
        return Err(Error::Dataset(format!(
            "no overlapping scan ids between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let n = scans.len() as f64;
    let mut mean = [0.0; 6];
    for s in &scans {
        for (m, v) in mean.iter_mut().zip(s.metrics.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; 6];
    for s in &scans {
        for ((v, &mu), x) in var.iter_mut().zip(&mean).zip(s.metrics.values()) {
            *v += (x - mu) * (x - mu);
        }
    }
    for v in &mut var {
        *v = (*v / n).sqrt();
    }
    Ok(EvalReport {
        scans,
        mean: MetricSet::from_values(mean),
        std: MetricSet::from_values(var),
        skipped,
    })
}

/// Flat key=value rendering with a human-readable summary row on top
/// (mean(std) per metric, two decimals, the usual results-table shape).
pub fn report_text(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("# FDR(%) ADR(%) MD(mm) SD(mm) HD(mm) MEA(deg), mean(std) over scans\n# ");
    let means = r.mean.values();
    let stds = r.std.values();
    for i in 0..6 {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{:.2}({:.2})", means[i], stds[i]));
    }
    out.push('\n');
    out.push_str(&format!("scans={}\n", r.scans.len()));
    out.push_str(&format!("skipped={}\n", r.skipped.len()));
    for s in &r.skipped {
        out.push_str(&format!("skipped.entry={s}\n"));
    }
    for (name, (m, s)) in METRIC_NAMES.iter().zip(means.iter().zip(&stds)) {
        out.push_str(&format!("mean.{name}={m}\n"));
        out.push_str(&format!("std.{name}={s}\n"));
    }
    for s in &r.scans {
        let vals = s.metrics.values();
        for (name, v) in METRIC_NAMES.iter().zip(vals) {
            out.push_str(&format!("{}.{name}={v}\n", s.id));
        }
    }
    out
}

/// Write the text report to `path` and the JSON twin to `path.json`.
pub fn write_report(r: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report_text(r))?;
    let json = serde_json::to_string_pretty(r)
        .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))?;
    fs::write(PathBuf::from(format!("{}.json", path.display())), json)?;
    Ok(())
}
