//! Adaptive multi-sensor fusion: each IMU's angle/acceleration streams are
//! embedded into a "characteristics" space (used to score agreement with the
//! image features) and a "detail" space (what actually gets fused). Affinity
//! softmax weights combine the detail embeddings per modality; two attention
//! blocks fold both modalities into the image features; a coarse scan block
//! plus linear read-out decodes the 6-DOF transition parameters.

use crate::error::{Error, Result};
use crate::imu::ImuSample;
use crate::layers::{LinearLayer, Mha, Mlp, SsmCoarseBlock};
use crate::rng::Prng;
use crate::tensor::graph::{Graph, TensorId};
use crate::tensor::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

/// Char + detail MLP pair for one modality. `mlps.len()` is 1 when shared
/// across sensors, otherwise one pair per sensor.
pub struct ImuEmbed {
    char_mlps: Vec<Mlp>,
    detail_mlps: Vec<Mlp>,
    shared: bool,
}

impl ImuEmbed {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, m: usize, shared: bool, rng: &mut Prng) -> Self {
        let copies = if shared { 1 } else { m };
        let mk = |ps: &mut ParamStore, rng: &mut Prng, tag: &str, j: usize| {
            Mlp::new(ps, &format!("{name}.{tag}{j}"), 3, d, d, rng)
        };
        ImuEmbed {
            char_mlps: (0..copies).map(|j| mk(ps, rng, "char", j)).collect(),
            detail_mlps: (0..copies).map(|j| mk(ps, rng, "detail", j)).collect(),
            shared,
        }
    }

    fn pick<'a>(&self, mlps: &'a [Mlp], j: usize) -> Result<&'a Mlp> {
        if self.shared {
            Ok(&mlps[0])
        } else {
            mlps.get(j).ok_or_else(|| {
                Error::contract(
                    "embed_imu",
                    format!("sensor index {j} exceeds the {} unshared embeddings", mlps.len()),
                )
            })
        }
    }

    /// One sensor's stream [n-1, 3] -> (char [n-1,d], detail [n-1,d]).
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, j: usize, u: TensorId) -> Result<(TensorId, TensorId)> {
        let ch = self.pick(&self.char_mlps, j)?.forward(g, bp, u)?;
        let de = self.pick(&self.detail_mlps, j)?.forward(g, bp, u)?;
        Ok((ch, de))
    }
}

/// Affinity weights: a[i,j] = (f_img[i] . chars[j][i]) / sqrt(d), softmax over
/// sensors j. Returns [n-1, m] rows on the probability simplex.
pub fn affinity_weights(g: &mut Graph, f_img: TensorId, chars: &[TensorId]) -> Result<TensorId> {
    let d = g.shape(f_img)[1];
    let n1 = g.shape(f_img)[0];
    let scale = g.scalar(1.0 / (d as f64).sqrt());
    let mut cols = Vec::with_capacity(chars.len());
    for &ch in chars {
        if g.shape(ch) != g.shape(f_img) {
            return Err(Error::shape(
                "affinity_weights",
                format!("char embedding shape {:?} != image feature shape {:?}", g.shape(ch), g.shape(f_img)),
            ));
        }
        let prod = g.mul(f_img, ch)?;
        let dot = g.sum(prod, Some(1))?;
        let scaled = g.mul(dot, scale)?;
        cols.push(g.reshape(scaled, vec![n1, 1])?);
    }
    let logits = g.concat(&cols, 1)?;
    g.softmax(logits)
}

/// Convex combination of detail embeddings: out[i] = sum_j w[i,j] * details[j][i].
pub fn weighted_temporal(g: &mut Graph, w: TensorId, details: &[TensorId]) -> Result<TensorId> {
    if details.is_empty() {
        return Err(Error::contract("weighted_temporal", "no detail embeddings given"));
    }
    if g.shape(w)[1] != details.len() {
        return Err(Error::shape(
            "weighted_temporal",
            format!("{} weight columns for {} sensors", g.shape(w)[1], details.len()),
        ));
    }
    let mut acc: Option<TensorId> = None;
    for (j, &de) in details.iter().enumerate() {
        let wj = g.slice(w, 1, j, 1)?; // [n-1, 1] broadcasts over d
        let term = g.mul(wj, de)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one sensor"))
}

/// Everything the fusion forward pass exposes downstream: decoded parameters,
/// the per-modality fused features, and the affinity weights.
pub struct FusionOutput {
    /// [n-1, 6] decoded transition parameters.
    pub theta: TensorId,
    /// [n-1, d] fused feature (image + both attention outputs).
    pub fused: TensorId,
    /// [n-1, d] affinity-weighted acceleration feature.
    pub f_acc: TensorId,
    /// [n-1, d] affinity-weighted angle feature.
    pub f_ang: TensorId,
    /// [n-1, m] acceleration affinity weights.
    pub w_acc: TensorId,
    /// [n-1, m] angle affinity weights.
    pub w_ang: TensorId,
}

pub struct FusionHead {
    pub acc_embed: ImuEmbed,
    pub ang_embed: ImuEmbed,
    pub att_acc: Mha,
    pub att_ang: Mha,
    pub decode_block: SsmCoarseBlock,
    pub decode_lin: LinearLayer,
    pub d: usize,
}

impl FusionHead {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        m: usize,
        dstate: usize,
        conv_kernel: usize,
        share_embed: bool,
        rng: &mut Prng,
    ) -> Result<Self> {
        Ok(FusionHead {
            acc_embed: ImuEmbed::new(ps, &format!("{name}.acc"), d, m, share_embed, rng),
            ang_embed: ImuEmbed::new(ps, &format!("{name}.ang"), d, m, share_embed, rng),
            att_acc: Mha::new(ps, &format!("{name}.att_acc"), d, heads, rng)?,
            att_ang: Mha::new(ps, &format!("{name}.att_ang"), d, heads, rng)?,
            decode_block: SsmCoarseBlock::new(ps, &format!("{name}.decode"), d, dstate, conv_kernel, rng),
            decode_lin: LinearLayer::new(ps, &format!("{name}.out"), d, 6, rng),
            d,
        })
    }

    /// Decode parameters from a feature sequence alone (no sensors): the same
    /// scan block + read-out applied to the image features.
    pub fn decode_only(&self, g: &mut Graph, bp: &BoundParams, f_img: TensorId) -> Result<TensorId> {
        let h = self.decode_block.forward(g, bp, f_img)?;
        self.decode_lin.forward(g, bp, h)
    }

    /// Full fusion pass. `f_img` is [n-1, d]; the sample must cover the same
    /// transitions.
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, f_img: TensorId, imu: &ImuSample) -> Result<FusionOutput> {
        let sf = g.shape(f_img).to_vec();
        if sf.len() != 2 || sf[1] != self.d {
            return Err(Error::shape("fuse_and_decode", format!("expected [n-1,{}], got {sf:?}", self.d)));
        }
        if imu.n_trans != sf[0] {
            return Err(Error::contract(
                "fuse_and_decode",
                format!("{} image transitions vs {} sensor transitions", sf[0], imu.n_trans),
            ));
        }
        let n1 = imu.n_trans;
        let mut acc_chars = Vec::with_capacity(imu.m);
        let mut acc_details = Vec::with_capacity(imu.m);
        let mut ang_chars = Vec::with_capacity(imu.m);
        let mut ang_details = Vec::with_capacity(imu.m);
        for j in 0..imu.m {
            let acc_in = g.leaf(&Tensor::from_vec(vec![n1, 3], imu.acc_rows(j))?);
            let (c, de) = self.acc_embed.forward(g, bp, j, acc_in)?;
            acc_chars.push(c);
            acc_details.push(de);
            let ang_in = g.leaf(&Tensor::from_vec(vec![n1, 3], imu.phi_rows(j))?);
            let (c, de) = self.ang_embed.forward(g, bp, j, ang_in)?;
            ang_chars.push(c);
            ang_details.push(de);
        }
        let w_acc = affinity_weights(g, f_img, &acc_chars)?;
        let w_ang = affinity_weights(g, f_img, &ang_chars)?;
        let f_acc = weighted_temporal(g, w_acc, &acc_details)?;
        let f_ang = weighted_temporal(g, w_ang, &ang_details)?;

        let h_acc = self.att_acc.forward(g, bp, f_img, f_acc)?;
        let h_ang = self.att_ang.forward(g, bp, f_img, f_ang)?;
        let sum = g.add(f_img, h_acc)?;
        let fused = g.add(sum, h_ang)?;
        let theta = self.decode_only(g, bp, fused)?;
        Ok(FusionOutput {
            theta,
            fused,
            f_acc,
            f_ang,
            w_acc,
            w_ang,
        })
    }
}
