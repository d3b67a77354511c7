//! The full trajectory-regression model: image-sequence encoder plus either
//! the plain decoder (image-only variant) or the multi-sensor fusion head.

use crate::config::NetConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::fusion::FusionHead;
use crate::imu::ImuSample;
use crate::rng::Prng;
use crate::tensor::graph::{Graph, TensorId};
use crate::tensor::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

/// Which decoding path the model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Image features only; the decoder sees no sensor data.
    ImageOnly,
    /// Image features fused with multi-IMU embeddings.
    Fused,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::ImageOnly => "image_only",
            ModelKind::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image_only" => Ok(ModelKind::ImageOnly),
            "fused" => Ok(ModelKind::Fused),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Everything one forward pass exposes. Sensor-dependent fields are `None`
/// for the image-only variant.
pub struct ModelOutput {
    /// [n-1, 6] decoded transition parameters (tx,ty,tz,phix,phiy,phiz).
    pub theta: TensorId,
    /// [n-1, d] image features.
    pub f_img: TensorId,
    pub f_acc: Option<TensorId>,
    pub f_ang: Option<TensorId>,
    pub w_acc: Option<TensorId>,
    pub w_ang: Option<TensorId>,
}

pub struct Model {
    pub encoder: Encoder,
    pub head: FusionHead,
    pub kind: ModelKind,
    pub cfg: NetConfig,
}

impl Model {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig, kind: ModelKind, rng: &mut Prng) -> Result<Self> {
        let encoder = Encoder::new(ps, cfg, rng)?;
        let head = FusionHead::new(
            ps,
            "head",
            cfg.feature_dim,
            cfg.heads,
            cfg.imus,
            cfg.dstate,
            cfg.conv_kernel,
            cfg.share_imu_embed,
            rng,
        )?;
        Ok(Model {
            encoder,
            head,
            kind,
            cfg: cfg.clone(),
        })
    }

    /// Forward pass over one scan. The fused variant requires sensor data;
    /// the image-only variant ignores it.
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, frames: &Tensor, imu: Option<&ImuSample>) -> Result<ModelOutput> {
        let fid = g.leaf(frames);
        let f_img = self.encoder.forward(g, bp, fid)?;
        match self.kind {
            ModelKind::ImageOnly => {
                let theta = self.head.decode_only(g, bp, f_img)?;
                Ok(ModelOutput {
                    theta,
                    f_img,
                    f_acc: None,
                    f_ang: None,
                    w_acc: None,
                    w_ang: None,
                })
            }
            ModelKind::Fused => {
                let imu = imu.ok_or_else(|| {
                    Error::contract("model_forward", "fused model requires sensor data")
                })?;
                let out = self.head.forward(g, bp, f_img, imu)?;
                Ok(ModelOutput {
                    theta: out.theta,
                    f_img,
                    f_acc: Some(out.f_acc),
                    f_ang: Some(out.f_ang),
                    w_acc: Some(out.w_acc),
                    w_ang: Some(out.w_ang),
                })
            }
        }
    }
}
