//! Image-sequence encoder: a strided conv stem, then stages that pair a
//! residual downsampling block with a two-scale scan block (fine spatial
//! tokens + a pooled coarse per-frame stream threaded through all stages),
//! and a head that turns N per-frame features into N−1 per-transition ones.

use crate::config::NetConfig;
use crate::error::{Error, Result};
use crate::layers::{Conv2dLayer, LinearLayer, Mlp, ResidualBlock, SsmCoarseBlock, SsmFrameBlock};
use crate::rng::Prng;
use crate::tensor::graph::{Graph, TensorId};
use crate::tensor::params::{BoundParams, ParamStore};

/// One encoder stage: spatial halving, then the paired fine/coarse scan
/// blocks. `pool_proj` maps the pooled residual-block output into the shared
/// coarse width so the stream chains across stages.
pub struct Stage {
    pub down: ResidualBlock,
    pub frame: SsmFrameBlock,
    pub pool_proj: LinearLayer,
    pub coarse: SsmCoarseBlock,
}

pub struct Encoder {
    pub stem1: Conv2dLayer,
    pub stem2: Conv2dLayer,
    pub stages: Vec<Stage>,
    pub head_proj: LinearLayer,
    pub pair_mlp: Mlp,
    cfg: NetConfig,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig, rng: &mut Prng) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.stem_channels;
        let stem1 = Conv2dLayer::new(ps, "enc.stem1", 1, c0, 3, 2, 1, rng);
        let stem2 = Conv2dLayer::new(ps, "enc.stem2", c0, c0, 3, 2, 1, rng);
        let mut stages = Vec::new();
        let mut cin = c0;
        for (i, &c) in cfg.stage_channels.iter().enumerate() {
            let name = format!("enc.stage{i}");
            stages.push(Stage {
                down: ResidualBlock::new(ps, &format!("{name}.down"), cin, c, rng),
                frame: SsmFrameBlock::new(
                    ps,
                    &format!("{name}.fine"),
                    c,
                    cfg.expand,
                    cfg.dstate,
                    cfg.conv_kernel,
                    cfg.share_dir_params,
                    rng,
                ),
                pool_proj: LinearLayer::new(ps, &format!("{name}.pool_proj"), c, cfg.coarse_dim, rng),
                coarse: SsmCoarseBlock::new(
                    ps,
                    &format!("{name}.coarse"),
                    cfg.coarse_dim,
                    cfg.dstate,
                    cfg.conv_kernel,
                    rng,
                ),
            });
            cin = c;
        }
        let d = cfg.feature_dim;
        let head_proj = LinearLayer::new(ps, "enc.head_proj", cin + cfg.coarse_dim, d, rng);
        let pair_mlp = Mlp::new(ps, "enc.pair_mlp", 2 * d, 2 * d, d, rng);
        Ok(Encoder {
            stem1,
            stem2,
            stages,
            head_proj,
            pair_mlp,
            cfg: cfg.clone(),
        })
    }

    /// Stem only: [n,1,h,w] -> [n,c0,h/4,w/4]. Rejects frames outside [0,1].
    pub fn stem(&self, g: &mut Graph, bp: &BoundParams, frames: TensorId) -> Result<TensorId> {
        let s = g.shape(frames).to_vec();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::shape("stem_forward", format!("expected [n,1,h,w], got {s:?}")));
        }
        let max = g.value(frames).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > 1.0 + 1e-6 {
            return Err(Error::contract(
                "stem_forward",
                format!("frames must be normalized to [0,1]; max value {max}"),
            ));
        }
        let x = self.stem1.forward(g, bp, frames)?;
        let x = g.silu(x);
        let x = self.stem2.forward(g, bp, x)?;
        Ok(g.silu(x))
    }

    /// Full encoder: [n,1,h,w] -> per-transition features [n-1, d].
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, frames: TensorId) -> Result<TensorId> {
        let n = g.shape(frames)[0];
        if n < 2 {
            return Err(Error::contract(
                "encoder_forward",
                format!("need at least 2 frames for a transition, got {n}"),
            ));
        }
        let mut x = self.stem(g, bp, frames)?;
        let mut coarse: Option<TensorId> = None;
        for stage in &self.stages {
            x = stage.down.forward(g, bp, x)?;

            // Coarse stream: pool the downsampled map over all of space,
            // project to the shared width, add the previous stage's stream.
            let sx = g.shape(x).to_vec();
            let pooled = g.avg_pool(x, sx[2], sx[3])?;
            let tokens = g.reshape(pooled, vec![n, sx[1]])?;
            let mut cin = stage.pool_proj.forward(g, bp, tokens)?;
            if let Some(prev) = coarse {
                cin = g.add(cin, prev)?;
            }
            coarse = Some(stage.coarse.forward(g, bp, cin)?);

            x = stage.frame.forward(g, bp, x)?;
        }
        // Head: pool the last fine map, join the coarse stream, project to d.
        let sx = g.shape(x).to_vec();
        let pooled = g.avg_pool(x, sx[2], sx[3])?;
        let fine = g.reshape(pooled, vec![n, sx[1]])?;
        let both = g.concat(&[fine, coarse.expect("at least one stage")], 1)?;
        let f = self.head_proj.forward(g, bp, both)?;
        // Adjacent-pair combination: N per-frame rows -> N-1 transition rows.
        let d = self.cfg.feature_dim;
        let a = g.slice(f, 0, 0, n - 1)?;
        let b = g.slice(f, 0, 1, n - 1)?;
        let pairs = g.concat(&[a, b], 1)?;
        let out = self.pair_mlp.forward(g, bp, pairs)?;
        debug_assert_eq!(g.shape(out), &[n - 1, d]);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::Tensor;

    fn tiny_cfg(h: usize, w: usize, stages: usize) -> NetConfig {
        let mut cfg = NetConfig::default();
        cfg.h = h;
        cfg.w = w;
        cfg.stem_channels = 4;
        cfg.stage_channels = (0..stages).map(|i| 4 << (i + 1)).collect();
        cfg.dstate = 2;
        cfg.conv_kernel = 2;
        cfg.expand = 1;
        cfg.coarse_dim = 8;
        cfg.feature_dim = 8;
        cfg.heads = 2;
        cfg
    }

    fn run(cfg: &NetConfig, frames: &Tensor, seed: u64) -> Vec<f64> {
        let mut r = rng::prng(seed);
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, cfg, &mut r).unwrap();
        let mut g = Graph::new();
        let bp = ps.bind(&mut g);
        let x = g.leaf(frames);
        let y = enc.forward(&mut g, &bp, x).unwrap();
        g.value(y).to_vec()
    }

    #[test]
    fn output_shape_over_lengths_and_sizes() {
        let mut r = rng::prng(5);
        for &(h, stages) in &[(16usize, 2usize), (32, 2), (32, 3)] {
            let cfg = tiny_cfg(h, h, stages);
            let mut ps = ParamStore::new();
            let enc = Encoder::new(&mut ps, &cfg, &mut r).unwrap();
            for n in [2usize, 4, 8] {
                let mut g = Graph::new();
                let bp = ps.bind(&mut g);
                let mut frames = Tensor::randn(&mut r, vec![n, 1, h, h], 0.2);
                for v in frames.data_mut() {
                    *v = v.abs().min(1.0);
                }
                let x = g.leaf(&frames);
                let y = enc.forward(&mut g, &bp, x).unwrap();
                assert_eq!(g.shape(y), &[n - 1, cfg.feature_dim], "h={h} stages={stages} n={n}");
                assert!(g.value(y).iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn rejects_short_sequences_and_unnormalized_frames() {
        let cfg = tiny_cfg(16, 16, 2);
        let mut r = rng::prng(1);
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, &cfg, &mut r).unwrap();

        let mut g = Graph::new();
        let bp = ps.bind(&mut g);
        let one = g.leaf(&Tensor::zeros(vec![1, 1, 16, 16]));
        assert!(matches!(enc.forward(&mut g, &bp, one), Err(Error::Contract { .. })));

        let mut g = Graph::new();
        let bp = ps.bind(&mut g);
        let hot = g.leaf(&Tensor::full(vec![2, 1, 16, 16], 3.0));
        assert!(matches!(enc.forward(&mut g, &bp, hot), Err(Error::Contract { .. })));

        // 1.0 exactly is allowed.
        let mut g = Graph::new();
        let bp = ps.bind(&mut g);
        let ok = g.leaf(&Tensor::full(vec![2, 1, 16, 16], 1.0));
        enc.forward(&mut g, &bp, ok).unwrap();
    }

    #[test]
    fn stem_is_a_frame_wise_map() {
        let cfg = tiny_cfg(16, 16, 2);
        let mut r = rng::prng(9);
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, &cfg, &mut r).unwrap();
        let mut g = Graph::new();
        let bp = ps.bind(&mut g);
        // Three identical frames: stem output must repeat three times.
        let mut one = Tensor::randn(&mut r, vec![1, 1, 16, 16], 0.2);
        for v in one.data_mut() {
            *v = v.abs().min(1.0);
        }
        let rep: Vec<f64> = one.data().iter().cycle().take(3 * 256).cloned().collect();
        let frames = g.leaf(&Tensor::from_vec(vec![3, 1, 16, 16], rep).unwrap());
        let y = enc.stem(&mut g, &bp, frames).unwrap();
        let v = g.value(y);
        let per = v.len() / 3;
        assert_eq!(g.shape(y), &[3, 4, 4, 4]);
        for t in 1..3 {
            for i in 0..per {
                assert_eq!(v[i], v[t * per + i], "stem mixed content across frames");
            }
        }
    }

    #[test]
    fn identical_frames_give_identical_transition_rows() {
        let cfg = tiny_cfg(16, 16, 2);
        let mut r = rng::prng(13);
        let mut one = Tensor::randn(&mut r, vec![1, 1, 16, 16], 0.2);
        for v in one.data_mut() {
            *v = v.abs().min(1.0);
        }
        let rep: Vec<f64> = one.data().iter().cycle().take(4 * 256).cloned().collect();
        let frames = Tensor::from_vec(vec![4, 1, 16, 16], rep).unwrap();
        let y = run(&cfg, &frames, 21);
        let d = cfg.feature_dim;
        for row in 1..3 {
            for c in 0..d {
                let diff = (y[c] - y[row * d + c]).abs();
                assert!(diff < 1e-9, "row {row} col {c} differs by {diff}");
            }
        }
    }

    #[test]
    fn output_depends_on_scale_and_frame_order() {
        let cfg = tiny_cfg(16, 16, 2);
        let mut r = rng::prng(33);
        let mut frames = Tensor::randn(&mut r, vec![4, 1, 16, 16], 0.2);
        for v in frames.data_mut() {
            *v = v.abs().min(0.5);
        }
        let base = run(&cfg, &frames, 77);

        // Doubling pixel values changes the features.
        let mut doubled = frames.clone();
        for v in doubled.data_mut() {
            *v *= 2.0;
        }
        let yd = run(&cfg, &doubled, 77);
        let max_scale = base.iter().zip(&yd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_scale > 1e-6, "scaling input left features unchanged");

        // Reversing frame order is not equivariant: reversed-input rows do not
        // equal reversed output rows (temporal mixing has a direction).
        let per = 256;
        let rev_data: Vec<f64> = (0..4).rev().flat_map(|t| frames.data()[t * per..(t + 1) * per].to_vec()).collect();
        let yr = run(&cfg, &Tensor::from_vec(vec![4, 1, 16, 16], rev_data).unwrap(), 77);
        let d = cfg.feature_dim;
        let mut max_diff = 0.0f64;
        for row in 0..3 {
            for c in 0..d {
                // Transition i of the reversed scan corresponds to transition
                // (n-2-i) of the original run.
                max_diff = max_diff.max((yr[row * d + c] - base[(2 - row) * d + c]).abs());
            }
        }
        assert!(max_diff > 1e-6, "frame reversal produced equivariant features");
    }
}
