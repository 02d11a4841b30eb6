use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BlockKind, NetConfig, Variant};
use super::OdomNetError;
use crate::autonn::{BatchNorm, Cbr, Conv2d, Graph, Linear, Mode, ParamStore, PoolKind, Tensor, Var};
use crate::datagen::derive_seed;
use crate::preprocess::BScan;

#[derive(Debug, Clone)]
struct Block {
    /// Convolution/batch-norm pairs along the residual path; ReLU follows
    /// every pair except the last.
    path: Vec<(Conv2d, BatchNorm)>,
    projection: Option<(Conv2d, BatchNorm)>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        kind: BlockKind,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Result<Self, OdomNetError> {
        let mut layer = |i: usize, cin: usize, cout: usize, k: usize, s: usize| -> Result<(Conv2d, BatchNorm), OdomNetError> {
            Ok((
                Conv2d::init(store, rng, &format!("{name}.conv{i}"), cin, cout, k, s, false)?,
                BatchNorm::init(store, &format!("{name}.bn{i}"), cout)?,
            ))
        };
        let path = match kind {
            BlockKind::Basic => vec![layer(1, in_ch, out_ch, 3, stride)?, layer(2, out_ch, out_ch, 3, 1)?],
            BlockKind::Bottleneck => {
                let mid = out_ch / 4;
                vec![
                    layer(1, in_ch, mid, 1, 1)?,
                    layer(2, mid, mid, 3, stride)?,
                    layer(3, mid, out_ch, 1, 1)?,
                ]
            }
        };
        let projection = if stride != 1 || in_ch != out_ch {
            Some((
                Conv2d::init(store, rng, &format!("{name}.proj"), in_ch, out_ch, 1, stride, false)?,
                BatchNorm::init(store, &format!("{name}.proj_bn"), out_ch)?,
            ))
        } else {
            None
        };
        Ok(Self { path, projection })
    }

    /// `shortcut(x) + residual(x)`, with no activation after the sum.
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var, OdomNetError> {
        let mut h = x;
        let last = self.path.len() - 1;
        for (i, (conv, bn)) in self.path.iter().enumerate() {
            h = conv.forward(g, store, h)?;
            h = bn.forward(g, store, h, mode)?;
            if i < last {
                h = g.relu(h);
            }
        }
        let shortcut = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(g, store, x)?;
                bn.forward(g, store, s, mode)?
            }
            None => x,
        };
        Ok(g.add(shortcut, h)?)
    }
}

#[derive(Debug, Clone)]
struct Compress {
    proj: [Conv2d; 3],
    cbr: Cbr,
}

#[derive(Debug, Clone)]
struct DifferenceBranch {
    cbr1: Cbr,
    cbr2: Cbr,
    ca_reduce: Conv2d,
    ca_expand: Conv2d,
    spatial: Conv2d,
}

#[derive(Debug, Clone)]
struct Head {
    fc1: Linear,
    bn1: BatchNorm,
    fc2: Linear,
    bn2: BatchNorm,
    out: Linear,
}

/// Multi-scale features of one batch of B-scans.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    /// Stage outputs at 1/4, 1/8, 1/16 and 1/32 resolution.
    pub levels: [Var; 4],
    /// Compressed low-level map at F3 resolution (difference variants only).
    pub compressed: Option<Var>,
    /// Flattened F4, `N × flat_len`.
    pub flat: Var,
}

/// Intermediate values of the difference branch.
#[derive(Debug, Clone, Copy)]
pub struct DifferenceOutputs {
    /// `|F_d,cur − F_d,prev|`.
    pub delta: Var,
    /// `delta` after the two CBR blocks.
    pub conv: Var,
    /// Channel weights, `N×C×1×1`.
    pub channel_attention: Var,
    /// Spatial weights, `N×1×h×w`.
    pub spatial_attention: Var,
    /// Attention-weighted map.
    pub weighted: Var,
    /// Descriptor, `N×C`.
    pub descriptor: Var,
}

#[derive(Debug, Clone)]
pub struct OdomNet {
    pub cfg: NetConfig,
    pub store: ParamStore,
    stem: Cbr,
    stages: Vec<Vec<Block>>,
    compress: Option<Compress>,
    diff: Option<DifferenceBranch>,
    sim: Option<Cbr>,
    head: Head,
}

impl OdomNet {
    /// He-initialised network; only parameters the variant uses are created.
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self, OdomNetError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.stage_widths;
        let stem = Cbr::init(&mut store, rng, "stem", 1, w[0], 3, 2)?;
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = w[0];
        for (s, (&width, &blocks)) in w.iter().zip(&cfg.stage_blocks).enumerate() {
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let stride = if b == 0 { 2 } else { 1 };
                stage.push(Block::init(&mut store, rng, &format!("stage{}.block{b}", s + 1), cfg.block, in_ch, width, stride)?);
                in_ch = width;
            }
            stages.push(stage);
        }
        let cd = cfg.compressed_channels;
        let (compress, diff) = if cfg.variant.uses_difference() {
            let proj = [0, 1, 2].map(|i| Conv2d::init(&mut store, rng, &format!("compress.proj{}", i + 1), w[i], cd, 1, 1, true));
            let [p1, p2, p3] = proj;
            let compress = Compress {
                proj: [p1?, p2?, p3?],
                cbr: Cbr::init(&mut store, rng, "compress.cbr", cd, cd, 3, 1)?,
            };
            let hidden = (cd / cfg.attention_reduction).max(1);
            let diff = DifferenceBranch {
                cbr1: Cbr::init(&mut store, rng, "difference.cbr1", cd, cd, 3, 1)?,
                cbr2: Cbr::init(&mut store, rng, "difference.cbr2", cd, cd, 3, 1)?,
                ca_reduce: Conv2d::init(&mut store, rng, "difference.ca_reduce", cd, hidden, 1, 1, true)?,
                ca_expand: Conv2d::init(&mut store, rng, "difference.ca_expand", hidden, cd, 1, 1, true)?,
                spatial: Conv2d::init(&mut store, rng, "difference.spatial", cd, 1, cfg.spatial_kernel, 1, true)?,
            };
            (Some(compress), Some(diff))
        } else {
            (None, None)
        };
        let sim = if cfg.variant.uses_similarity() {
            Some(Cbr::init(&mut store, rng, "similarity.cbr", 1, cfg.similarity_channels, 3, 1)?)
        } else {
            None
        };
        let [h1, h2] = cfg.hidden;
        let head = Head {
            fc1: Linear::init(&mut store, rng, "head.fc1", cfg.head_input(), h1)?,
            bn1: BatchNorm::init(&mut store, "head.bn1", h1)?,
            fc2: Linear::init(&mut store, rng, "head.fc2", h1, h2)?,
            bn2: BatchNorm::init(&mut store, "head.bn2", h2)?,
            out: Linear::init(&mut store, rng, "head.out", h2, 1)?,
        };
        Ok(Self {
            cfg,
            store,
            stem,
            stages,
            compress,
            diff,
            sim,
            head,
        })
    }

    /// Rebuilds a network from a configuration and saved parameters.
    pub fn from_records(cfg: NetConfig, records: &[(String, Tensor)]) -> Result<Self, OdomNetError> {
        let mut net = Self::new(cfg, 0)?;
        net.store.load_from(records)?;
        Ok(net)
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    /// Stacks B-scans into an `N×1×H×W` tensor, checking extents.
    pub fn batch_input(&self, scans: &[&BScan]) -> Result<Tensor, OdomNetError> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut data = Vec::with_capacity(scans.len() * h * w);
        for (i, b) in scans.iter().enumerate() {
            if b.samples != h || b.width != w {
                return Err(OdomNetError::Input(format!(
                    "B-scan {i} is {}×{}, network expects {h}×{w}",
                    b.samples, b.width
                )));
            }
            data.extend_from_slice(&b.data);
        }
        Ok(Tensor::new(&[scans.len(), 1, h, w], data)?)
    }

    /// Runs one stage on `x`.
    pub fn residual_stage(&self, g: &mut Graph, stage: usize, x: Var, mode: Mode) -> Result<Var, OdomNetError> {
        let blocks = self
            .stages
            .get(stage)
            .ok_or_else(|| OdomNetError::Input(format!("stage {stage} out of range")))?;
        let want = if stage == 0 { self.cfg.stage_widths[0] } else { self.cfg.stage_widths[stage - 1] };
        let got = g.shape(x).get(1).copied().unwrap_or(0);
        if got != want {
            return Err(OdomNetError::Input(format!(
                "stage {} expects {want} input channels, got {got}",
                stage + 1
            )));
        }
        let mut h = x;
        for b in blocks {
            h = b.forward(g, &self.store, h, mode)?;
        }
        Ok(h)
    }

    pub fn extract_features(&self, g: &mut Graph, x: Var, mode: Mode) -> Result<FeaturePyramid, OdomNetError> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.height || s[3] != self.cfg.width {
            return Err(OdomNetError::Input(format!(
                "expected N×1×{}×{} input, got {s:?}",
                self.cfg.height, self.cfg.width
            )));
        }
        let mut h = self.stem.forward(g, &self.store, x, mode)?;
        let mut levels = [h; 4];
        for (i, level) in levels.iter_mut().enumerate() {
            h = self.residual_stage(g, i, h, mode)?;
            *level = h;
        }
        let compressed = match self.compress {
            Some(_) => Some(self.compress_low(g, levels[0], levels[1], levels[2], mode)?),
            None => None,
        };
        let flat = g.flatten(levels[3])?;
        Ok(FeaturePyramid { levels, compressed, flat })
    }

    /// 1×1 projections of F1..F3 to the compressed width, average-pooled to
    /// F3's extents, summed, then one CBR.
    pub fn compress_low(&self, g: &mut Graph, f1: Var, f2: Var, f3: Var, mode: Mode) -> Result<Var, OdomNetError> {
        let c = self
            .compress
            .as_ref()
            .ok_or_else(|| OdomNetError::Input(format!("variant {} has no compression layers", self.variant().id())))?;
        let target = (g.shape(f3)[2], g.shape(f3)[3]);
        let mut sum: Option<Var> = None;
        for (proj, f) in c.proj.iter().zip([f1, f2, f3]) {
            let mut p = proj.forward(g, &self.store, f)?;
            let (h, w) = (g.shape(p)[2], g.shape(p)[3]);
            if (h, w) != target {
                if h % target.0 != 0 || w % target.1 != 0 {
                    return Err(OdomNetError::Input(format!(
                        "feature {h}×{w} cannot be pooled onto {}×{}",
                        target.0, target.1
                    )));
                }
                let win = (h / target.0, w / target.1);
                p = g.pool(p, PoolKind::Avg, win, win)?;
            }
            sum = Some(match sum {
                Some(acc) => g.add(acc, p)?,
                None => p,
            });
        }
        Ok(c.cbr.forward(g, &self.store, sum.expect("three inputs"), mode)?)
    }

    pub fn difference_branch(&self, g: &mut Graph, fd_prev: Var, fd_cur: Var, mode: Mode) -> Result<DifferenceOutputs, OdomNetError> {
        let d = self
            .diff
            .as_ref()
            .ok_or_else(|| OdomNetError::Input(format!("variant {} has no difference branch", self.variant().id())))?;
        let delta = g.abs_diff(fd_cur, fd_prev)?;
        let h = d.cbr1.forward(g, &self.store, delta, mode)?;
        let conv = d.cbr2.forward(g, &self.store, h, mode)?;
        let pooled = g.global_avg_pool(conv)?;
        let a = d.ca_reduce.forward(g, &self.store, pooled)?;
        let a = g.relu(a);
        let a = d.ca_expand.forward(g, &self.store, a)?;
        let channel_attention = g.sigmoid(a);
        let s = d.spatial.forward(g, &self.store, conv)?;
        let spatial_attention = g.sigmoid(s);
        let weighted = g.mul(conv, channel_attention)?;
        let weighted = g.mul(weighted, spatial_attention)?;
        let descriptor = g.global_avg_pool(weighted)?;
        let descriptor = g.flatten(descriptor)?;
        Ok(DifferenceOutputs {
            delta,
            conv,
            channel_attention,
            spatial_attention,
            weighted,
            descriptor,
        })
    }

    /// Per-position cosine similarity across channels, `N×1×h×w`.
    pub fn similarity_map(&self, g: &mut Graph, fs_prev: Var, fs_cur: Var) -> Result<Var, OdomNetError> {
        Ok(g.cosine_channel(fs_prev, fs_cur)?)
    }

    /// `GAP(CBR(similarity map))`, `N × similarity_channels`.
    pub fn similarity_branch(&self, g: &mut Graph, fs_prev: Var, fs_cur: Var, mode: Mode) -> Result<Var, OdomNetError> {
        let cbr = self
            .sim
            .as_ref()
            .ok_or_else(|| OdomNetError::Input(format!("variant {} has no similarity branch", self.variant().id())))?;
        let map = self.similarity_map(g, fs_prev, fs_cur)?;
        let h = cbr.forward(g, &self.store, map, mode)?;
        let pooled = g.global_avg_pool(h)?;
        Ok(g.flatten(pooled)?)
    }

    /// Two Linear → BN → ReLU → Dropout blocks and a final Linear. Train
    /// mode requires a dropout seed.
    pub fn regression_head(&self, g: &mut Graph, z: Var, mode: Mode, seed: Option<u64>) -> Result<Var, OdomNetError> {
        let seed = match (mode, seed) {
            (Mode::Train, None) => return Err(OdomNetError::MissingSeed),
            (_, s) => s.unwrap_or(0),
        };
        let want = self.cfg.head_input();
        if g.shape(z).len() != 2 || g.shape(z)[1] != want {
            return Err(OdomNetError::Input(format!(
                "head expects N×{want}, got {:?}",
                g.shape(z)
            )));
        }
        let h = &self.head;
        let mut x = z;
        for (i, (fc, bn)) in [(&h.fc1, &h.bn1), (&h.fc2, &h.bn2)].into_iter().enumerate() {
            x = fc.forward(g, &self.store, x)?;
            x = bn.forward(g, &self.store, x, mode)?;
            x = g.relu(x);
            x = g.dropout(x, self.cfg.dropout, mode, derive_seed(seed, i as u64))?;
        }
        Ok(h.out.forward(g, &self.store, x)?)
    }

    /// Predicted step for each pair in the batch, `N×1`. Both frames go
    /// through the same extractor parameters.
    pub fn forward(&self, g: &mut Graph, prev: Var, cur: Var, mode: Mode, seed: Option<u64>) -> Result<Var, OdomNetError> {
        if g.shape(prev) != g.shape(cur) {
            return Err(OdomNetError::Input(format!(
                "frame shapes differ: {:?} vs {:?}",
                g.shape(prev),
                g.shape(cur)
            )));
        }
        if mode == Mode::Train && seed.is_none() {
            return Err(OdomNetError::MissingSeed);
        }
        let fp = self.extract_features(g, prev, mode)?;
        let fc = self.extract_features(g, cur, mode)?;
        let z = match self.variant() {
            Variant::FeatureConcat => g.concat(&[fp.flat, fc.flat], 1)?,
            v => {
                let mut parts = Vec::with_capacity(2);
                if v.uses_difference() {
                    let (a, b) = (fp.compressed.expect("built"), fc.compressed.expect("built"));
                    parts.push(self.difference_branch(g, a, b, mode)?.descriptor);
                }
                if v.uses_similarity() {
                    parts.push(self.similarity_branch(g, fp.levels[3], fc.levels[3], mode)?);
                }
                if parts.len() == 1 {
                    parts[0]
                } else {
                    g.concat(&parts, 1)?
                }
            }
        };
        self.regression_head(g, z, mode, seed)
    }

    /// Eval-mode predictions for many pairs, batched and run in parallel.
    pub fn predict(&self, pairs: &[(&BScan, &BScan)], batch: usize) -> Result<Vec<f64>, OdomNetError> {
        let batch = batch.max(1);
        let chunks: Vec<&[(&BScan, &BScan)]> = pairs.chunks(batch).collect();
        let out = crate::par::map_slice(&chunks, |chunk| -> Result<Vec<f64>, OdomNetError> {
            let prev: Vec<&BScan> = chunk.iter().map(|p| p.0).collect();
            let cur: Vec<&BScan> = chunk.iter().map(|p| p.1).collect();
            let mut g = Graph::new();
            let a = g.constant(self.batch_input(&prev)?);
            let b = g.constant(self.batch_input(&cur)?);
            let y = self.forward(&mut g, a, b, Mode::Eval, None)?;
            Ok(g.value(y).data().to_vec())
        });
        let mut preds = Vec::with_capacity(pairs.len());
        for r in out {
            preds.extend(r?);
        }
        Ok(preds)
    }
}

/// `sqrt(mean((pred − label)²))` over the batch.
pub fn rmse_loss(g: &mut Graph, preds: Var, labels: &[f64]) -> Result<Var, OdomNetError> {
    let n: usize = g.shape(preds).iter().product();
    if labels.is_empty() {
        return Err(OdomNetError::Input("RMSE of an empty batch".into()));
    }
    if n != labels.len() {
        return Err(OdomNetError::Input(format!(
            "{n} predictions but {} labels",
            labels.len()
        )));
    }
    let shape = g.shape(preds).to_vec();
    let y = g.constant(Tensor::new(&shape, labels.to_vec())?);
    let diff = g.sub(preds, y)?;
    let sq = g.square(diff);
    let m = g.mean(sq);
    Ok(g.sqrt(m))
}

/// Plain RMSE of two slices.
pub fn rmse(preds: &[f64], labels: &[f64]) -> f64 {
    let n = preds.len().min(labels.len()).max(1) as f64;
    (preds.iter().zip(labels).map(|(p, l)| (p - l).powi(2)).sum::<f64>() / n).sqrt()
}
