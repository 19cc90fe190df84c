//! The convolution + fused-attention classifier shared by teacher and student.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, HeadFusion, Mode, Padding, RunningStats, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["angry", "happy", "neutral", "sad"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of each of the two parallel first-layer branches.
    pub branch_channels: usize,
    /// Output channels of conv stages 2 to 5.
    pub stage_channels: Vec<usize>,
    pub heads: usize,
    pub fusion: HeadFusion,
    /// `false` replaces the attention layer with the identity.
    pub attention: bool,
    pub n_bins: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            branch_channels: 8,
            stage_channels: vec![32, 48, 64, 80],
            heads: 4,
            fusion: HeadFusion::Sum,
            attention: true,
            n_bins: 40,
            n_classes: N_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branch_channels == 0 || self.n_bins == 0 || self.n_classes < 2 {
            return Err(Error::Config("channel, bin and class counts must be positive".into()));
        }
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return Err(Error::Config(format!(
                "expected 4 nonzero stage widths, got {:?}",
                self.stage_channels
            )));
        }
        let width = self.out_channels();
        if self.heads == 0 || width % self.heads != 0 {
            return Err(Error::Config(format!("{} heads do not divide {width} channels", self.heads)));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&0)
    }

    /// Spatial size of the attention input for an `h × w` segment.
    pub fn attention_grid(&self, h: usize, w: usize) -> (usize, usize) {
        let pool = |d: usize| d.div_ceil(2);
        (pool(pool(h)), pool(pool(w)))
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let b = self.branch_channels;
        let mut out = vec![
            ("conv1t.weight".into(), vec![b, 1, 10, 2]),
            ("conv1t.bias".into(), vec![b]),
            ("bn1t.gamma".into(), vec![b]),
            ("bn1t.beta".into(), vec![b]),
            ("conv1f.weight".into(), vec![b, 1, 2, 8]),
            ("conv1f.bias".into(), vec![b]),
            ("bn1f.gamma".into(), vec![b]),
            ("bn1f.beta".into(), vec![b]),
        ];
        let mut cin = 2 * b;
        for (i, &cout) in self.stage_channels.iter().enumerate() {
            let s = i + 2;
            out.push((format!("conv{s}.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("conv{s}.bias"), vec![cout]));
            out.push((format!("bn{s}.gamma"), vec![cout]));
            out.push((format!("bn{s}.beta"), vec![cout]));
            cin = cout;
        }
        if self.attention {
            for p in ["query", "key", "value"] {
                out.push((format!("attn.{p}"), vec![cin, cin]));
            }
        }
        out.push(("fc.weight".into(), vec![self.n_classes, cin]));
        out.push(("fc.bias".into(), vec![self.n_classes]));
        out
    }

    fn bn_layers(&self) -> Vec<(String, usize)> {
        let b = self.branch_channels;
        let mut out = vec![("bn1t".to_string(), b), ("bn1f".to_string(), b)];
        for (i, &c) in self.stage_channels.iter().enumerate() {
            out.push((format!("bn{}", i + 2), c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// All weights and batch-norm statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<Param>,
    /// Running statistics, in layer order `bn1t, bn1f, bn2..bn5`.
    pub bn_stats: Vec<(String, RunningStats)>,
}

impl NetworkParams {
    /// Kaiming-uniform fan-in weights, zero biases, unit gamma, zero beta.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .shapes()
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if name.ends_with(".gamma") {
                    Tensor::full(&shape, 1.0)
                } else if name.ends_with(".bias") || name.ends_with(".beta") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
                };
                Param { name, tensor }
            })
            .collect();
        let bn_stats = config
            .bn_layers()
            .into_iter()
            .map(|(name, c)| (name, RunningStats::new(c)))
            .collect();
        Ok(Self { config: config.clone(), seed, params, bn_stats })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// `(name, shape)` of every trainable tensor, in order.
    pub fn shapes(&self) -> Vec<(&str, &[usize])> {
        self.params.iter().map(|p| (p.name.as_str(), p.tensor.shape())).collect()
    }
}

/// Graph handles produced by [`forward`].
pub struct Forward {
    pub logits: Var,
    /// Output of the attention layer, when present.
    pub attention: Option<Var>,
    /// One handle per entry of `NetworkParams::params`, same order.
    pub params: Vec<Var>,
}

/// Records the network on `g`. Parameters enter as trainable leaves when
/// `trainable` is set, as constants otherwise. Train mode updates the
/// running batch-norm statistics in `net`.
pub fn forward(g: &mut Graph, net: &mut NetworkParams, batch: &Tensor, mode: Mode, trainable: bool) -> Result<Forward> {
    let [_, c, _, w] = batch.dims4()?;
    if c != 1 {
        return Err(Error::Dimension { axis: "input channels", expected: 1, actual: c });
    }
    if w != net.config.n_bins {
        return Err(Error::Dimension { axis: "mel bins", expected: net.config.n_bins, actual: w });
    }
    let vars: Vec<Var> = net
        .params
        .iter()
        .map(|p| if trainable { g.param(&p.tensor) } else { g.input(p.tensor.clone()) })
        .collect();
    let mut next = vars.iter().copied();
    let mut take = || next.next().expect("parameter layout matches config");
    let mut stats = net.bn_stats.iter_mut().map(|(_, s)| s);
    let x = g.input(batch.clone());

    let mut branch = |g: &mut Graph, kh, kw| -> Result<Var> {
        let (wt, b, gamma, beta) = (take(), take(), take(), take());
        let y = g.conv2d(x, wt, b, Padding::same(kh, kw))?;
        let y = g.batchnorm2d(y, gamma, beta, stats.next().expect("bn layout"), mode)?;
        Ok(g.relu(y))
    };
    let t = branch(g, 10, 2)?;
    let f = branch(g, 2, 8)?;
    let mut h = g.concat_channels(t, f)?;
    for stage in 2..=5 {
        let (wt, b, gamma, beta) = (take(), take(), take(), take());
        h = g.conv2d(h, wt, b, Padding::same(3, 3))?;
        h = g.batchnorm2d(h, gamma, beta, stats.next().expect("bn layout"), mode)?;
        h = g.relu(h);
        if stage == 2 || stage == 3 {
            h = g.maxpool2d(h)?;
        }
    }
    let attention = if net.config.attention {
        let (q, k, v) = (take(), take(), take());
        h = g.fused_attention(h, q, k, v, net.config.heads, net.config.fusion)?;
        Some(h)
    } else {
        None
    };
    let pooled = g.mean_positions(h)?;
    let (fw, fb) = (take(), take());
    let logits = g.linear(pooled, fw, fb)?;
    Ok(Forward { logits, attention, params: vars })
}

/// Eval-mode logits `[N, n_classes]` without touching `net`.
pub fn predict_logits(net: &NetworkParams, batch: &Tensor) -> Result<Tensor> {
    let mut scratch = net.clone();
    let mut g = Graph::new();
    let out = forward(&mut g, &mut scratch, batch, Mode::Eval, false)?;
    Ok(g.value(out.logits).clone())
}
