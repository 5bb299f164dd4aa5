//! The frozen classifier: architecture descriptor, parameters, training,
//! PGD attacks and checkpoint persistence.

pub mod attack;
pub mod checkpoint;
pub mod schedule;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use attack::pgd_attack;
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use schedule::OneCycle;
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

/// Images are evaluated in chunks of this many to bound tape memory.
pub(crate) const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv { cin: usize, cout: usize, kernel: usize, padding: usize },
    Relu,
    MaxPool2,
    Flatten,
    Linear { fin: usize, fout: usize },
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv { cin, cout, kernel, padding } => write!(f, "conv {cin} {cout} {kernel} {padding}"),
            Layer::Relu => f.write_str("relu"),
            Layer::MaxPool2 => f.write_str("maxpool2"),
            Layer::Flatten => f.write_str("flatten"),
            Layer::Linear { fin, fout } => write!(f, "linear {fin} {fout}"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad layer descriptor {s:?}")))
        };
        let layer = match parts.first().copied() {
            Some("conv") if parts.len() == 5 => {
                Layer::Conv { cin: num(1)?, cout: num(2)?, kernel: num(3)?, padding: num(4)? }
            }
            Some("relu") if parts.len() == 1 => Layer::Relu,
            Some("maxpool2") if parts.len() == 1 => Layer::MaxPool2,
            Some("flatten") if parts.len() == 1 => Layer::Flatten,
            Some("linear") if parts.len() == 3 => Layer::Linear { fin: num(1)?, fout: num(2)? },
            _ => return Err(Error::InvalidArgument(format!("bad layer descriptor {s:?}"))),
        };
        Ok(layer)
    }
}

/// Layer list plus the single-channel square input it expects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub side: usize,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

impl Architecture {
    /// conv(1→8)+relu+pool → conv(8→16)+relu+pool → flatten → linear.
    pub fn small_cnn(side: usize, classes: usize) -> Result<Self> {
        if !side.is_multiple_of(4) || side == 0 {
            return Err(Error::InvalidArgument(format!("input side {side} must be a positive multiple of 4")));
        }
        let q = side / 4;
        let arch = Architecture {
            side,
            classes,
            layers: vec![
                Layer::Conv { cin: 1, cout: 8, kernel: 3, padding: 1 },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv { cin: 8, cout: 16, kernel: 3, padding: 1 },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
                Layer::Linear { fin: 16 * q * q, fout: classes },
            ],
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Walks the layer list checking that extents line up and the output has `classes` logits.
    pub fn validate(&self) -> Result<()> {
        #[derive(Clone, Copy)]
        enum S {
            Map(usize, usize, usize),
            Flat(usize),
        }
        let bad = |msg: String| Err(Error::InvalidArgument(format!("architecture: {msg}")));
        let mut s = S::Map(1, self.side, self.side);
        for (i, layer) in self.layers.iter().enumerate() {
            s = match (*layer, s) {
                (Layer::Conv { cin, cout, kernel, padding }, S::Map(c, h, w)) => {
                    if cin != c || kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return bad(format!("layer {i} ({layer}) does not fit input {c}x{h}x{w}"));
                    }
                    S::Map(cout, h + 2 * padding - kernel + 1, w + 2 * padding - kernel + 1)
                }
                (Layer::Relu, s) => s,
                (Layer::MaxPool2, S::Map(c, h, w)) if h % 2 == 0 && w % 2 == 0 => S::Map(c, h / 2, w / 2),
                (Layer::Flatten, S::Map(c, h, w)) => S::Flat(c * h * w),
                (Layer::Linear { fin, fout }, S::Flat(n)) if fin == n => S::Flat(fout),
                _ => return bad(format!("layer {i} ({layer}) does not fit its input")),
            };
        }
        match s {
            S::Flat(n) if n == self.classes => Ok(()),
            _ => bad(format!("network does not end in {} logits", self.classes)),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for layer in &self.layers {
            match *layer {
                Layer::Conv { cin, cout, kernel, .. } => {
                    shapes.push(vec![cout, cin, kernel, kernel]);
                    shapes.push(vec![cout]);
                }
                Layer::Linear { fin, fout } => {
                    shapes.push(vec![fout, fin]);
                    shapes.push(vec![fout]);
                }
                _ => {}
            }
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn descriptor(&self) -> String {
        let mut out = format!("input 1 {} {}\nclasses {}\n", self.side, self.side, self.classes);
        for layer in &self.layers {
            out.push_str(&layer.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = || Error::InvalidArgument(format!("bad architecture descriptor {text:?}"));
        let input: Vec<&str> = lines.next().ok_or_else(bad)?.split_whitespace().collect();
        let side = match input.as_slice() {
            ["input", "1", h, w] if h == w => h.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        };
        let classes = match lines.next().ok_or_else(bad)?.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["classes", c] => c.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        };
        let layers = lines.map(str::parse).collect::<Result<Vec<Layer>>>()?;
        let arch = Architecture { side, classes, layers };
        arch.validate()?;
        Ok(arch)
    }
}

/// Architecture plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<Tensor>,
}

impl Network {
    /// He-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Tensor::new(shape, data).expect("shape from descriptor")
            })
            .collect();
        Network { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor>) -> Result<Self> {
        let shapes = arch.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::InvalidArgument("parameter shapes do not match the architecture".into()));
        }
        Ok(Network { arch, params })
    }

    /// Records the parameters on `tape`, differentiable when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let t = p.clone();
                tape.leaf(if trainable { t.with_grad() } else { t })
            })
            .collect()
    }

    /// Logits for a normalized input batch `x` of shape `[N, 1, side, side]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let mut h = x;
        let mut p = params.iter();
        let mut next = || p.next().copied().ok_or_else(|| Error::InvalidArgument("missing parameter".into()));
        for layer in &self.arch.layers {
            h = match *layer {
                Layer::Conv { padding, .. } => {
                    let (w, b) = (next()?, next()?);
                    tape.conv2d(h, w, b, padding)?
                }
                Layer::Relu => tape.relu(h),
                Layer::MaxPool2 => tape.maxpool2(h)?,
                Layer::Flatten => tape.flatten(h)?,
                Layer::Linear { .. } => {
                    let (w, b) = (next()?, next()?);
                    tape.linear(h, w, b)?
                }
            };
        }
        Ok(h)
    }

    /// Logits (row-major `[N, classes]`) for flattened normalized images.
    pub fn logits(&self, images: &[f64]) -> Result<Vec<f64>> {
        let px = self.arch.side * self.arch.side;
        if !images.len().is_multiple_of(px) {
            return Err(Error::shape("logits", format!("{} values is not a whole number of images", images.len())));
        }
        let mut out = Vec::with_capacity(images.len() / px * self.arch.classes);
        for chunk in images.chunks(EVAL_CHUNK * px) {
            let n = chunk.len() / px;
            let mut tape = Tape::new();
            let params = self.register(&mut tape, false);
            let x = tape.leaf(Tensor::new(&[n, 1, self.arch.side, self.arch.side], chunk.to_vec())?);
            let z = self.forward(&mut tape, x, &params)?;
            out.extend_from_slice(tape.value(z).data());
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[f64]) -> Result<Vec<usize>> {
        let c = self.arch.classes;
        Ok(self.logits(images)?.chunks(c).map(argmax).collect())
    }

    /// Per-sample cross entropy on normalized images.
    pub fn losses(&self, images: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
        let c = self.arch.classes;
        let logits = self.logits(images)?;
        if logits.len() != labels.len() * c {
            return Err(Error::shape("losses", format!("{} images vs {} labels", logits.len() / c, labels.len())));
        }
        labels
            .iter()
            .zip(logits.chunks(c))
            .map(|(&y, row)| {
                if y >= c {
                    return Err(Error::LabelOutOfRange { label: y, classes: c });
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                Ok(lse - row[y])
            })
            .collect()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / pred.len() as f64
}
