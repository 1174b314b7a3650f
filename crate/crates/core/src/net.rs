//! MLP inference head on top of the pixel measurements.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Head {
    /// One logit per count class, trained with cross-entropy.
    Classification { classes: usize },
    /// A single real output, trained with squared error and rounded.
    Regression,
}

impl Head {
    pub fn outputs(&self) -> usize {
        match self {
            Head::Classification { classes } => *classes,
            Head::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Number of pixel measurements `K`.
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub leak_slope: f64,
    pub head: Head,
    /// Standardize each measurement with statistics taken when training
    /// starts. The shift and scale are then frozen.
    #[serde(default = "default_true")]
    pub standardize_inputs: bool,
}

fn default_true() -> bool {
    true
}

impl MlpConfig {
    pub fn counting(inputs: usize) -> Self {
        Self {
            inputs,
            hidden: vec![128, 128],
            leak_slope: 0.01,
            head: Head::Classification { classes: 11 },
            standardize_inputs: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer widths must be at least 1"));
        }
        if let Head::Classification { classes } = self.head {
            if classes < 2 {
                return Err(Error::config("classification needs at least 2 classes"));
            }
        }
        if !(self.leak_slope > 0.0 && self.leak_slope < 1.0) {
            return Err(Error::config("leak slope must be in (0, 1)"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.inputs];
        w.extend(&self.hidden);
        w.push(self.head.outputs());
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: MlpConfig,
    pub layers: Vec<Dense>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Graph handles of a network bound into one pass.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    params: Vec<Var>,
    shift: Option<Var>,
    scale: Option<Var>,
}

impl BoundNetwork {
    /// Weight and bias handles, in [`Network::params_mut`] order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

impl Network {
    /// Uniform fan-based init `U(±√(6/(fan_in+fan_out)))`, zero biases.
    pub fn init(config: &MlpConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Tensor::from_fn(vec![fan_in, fan_out], |_| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Tensor::zeros(vec![fan_out]),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
            input_shift: vec![0.0; config.inputs],
            input_scale: vec![1.0; config.inputs],
        })
    }

    /// Verifies that layer shapes chain from `inputs` to the head.
    pub fn check_shapes(&self) -> Result<()> {
        let widths = self.config.widths();
        let ok = self.layers.len() + 1 == widths.len()
            && self.input_shift.len() == self.inputs()
            && self.input_scale.len() == self.inputs()
            && self
                .layers
                .iter()
                .zip(widths.windows(2))
                .all(|(l, p)| l.weight.shape() == [p[0], p[1]] && l.bias.shape() == [p[1]]);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension {
                op: "network layers",
                lhs: self.layers.iter().map(|l| l.bias.len()).collect(),
                rhs: widths,
            })
        }
    }

    pub fn inputs(&self) -> usize {
        self.config.inputs
    }

    pub fn outputs(&self) -> usize {
        self.config.head.outputs()
    }

    /// Freezes per-input standardization from a `[n, K]` sample of
    /// measurements. Inputs with zero spread keep unit scale.
    pub fn fit_input_standardization(&mut self, measurements: &Tensor) -> Result<()> {
        let (n, k) = measurements.dims2("standardization")?;
        if k != self.inputs() || n == 0 {
            return Err(Error::Dimension {
                op: "standardization",
                lhs: measurements.shape().to_vec(),
                rhs: vec![self.inputs()],
            });
        }
        let d = measurements.data();
        for j in 0..k {
            let mean = (0..n).map(|i| d[i * k + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (d[i * k + j] - mean).powi(2)).sum::<f64>() / n as f64;
            self.input_shift[j] = mean;
            self.input_scale[j] = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNetwork {
        let params = self
            .params()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let identity = self.input_shift.iter().all(|&s| s == 0.0)
            && self.input_scale.iter().all(|&s| s == 1.0);
        let (shift, scale) = if identity {
            (None, None)
        } else {
            let neg: Vec<f64> = self.input_shift.iter().map(|s| -s).collect();
            let shift = g.constant(Tensor::new(vec![self.inputs()], neg).expect("len"));
            let scale = g
                .constant(Tensor::new(vec![self.inputs()], self.input_scale.clone()).expect("len"));
            (Some(shift), Some(scale))
        };
        BoundNetwork {
            params,
            shift,
            scale,
        }
    }

    /// affine → leaky ReLU → … → affine head, on `[batch, K]` inputs.
    pub fn forward(&self, g: &mut Graph, bound: &BoundNetwork, x: Var) -> Result<Var> {
        let (_, k) = g.value(x).dims2("network input")?;
        if k != self.inputs() {
            return Err(Error::Dimension {
                op: "network input",
                lhs: g.value(x).shape().to_vec(),
                rhs: vec![self.inputs()],
            });
        }
        let mut h = x;
        if let (Some(shift), Some(scale)) = (bound.shift, bound.scale) {
            h = g.add_row(h, shift)?;
            h = g.mul_row(h, scale)?;
        }
        let last = self.layers.len() - 1;
        for (i, pair) in bound.params.chunks_exact(2).enumerate() {
            h = g.matmul(h, pair[0])?;
            h = g.add_row(h, pair[1])?;
            if i < last {
                h = g.leaky_relu(h, self.config.leak_slope);
            }
        }
        Ok(h)
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Rounds half away from zero and clamps into `[lo, hi]`.
pub fn round_count(value: f64, lo: u8, hi: u8) -> u8 {
    if value.is_nan() {
        return lo;
    }
    value.round().clamp(lo as f64, hi as f64) as u8
}

/// Integer counts for each row of a `[batch, outputs]` head output.
pub fn predict_counts(output: &Tensor, head: Head, count_range: [u8; 2]) -> Vec<u8> {
    let cols = output.shape().last().copied().unwrap_or(1).max(1);
    output
        .data()
        .chunks_exact(cols)
        .map(|row| match head {
            Head::Classification { .. } => {
                (argmax(row) as u8).clamp(count_range[0], count_range[1])
            }
            Head::Regression => round_count(row[0], count_range[0], count_range[1]),
        })
        .collect()
}
