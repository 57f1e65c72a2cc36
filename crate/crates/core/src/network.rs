//! Fully-connected tanh networks mapping `(x1, x2)` to a scalar.
//!
//! Hidden layers apply `tanh`; the output layer is affine. Besides the plain
//! forward pass, [`BoundMlp::forward_with_spatial`] carries the first and
//! second spatial derivatives of every layer's activations alongside the
//! values, recording all of that arithmetic on the tape so that one reverse
//! sweep differentiates expressions in `u`, `grad u` and the Hessian of `u`
//! with respect to the weights.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};
use crate::Point;

pub const INPUT_DIM: usize = 2;
pub const OUTPUT_DIM: usize = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("parameter vector has {got} entries, architecture {arch} needs {expected}")]
    ParameterLength { arch: String, expected: usize, got: usize },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Hidden-layer widths of a `2 -> ... -> 1` tanh network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MlpArchitecture {
    hidden: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(hidden: Vec<usize>) -> Result<Self, NetworkError> {
        if hidden.is_empty() {
            return Err(NetworkError::InvalidArchitecture(
                "at least one hidden layer is required".into(),
            ));
        }
        if hidden.contains(&0) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "hidden widths must be positive, got {hidden:?}"
            )));
        }
        Ok(Self { hidden })
    }

    /// `depth` hidden layers of `width` neurons each.
    pub fn uniform(width: usize, depth: usize) -> Result<Self, NetworkError> {
        Self::new(vec![width; depth])
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// All layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(INPUT_DIM);
        w.extend_from_slice(&self.hidden);
        w.push(OUTPUT_DIM);
        w
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

impl TryFrom<Vec<usize>> for MlpArchitecture {
    type Error = NetworkError;

    fn try_from(hidden: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(hidden)
    }
}

impl From<MlpArchitecture> for Vec<usize> {
    fn from(a: MlpArchitecture) -> Self {
        a.hidden
    }
}

impl fmt::Display for MlpArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.widths().iter().map(|w| w.to_string()).collect();
        write!(f, "[{}]", parts.join("-"))
    }
}

pub fn param_count(arch: &MlpArchitecture) -> usize {
    arch.param_count()
}

/// Flattened weights and biases.
///
/// Layout follows `{W_1, ..., W_L, b_1, ..., b_L}`: all weight matrices
/// first, then all bias vectors. `W_l` is stored `fan_in x fan_out`
/// row-major, so a batch of activations `A` (rows = points) maps to
/// `A * W_l + b_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    arch: MlpArchitecture,
    flat: Vec<f64>,
}

impl ParameterVector {
    pub fn from_flat(arch: MlpArchitecture, flat: Vec<f64>) -> Result<Self, NetworkError> {
        let expected = arch.param_count();
        if flat.len() != expected {
            return Err(NetworkError::ParameterLength {
                arch: arch.to_string(),
                expected,
                got: flat.len(),
            });
        }
        Ok(Self { arch, flat })
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            flat: vec![0.0; n],
        }
    }

    /// Xavier/Glorot uniform weights on `+-sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init_xavier(arch: &MlpArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch.clone());
        for (layer, (fan_in, fan_out)) in arch.layers().into_iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let range = p.weight_range(layer);
            for w in &mut p.flat[range] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        let layers = self.arch.layers();
        let start: usize = layers[..layer].iter().map(|(i, o)| i * o).sum();
        let (i, o) = layers[layer];
        start..start + i * o
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        let layers = self.arch.layers();
        let weights: usize = layers.iter().map(|(i, o)| i * o).sum();
        let start = weights + layers[..layer].iter().map(|(_, o)| o).sum::<usize>();
        start..start + layers[layer].1
    }

    /// Binary form: `u32` count of widths, the widths (input and output
    /// included) as `u32`, then the parameters as `f64`, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let widths = self.arch.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for width in widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        for x in &self.flat {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NetworkError> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if n < 3 {
            return Err(NetworkError::Format(format!("{n} widths, need at least 3")));
        }
        let mut widths = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            widths.push(u32::from_le_bytes(b4) as usize);
        }
        if widths[0] != INPUT_DIM || widths[n - 1] != OUTPUT_DIM {
            return Err(NetworkError::Format(format!(
                "expected a {INPUT_DIM}-input, {OUTPUT_DIM}-output network, got widths {widths:?}"
            )));
        }
        let arch = MlpArchitecture::new(widths[1..n - 1].to_vec())?;
        let mut flat = vec![0.0; arch.param_count()];
        let mut b8 = [0u8; 8];
        for x in &mut flat {
            r.read_exact(&mut b8)?;
            *x = f64::from_le_bytes(b8);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NetworkError::Format(format!(
                "{} trailing bytes after parameters",
                rest.len()
            )));
        }
        Self::from_flat(arch, flat)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Network outputs at a batch of points with spatial derivative channels.
/// Each field is an `n x 1` node.
#[derive(Clone, Copy, Debug)]
pub struct EvalBundle {
    pub u: Var,
    pub d1: Var,
    pub d2: Var,
    pub d11: Var,
    pub d12: Var,
    pub d22: Var,
}

impl EvalBundle {
    pub fn gradient(&self) -> GradientBundle {
        GradientBundle {
            u: self.u,
            d1: self.d1,
            d2: self.d2,
        }
    }

    /// Rows `start..start+len` of every channel.
    pub fn slice(&self, tape: &mut Tape, start: usize, len: usize) -> Result<Self, AutodiffError> {
        Ok(Self {
            u: tape.slice_rows(self.u, start, len)?,
            d1: tape.slice_rows(self.d1, start, len)?,
            d2: tape.slice_rows(self.d2, start, len)?,
            d11: tape.slice_rows(self.d11, start, len)?,
            d12: tape.slice_rows(self.d12, start, len)?,
            d22: tape.slice_rows(self.d22, start, len)?,
        })
    }
}

/// Value and first spatial derivatives.
#[derive(Clone, Copy, Debug)]
pub struct GradientBundle {
    pub u: Var,
    pub d1: Var,
    pub d2: Var,
}

impl GradientBundle {
    pub fn slice(&self, tape: &mut Tape, start: usize, len: usize) -> Result<Self, AutodiffError> {
        Ok(Self {
            u: tape.slice_rows(self.u, start, len)?,
            d1: tape.slice_rows(self.d1, start, len)?,
            d2: tape.slice_rows(self.d2, start, len)?,
        })
    }
}

/// A parameter vector registered on a tape, one node per weight matrix and
/// bias row.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    arch: MlpArchitecture,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

struct Channels {
    u: Var,
    d: [Var; 2],
    // `None` while the second derivatives are identically zero (input layer)
    // or when they were not requested.
    dd: Option<[Var; 3]>,
}

impl BoundMlp {
    pub fn bind(params: &ParameterVector, tape: &mut Tape) -> Result<Self, AutodiffError> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (layer, (fan_in, fan_out)) in params.arch.layers().into_iter().enumerate() {
            let w = params.flat[params.weight_range(layer)].to_vec();
            let b = params.flat[params.bias_range(layer)].to_vec();
            weights.push(tape.param(Tensor::matrix(fan_in, fan_out, w)?)?);
            biases.push(tape.param(Tensor::matrix(1, fan_out, b)?)?);
        }
        Ok(Self {
            arch: params.arch.clone(),
            weights,
            biases,
        })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn forward(&self, tape: &mut Tape, points: &[Point]) -> Result<Var, AutodiffError> {
        let mut a = tape.constant(points_tensor(points))?;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let z = tape.matmul(a, self.weights[l])?;
            let z = tape.add(z, self.biases[l])?;
            a = if l < last { tape.tanh(z)? } else { z };
        }
        Ok(a)
    }

    pub fn forward_with_spatial(&self, tape: &mut Tape, points: &[Point]) -> Result<EvalBundle, AutodiffError> {
        let ch = self.propagate(tape, points, true)?;
        let [d11, d12, d22] = ch.dd.expect("second-order channels requested");
        Ok(EvalBundle {
            u: ch.u,
            d1: ch.d[0],
            d2: ch.d[1],
            d11,
            d12,
            d22,
        })
    }

    /// Like [`Self::forward_with_spatial`] but stops at first derivatives.
    pub fn forward_with_gradient(&self, tape: &mut Tape, points: &[Point]) -> Result<GradientBundle, AutodiffError> {
        let ch = self.propagate(tape, points, false)?;
        Ok(GradientBundle {
            u: ch.u,
            d1: ch.d[0],
            d2: ch.d[1],
        })
    }

    fn propagate(&self, tape: &mut Tape, points: &[Point], second_order: bool) -> Result<Channels, AutodiffError> {
        let n = points.len();
        let x = tape.constant(points_tensor(points))?;
        // d x / d x_k is the k-th unit row for every point.
        let e1 = tape.constant(Tensor::matrix(n, 2, [1.0, 0.0].repeat(n))?)?;
        let e2 = tape.constant(Tensor::matrix(n, 2, [0.0, 1.0].repeat(n))?)?;
        let mut ch = Channels {
            u: x,
            d: [e1, e2],
            dd: None,
        };
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let w = self.weights[l];
            let z = tape.matmul(ch.u, w)?;
            let z = tape.add(z, self.biases[l])?;
            let z1 = tape.matmul(ch.d[0], w)?;
            let z2 = tape.matmul(ch.d[1], w)?;
            let zz = match ch.dd {
                Some([a11, a12, a22]) => Some([tape.matmul(a11, w)?, tape.matmul(a12, w)?, tape.matmul(a22, w)?]),
                None => None,
            };
            if l == last {
                ch = Channels {
                    u: z,
                    d: [z1, z2],
                    dd: zz,
                };
                break;
            }
            // t = tanh z, s = 1 - t^2, p = -2 t s
            let t = tape.tanh(z)?;
            let t2 = tape.square(t)?;
            let neg_t2 = tape.neg(t2)?;
            let s = tape.offset(neg_t2, 1.0)?;
            let a1 = tape.mul(s, z1)?;
            let a2 = tape.mul(s, z2)?;
            let dd = if second_order {
                let ts = tape.mul(t, s)?;
                let p = tape.scale(ts, -2.0)?;
                let pz1 = tape.mul(p, z1)?;
                let pz2 = tape.mul(p, z2)?;
                let mut a11 = tape.mul(pz1, z1)?;
                let mut a12 = tape.mul(pz1, z2)?;
                let mut a22 = tape.mul(pz2, z2)?;
                if let Some([z11, z12, z22]) = zz {
                    let s11 = tape.mul(s, z11)?;
                    let s12 = tape.mul(s, z12)?;
                    let s22 = tape.mul(s, z22)?;
                    a11 = tape.add(a11, s11)?;
                    a12 = tape.add(a12, s12)?;
                    a22 = tape.add(a22, s22)?;
                }
                Some([a11, a12, a22])
            } else {
                None
            };
            ch = Channels { u: t, d: [a1, a2], dd };
        }
        if second_order && ch.dd.is_none() {
            // Only reachable for a network without hidden layers, which the
            // architecture type rules out; keep the channels well-defined.
            let zero = tape.constant(Tensor::zeros(vec![n, 1]))?;
            ch.dd = Some([zero, zero, zero]);
        }
        Ok(ch)
    }

    /// Gradient with respect to the flat parameter layout of this network.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for v in self.weights.iter().chain(&self.biases) {
            out.extend_from_slice(grads.wrt(*v).data());
        }
        out
    }
}

/// Convenience: bind `params` and run the plain forward pass.
pub fn forward(params: &ParameterVector, points: &[Point], tape: &mut Tape) -> Result<Var, AutodiffError> {
    BoundMlp::bind(params, tape)?.forward(tape, points)
}

/// Convenience: bind `params` and run the derivative-carrying forward pass.
pub fn forward_with_spatial(
    params: &ParameterVector,
    points: &[Point],
    tape: &mut Tape,
) -> Result<EvalBundle, AutodiffError> {
    BoundMlp::bind(params, tape)?.forward_with_spatial(tape, points)
}

/// Tape-free evaluation, used for error metrics on full grids.
pub fn predict(params: &ParameterVector, points: &[Point]) -> Vec<f64> {
    let layers = params.arch.layers();
    let last = layers.len() - 1;
    let mut out = Vec::with_capacity(points.len());
    let max_width = params.arch.widths().into_iter().max().unwrap_or(1);
    let mut cur = vec![0.0; max_width];
    let mut next = vec![0.0; max_width];
    for p in points {
        cur[..2].copy_from_slice(p);
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &params.flat[params.weight_range(l)];
            let b = &params.flat[params.bias_range(l)];
            next[..fan_out].copy_from_slice(b);
            for i in 0..fan_in {
                let a = cur[i];
                let row = &w[i * fan_out..(i + 1) * fan_out];
                for (n, wij) in next[..fan_out].iter_mut().zip(row) {
                    *n += a * wij;
                }
            }
            if l < last {
                for v in &mut next[..fan_out] {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.push(cur[0]);
    }
    out
}

fn points_tensor(points: &[Point]) -> Tensor {
    let data = points.iter().flat_map(|p| p.iter().copied()).collect();
    Tensor::matrix(points.len(), 2, data).expect("two coordinates per point")
}
