//! Bitwise soft demapper and its information metrics.
//!
//! [`RxNet`] is a small dense network mapping a derotated symbol (two real
//! inputs) to one log-likelihood ratio per bit, positive meaning the bit is
//! more likely 1. [`bce`]/[`bmi`] score LLRs against the transmitted bits:
//! the achievable rate of a bitwise receiver is
//! `bmi = m * (1 - bce / ln 2)` bits per symbol for `m` bits per symbol.
//! [`gaussian_llrs`] is the exact demapper for a known constellation under
//! circular Gaussian noise, used as a reference and by unshaped baselines.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{softplus_f, Cx, Engine};
use crate::tsv::TsvError;

/// Dense network with rectifier hidden layers and a linear output layer.
///
/// Weights are stored flat, per layer: the `out x in` weight matrix in
/// row-major order, then the `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct RxNet {
    arch: Vec<usize>,
    weights: Vec<f64>,
}

impl RxNet {
    /// Network of the given layer widths, all weights zero. The first width
    /// is the input dimension, the last the number of outputs.
    pub fn zeros(arch: Vec<usize>) -> Self {
        assert!(arch.len() >= 2, "need at least input and output widths");
        assert!(arch.iter().all(|&w| w >= 1), "layer widths must be positive");
        let n = param_count(&arch);
        RxNet {
            arch,
            weights: vec![0.0; n],
        }
    }

    /// Random hidden layers (Gaussian, std `sqrt(2 / fan_in)`), zero output
    /// layer. A fresh network therefore outputs zero LLRs everywhere, which
    /// makes the starting loss exactly `ln 2` per bit.
    pub fn init<R: Rng>(arch: Vec<usize>, rng: &mut R) -> Self {
        let mut net = RxNet::zeros(arch);
        let layers = net.arch.len() - 1;
        for layer in 0..layers.saturating_sub(1) {
            let (ins, outs) = (net.arch[layer], net.arch[layer + 1]);
            let std = (2.0 / ins as f64).sqrt();
            let (w_range, b_range) = net.layer_ranges(layer);
            for i in w_range {
                let g: f64 = rng.sample(StandardNormal);
                net.weights[i] = std * g;
            }
            let _ = (outs, b_range);
        }
        net
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn outputs(&self) -> usize {
        *self.arch.last().expect("nonempty arch")
    }

    // (weight range, bias range) of one layer within the flat vector.
    fn layer_ranges(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for l in 0..layer {
            off += (self.arch[l] + 1) * self.arch[l + 1];
        }
        let (ins, outs) = (self.arch[layer], self.arch[layer + 1]);
        let w = off..off + ins * outs;
        let b = w.end..w.end + outs;
        (w, b)
    }

    /// Runs the network on engine values. `weights` are the lifted
    /// parameters in storage order; `input` is the derotated symbol.
    pub fn forward<E: Engine>(&self, e: &mut E, weights: &[E::V], input: Cx<E::V>) -> Vec<E::V> {
        assert_eq!(weights.len(), self.weights.len());
        assert_eq!(self.arch[0], 2, "expected a two dimensional input layer");
        let layers = self.arch.len() - 1;
        let mut act: Vec<E::V> = vec![input.re, input.im];
        for layer in 0..layers {
            let (w_range, b_range) = self.layer_ranges(layer);
            let outs = self.arch[layer + 1];
            let ins = self.arch[layer];
            let w = &weights[w_range];
            let b = &weights[b_range];
            let mut next = Vec::with_capacity(outs);
            for o in 0..outs {
                let mut acc = b[o];
                for (i, &a) in act.iter().enumerate().take(ins) {
                    let prod = e.mul(w[o * ins + i], a);
                    acc = e.add(acc, prod);
                }
                if layer + 1 < layers {
                    acc = e.relu(acc);
                }
                next.push(acc);
            }
            act = next;
        }
        act
    }

    /// Runs the network on a plain symbol using its stored weights.
    pub fn forward_plain(&self, input: Complex64) -> Vec<f64> {
        let mut e = crate::autodiff::Plain::new();
        self.forward(&mut e, &self.weights, Cx::new(input.re, input.im))
    }

    /// Writes a versioned text checkpoint. Weights use the shortest
    /// representation that parses back to the identical f64.
    pub fn save_tsv(&self, path: &std::path::Path) -> Result<(), TsvError> {
        use std::fmt::Write as _;
        let mut out = String::from("rxnet v1\n");
        out.push_str("arch");
        for w in &self.arch {
            write!(out, "\t{w}").expect("string write");
        }
        out.push('\n');
        for layer in 0..self.arch.len() - 1 {
            let (w_range, b_range) = self.layer_ranges(layer);
            let ins = self.arch[layer];
            writeln!(out, "layer\t{layer}\tweight").expect("string write");
            for (i, v) in self.weights[w_range].iter().enumerate() {
                out.push_str(&v.to_string());
                out.push(if (i + 1) % ins == 0 { '\n' } else { '\t' });
            }
            writeln!(out, "layer\t{layer}\tbias").expect("string write");
            let biases: Vec<String> =
                self.weights[b_range].iter().map(|v| v.to_string()).collect();
            out.push_str(&biases.join("\t"));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`RxNet::save_tsv`].
    pub fn load_tsv(path: &std::path::Path) -> Result<Self, TsvError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "rxnet v1")) => {}
            other => {
                return Err(TsvError::format(
                    1,
                    format!("expected 'rxnet v1' header, got {:?}", other.map(|(_, l)| l)),
                ))
            }
        }
        let arch: Vec<usize> = match lines.next() {
            Some((_, line)) if line.starts_with("arch\t") => line[5..]
                .split('\t')
                .map(|f| {
                    f.parse()
                        .map_err(|_| TsvError::format(2, format!("bad arch field {f:?}")))
                })
                .collect::<Result<_, _>>()?,
            other => {
                return Err(TsvError::format(
                    2,
                    format!("expected arch line, got {:?}", other.map(|(_, l)| l)),
                ))
            }
        };
        if arch.len() < 2 || arch.iter().any(|&w| w == 0) {
            return Err(TsvError::format(2, format!("invalid arch {arch:?}")));
        }
        let mut net = RxNet::zeros(arch);
        let mut values = Vec::with_capacity(net.param_count());
        for (idx, line) in lines {
            if line.is_empty() || line.starts_with("layer\t") {
                continue;
            }
            for f in line.split('\t') {
                let v: f64 = f.parse().map_err(|_| {
                    TsvError::format(idx + 1, format!("bad weight value {f:?}"))
                })?;
                values.push(v);
            }
        }
        if values.len() != net.param_count() {
            return Err(TsvError::format(
                1,
                format!(
                    "expected {} parameters for arch {:?}, file holds {}",
                    net.param_count(),
                    net.arch,
                    values.len()
                ),
            ));
        }
        net.weights = values;
        Ok(net)
    }
}

fn param_count(arch: &[usize]) -> usize {
    arch.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Bits and matching LLRs for a block of symbols, flat, `m` per symbol.
#[derive(Clone, Debug)]
pub struct LlrBatch {
    pub bits_per_symbol: u32,
    pub bits: Vec<u8>,
    pub llrs: Vec<f64>,
}

impl LlrBatch {
    pub fn new(bits_per_symbol: u32, bits: Vec<u8>, llrs: Vec<f64>) -> Self {
        assert_eq!(bits.len(), llrs.len());
        assert_eq!(bits.len() % bits_per_symbol as usize, 0);
        LlrBatch {
            bits_per_symbol,
            bits,
            llrs,
        }
    }

    pub fn symbols(&self) -> usize {
        self.bits.len() / self.bits_per_symbol as usize
    }
}

/// Mean binary cross entropy per bit, in nats:
/// `mean ln(1 + exp(-(2 b - 1) llr))`. Stable for |llr| up to 1e4 and
/// beyond; zero LLRs give exactly `ln 2`.
pub fn bce(batch: &LlrBatch) -> f64 {
    assert!(!batch.bits.is_empty());
    let total: f64 = batch
        .bits
        .iter()
        .zip(&batch.llrs)
        .map(|(&b, &l)| {
            debug_assert!(b <= 1);
            let sign = f64::from(2 * i32::from(b) - 1);
            softplus_f(-sign * l)
        })
        .sum();
    total / batch.bits.len() as f64
}

/// Bitwise mutual information estimate in bits per symbol:
/// `m * (1 - bce / ln 2)`. At most `m`; zero LLRs give exactly 0.
pub fn bmi(batch: &LlrBatch) -> f64 {
    let m = f64::from(batch.bits_per_symbol);
    m * (1.0 - bce(batch) / std::f64::consts::LN_2)
}

/// Mean binary cross entropy as a graph node over flat per-bit LLRs.
/// Matches [`bce`] exactly for the same inputs.
pub fn bce_graph<E: Engine>(e: &mut E, llrs: &[E::V], bits: &[u8]) -> E::V {
    assert_eq!(llrs.len(), bits.len());
    assert!(!bits.is_empty());
    let mut total: Option<E::V> = None;
    for (&l, &b) in llrs.iter().zip(bits) {
        let sign = f64::from(2 * i32::from(b) - 1);
        let s = e.mul_const(l, -sign);
        let term = e.softplus(s);
        total = Some(match total {
            None => term,
            Some(t) => e.add(t, term),
        });
    }
    let total = total.expect("nonempty");
    let n = e.constant(bits.len() as f64);
    e.div(total, n)
}

/// Exact per-bit LLRs for a known constellation under circular Gaussian
/// noise with total variance `noise_var`, via stable log-sum-exp over the
/// points with bit 1 and bit 0 at each position.
pub fn gaussian_llrs(
    y: Complex64,
    points: &[Complex64],
    bits_per_symbol: u32,
    noise_var: f64,
) -> Vec<f64> {
    assert_eq!(points.len(), 1 << bits_per_symbol);
    assert!(noise_var > 0.0);
    let metrics: Vec<f64> = points.iter().map(|x| -(y - x).norm_sqr() / noise_var).collect();
    let m = bits_per_symbol as usize;
    let mut llrs = Vec::with_capacity(m);
    for j in 0..m {
        let bit_of = |idx: usize| (idx >> (m - 1 - j)) & 1;
        let lse = |bit: usize| {
            let vals = metrics
                .iter()
                .enumerate()
                .filter(|(i, _)| bit_of(*i) == bit)
                .map(|(_, &v)| v);
            log_sum_exp(vals)
        };
        llrs.push(lse(1) - lse(0));
    }
    llrs
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = vals.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
