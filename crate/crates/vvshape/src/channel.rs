//! Phase noise channel: additive Gaussian noise followed by a common
//! phase rotation that evolves as a Wiener random walk.
//!
//! For transmit symbol `x_k`, the receiver sees
//! `z_k = (x_k + n_k) * exp(j phi_k)` where `n_k` is circular complex
//! Gaussian noise with total variance `10^(-SNR_dB/10)` relative to unit
//! signal power, and `phi_k = phi_{k-1} + d_k` with
//! `d_k ~ N(0, 2 pi linewidth / symbol_rate)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Cx, Engine};
use crate::seeding::{self, stream};

/// Starting value of the phase walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialPhase {
    /// Uniform on [0, 2 pi). Used for evaluation.
    RandomUniform,
    /// Fixed offset. Training uses 0 so early optimization is not fighting
    /// an arbitrary rotation.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct ChannelParams {
    pub snr_db: f64,
    pub linewidth_hz: f64,
    pub symbol_rate_baud: f64,
    pub initial_phase: InitialPhase,
    /// Root seed for this realization; noise, walk, and initial phase each
    /// draw from a substream derived from it.
    pub seed: u64,
}

impl ChannelParams {
    /// Variance of one phase increment, `2 pi linewidth / symbol_rate`.
    pub fn phase_variance(&self) -> f64 {
        assert!(self.linewidth_hz >= 0.0, "linewidth must be nonnegative");
        assert!(self.symbol_rate_baud > 0.0, "symbol rate must be positive");
        2.0 * std::f64::consts::PI * self.linewidth_hz / self.symbol_rate_baud
    }

    /// Total complex noise variance relative to unit signal power.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

/// One drawn channel: a noise sample and a phase value per symbol.
///
/// The realization is independent of the transmit symbols, so the same
/// draw can be replayed against different constellations, and gradients
/// treat noise and phase as constants.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub noise: Vec<Complex64>,
    pub phase: Vec<f64>,
}

impl ChannelRealization {
    pub fn generate(p: &ChannelParams, len: usize) -> Self {
        let sigma = p.noise_variance().sqrt() / 2f64.sqrt();
        let mut noise_rng = seeding::rng(p.seed, stream::NOISE, 0);
        let noise = (0..len)
            .map(|_| {
                let re: f64 = noise_rng.sample(StandardNormal);
                let im: f64 = noise_rng.sample(StandardNormal);
                Complex64::new(sigma * re, sigma * im)
            })
            .collect();

        let mut phi = match p.initial_phase {
            InitialPhase::Fixed(v) => v,
            InitialPhase::RandomUniform => {
                let mut rng = seeding::rng(p.seed, stream::PHASE0, 0);
                rng.random_range(0.0..2.0 * std::f64::consts::PI)
            }
        };
        let step = p.phase_variance().sqrt();
        let mut phase_rng = seeding::rng(p.seed, stream::PHASE, 0);
        let phase = (0..len)
            .map(|_| {
                let d: f64 = phase_rng.sample(StandardNormal);
                phi += step * d;
                phi
            })
            .collect();

        ChannelRealization { noise, phase }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }
}

/// Applies a drawn channel to transmit symbols inside an expression graph:
/// noise is added first, then the common phase rotation.
pub fn apply<E: Engine>(
    e: &mut E,
    x: &[Cx<E::V>],
    r: &ChannelRealization,
) -> Vec<Cx<E::V>> {
    assert_eq!(x.len(), r.len(), "realization length must match input");
    let mean_power: f64 = x
        .iter()
        .map(|s| {
            let (re, im) = (e.value(s.re), e.value(s.im));
            re * re + im * im
        })
        .sum::<f64>()
        / x.len().max(1) as f64;
    if (mean_power - 1.0).abs() > 0.1 {
        log::warn!("channel input mean power {mean_power:.4} is not unit; SNR is defined for unit signal power");
    }
    x.iter()
        .zip(r.noise.iter().zip(&r.phase))
        .map(|(s, (n, &phi))| {
            let re = e.add_const(s.re, n.re);
            let im = e.add_const(s.im, n.im);
            let rot = Complex64::from_polar(1.0, phi);
            crate::autodiff::cmul_const(e, Cx::new(re, im), rot)
        })
        .collect()
}

/// Draws a realization and applies it to plain complex symbols.
pub fn simulate(p: &ChannelParams, x: &[Complex64]) -> (Vec<Complex64>, ChannelRealization) {
    let r = ChannelRealization::generate(p, x.len());
    let mut e = crate::autodiff::Plain::new();
    let cx: Vec<Cx<f64>> = x.iter().map(|z| Cx::new(z.re, z.im)).collect();
    let out = apply(&mut e, &cx, &r);
    (out.into_iter().map(Cx::to_complex).collect(), r)
}
