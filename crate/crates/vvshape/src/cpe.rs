//! Carrier phase estimation by phase raising, with a differentiable soft
//! ring selection variant.
//!
//! The classic estimator raises every symbol to the `mu`-th power to strip
//! the mu-fold rotational symmetry of the constellation, averages over a
//! sliding window, and divides the unwrapped argument by `mu`:
//!
//! `est_k = unwrap(arg(sum_{|k'-k| <= K} z_{k'}^mu)) / mu`
//!
//! The modified estimator first maps each symbol to a weighted unit phasor
//! `w(|z|) * z / |z|`, where `w` is a product of two saturating edges per
//! amplitude ring, then applies the same raise/average/unwrap chain. All
//! three stages are smooth in the ring parameters and in the symbols, so
//! the estimator can sit inside a training graph.
//!
//! Estimates carry a mu-fold ambiguity: adding `2 pi / mu` to the true
//! phase is invisible. [`genie_csc`] removes it using the true phase track
//! and is for evaluation only.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::complex;
use crate::autodiff::{cabs, cadd, carg, cexp_j, cmul, cpow_int, cscale, csub, Cx, Engine};
use crate::tsv::TsvError;

#[derive(Debug, Error)]
pub enum CpeError {
    #[error("ring selection kept no symbols (largest total weight {max_weight:.3e})")]
    EmptySelection { max_weight: f64 },
    #[error("averaging window at symbol {index} contains only zero phasors")]
    EmptyWindow { index: usize },
}

/// Phase raising parameters: symmetry order and averaging half-width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VvParams {
    /// Symmetry order `mu`; symbols are raised to this power.
    pub power: u32,
    /// Half-width `K` of the sliding window; the window holds up to `2K+1`
    /// symbols and is truncated at the sequence edges.
    pub half_window: usize,
}

impl VvParams {
    pub fn validate(&self) {
        assert!(
            (2..=8).contains(&self.power),
            "symmetry order must be in 2..=8, got {}",
            self.power
        );
        assert!(self.half_window >= 1, "half window must be at least 1");
    }
}

/// Saturating edge shape used for ring selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Weights in (0, 1); flat far inside and outside the ring.
    Sigmoid,
    /// Weights unbounded above; grows linearly deep inside the ring.
    Softplus,
}

impl Activation {
    pub fn apply<E: Engine>(self, e: &mut E, x: E::V) -> E::V {
        match self {
            Activation::Sigmoid => e.sigmoid(x),
            Activation::Softplus => e.softplus(x),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "softplus" => Ok(Activation::Softplus),
            other => Err(format!("unknown activation {other:?}, expected sigmoid or softplus")),
        }
    }
}

/// One amplitude ring: a lower and an upper edge with a shared slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub slope: f64,
    pub inner: f64,
    pub outer: f64,
}

impl Ring {
    /// Starting ring for optimization: wide enough to pass most of a unit
    /// power constellation, steep enough to have usable gradients.
    pub fn initial() -> Self {
        Ring {
            slope: 10.0,
            inner: 0.4,
            outer: 1.6,
        }
    }
}

/// Trainable ring selection: rings plus the edge activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub rings: Vec<Ring>,
    pub activation: Activation,
}

impl PartitionParams {
    pub fn initial(num_rings: usize, activation: Activation) -> Self {
        PartitionParams {
            rings: vec![Ring::initial(); num_rings],
            activation,
        }
    }

    /// Combined selection weight of a point, the sum over rings.
    pub fn weight(&self, z: Complex64) -> f64 {
        let mut p = crate::autodiff::Plain::new();
        let zv = Cx::new(z.re, z.im);
        let rings = lift_rings(&mut p, &self.rings);
        rings
            .iter()
            .map(|r| select(&mut p, zv, r, self.activation).1)
            .sum()
    }

    /// Writes the selection weight on a square grid over
    /// [-extent, extent]^2 as `real<TAB>imag<TAB>partition` rows, real
    /// coordinate varying fastest. `resolution` points per axis.
    pub fn export_grid_tsv(
        &self,
        extent: f64,
        resolution: usize,
        path: &std::path::Path,
    ) -> Result<(), TsvError> {
        assert!(resolution >= 2, "grid needs at least 2 points per axis");
        use std::fmt::Write as _;
        let mut out = String::from("real\timag\tpartition\n");
        let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64;
        for qi in 0..resolution {
            for ri in 0..resolution {
                let z = Complex64::new(coord(ri), coord(qi));
                writeln!(out, "{}\t{}\t{}", z.re, z.im, self.weight(z)).expect("string write");
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Ring edges lifted into an engine.
#[derive(Clone, Copy, Debug)]
pub struct RingVals<V> {
    pub slope: V,
    pub inner: V,
    pub outer: V,
}

/// Lifts ring parameters as graph constants (frozen rings).
pub fn lift_rings<E: Engine>(e: &mut E, rings: &[Ring]) -> Vec<RingVals<E::V>> {
    rings
        .iter()
        .map(|r| RingVals {
            slope: e.constant(r.slope),
            inner: e.constant(r.inner),
            outer: e.constant(r.outer),
        })
        .collect()
}

/// A per-symbol phase estimate, with the total selection weight per symbol
/// when the estimator used ring selection.
#[derive(Clone, Debug)]
pub struct PhaseTrack<V> {
    pub est: Vec<V>,
    pub weights: Option<Vec<V>>,
}

impl PhaseTrack<f64> {
    pub fn values(&self) -> &[f64] {
        &self.est
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    x - two_pi * (x / two_pi).round()
}

/// Removes 2 pi jumps so consecutive outputs differ by at most pi. The
/// first element is kept as is; every correction is a constant offset, so
/// gradients flow through unchanged.
pub fn unwrap_graph<E: Engine>(e: &mut E, raw: &[E::V]) -> Vec<E::V> {
    assert!(!raw.is_empty());
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(raw.len());
    out.push(raw[0]);
    let mut offset = 0.0;
    let mut prev = e.value(raw[0]);
    for &r in &raw[1..] {
        let v = e.value(r);
        let jump = ((v + offset - prev) / two_pi).round();
        offset -= jump * two_pi;
        let adjusted = if offset == 0.0 {
            r
        } else {
            e.add_const(r, offset)
        };
        prev = v + offset;
        out.push(adjusted);
    }
    out
}

// Sliding window sums for every center position via prefix sums: two adds
// and two subs per symbol instead of O(K). Windows are truncated at the
// sequence edges.
fn windowed_sums<E: Engine>(e: &mut E, v: &[Cx<E::V>], half: usize) -> Vec<Cx<E::V>> {
    let n = v.len();
    let zero = complex::constant(e, Complex64::new(0.0, 0.0));
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(zero);
    for s in v {
        let last = *prefix.last().expect("nonempty");
        prefix.push(cadd(e, last, *s));
    }
    (0..n)
        .map(|k| {
            let hi = (k + half + 1).min(n);
            let lo = k.saturating_sub(half);
            csub(e, prefix[hi], prefix[lo])
        })
        .collect()
}

// Shared tail of both estimators: raise combined phasors, average over the
// window, take the unwrapped argument over mu. Returns an error if some
// window sums to an exact complex zero.
fn raise_average_unwrap<E: Engine>(
    e: &mut E,
    phasors: &[Cx<E::V>],
    p: &VvParams,
) -> Result<Vec<E::V>, CpeError> {
    let powed: Vec<Cx<E::V>> = phasors
        .iter()
        .map(|&s| cpow_int(e, s, p.power))
        .collect();
    let sums = windowed_sums(e, &powed, p.half_window);
    let mut raw = Vec::with_capacity(sums.len());
    for (k, s) in sums.iter().enumerate() {
        if e.value(s.re) == 0.0 && e.value(s.im) == 0.0 {
            return Err(CpeError::EmptyWindow { index: k });
        }
        raw.push(carg(e, *s));
    }
    let unwrapped = unwrap_graph(e, &raw);
    Ok(unwrapped
        .into_iter()
        .map(|u| e.mul_const(u, 1.0 / f64::from(p.power)))
        .collect())
}

/// Classic phase-raising estimate on raw symbols.
///
/// Panics if the sequence is not longer than the averaging window.
pub fn vv_estimate<E: Engine>(
    e: &mut E,
    z: &[Cx<E::V>],
    p: &VvParams,
) -> Result<PhaseTrack<E::V>, CpeError> {
    p.validate();
    assert!(
        z.len() > 2 * p.half_window,
        "sequence length {} does not cover the averaging window {}",
        z.len(),
        2 * p.half_window + 1
    );
    let est = raise_average_unwrap(e, z, p)?;
    Ok(PhaseTrack { est, weights: None })
}

/// Symbols scaled onto the unit circle; magnitudes are floored near the
/// origin so this is always defined.
pub fn unit_phasors<E: Engine>(e: &mut E, z: &[Cx<E::V>]) -> Vec<Cx<E::V>> {
    z.iter()
        .map(|&s| {
            let r = cabs(e, s);
            Cx::new(e.div(s.re, r), e.div(s.im, r))
        })
        .collect()
}

/// Soft ring selection of one symbol: returns the weighted unit phasor
/// `w * z / |z|` and the weight `w = act(slope (|z| - inner)) * act(slope (outer - |z|))`.
pub fn select<E: Engine>(
    e: &mut E,
    z: Cx<E::V>,
    ring: &RingVals<E::V>,
    activation: Activation,
) -> (Cx<E::V>, E::V) {
    let r = cabs(e, z);
    let lo = e.sub(r, ring.inner);
    let lo = e.mul(ring.slope, lo);
    let lo = activation.apply(e, lo);
    let hi = e.sub(ring.outer, r);
    let hi = e.mul(ring.slope, hi);
    let hi = activation.apply(e, hi);
    let w = e.mul(lo, hi);
    let scale = e.div(w, r);
    (cscale(e, z, scale), w)
}

/// Phase estimate on ring-selected weighted unit phasors.
///
/// Per symbol, selections from all rings are summed before raising, and the
/// track records the total selection weight for later smoothing. Fails if
/// the selection suppresses everything.
pub fn vv_modified<E: Engine>(
    e: &mut E,
    z: &[Cx<E::V>],
    p: &VvParams,
    rings: &[RingVals<E::V>],
    activation: Activation,
) -> Result<PhaseTrack<E::V>, CpeError> {
    p.validate();
    assert!(!rings.is_empty(), "ring selection needs at least one ring");
    assert!(
        z.len() > 2 * p.half_window,
        "sequence length {} does not cover the averaging window {}",
        z.len(),
        2 * p.half_window + 1
    );
    let mut combined = Vec::with_capacity(z.len());
    let mut weights = Vec::with_capacity(z.len());
    let mut max_weight = f64::NEG_INFINITY;
    for &s in z {
        let mut acc: Option<(Cx<E::V>, E::V)> = None;
        for ring in rings {
            let (ph, w) = select(e, s, ring, activation);
            acc = Some(match acc {
                None => (ph, w),
                Some((p0, w0)) => (cadd(e, p0, ph), e.add(w0, w)),
            });
        }
        let (ph, w) = acc.expect("at least one ring");
        max_weight = max_weight.max(e.value(w));
        combined.push(ph);
        weights.push(w);
    }
    if max_weight < 1e-6 {
        return Err(CpeError::EmptySelection { max_weight });
    }
    let est = raise_average_unwrap(e, &combined, p)?;
    Ok(PhaseTrack {
        est,
        weights: Some(weights),
    })
}

/// Weighted moving average of a track using its selection weights (uniform
/// weights if the track has none). Radius 0 leaves well-weighted symbols
/// unchanged. The output keeps the input weights.
pub fn smooth_track<E: Engine>(
    e: &mut E,
    track: &PhaseTrack<E::V>,
    radius: usize,
) -> PhaseTrack<E::V> {
    let n = track.est.len();
    let one = e.constant(1.0);
    let weights: Vec<E::V> = match &track.weights {
        Some(w) => w.clone(),
        None => vec![one; n],
    };
    let weighted: Vec<Cx<E::V>> = track
        .est
        .iter()
        .zip(&weights)
        .map(|(&est, &w)| Cx::new(e.mul(w, est), w))
        .collect();
    let sums = windowed_sums(e, &weighted, radius);
    let est = sums
        .into_iter()
        .map(|s| {
            let den = e.max_const(s.im, 1e-12);
            e.div(s.re, den)
        })
        .collect();
    PhaseTrack {
        est,
        weights: track.weights.clone(),
    }
}

/// Shifts a whole track by the multiple of `2 pi / mu` that brings its
/// first estimate closest to `reference`.
///
/// The raising makes the track well defined only up to such a multiple,
/// and the principal value of the first window flips branches whenever
/// the ensemble direction sits near the cut. The shift is a constant, so
/// gradients pass through unchanged.
pub fn anchor_track<E: Engine>(
    e: &mut E,
    track: &PhaseTrack<E::V>,
    reference: f64,
    power: u32,
) -> PhaseTrack<E::V> {
    assert!(!track.est.is_empty());
    let step = 2.0 * std::f64::consts::PI / f64::from(power);
    let k = ((reference - e.value(track.est[0])) / step).round();
    if k == 0.0 {
        return track.clone();
    }
    let est = track.est.iter().map(|&v| e.add_const(v, k * step)).collect();
    PhaseTrack {
        est,
        weights: track.weights.clone(),
    }
}

/// Genie cycle slip compensation: shifts every estimate by the multiple of
/// `2 pi / mu` that brings it closest to the true phase. The corrected
/// estimate is within `pi / mu` of the truth at every symbol. Evaluation
/// only; the correction uses the transmitted phase track.
pub fn genie_csc<E: Engine>(
    e: &mut E,
    track: &PhaseTrack<E::V>,
    true_phase: &[f64],
    power: u32,
) -> PhaseTrack<E::V> {
    assert_eq!(track.est.len(), true_phase.len());
    let step = 2.0 * std::f64::consts::PI / f64::from(power);
    let est = track
        .est
        .iter()
        .zip(true_phase)
        .map(|(&est, &phi)| {
            let n = ((phi - e.value(est)) / step).round();
            if n == 0.0 {
                est
            } else {
                e.add_const(est, n * step)
            }
        })
        .collect();
    PhaseTrack {
        est,
        weights: track.weights.clone(),
    }
}

/// Rotates each symbol by minus its estimated phase.
pub fn derotate<E: Engine>(
    e: &mut E,
    z: &[Cx<E::V>],
    track: &PhaseTrack<E::V>,
) -> Vec<Cx<E::V>> {
    assert_eq!(z.len(), track.est.len());
    z.iter()
        .zip(&track.est)
        .map(|(&s, &est)| {
            let th = e.neg(est);
            let rot = cexp_j(e, th);
            cmul(e, s, rot)
        })
        .collect()
}

/// Distinct amplitudes of the unit power square constellation with `m`
/// bits per symbol, ascending.
pub fn qam_ring_radii(m: u32) -> Vec<f64> {
    let c = crate::constellation::Constellation::square_qam_gray(m)
        .expect("square constellation");
    let mut radii: Vec<f64> = c.points().iter().map(|p| p.norm()).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    radii.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    radii
}

/// Hard two-sided ring partition used by the unshaped baseline: keeps the
/// symbols whose amplitude is nearest to one of the `rings_used` most
/// extreme amplitudes (innermost first, then outermost, then alternating
/// inward).
pub fn hard_partition_qam(z: &[Complex64], m: u32, rings_used: usize) -> Vec<bool> {
    let radii = qam_ring_radii(m);
    assert!(
        (1..=radii.len()).contains(&rings_used),
        "rings_used must be in 1..={}, got {rings_used}",
        radii.len()
    );
    let mut kept = vec![false; radii.len()];
    let (mut lo, mut hi) = (0usize, radii.len() - 1);
    for i in 0..rings_used {
        if i % 2 == 0 {
            kept[lo] = true;
            lo += 1;
        } else {
            kept[hi] = true;
            hi -= 1;
        }
    }
    z.iter()
        .map(|s| {
            let r = s.norm();
            let nearest = radii
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (r - **a).abs().partial_cmp(&(r - **b).abs()).expect("finite")
                })
                .map(|(i, _)| i)
                .expect("radii nonempty");
            kept[nearest]
        })
        .collect()
}

/// Classic phase-raising estimate over a hard-masked subset of symbols.
/// Kept symbols enter as full raised values, so large amplitudes dominate
/// the window sums; dropped symbols contribute nothing; windows with no
/// kept symbol inherit the nearest resolved estimate. `bias` is subtracted
/// in the raised domain before dividing by mu (the diagonal rings of a
/// square constellation land at angle pi after raising by 4, for example).
pub fn vv_masked(
    z: &[Complex64],
    keep: &[bool],
    p: &VvParams,
    bias: f64,
) -> PhaseTrack<f64> {
    p.validate();
    assert_eq!(z.len(), keep.len());
    let n = z.len();
    assert!(n > 2 * p.half_window);
    // Raised kept symbols, zero elsewhere.
    let powed: Vec<Complex64> = z
        .iter()
        .zip(keep)
        .map(|(s, &k)| {
            if k {
                s.powu(p.power)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(Complex64::new(0.0, 0.0));
    for s in &powed {
        prefix.push(prefix.last().expect("nonempty") + s);
    }
    // Raw raised-domain angles where the window saw anything.
    let mut raw: Vec<Option<f64>> = (0..n)
        .map(|k| {
            let hi = (k + p.half_window + 1).min(n);
            let lo = k.saturating_sub(p.half_window);
            let s = prefix[hi] - prefix[lo];
            (s.norm_sqr() > 0.0).then(|| s.arg())
        })
        .collect();
    // Empty windows borrow the nearest resolved angle.
    let mut last: Option<f64> = None;
    for v in raw.iter_mut() {
        match *v {
            Some(a) => last = Some(a),
            None => *v = last,
        }
    }
    let mut next: Option<f64> = None;
    for v in raw.iter_mut().rev() {
        match *v {
            Some(a) => next = Some(a),
            None => *v = next,
        }
    }
    let mut angles: Vec<f64> = raw
        .into_iter()
        .map(|v| v.expect("mask keeps at least one symbol"))
        .collect();
    // Unwrap in place, then remove the bias and divide by mu.
    let two_pi = 2.0 * std::f64::consts::PI;
    for k in 1..n {
        let jump = ((angles[k] - angles[k - 1]) / two_pi).round();
        angles[k] -= jump * two_pi;
    }
    let est = angles
        .into_iter()
        .map(|a| (a - bias) / f64::from(p.power))
        .collect();
    PhaseTrack { est, weights: None }
}

/// Raised-domain angle bias of the masked estimator on a square
/// constellation: its extreme rings sit on the diagonals, which raising by
/// 4 sends to angle pi.
pub fn square_qam_mask_bias(power: u32) -> f64 {
    if power == 4 {
        std::f64::consts::PI
    } else {
        0.0
    }
}
