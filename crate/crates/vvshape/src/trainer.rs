//! Joint optimization of constellation, selection rings, and demapper by
//! backpropagation through the whole receive chain.
//!
//! Each batch draws fresh bits and a fresh channel realization, builds the
//! full pipeline (map, channel, phase recovery, derotation, demapper, cross
//! entropy) as one expression graph, and takes an Adam step on all
//! parameters at once. The constellation is re-normalized to unit power
//! inside the graph, so the power constraint is part of the gradient rather
//! than a projection afterwards.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{complex, Cx, Engine, Plain, Tape, Var};
use crate::channel::{self, ChannelParams, ChannelRealization, InitialPhase};
use crate::constellation::{
    index_of_bits, map_indices, normalize_graph, Constellation, ConstellationError,
};
use crate::cpe::{
    anchor_track, derotate, lift_rings, smooth_track, vv_estimate, vv_modified, wrap_angle,
    Activation, CpeError, PartitionParams, PhaseTrack, Ring, RingVals, VvParams,
};
use crate::demapper::{bce_graph, RxNet};
use crate::seeding::{self, stream};
use crate::tsv::TsvError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Cpe(#[from] CpeError),
    #[error("loss became non-finite at batch {batch}; parameters at that point are attached")]
    NonFiniteLoss {
        batch: usize,
        snapshot: Box<TrainedSystem>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tsv(#[from] TsvError),
}

/// Everything one training run depends on. Serializes to the config file
/// format; missing fields take these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Bits per symbol; the constellation has 2^m points.
    pub bits_per_symbol: u32,
    /// Symmetry order of the phase estimator.
    pub power: u32,
    /// Number of trainable selection rings; 0 uses the classic estimator.
    pub rings: usize,
    pub activation: Activation,
    /// Averaging half-width of the phase estimator.
    pub half_window: usize,
    /// Radius of the post-estimate weighted moving average (only applied
    /// with ring selection). Defaults to `half_window`.
    pub smooth_radius: Option<usize>,
    /// Hidden layer widths of the demapper network.
    pub hidden: Vec<usize>,
    /// Symbols per training batch (one phase noise sequence).
    pub batch_len: usize,
    pub batches: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied every `lr_decay_interval` batches.
    pub lr_decay: f64,
    pub lr_decay_interval: usize,
    pub snr_db: f64,
    pub linewidth_hz: f64,
    pub symbol_rate_baud: f64,
    /// Gradient clipping threshold on the global L2 norm.
    pub grad_clip: f64,
    /// Standard deviation of the Gaussian offsets applied to the initial
    /// square constellation.
    pub init_perturbation: f64,
    /// Write intermediate checkpoints every this many batches (0 = never).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            bits_per_symbol: 6,
            power: 4,
            rings: 0,
            activation: Activation::Sigmoid,
            half_window: 32,
            smooth_radius: None,
            hidden: vec![64, 64],
            batch_len: 4096,
            batches: 2000,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_interval: 500,
            snr_db: 20.0,
            linewidth_hz: 1e5,
            symbol_rate_baud: 32e9,
            grad_clip: 10.0,
            init_perturbation: 0.01,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if !(1..=8).contains(&self.bits_per_symbol) {
            return fail(format!("bits_per_symbol {} not in 1..=8", self.bits_per_symbol));
        }
        if !(2..=8).contains(&self.power) {
            return fail(format!("power {} not in 2..=8", self.power));
        }
        if self.half_window == 0 {
            return fail("half_window must be at least 1".into());
        }
        if self.batch_len <= 2 * self.half_window {
            return fail(format!(
                "batch_len {} does not cover the averaging window {}",
                self.batch_len,
                2 * self.half_window + 1
            ));
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay {} not in (0, 1]", self.lr_decay));
        }
        if self.lr_decay_interval == 0 {
            return fail("lr_decay_interval must be at least 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive".into());
        }
        if self.linewidth_hz < 0.0 || !(self.symbol_rate_baud > 0.0) {
            return fail("linewidth must be >= 0 and symbol rate > 0".into());
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return fail("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn smooth_radius_or_default(&self) -> usize {
        self.smooth_radius.unwrap_or(self.half_window)
    }

    fn arch(&self) -> Vec<usize> {
        let mut arch = vec![2];
        arch.extend_from_slice(&self.hidden);
        arch.push(self.bits_per_symbol as usize);
        arch
    }
}

/// A trained (or initial) receive system: everything needed to run the
/// pipeline on new data.
#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub constellation: Constellation,
    pub partition: Option<PartitionParams>,
    pub net: RxNet,
    pub vv: VvParams,
    pub smooth_radius: usize,
}

#[derive(Serialize, Deserialize)]
struct SystemMeta {
    power: u32,
    half_window: usize,
    smooth_radius: usize,
    partition: Option<PartitionParams>,
}

impl TrainedSystem {
    /// Fresh untrained system per the configuration: perturbed square
    /// constellation, wide rings, zero-output demapper.
    pub fn initial(cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut constellation = Constellation::square_qam_gray(cfg.bits_per_symbol)?;
        let mut rng = seeding::rng(cfg.seed, stream::INIT, 0);
        constellation.perturb(&mut rng, cfg.init_perturbation);
        constellation.normalize()?;
        let partition =
            (cfg.rings > 0).then(|| PartitionParams::initial(cfg.rings, cfg.activation));
        let net = RxNet::init(cfg.arch(), &mut rng);
        Ok(TrainedSystem {
            constellation,
            partition,
            net,
            vv: VvParams {
                power: cfg.power,
                half_window: cfg.half_window,
            },
            smooth_radius: cfg.smooth_radius_or_default(),
        })
    }

    pub fn activation(&self) -> Activation {
        self.partition
            .as_ref()
            .map_or(Activation::Sigmoid, |p| p.activation)
    }

    /// Writes constellation, demapper, ring parameters, and the selection
    /// weight surface into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        self.constellation.export_tsv(&dir.join("constellation.tsv"))?;
        self.net.save_tsv(&dir.join("rxnet.tsv"))?;
        let meta = SystemMeta {
            power: self.vv.power,
            half_window: self.vv.half_window,
            smooth_radius: self.smooth_radius,
            partition: self.partition.clone(),
        };
        let text = toml::to_string_pretty(&meta).expect("system metadata serializes");
        std::fs::write(dir.join("system.toml"), text)?;
        if let Some(p) = &self.partition {
            p.export_grid_tsv(2.0, 50, &dir.join("partition_grid.tsv"))?;
        }
        Ok(())
    }

    /// Reads a directory written by [`TrainedSystem::save`].
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let constellation = Constellation::import_tsv(&dir.join("constellation.tsv"))?;
        let net = RxNet::load_tsv(&dir.join("rxnet.tsv"))?;
        let meta_text = std::fs::read_to_string(dir.join("system.toml"))?;
        let meta: SystemMeta = toml::from_str(&meta_text)
            .map_err(|e| TrainError::Config(format!("system.toml: {e}")))?;
        Ok(TrainedSystem {
            constellation,
            partition: meta.partition,
            net,
            vv: VvParams {
                power: meta.power,
                half_window: meta.half_window,
            },
            smooth_radius: meta.smooth_radius,
        })
    }
}

/// All trainable parameters of a system, flattened in a fixed order:
/// constellation coordinates (re, im per point), ring parameters (slope,
/// inner, outer per ring), then demapper weights.
pub struct ParamLayout {
    points: usize,
    rings: usize,
    arch: Vec<usize>,
}

/// Engine views of the flattened parameters, in pipeline shape.
pub struct PipelineVars<V> {
    pub points: Vec<Cx<V>>,
    pub rings: Vec<RingVals<V>>,
    pub net_weights: Vec<V>,
}

impl ParamLayout {
    pub fn of(system: &TrainedSystem) -> Self {
        ParamLayout {
            points: system.constellation.size(),
            rings: system.partition.as_ref().map_or(0, |p| p.rings.len()),
            arch: system.net.arch().to_vec(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.points * 2
            + self.rings * 3
            + self.arch.windows(2).map(|w| (w[0] + 1) * w[1]).sum::<usize>()
    }

    pub fn pack(&self, system: &TrainedSystem) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for p in system.constellation.points() {
            flat.push(p.re);
            flat.push(p.im);
        }
        if let Some(part) = &system.partition {
            for r in &part.rings {
                flat.extend_from_slice(&[r.slope, r.inner, r.outer]);
            }
        }
        flat.extend_from_slice(system.net.weights());
        debug_assert_eq!(flat.len(), self.param_count());
        flat
    }

    /// Reshapes a flat slice of engine values into pipeline parameters.
    pub fn views<V: Copy>(&self, flat: &[V]) -> PipelineVars<V> {
        assert_eq!(flat.len(), self.param_count());
        let points = (0..self.points)
            .map(|i| Cx::new(flat[2 * i], flat[2 * i + 1]))
            .collect();
        let base = self.points * 2;
        let rings = (0..self.rings)
            .map(|i| RingVals {
                slope: flat[base + 3 * i],
                inner: flat[base + 3 * i + 1],
                outer: flat[base + 3 * i + 2],
            })
            .collect();
        let net_weights = flat[base + self.rings * 3..].to_vec();
        PipelineVars {
            points,
            rings,
            net_weights,
        }
    }

    /// Writes flat parameters back into a system, renormalizing the
    /// constellation to match what the in-graph scaling produced.
    pub fn unpack(&self, flat: &[f64], into: &mut TrainedSystem) -> Result<(), TrainError> {
        assert_eq!(flat.len(), self.param_count());
        let points: Vec<Complex64> = (0..self.points)
            .map(|i| Complex64::new(flat[2 * i], flat[2 * i + 1]))
            .collect();
        let mut constellation =
            Constellation::from_points(into.constellation.bits_per_symbol(), points)?;
        constellation.normalize()?;
        into.constellation = constellation;
        let base = self.points * 2;
        if let Some(part) = &mut into.partition {
            for (i, r) in part.rings.iter_mut().enumerate() {
                *r = Ring {
                    slope: flat[base + 3 * i],
                    inner: flat[base + 3 * i + 1],
                    outer: flat[base + 3 * i + 2],
                };
            }
        }
        into.net
            .weights_mut()
            .copy_from_slice(&flat[base + self.rings * 3..]);
        Ok(())
    }
}

/// Static shape of the pipeline (everything but the parameters).
pub struct PipelineSpec {
    pub bits_per_symbol: u32,
    pub vv: VvParams,
    pub activation: Activation,
    pub smooth_radius: usize,
    pub net: RxNet,
}

impl PipelineSpec {
    pub fn of(system: &TrainedSystem) -> Self {
        PipelineSpec {
            bits_per_symbol: system.constellation.bits_per_symbol(),
            vv: system.vv,
            activation: system.activation(),
            smooth_radius: system.smooth_radius,
            net: RxNet::zeros(system.net.arch().to_vec()),
        }
    }
}

/// Builds the whole receive chain as one graph and returns the mean binary
/// cross entropy per bit. `bits` are flat, `m` per symbol; the channel
/// realization must match the symbol count.
/// Builds the whole training pipeline as one expression and returns the
/// per-bit cross entropy of the batch.
///
/// `anchor` pins the estimator's free sector choice (see [`anchor_track`]):
/// the training loop passes its tracked gauge reference so consecutive
/// batches derotate into the same geometry; `None` anchors to the current
/// ensemble direction, fine for one-shot gradient probes.
pub fn build_loss<E: Engine>(
    e: &mut E,
    layout_vars: &PipelineVars<E::V>,
    spec: &PipelineSpec,
    bits: &[u8],
    chan: &ChannelRealization,
    anchor: Option<f64>,
) -> Result<E::V, TrainError> {
    let m = spec.bits_per_symbol as usize;
    assert_eq!(bits.len() % m, 0);
    let n = bits.len() / m;
    assert_eq!(n, chan.len(), "channel realization must match batch length");

    let normed = normalize_graph(e, &layout_vars.points);
    let indices: Vec<usize> = (0..n)
        .map(|k| index_of_bits(&bits[k * m..(k + 1) * m], spec.bits_per_symbol))
        .collect::<Result<_, _>>()?;
    let x = map_indices(&normed, &indices);
    let z = channel::apply(e, &x, chan);
    let track = if layout_vars.rings.is_empty() {
        vv_estimate(e, &z, &spec.vv)?
    } else {
        let t = vv_modified(e, &z, &spec.vv, &layout_vars.rings, spec.activation)?;
        smooth_track(e, &t, spec.smooth_radius)
    };
    // Training runs genie-free from a zero initial phase, so the branch of
    // the first window is the only free sector choice; left to the
    // principal value it flips from batch to batch whenever the ensemble
    // direction sits near the cut (a square constellation raised by 4
    // lands exactly on it) and the demapper faces a randomly rotated
    // geometry.
    let reference = anchor.unwrap_or_else(|| {
        raised_ensemble(e, &normed, &layout_vars.rings, spec).0 / f64::from(spec.vv.power)
    });
    let track = anchor_track(e, &track, reference, spec.vv.power);
    let y = derotate(e, &z, &track);
    let mut llrs = Vec::with_capacity(bits.len());
    for &sym in &y {
        llrs.extend(spec.net.forward(e, &layout_vars.net_weights, sym));
    }
    Ok(bce_graph(e, &llrs, bits))
}

/// Raised-domain direction of the estimator's ensemble mean over the
/// constellation points, and how concentrated it is (resultant length over
/// total length, 0 for a direction-free constellation, 1 for perfect
/// alignment). Classic raising uses the full points, ring selection the
/// weighted unit phasors. Detached (plain values), so anything fed from
/// here into the graph is a constant of the batch.
fn raised_ensemble<E: Engine>(
    e: &E,
    points: &[Cx<E::V>],
    rings: &[RingVals<E::V>],
    spec: &PipelineSpec,
) -> (f64, f64) {
    let detached: Vec<Complex64> = points
        .iter()
        .map(|p| Complex64::new(e.value(p.re), e.value(p.im)))
        .collect();
    let partition = (!rings.is_empty()).then(|| PartitionParams {
        rings: rings
            .iter()
            .map(|r| Ring {
                slope: e.value(r.slope),
                inner: e.value(r.inner),
                outer: e.value(r.outer),
            })
            .collect(),
        activation: spec.activation,
    });
    let mut acc = Complex64::new(0.0, 0.0);
    let mut total = 0.0;
    for p in &detached {
        let c = match &partition {
            None => p.powu(spec.vv.power),
            Some(pp) => Complex64::from_polar(pp.weight(*p), p.arg()).powu(spec.vv.power),
        };
        acc += c;
        total += c.norm();
    }
    let concentration = if total > 0.0 { acc.norm() / total } else { 0.0 };
    (acc.arg(), concentration)
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Result of a training run.
pub struct TrainReport {
    pub config: TrainConfig,
    pub system: TrainedSystem,
    /// Loss per batch in nats per symbol (`m` times the per-bit cross
    /// entropy); starts at `m ln 2` for a fresh system.
    pub losses: Vec<f64>,
    /// Rotation applied by the final gauge alignment, radians.
    pub gauge_rotation: f64,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    train_with_checkpoints(cfg, None)
}

/// As [`train`]; additionally writes intermediate checkpoints under
/// `dir/checkpoints/` every `checkpoint_interval` batches.
pub fn train_with_checkpoints(
    cfg: &TrainConfig,
    dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let mut system = TrainedSystem::initial(cfg)?;
    let layout = ParamLayout::of(&system);
    let spec = PipelineSpec::of(&system);
    let mut flat = layout.pack(&system);
    let mut adam = Adam::new(flat.len());
    let mut losses = Vec::with_capacity(cfg.batches);
    let m = cfg.bits_per_symbol as usize;
    let mu = f64::from(cfg.power);

    // The sector choice of the estimator is a gauge freedom: the loss is
    // invariant under a global rotation of the constellation. Track the
    // ensemble direction continuously across batches once it is
    // concentrated enough to mean anything, so the demapper never sees a
    // sector flip even when the direction wanders over the principal
    // value's cut; the final value seeds the gauge alignment below.
    let plain = Plain::new();
    let mut raised_ref = {
        let vars = layout.views(&flat);
        let (b, c) = raised_ensemble(&plain, &vars.points, &vars.rings, &spec);
        if c >= GAUGE_LOCK {
            b
        } else {
            0.0
        }
    };

    let mut tape = Tape::new();
    let mut adjoints: Vec<f64> = Vec::new();
    let mut grads = vec![0.0; flat.len()];

    for batch in 0..cfg.batches {
        tape.reset();
        let leaves: Vec<Var> = flat.iter().map(|&p| tape.leaf(p)).collect();
        let vars = layout.views(&leaves);

        let bits = random_bits(cfg.seed, batch as u64, cfg.batch_len * m);
        let chan_params = ChannelParams {
            snr_db: cfg.snr_db,
            linewidth_hz: cfg.linewidth_hz,
            symbol_rate_baud: cfg.symbol_rate_baud,
            initial_phase: InitialPhase::Fixed(0.0),
            seed: seeding::derive_seed(cfg.seed, stream::CHANNEL, batch as u64),
        };
        let chan = ChannelRealization::generate(&chan_params, cfg.batch_len);

        let loss = build_loss(&mut tape, &vars, &spec, &bits, &chan, Some(raised_ref / mu))?;
        let loss_val = tape.value(loss) * m as f64;
        if !loss_val.is_finite() {
            layout.unpack_lossy(&flat, &mut system);
            return Err(TrainError::NonFiniteLoss {
                batch,
                snapshot: Box::new(system),
            });
        }
        losses.push(loss_val);

        tape.backward_into(loss, &mut adjoints);
        for (g, &leaf) in grads.iter_mut().zip(&leaves) {
            *g = adjoints[leaf.index()];
        }
        let norm = clip_global_norm(&mut grads, cfg.grad_clip);
        if !norm.is_finite() {
            layout.unpack_lossy(&flat, &mut system);
            return Err(TrainError::NonFiniteLoss {
                batch,
                snapshot: Box::new(system),
            });
        }
        let lr = cfg.learning_rate
            * cfg.lr_decay.powi((batch / cfg.lr_decay_interval) as i32);
        adam.step(&mut flat, &grads, lr);

        let vars = layout.views(&flat);
        let (b, c) = raised_ensemble(&plain, &vars.points, &vars.rings, &spec);
        if c >= GAUGE_LOCK {
            raised_ref += wrap_angle(b - raised_ref);
        }

        if cfg.checkpoint_interval > 0 && (batch + 1) % cfg.checkpoint_interval == 0 {
            if let Some(dir) = dir {
                let mut snap = system.clone();
                layout.unpack(&flat, &mut snap)?;
                snap.save(&dir.join("checkpoints").join(format!("batch_{:06}", batch + 1)))?;
            }
        }
        if batch % 100 == 0 {
            log::info!(
                "batch {batch}: loss {loss_val:.4} nats/symbol, grad norm {norm:.3}, lr {lr:.2e}"
            );
        }
    }

    layout.unpack(&flat, &mut system)?;
    // With no batches the artifacts are the untouched initial system.
    let gauge_rotation = if cfg.batches == 0 {
        0.0
    } else {
        let delta = measure_gauge(&system, cfg, raised_ref / mu)?;
        rotate_system(&mut system, -delta);
        delta
    };
    Ok(TrainReport {
        config: cfg.clone(),
        system,
        losses,
        gauge_rotation,
    })
}

impl ParamLayout {
    // Best-effort unpack for error snapshots: skips normalization so even
    // degenerate parameters are preserved as they were.
    fn unpack_lossy(&self, flat: &[f64], into: &mut TrainedSystem) {
        let points: Vec<Complex64> = (0..self.points)
            .map(|i| Complex64::new(flat[2 * i], flat[2 * i + 1]))
            .collect();
        if let Ok(c) = Constellation::from_points(into.constellation.bits_per_symbol(), points) {
            into.constellation = c;
        }
        let base = self.points * 2;
        if let Some(part) = &mut into.partition {
            for (i, r) in part.rings.iter_mut().enumerate() {
                *r = Ring {
                    slope: flat[base + 3 * i],
                    inner: flat[base + 3 * i + 1],
                    outer: flat[base + 3 * i + 2],
                };
            }
        }
        into.net
            .weights_mut()
            .copy_from_slice(&flat[base + self.rings * 3..]);
    }
}

/// Deterministic payload bits for one batch.
pub fn random_bits(root: u64, batch: u64, count: usize) -> Vec<u8> {
    use rand::Rng;
    let mut rng = seeding::rng(root, stream::BITS, batch);
    (0..count).map(|_| rng.random_range(0..2u8)).collect()
}

// Mean phase estimation offset of the trained system at its training
// operating point, measured on a fresh realization. The estimator tracks
// the channel phase up to a constellation dependent constant (modulo
// 2 pi / power); rotating the constellation by its negative centers the
// residual so later symmetry corrections do not sit on a decision edge.
/// Concentration below which the ensemble direction is treated as
/// undefined and the tracked gauge reference is left where it is.
const GAUGE_LOCK: f64 = 0.2;

/// Mean residual rotation of the estimator against the true phase on a
/// held-out fixed-phase run, reported near `reference`: the circular mean
/// only defines the offset up to a sector, and the branch that matters is
/// the one the demapper was trained in.
fn measure_gauge(
    system: &TrainedSystem,
    cfg: &TrainConfig,
    reference: f64,
) -> Result<f64, TrainError> {
    let n = 1 << 13;
    let m = cfg.bits_per_symbol as usize;
    let bits = {
        use rand::Rng;
        let mut rng = seeding::rng(cfg.seed, stream::GAUGE, 0);
        (0..n * m).map(|_| rng.random_range(0..2u8)).collect::<Vec<u8>>()
    };
    let chan_params = ChannelParams {
        snr_db: cfg.snr_db,
        linewidth_hz: cfg.linewidth_hz,
        symbol_rate_baud: cfg.symbol_rate_baud,
        initial_phase: InitialPhase::Fixed(0.0),
        seed: seeding::derive_seed(cfg.seed, stream::GAUGE, 1),
    };
    let chan = ChannelRealization::generate(&chan_params, n);

    let mut e = Plain::new();
    let (_, track) = estimate_track(&mut e, system, &bits, &chan)?;
    let mu = f64::from(system.vv.power);
    let k = system.vv.half_window;
    let mut acc = Complex64::new(0.0, 0.0);
    for (est, phi) in track.est[k..n - k].iter().zip(&chan.phase[k..n - k]) {
        acc += Complex64::from_polar(1.0, mu * (est - phi));
    }
    let raw = acc.arg() / mu;
    let period = 2.0 * std::f64::consts::PI / mu;
    Ok(raw - period * ((raw - reference) / period).round())
}

/// Maps `bits` through the system's constellation and `chan`, then runs
/// the system's phase estimator (with smoothing if it uses rings).
/// Returns the received symbols and the estimated track.
#[allow(clippy::type_complexity)]
pub fn estimate_track<E: Engine>(
    e: &mut E,
    system: &TrainedSystem,
    bits: &[u8],
    chan: &ChannelRealization,
) -> Result<(Vec<Cx<E::V>>, PhaseTrack<E::V>), TrainError> {
    let m = system.constellation.bits_per_symbol();
    let points: Vec<Cx<E::V>> = system
        .constellation
        .points()
        .iter()
        .map(|p| complex::constant(e, *p))
        .collect();
    let indices: Vec<usize> = bits
        .chunks(m as usize)
        .map(|c| index_of_bits(c, m))
        .collect::<Result<_, _>>()?;
    let x = map_indices(&points, &indices);
    let z = channel::apply(e, &x, chan);
    let track = match &system.partition {
        None => vv_estimate(e, &z, &system.vv)?,
        Some(p) => {
            let rings = lift_rings(e, &p.rings);
            let t = vv_modified(e, &z, &system.vv, &rings, p.activation)?;
            smooth_track(e, &t, system.smooth_radius)
        }
    };
    Ok((z, track))
}

/// Rotates every constellation point by `angle` radians.
pub fn rotate_system(system: &mut TrainedSystem, angle: f64) {
    let rot = Complex64::from_polar(1.0, angle);
    let points: Vec<Complex64> =
        system.constellation.points().iter().map(|p| p * rot).collect();
    system.constellation =
        Constellation::from_points(system.constellation.bits_per_symbol(), points)
            .expect("same point count");
}

impl TrainReport {
    /// Writes the run directory: configuration echo, system artifacts,
    /// loss history, and a manifest with content hashes. Contains no
    /// timestamps, so identical runs produce byte-identical directories.
    pub fn save_run_dir(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        let config_text = toml::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(dir.join("config.toml"), &config_text)?;
        self.system.save(dir)?;
        let mut loss = String::from("batch\tloss\n");
        for (i, l) in self.losses.iter().enumerate() {
            loss.push_str(&format!("{i}\t{l}\n"));
        }
        std::fs::write(dir.join("loss.tsv"), loss)?;

        let mut manifest = vec![
            ("kind".to_string(), "train".to_string()),
            ("seed".to_string(), self.config.seed.to_string()),
            (
                "bits_per_symbol".to_string(),
                self.config.bits_per_symbol.to_string(),
            ),
            ("power".to_string(), self.config.power.to_string()),
            ("rings".to_string(), self.config.rings.to_string()),
            ("activation".to_string(), self.config.activation.to_string()),
            ("batches".to_string(), self.config.batches.to_string()),
            (
                "final_loss".to_string(),
                self.losses.last().map_or(f64::NAN, |l| *l).to_string(),
            ),
            (
                "gauge_rotation".to_string(),
                self.gauge_rotation.to_string(),
            ),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        let mut artifacts = vec![
            "config.toml",
            "constellation.tsv",
            "rxnet.tsv",
            "system.toml",
            "loss.tsv",
        ];
        if self.system.partition.is_some() {
            artifacts.push("partition_grid.tsv");
        }
        artifacts.sort_unstable();
        for name in artifacts {
            let bytes = std::fs::read(dir.join(name))?;
            let hash = Sha256::digest(&bytes);
            let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
            manifest.push((format!("sha256.{name}"), hex));
        }
        let text: String = manifest
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        std::fs::write(dir.join("manifest.txt"), text)?;
        Ok(())
    }
}
