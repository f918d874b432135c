//! Fast self-contained invariant suite behind the `check` subcommand.
//!
//! Every check is a named, reduced-size version of a property the test
//! suite establishes at full size: gradient agreement with difference
//! quotients, unwrap behavior, the phase walk statistics, demapper
//! oracles, artifact round trips, and run-to-run determinism. The whole
//! suite finishes in seconds so it can gate experiment scripts.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::fd::{central_diff, directional_diff, rel_err};
use crate::autodiff::{carg, cexp_j, cmul_const, Engine, Plain, Tape, Var};
use crate::channel::{ChannelParams, ChannelRealization, InitialPhase};
use crate::constellation::Constellation;
use crate::cpe::{
    genie_csc, hard_partition_qam, square_qam_mask_bias, unwrap_graph, vv_estimate, vv_masked,
    wrap_angle, VvParams,
};
use crate::demapper::{bce, bmi, gaussian_llrs, LlrBatch};
use crate::seeding;
use crate::sweep::{export_results, import_results, SweepResult, SweepRow};
use crate::trainer::{
    build_loss, random_bits, train, ParamLayout, PipelineSpec, TrainConfig, TrainedSystem,
};

/// Deliberate defects a check run can be asked to inject; the clean suite
/// must fail under each of them, which proves the harness has teeth.
#[derive(Clone, Copy, Debug, Default)]
pub struct Faults {
    /// Flip the sign of the recorded angle gradient before comparing it
    /// with the difference quotient.
    pub negate_angle_gradient: bool,
}

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
}

type CheckFn = fn(&Faults) -> Result<(), String>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("gradient_angle", check_gradient_angle),
    ("gradient_pipeline", check_gradient_pipeline),
    ("unwrap_restores_continuity", check_unwrap_restores_continuity),
    ("unwrap_gradient_passthrough", check_unwrap_gradient_passthrough),
    ("phase_walk_variance", check_phase_walk_variance),
    ("estimator_offset_recovery", check_estimator_offset_recovery),
    ("genie_residual_bound", check_genie_residual_bound),
    ("demapper_rate_oracle", check_demapper_rate_oracle),
    ("power_normalization", check_power_normalization),
    ("training_determinism", check_training_determinism),
    ("artifact_round_trip", check_artifact_round_trip),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check whose name contains `filter` (all when empty) and
/// reports each outcome. Failures do not stop later checks.
pub fn run_checks(filter: &str, faults: &Faults) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .filter(|(name, _)| name.contains(filter))
        .map(|&(name, f)| CheckOutcome {
            name,
            result: f(faults),
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Angle of a rotated constant: d angle / d rotation is exactly one, and
// the difference quotient agrees. The fault hook flips the recorded
// gradient's sign, which must make this check fail.
fn check_gradient_angle(faults: &Faults) -> Result<(), String> {
    let anchor = Complex64::new(1.3, -0.4);
    let f = |theta: f64| {
        let mut e = Plain::new();
        let t = e.constant(theta);
        let rot = cexp_j(&mut e, t);
        let q = cmul_const(&mut e, rot, anchor);
        carg(&mut e, q)
    };
    for &theta in &[-2.0, -0.3, 0.0, 0.7, 2.9] {
        let mut tape = Tape::new();
        let t = tape.leaf(theta);
        let rot = cexp_j(&mut tape, t);
        let q = cmul_const(&mut tape, rot, anchor);
        let out = carg(&mut tape, q);
        let adj = tape.backward(out);
        let mut grad = adj.adjoint(t);
        if faults.negate_angle_gradient {
            grad = -grad;
        }
        ensure((grad - 1.0).abs() < 1e-12, || {
            format!("angle gradient at rotation {theta} is {grad}, expected 1")
        })?;
        let fd = central_diff(f, theta, 1e-6);
        ensure(rel_err(grad, fd, 1e-9) < 1e-6, || {
            format!("angle gradient {grad} disagrees with quotient {fd} at {theta}")
        })?;
    }
    Ok(())
}

// Directional derivative of the full training loss against a central
// difference quotient, on a miniature system with ring selection.
fn check_gradient_pipeline(_: &Faults) -> Result<(), String> {
    let cfg = TrainConfig {
        seed: 11,
        bits_per_symbol: 2,
        rings: 1,
        half_window: 4,
        hidden: vec![6],
        batch_len: 64,
        ..TrainConfig::default()
    };
    let system = TrainedSystem::initial(&cfg).map_err(|e| e.to_string())?;
    let layout = ParamLayout::of(&system);
    let spec = PipelineSpec::of(&system);
    let flat = layout.pack(&system);
    let bits = random_bits(cfg.seed, 0, cfg.batch_len * 2);
    let chan = ChannelRealization::generate(
        &ChannelParams {
            snr_db: 14.0,
            linewidth_hz: 1e5,
            symbol_rate_baud: 32e9,
            initial_phase: InitialPhase::Fixed(0.0),
            seed: 99,
        },
        cfg.batch_len,
    );

    let mut tape = Tape::new();
    let leaves: Vec<Var> = flat.iter().map(|&v| tape.leaf(v)).collect();
    let vars = layout.views(&leaves);
    let out = build_loss(&mut tape, &vars, &spec, &bits, &chan, None).map_err(|e| e.to_string())?;
    let adj = tape.backward(out);
    let grad: Vec<f64> = leaves.iter().map(|&l| adj.adjoint(l)).collect();

    let loss_at = |p: &[f64]| {
        let mut e = Plain::new();
        let vars = layout.views(p);
        build_loss(&mut e, &vars, &spec, &bits, &chan, None).expect("plain loss")
    };
    let mut dir_rng = seeding::rng(3, 61, 0);
    for k in 0..4u32 {
        let dir: Vec<f64> = (0..flat.len())
            .map(|_| dir_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let numeric = directional_diff(loss_at, &flat, &dir, 1e-6);
        ensure(rel_err(analytic, numeric, 1e-6) < 1e-3, || {
            format!("direction {k}: pipeline gradient {analytic} vs quotient {numeric}")
        })?;
    }
    Ok(())
}

// A smooth walk with artificial 2 pi jumps inserted must come out of the
// unwrap step-free: every increment below pi in magnitude, and the
// original walk recovered up to one global 2 pi multiple.
fn check_unwrap_restores_continuity(_: &Faults) -> Result<(), String> {
    let mut rng = seeding::rng(4, 61, 1);
    let mut truth = Vec::with_capacity(1200);
    let mut acc: f64 = 0.3;
    for _ in 0..1200 {
        acc += 0.2 * rng.sample::<f64, _>(StandardNormal);
        truth.push(acc);
    }
    let mangled: Vec<f64> = truth
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let jumps: i32 = if k % 7 == 0 { 0 } else { rng.random_range(-2..=2) };
            v + 2.0 * std::f64::consts::PI * f64::from(jumps)
        })
        .collect();
    let mut e = Plain::new();
    let unwrapped = unwrap_graph(&mut e, &mangled);
    for k in 1..unwrapped.len() {
        let step = unwrapped[k] - unwrapped[k - 1];
        ensure(step.abs() < std::f64::consts::PI, || {
            format!("unwrapped step {step} at {k} is not below pi")
        })?;
    }
    let offset = unwrapped[0] - truth[0];
    let whole = offset / (2.0 * std::f64::consts::PI);
    ensure((whole - whole.round()).abs() < 1e-9, || {
        format!("unwrap offset {offset} is not a 2 pi multiple")
    })?;
    for k in 0..truth.len() {
        ensure((unwrapped[k] - truth[k] - offset).abs() < 1e-9, || {
            format!("unwrap lost the walk at {k}")
        })?;
    }
    Ok(())
}

// Unwrapping adds constants, so gradients pass through untouched: the
// last unwrapped angle of a rigidly rotated set still has derivative one
// with respect to the rotation even where the raw angles wrap.
fn check_unwrap_gradient_passthrough(_: &Faults) -> Result<(), String> {
    let offsets = [0.0, 2.5, 5.0, 7.5];
    let mut tape = Tape::new();
    let t = tape.leaf(3.0);
    let raw: Vec<Var> = offsets
        .iter()
        .map(|&off| {
            let shifted = tape.add_const(t, off);
            let rot = cexp_j(&mut tape, shifted);
            carg(&mut tape, rot)
        })
        .collect();
    let unwrapped = unwrap_graph(&mut tape, &raw);
    let last = *unwrapped.last().expect("nonempty");
    let adj = tape.backward(last);
    let grad = adj.adjoint(t);
    ensure((grad - 1.0).abs() < 1e-12, || {
        format!("gradient through unwrap is {grad}, expected exactly 1")
    })
}

// Empirical variance of the phase walk increments against the closed
// form 2 pi linewidth / symbol rate.
fn check_phase_walk_variance(_: &Faults) -> Result<(), String> {
    let p = ChannelParams {
        snr_db: 20.0,
        linewidth_hz: 1e5,
        symbol_rate_baud: 32e9,
        initial_phase: InitialPhase::Fixed(0.0),
        seed: 17,
    };
    let n = 200_000;
    let r = ChannelRealization::generate(&p, n);
    let diffs: Vec<f64> = r.phase.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    let expect = p.phase_variance();
    ensure(rel_err(var, expect, 0.0) < 0.03, || {
        format!("walk increment variance {var} vs {expect}")
    })
}

// The classic estimator on noiseless symmetric symbols recovers a
// constant offset to numerical precision.
fn check_estimator_offset_recovery(_: &Faults) -> Result<(), String> {
    let p = VvParams {
        power: 4,
        half_window: 8,
    };
    for &offset in &[-0.3, 0.1, 0.25] {
        let mut rng = seeding::rng(5, 61, 2);
        let z: Vec<crate::autodiff::Cx<f64>> = (0..600)
            .map(|_| {
                let quadrant = f64::from(rng.random_range(0..4u8));
                let angle = offset + quadrant * std::f64::consts::FRAC_PI_2;
                crate::autodiff::Cx::new(angle.cos(), angle.sin())
            })
            .collect();
        let mut e = Plain::new();
        let track = vv_estimate(&mut e, &z, &p).map_err(|e| e.to_string())?;
        for &est in &track.est {
            let residual = wrap_angle((est - offset) * 4.0) / 4.0;
            ensure(residual.abs() < 1e-9, || {
                format!("offset {offset} leaves residual {residual}")
            })?;
        }
    }
    Ok(())
}

// After genie cycle slip compensation the residual of the masked
// estimator stays within half a symmetry sector everywhere.
fn check_genie_residual_bound(_: &Faults) -> Result<(), String> {
    let c = Constellation::square_qam_gray(6).map_err(|e| e.to_string())?;
    let p = ChannelParams {
        snr_db: 17.0,
        linewidth_hz: 5e5,
        symbol_rate_baud: 32e9,
        initial_phase: InitialPhase::RandomUniform,
        seed: 23,
    };
    let mut rng = seeding::rng(6, 61, 3);
    let x: Vec<Complex64> = (0..4096).map(|_| c.point(rng.random_range(0..c.size()))).collect();
    let (z, r) = crate::channel::simulate(&p, &x);
    let vv = VvParams {
        power: 4,
        half_window: 24,
    };
    let keep = hard_partition_qam(&z, 6, 2);
    let track = vv_masked(&z, &keep, &vv, square_qam_mask_bias(4));
    let mut e = Plain::new();
    let track = genie_csc(&mut e, &track, &r.phase, 4);
    let bound = std::f64::consts::PI / 4.0 + 1e-12;
    for (k, (&est, &truth)) in track.est.iter().zip(&r.phase).enumerate() {
        ensure((est - truth).abs() <= bound, || {
            format!("residual {} at {k} above half sector", est - truth)
        })?;
    }
    Ok(())
}

// Exact-model demapper sanity: zero information at zero confidence, and
// two independent reduced-size measurements of the same operating point
// agree on the information rate.
fn check_demapper_rate_oracle(_: &Faults) -> Result<(), String> {
    let zero = LlrBatch::new(2, vec![0, 1, 1, 0], vec![0.0; 4]);
    ensure(
        (bce(&zero) - std::f64::consts::LN_2).abs() < 1e-15,
        || "zero confidence is not ln 2 nats per bit".to_string(),
    )?;
    let measure = |seed: u64| {
        let c = Constellation::square_qam_gray(6).expect("square constellation");
        let nv = 10f64.powf(-1.9);
        let sigma = (nv / 2.0).sqrt();
        let mut rng = seeding::rng(seed, 61, 4);
        let mut bits = Vec::new();
        let mut llrs = Vec::new();
        for _ in 0..8192 {
            let idx = rng.random_range(0..c.size());
            let y = c.point(idx)
                + Complex64::new(
                    sigma * rng.sample::<f64, _>(StandardNormal),
                    sigma * rng.sample::<f64, _>(StandardNormal),
                );
            bits.extend(crate::constellation::bits_of_index(idx, 6));
            llrs.extend(gaussian_llrs(y, c.points(), 6, nv));
        }
        bmi(&LlrBatch::new(6, bits, llrs))
    };
    let (a, b) = (measure(31), measure(32));
    ensure((a - b).abs() < 0.06, || {
        format!("independent rate measurements disagree: {a} vs {b}")
    })?;
    ensure((5.2..5.95).contains(&a), || {
        format!("rate {a} outside the plausible band for this operating point")
    })
}

// In-graph power scaling must leave exactly unit mean power.
fn check_power_normalization(_: &Faults) -> Result<(), String> {
    let mut rng = seeding::rng(7, 61, 5);
    let pts: Vec<crate::autodiff::Cx<f64>> = (0..64)
        .map(|_| {
            crate::autodiff::Cx::new(
                rng.sample::<f64, _>(StandardNormal),
                0.3 + rng.sample::<f64, _>(StandardNormal),
            )
        })
        .collect();
    let mut e = Plain::new();
    let normed = crate::constellation::normalize_graph(&mut e, &pts);
    let power: f64 = normed.iter().map(|p| p.re * p.re + p.im * p.im).sum::<f64>()
        / normed.len() as f64;
    ensure((power - 1.0).abs() < 1e-12, || {
        format!("normalized mean power {power}")
    })
}

// Two miniature training runs from the same seed must agree bit for bit.
fn check_training_determinism(_: &Faults) -> Result<(), String> {
    let cfg = TrainConfig {
        seed: 9,
        bits_per_symbol: 2,
        half_window: 4,
        hidden: vec![4],
        batch_len: 32,
        batches: 3,
        ..TrainConfig::default()
    };
    let a = train(&cfg).map_err(|e| e.to_string())?;
    let b = train(&cfg).map_err(|e| e.to_string())?;
    ensure(a.losses.len() == b.losses.len(), || {
        "training runs differ in length".to_string()
    })?;
    for (k, (x, y)) in a.losses.iter().zip(&b.losses).enumerate() {
        ensure(x.to_bits() == y.to_bits(), || {
            format!("loss diverges at batch {k}: {x} vs {y}")
        })?;
    }
    Ok(())
}

// Text artifacts reparse to identical values.
fn check_artifact_round_trip(_: &Faults) -> Result<(), String> {
    let dir = std::env::temp_dir().join(format!(
        "vvshape-check-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let run = || -> Result<(), String> {
        let mut c = Constellation::square_qam_gray(4).map_err(|e| e.to_string())?;
        let mut rng = seeding::rng(8, 61, 6);
        c.perturb(&mut rng, 0.02);
        c.normalize().map_err(|e| e.to_string())?;
        let cpath = dir.join("constellation.tsv");
        c.export_tsv(&cpath).map_err(|e| e.to_string())?;
        let back = Constellation::import_tsv(&cpath).map_err(|e| e.to_string())?;
        ensure(back.points() == c.points(), || {
            "constellation round trip changed points".to_string()
        })?;
        let result = SweepResult {
            system_id: "check".into(),
            rows: vec![SweepRow {
                snr_db: 19.0,
                linewidth_hz: 1e5,
                bmi_mean: 5.1,
                bmi_stddev: 0.02,
            }],
        };
        let rpath = dir.join("results_check.dat");
        export_results(&result, &rpath).map_err(|e| e.to_string())?;
        let back = import_results(&rpath).map_err(|e| e.to_string())?;
        ensure(back == result, || {
            "sweep result round trip changed rows".to_string()
        })
    };
    let outcome = run();
    let _ = std::fs::remove_dir_all(&dir);
    outcome
}
