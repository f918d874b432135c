//! Monte-Carlo evaluation of receive systems on a grid of operating
//! points.
//!
//! Every grid cell (SNR, linewidth) is evaluated over several independent
//! repetitions; each repetition draws its own bits, noise, phase walk, and
//! uniform initial phase from seeds derived from the grid seed, so results
//! are reproducible bit for bit regardless of evaluation order or
//! parallelism. Phase estimates get genie cycle slip compensation before
//! demapping: slips are counted out using the true phase track, which
//! isolates the quality of the phase tracking itself from error bursts a
//! real system would handle with differential coding or pilots.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{Cx, Plain};
use crate::channel::{ChannelParams, ChannelRealization, InitialPhase};
use crate::constellation::Constellation;
use crate::cpe::{
    derotate, genie_csc, hard_partition_qam, square_qam_mask_bias, vv_masked, VvParams,
};
use crate::demapper::{bmi, gaussian_llrs, LlrBatch};
use crate::seeding::{self, stream};
use crate::trainer::{estimate_track, random_bits, TrainError, TrainedSystem};
use crate::tsv::TsvError;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep grid: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] TrainError),
    #[error(transparent)]
    Tsv(#[from] TsvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A system under evaluation.
pub enum SweepSystem {
    /// A trained receive chain with its own demapper network.
    Trained(TrainedSystem),
    /// Unshaped square constellation with hard two-ring selection and the
    /// exact Gaussian demapper; the conventional reference.
    QamHard {
        bits_per_symbol: u32,
        vv: VvParams,
        rings_used: usize,
    },
}

impl SweepSystem {
    /// Stable identifier used in result rows and file names.
    pub fn id(&self) -> String {
        match self {
            SweepSystem::Trained(sys) => {
                let rings = sys.partition.as_ref().map_or(0, |p| p.rings.len());
                format!("shaped_mu{}_l{}", sys.vv.power, rings)
            }
            SweepSystem::QamHard {
                bits_per_symbol,
                vv,
                rings_used,
            } => format!(
                "qam{}_hard{}_mu{}",
                1usize << *bits_per_symbol,
                rings_used,
                vv.power
            ),
        }
    }
}

/// Grid of operating points and the evaluation budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub snrs_db: Vec<f64>,
    pub linewidths_hz: Vec<f64>,
    pub symbol_rate_baud: f64,
    pub symbols_per_rep: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            snrs_db: vec![15.0, 17.0, 19.0],
            linewidths_hz: (0..=10).map(|k| 1e5 * f64::from(k)).collect(),
            symbol_rate_baud: 32e9,
            symbols_per_rep: 1 << 16,
            reps: 8,
            seed: 1,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.snrs_db.is_empty() || self.linewidths_hz.is_empty() {
            return Err(SweepError::Config("grid axes must be nonempty".into()));
        }
        if self.reps < 2 {
            return Err(SweepError::Config(
                "need at least 2 repetitions for a spread estimate".into(),
            ));
        }
        if self.symbols_per_rep == 0 {
            return Err(SweepError::Config("symbols_per_rep must be positive".into()));
        }
        if !(self.symbol_rate_baud > 0.0) {
            return Err(SweepError::Config("symbol rate must be positive".into()));
        }
        if self.linewidths_hz.iter().any(|&lw| lw < 0.0) {
            return Err(SweepError::Config("linewidths must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One evaluated grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub linewidth_hz: f64,
    pub bmi_mean: f64,
    pub bmi_stddev: f64,
}

/// All rows of one system over a grid, linewidth varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub system_id: String,
    pub rows: Vec<SweepRow>,
}

/// Information rate of one repetition: bits are sent through a fresh
/// channel at the operating point, the phase is tracked, genie-corrected,
/// and derotated, and the demapper's LLRs are scored against the bits.
pub fn evaluate_rep(
    system: &SweepSystem,
    snr_db: f64,
    linewidth_hz: f64,
    symbol_rate_baud: f64,
    rep_seed: u64,
    symbols: usize,
) -> Result<f64, SweepError> {
    let chan_params = ChannelParams {
        snr_db,
        linewidth_hz,
        symbol_rate_baud,
        initial_phase: InitialPhase::RandomUniform,
        seed: rep_seed,
    };
    match system {
        SweepSystem::Trained(sys) => {
            let m = sys.constellation.bits_per_symbol();
            let bits = random_bits(rep_seed, 0, symbols * m as usize);
            let chan = ChannelRealization::generate(&chan_params, symbols);
            let mut e = Plain::new();
            let (z, track) = estimate_track(&mut e, sys, &bits, &chan)?;
            let track = genie_csc(&mut e, &track, &chan.phase, sys.vv.power);
            let y = derotate(&mut e, &z, &track);
            let mut llrs = Vec::with_capacity(bits.len());
            for &sym in &y {
                llrs.extend(sys.net.forward_plain(sym.to_complex()));
            }
            Ok(bmi(&LlrBatch::new(m, bits, llrs)))
        }
        SweepSystem::QamHard {
            bits_per_symbol,
            vv,
            rings_used,
        } => {
            let m = *bits_per_symbol;
            let c = Constellation::square_qam_gray(m).expect("square constellation");
            let bits = random_bits(rep_seed, 0, symbols * m as usize);
            let indices: Vec<usize> = bits
                .chunks(m as usize)
                .map(|chunk| crate::constellation::index_of_bits(chunk, m))
                .collect::<Result<_, _>>()
                .map_err(TrainError::from)?;
            let x: Vec<Complex64> = indices.iter().map(|&i| c.point(i)).collect();
            let (z, chan) = crate::channel::simulate(&chan_params, &x);
            let keep = hard_partition_qam(&z, m, *rings_used);
            let track = vv_masked(&z, &keep, vv, square_qam_mask_bias(vv.power));
            let mut e = Plain::new();
            let track = genie_csc(&mut e, &track, &chan.phase, vv.power);
            let zc: Vec<Cx<f64>> = z.iter().map(|s| Cx::new(s.re, s.im)).collect();
            let y = derotate(&mut e, &zc, &track);
            let nv = chan_params.noise_variance();
            let mut llrs = Vec::with_capacity(bits.len());
            for sym in &y {
                llrs.extend(gaussian_llrs(sym.to_complex(), c.points(), m, nv));
            }
            Ok(bmi(&LlrBatch::new(m, bits, llrs)))
        }
    }
}

/// Mean and sample standard deviation over `reps` repetitions of one cell.
pub fn run_cell(
    system: &SweepSystem,
    grid: &SweepGrid,
    snr_db: f64,
    linewidth_hz: f64,
    cell_index: usize,
) -> Result<SweepRow, SweepError> {
    let values: Vec<f64> = (0..grid.reps)
        .map(|rep| {
            let rep_seed = seeding::derive_seed(
                grid.seed,
                stream::SWEEP,
                (cell_index * grid.reps + rep) as u64,
            );
            evaluate_rep(
                system,
                snr_db,
                linewidth_hz,
                grid.symbol_rate_baud,
                rep_seed,
                grid.symbols_per_rep,
            )
        })
        .collect::<Result<_, _>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SweepRow {
        snr_db,
        linewidth_hz,
        bmi_mean: mean,
        bmi_stddev: var.sqrt(),
    })
}

/// Evaluates every grid cell, in parallel, with a deterministic result
/// order (SNR outer, linewidth inner). Seeds depend only on the cell
/// position, so parallelism never changes the numbers.
pub fn run_sweep(system: &SweepSystem, grid: &SweepGrid) -> Result<SweepResult, SweepError> {
    grid.validate()?;
    let cells: Vec<(usize, f64, f64)> = grid
        .snrs_db
        .iter()
        .flat_map(|&snr| grid.linewidths_hz.iter().map(move |&lw| (snr, lw)))
        .enumerate()
        .map(|(i, (snr, lw))| (i, snr, lw))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, snr, lw)| run_cell(system, grid, snr, lw, i))
        .collect::<Result<_, _>>()?;
    Ok(SweepResult {
        system_id: system.id(),
        rows,
    })
}

/// Writes result rows as a whitespace separated table, one file per
/// system: `linewidth mean stddev snr`, SNR with two decimals, other
/// columns full precision. A leading `#` comment carries the system id.
pub fn export_results(result: &SweepResult, path: &std::path::Path) -> Result<(), SweepError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "# system {}", result.system_id).expect("string write");
    writeln!(out, "linewidth mean stddev snr").expect("string write");
    for r in &result.rows {
        writeln!(
            out,
            "{} {} {} {:.2}",
            r.linewidth_hz, r.bmi_mean, r.bmi_stddev, r.snr_db
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(TsvError::from)?;
    Ok(())
}

/// Reads a file written by [`export_results`].
pub fn import_results(path: &std::path::Path) -> Result<SweepResult, SweepError> {
    let text = std::fs::read_to_string(path).map_err(TsvError::from)?;
    let mut system_id = String::new();
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix("# system ") {
            system_id = rest.to_string();
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "linewidth mean stddev snr" {
                return Err(TsvError::format(
                    lineno,
                    format!("expected column header, got {line:?}"),
                )
                .into());
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(
                TsvError::format(lineno, format!("expected 4 columns, got {}", fields.len()))
                    .into(),
            );
        }
        let parse = |s: &str| -> Result<f64, SweepError> {
            s.parse()
                .map_err(|_| TsvError::format(lineno, format!("bad number {s:?}")).into())
        };
        rows.push(SweepRow {
            linewidth_hz: parse(fields[0])?,
            bmi_mean: parse(fields[1])?,
            bmi_stddev: parse(fields[2])?,
            snr_db: parse(fields[3])?,
        });
    }
    if !saw_header {
        return Err(TsvError::format(1, "missing column header").into());
    }
    Ok(SweepResult { system_id, rows })
}

/// Writes a sweep manifest: grid facts plus a content hash per result
/// file. No timestamps; identical sweeps produce identical bytes.
pub fn write_manifest(
    dir: &std::path::Path,
    grid: &SweepGrid,
    result_files: &[String],
) -> Result<(), SweepError> {
    let mut entries = vec![
        ("kind".to_string(), "sweep".to_string()),
        ("seed".to_string(), grid.seed.to_string()),
        ("reps".to_string(), grid.reps.to_string()),
        (
            "symbols_per_rep".to_string(),
            grid.symbols_per_rep.to_string(),
        ),
        (
            "snrs_db".to_string(),
            grid.snrs_db
                .iter()
                .map(|v| format!("{v:.2}"))
                .collect::<Vec<_>>()
                .join(","),
        ),
        (
            "linewidths_hz".to_string(),
            grid.linewidths_hz
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    let mut files = result_files.to_vec();
    files.sort_unstable();
    for name in &files {
        let bytes = std::fs::read(dir.join(name)).map_err(TsvError::from)?;
        let hash = Sha256::digest(&bytes);
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        entries.push((format!("sha256.{name}"), hex));
    }
    let text: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    std::fs::write(dir.join("manifest.txt"), text).map_err(TsvError::from)?;
    Ok(())
}
