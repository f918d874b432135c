//! Labeled constellations: bit patterns to complex symbols.
//!
//! A constellation with `m` bits per symbol holds `2^m` complex points
//! indexed by the integer value of the bit label, most significant bit
//! first. Points are stored unnormalized; [`Constellation::normalize`]
//! rescales to unit mean power, and [`normalize_graph`] does the same
//! inside an expression graph so the power constraint holds at every
//! optimization step.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{Cx, Engine};
use crate::tsv::TsvError;

#[derive(Debug, Error)]
pub enum ConstellationError {
    #[error("bits per symbol must be in 1..=8, got {0}")]
    BitsOutOfRange(u32),
    #[error("square QAM needs an even number of bits per symbol, got {0}")]
    OddBits(u32),
    #[error("expected {expected} points for {bits} bits per symbol, got {got}")]
    WrongPointCount { bits: u32, expected: usize, got: usize },
    #[error("cannot normalize a constellation with zero mean power")]
    ZeroPower,
    #[error("bit pattern has length {got}, expected {expected}")]
    WrongBitCount { expected: usize, got: usize },
    #[error("bit values must be 0 or 1, got {0}")]
    BadBit(u8),
}

/// Cumulative-xor inverse of the reflected Gray code.
fn gray_decode(mut g: u32) -> u32 {
    let mut n = 0;
    while g != 0 {
        n ^= g;
        g >>= 1;
    }
    n
}

/// `2^m` complex points indexed by bit label.
#[derive(Clone, Debug)]
pub struct Constellation {
    bits: u32,
    points: Vec<Complex64>,
}

impl Constellation {
    /// Builds a constellation from points indexed by label.
    pub fn from_points(bits: u32, points: Vec<Complex64>) -> Result<Self, ConstellationError> {
        if !(1..=8).contains(&bits) {
            return Err(ConstellationError::BitsOutOfRange(bits));
        }
        let expected = 1usize << bits;
        if points.len() != expected {
            return Err(ConstellationError::WrongPointCount {
                bits,
                expected,
                got: points.len(),
            });
        }
        Ok(Constellation { bits, points })
    }

    /// Square QAM with a reflected Gray labeling and unit mean power.
    ///
    /// The first `m/2` label bits select the in-phase level, the rest the
    /// quadrature level, so grid neighbors differ in exactly one bit.
    pub fn square_qam_gray(bits: u32) -> Result<Self, ConstellationError> {
        if !(1..=8).contains(&bits) {
            return Err(ConstellationError::BitsOutOfRange(bits));
        }
        if bits % 2 != 0 {
            return Err(ConstellationError::OddBits(bits));
        }
        let half = bits / 2;
        let levels = 1u32 << half;
        let amp = |group: u32| -> f64 {
            let n = gray_decode(group);
            f64::from(2 * n) - f64::from(levels - 1)
        };
        let size = 1usize << bits;
        let mut points = Vec::with_capacity(size);
        for label in 0..size as u32 {
            let i = amp(label >> half);
            let q = amp(label & (levels - 1));
            points.push(Complex64::new(i, q));
        }
        let mut c = Constellation { bits, points };
        c.normalize()?;
        Ok(c)
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits
    }

    /// Number of points, `2^m`.
    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.size() as f64
    }

    /// Rescales so the mean power over equiprobable points is exactly 1.
    pub fn normalize(&mut self) -> Result<(), ConstellationError> {
        let mp = self.mean_power();
        if mp <= 0.0 {
            return Err(ConstellationError::ZeroPower);
        }
        let s = 1.0 / mp.sqrt();
        for p in &mut self.points {
            *p *= s;
        }
        Ok(())
    }

    /// Adds independent Gaussian offsets of the given standard deviation to
    /// every coordinate. Used to break symmetry before optimization.
    pub fn perturb<R: Rng>(&mut self, rng: &mut R, std: f64) {
        for p in &mut self.points {
            let dr: f64 = rng.sample(StandardNormal);
            let di: f64 = rng.sample(StandardNormal);
            *p += Complex64::new(std * dr, std * di);
        }
    }

    /// Maps one bit pattern (most significant bit first) to its point.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Complex64, ConstellationError> {
        Ok(self.points[index_of_bits(bits, self.bits)?])
    }

    /// Uppercase two-digit hex label for a point index.
    pub fn label(&self, index: usize) -> String {
        format!("{index:02X}")
    }

    /// Writes `real<TAB>imag<TAB>label` rows, one per point, in label order.
    /// Coordinates use the shortest representation that parses back to the
    /// identical f64, so export followed by import is exact.
    pub fn export_tsv(&self, path: &Path) -> Result<(), TsvError> {
        let mut out = String::from("real\timag\tlabel\n");
        for (i, p) in self.points.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", p.re, p.im, self.label(i)).expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a file written by [`Constellation::export_tsv`]. Rows may be in
    /// any label order but must cover every label exactly once.
    pub fn import_tsv(path: &Path) -> Result<Self, TsvError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "real\timag\tlabel")) => {}
            Some((_, other)) => {
                return Err(TsvError::Format {
                    line: 1,
                    msg: format!("expected header 'real\\timag\\tlabel', got {other:?}"),
                })
            }
            None => {
                return Err(TsvError::Format {
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        let mut rows: Vec<(usize, Complex64)> = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(TsvError::Format {
                    line: lineno,
                    msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, TsvError> {
                s.parse().map_err(|_| TsvError::Format {
                    line: lineno,
                    msg: format!("bad {what} value {s:?}"),
                })
            };
            let re = parse(fields[0], "real")?;
            let im = parse(fields[1], "imag")?;
            let label = usize::from_str_radix(fields[2], 16).map_err(|_| TsvError::Format {
                line: lineno,
                msg: format!("bad hex label {:?}", fields[2]),
            })?;
            rows.push((label, Complex64::new(re, im)));
        }
        let size = rows.len();
        if size == 0 || !size.is_power_of_two() || size > 256 {
            return Err(TsvError::Format {
                line: 1,
                msg: format!("point count {size} is not a power of two in 2..=256"),
            });
        }
        let bits = size.trailing_zeros();
        let mut points = vec![None; size];
        for (label, p) in rows {
            if label >= size {
                return Err(TsvError::Format {
                    line: 1,
                    msg: format!("label {label:02X} out of range for {size} points"),
                });
            }
            if points[label].replace(p).is_some() {
                return Err(TsvError::Format {
                    line: 1,
                    msg: format!("duplicate label {label:02X}"),
                });
            }
        }
        let points = points.into_iter().map(|p| p.expect("all labels seen")).collect();
        Ok(Constellation { bits, points })
    }
}

/// Converts a bit pattern (most significant bit first) to a point index.
pub fn index_of_bits(bits: &[u8], m: u32) -> Result<usize, ConstellationError> {
    if bits.len() != m as usize {
        return Err(ConstellationError::WrongBitCount {
            expected: m as usize,
            got: bits.len(),
        });
    }
    let mut idx = 0usize;
    for &b in bits {
        if b > 1 {
            return Err(ConstellationError::BadBit(b));
        }
        idx = (idx << 1) | b as usize;
    }
    Ok(idx)
}

/// Bit pattern of a point index, most significant bit first.
pub fn bits_of_index(index: usize, m: u32) -> Vec<u8> {
    (0..m).rev().map(|k| ((index >> k) & 1) as u8).collect()
}

/// Rescales points inside an expression graph to unit mean power.
///
/// Differentiable; the scale factor depends on all points, so gradients
/// couple through the power constraint exactly as they do in training.
pub fn normalize_graph<E: Engine>(e: &mut E, points: &[Cx<E::V>]) -> Vec<Cx<E::V>> {
    assert!(!points.is_empty());
    let mut total = e.abs2(points[0].re, points[0].im);
    for p in &points[1..] {
        let a = e.abs2(p.re, p.im);
        total = e.add(total, a);
    }
    let mean = e.mul_const(total, 1.0 / points.len() as f64);
    let mean = e.max_const(mean, 1e-24);
    let rms = e.sqrt(mean);
    let one = e.constant(1.0);
    let inv = e.div(one, rms);
    points
        .iter()
        .map(|p| Cx::new(e.mul(p.re, inv), e.mul(p.im, inv)))
        .collect()
}

/// Gathers the graph points selected by each symbol index.
pub fn map_indices<V: Copy>(points: &[Cx<V>], indices: &[usize]) -> Vec<Cx<V>> {
    indices.iter().map(|&i| points[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Plain, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_qam_is_unit_power() {
        for m in [2, 4, 6, 8] {
            let c = Constellation::square_qam_gray(m).unwrap();
            assert_eq!(c.size(), 1 << m);
            assert!((c.mean_power() - 1.0).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn qam64_has_expected_corner() {
        // I bits 100 and Q bits 100 both decode to the outermost level 7.
        let c = Constellation::square_qam_gray(6).unwrap();
        let s = 42f64.sqrt();
        let corner = c.point(0b100100);
        assert!((corner.re - 7.0 / s).abs() < 1e-12);
        assert!((corner.im - 7.0 / s).abs() < 1e-12);
    }

    #[test]
    fn qam_grid_neighbors_differ_in_one_bit() {
        let c = Constellation::square_qam_gray(6).unwrap();
        let scale = 42f64.sqrt();
        let mut by_grid = std::collections::HashMap::new();
        for (label, p) in c.points().iter().enumerate() {
            let gi = (p.re * scale).round() as i32;
            let gq = (p.im * scale).round() as i32;
            by_grid.insert((gi, gq), label);
        }
        for (&(gi, gq), &label) in &by_grid {
            for (ni, nq) in [(gi + 2, gq), (gi, gq + 2)] {
                if let Some(&nl) = by_grid.get(&(ni, nq)) {
                    assert_eq!((label ^ nl).count_ones(), 1, "({gi},{gq}) vs ({ni},{nq})");
                }
            }
        }
    }

    #[test]
    fn bit_mapping_round_trip() {
        let c = Constellation::square_qam_gray(6).unwrap();
        for idx in 0..c.size() {
            let bits = bits_of_index(idx, 6);
            assert_eq!(index_of_bits(&bits, 6).unwrap(), idx);
            assert_eq!(c.map_bits(&bits).unwrap(), c.point(idx));
        }
        assert_eq!(bits_of_index(0x1F, 6), vec![0, 1, 1, 1, 1, 1]);
        assert!(c.map_bits(&[0, 1]).is_err());
        assert!(c.map_bits(&[0, 1, 2, 0, 0, 0]).is_err());
    }

    #[test]
    fn labels_are_two_digit_uppercase_hex() {
        let c = Constellation::square_qam_gray(6).unwrap();
        assert_eq!(c.label(0), "00");
        assert_eq!(c.label(0x1F), "1F");
        assert_eq!(c.label(0x3F), "3F");
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = Constellation::square_qam_gray(6).unwrap();
        c.perturb(&mut rng, 0.01);
        c.normalize().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("constellation.tsv");
        c.export_tsv(&path).unwrap();
        let back = Constellation::import_tsv(&path).unwrap();
        assert_eq!(back.bits_per_symbol(), 6);
        for (a, b) in c.points().iter().zip(back.points()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn tsv_import_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let cases: [(&str, &str); 4] = [
            ("bad_header.tsv", "re\tim\tlabel\n0\t0\t00\n"),
            ("bad_field_count.tsv", "real\timag\tlabel\n0\t0\n0\t0\t01\n"),
            ("bad_number.tsv", "real\timag\tlabel\nx\t0\t00\n0\t0\t01\n"),
            (
                "duplicate_label.tsv",
                "real\timag\tlabel\n0.1\t0\t00\n0.2\t0\t00\n",
            ),
        ];
        for (name, content) in cases {
            let path = dir.path().join(name);
            std::fs::write(&path, content).unwrap();
            assert!(Constellation::import_tsv(&path).is_err(), "{name}");
        }
    }

    #[test]
    fn graph_normalization_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = Constellation::square_qam_gray(4).unwrap();
        c.perturb(&mut rng, 0.3);
        let mut p = Plain::new();
        let pts: Vec<Cx<f64>> = c
            .points()
            .iter()
            .map(|z| Cx::new(z.re, z.im))
            .collect();
        let normed = normalize_graph(&mut p, &pts);
        let mp: f64 = normed.iter().map(|z| z.re * z.re + z.im * z.im).sum::<f64>()
            / normed.len() as f64;
        assert!((mp - 1.0).abs() < 1e-9);

        let mut copy = c.clone();
        copy.normalize().unwrap();
        for (a, b) in normed.iter().zip(copy.points()) {
            assert!((a.re - b.re).abs() < 1e-12);
            assert!((a.im - b.im).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_gradient_couples_points() {
        // With two points, scaling one changes the power and therefore the
        // other's normalized value; the gradient must see that coupling.
        let mut t = Tape::new();
        let a = t.leaf(2.0);
        let b = t.leaf(1.0);
        let zero = t.constant(0.0);
        let pts = [Cx::new(a, zero), Cx::new(b, zero)];
        let normed = normalize_graph(&mut t, &pts);
        let adj = t.backward(normed[1].re);
        // f(a, b) = b / sqrt((a^2 + b^2) / 2), df/da at (2, 1) analytic.
        let g_fd = crate::autodiff::fd::grad_fd(
            |x| {
                let mut p = Plain::new();
                let pts = [Cx::new(x[0], 0.0), Cx::new(x[1], 0.0)];
                normalize_graph(&mut p, &pts)[1].re
            },
            &[2.0, 1.0],
            1e-6,
        );
        assert!((adj.adjoint(a) - g_fd[0]).abs() < 1e-8);
        assert!((adj.adjoint(b) - g_fd[1]).abs() < 1e-8);
        assert!(adj.adjoint(a) < 0.0);
    }

    #[test]
    fn zero_constellation_cannot_normalize() {
        let pts = vec![Complex64::new(0.0, 0.0); 4];
        let mut c = Constellation::from_points(2, pts).unwrap();
        assert!(matches!(c.normalize(), Err(ConstellationError::ZeroPower)));
    }
}
