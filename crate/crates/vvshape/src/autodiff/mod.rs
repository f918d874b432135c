//! Reverse-mode automatic differentiation on a tape, plus a plain f64
//! backend implementing the same operation set.
//!
//! Numeric code in this crate is written against the [`Engine`] trait so the
//! exact same expression graph can either be recorded for backpropagation
//! ([`Tape`]) or evaluated directly ([`Plain`]). Only first-order derivatives
//! are supported; local partials are computed when a node is recorded.

pub mod complex;
pub mod fd;
mod plain;
mod tape;

pub use complex::{cabs, cabs2, cadd, carg, cexp_j, cmul, cmul_const, cpow_int, cscale, csub, Cx};
pub use plain::Plain;
pub use tape::{Adjoints, Tape, Var};

/// Squared-magnitude floor used when a magnitude or angle gradient would
/// otherwise divide by (nearly) zero.
pub const MAG2_FLOOR: f64 = 1e-24;

/// Differentiable scalar operations over an opaque value type.
///
/// Implementations must agree numerically: for identical inputs, [`Tape`]
/// and [`Plain`] produce bit-identical forward values. Domain violations
/// (division by zero, `ln` of a non-positive value, and so on) are reported
/// by panicking at graph construction time rather than by producing NaN.
pub trait Engine {
    type V: Copy + std::fmt::Debug;

    fn constant(&mut self, c: f64) -> Self::V;
    /// Current numeric value of `v`.
    fn value(&self, v: Self::V) -> f64;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    /// Panics if the divisor is exactly zero.
    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn neg(&mut self, a: Self::V) -> Self::V;
    fn add_const(&mut self, a: Self::V, c: f64) -> Self::V;
    fn mul_const(&mut self, a: Self::V, c: f64) -> Self::V;
    /// Integer power. Panics for `0^n` with negative `n`.
    fn powi(&mut self, a: Self::V, n: i32) -> Self::V;
    /// Panics for negative inputs. The derivative is clamped near zero so
    /// `sqrt(0)` records a finite partial.
    fn sqrt(&mut self, a: Self::V) -> Self::V;
    fn exp(&mut self, a: Self::V) -> Self::V;
    /// Panics for inputs that are not strictly positive.
    fn ln(&mut self, a: Self::V) -> Self::V;
    fn sin(&mut self, a: Self::V) -> Self::V;
    fn cos(&mut self, a: Self::V) -> Self::V;
    /// Four-quadrant arctangent of `y/x`. Panics at the exact origin; the
    /// partials use a clamped denominator `max(x^2 + y^2, MAG2_FLOOR)`.
    fn atan2(&mut self, y: Self::V, x: Self::V) -> Self::V;
    /// `re^2 + im^2` as a single node.
    fn abs2(&mut self, re: Self::V, im: Self::V) -> Self::V;
    /// On ties the derivative follows the first argument.
    fn max(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn max_const(&mut self, a: Self::V, c: f64) -> Self::V;
    fn relu(&mut self, a: Self::V) -> Self::V;
    fn softplus(&mut self, a: Self::V) -> Self::V;
    fn sigmoid(&mut self, a: Self::V) -> Self::V;
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus_f(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn check_div(b: f64) -> f64 {
    assert!(b != 0.0, "div: divisor is zero");
    b
}

#[inline]
pub(crate) fn check_ln(x: f64) -> f64 {
    assert!(x > 0.0, "ln: input {x} is not strictly positive");
    x
}

#[inline]
pub(crate) fn check_sqrt(x: f64) -> f64 {
    assert!(x >= 0.0, "sqrt: input {x} is negative");
    x
}

#[inline]
pub(crate) fn check_atan2(y: f64, x: f64) {
    assert!(
        y != 0.0 || x != 0.0,
        "atan2: undefined at the origin (0, 0)"
    );
}

#[inline]
pub(crate) fn check_powi(a: f64, n: i32) {
    assert!(
        a != 0.0 || n >= 0,
        "powi: negative power {n} of zero"
    );
}

#[cfg(test)]
mod tests {
    use super::fd::{grad_fd, max_rel_err};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // One expression per elementary operation, with inputs shifted into the
    // operation's domain where needed. Generic so the same graph runs on the
    // tape (for the recorded gradient) and on Plain (for finite differences).
    fn op_expr<E: Engine>(e: &mut E, op: usize, a: E::V, b: E::V) -> E::V {
        match op {
            0 => e.add(a, b),
            1 => e.sub(a, b),
            2 => e.mul(a, b),
            3 => {
                // Divisor kept in (0.5, 1.5).
                let d = e.sigmoid(b);
                let d = e.add_const(d, 0.5);
                e.div(a, d)
            }
            4 => e.neg(a),
            5 => e.add_const(a, 1.3),
            6 => e.mul_const(a, -2.1),
            7 => {
                // Base kept in (0.25, 1.25).
                let s = e.sigmoid(a);
                let s = e.add_const(s, 0.25);
                e.powi(s, 3)
            }
            8 => {
                let q = e.abs2(a, b);
                let q = e.add_const(q, 0.1);
                e.sqrt(q)
            }
            9 => e.exp(a),
            10 => {
                let q = e.abs2(a, b);
                let q = e.add_const(q, 0.1);
                e.ln(q)
            }
            11 => e.sin(a),
            12 => e.cos(a),
            13 => {
                // y kept in (1, 2), far from the origin and the branch cut.
                let y = e.sigmoid(a);
                let y = e.add_const(y, 1.0);
                e.atan2(y, b)
            }
            14 => e.abs2(a, b),
            15 => e.softplus(a),
            16 => e.sigmoid(a),
            17 => e.max(a, b),
            18 => e.max_const(a, 0.35),
            19 => e.relu(a),
            _ => unreachable!(),
        }
    }

    const KINKED: [usize; 3] = [17, 18, 19];

    #[test]
    fn elementary_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let h = 1e-6;
        for op in 0..20 {
            let mut checked = 0;
            while checked < 1000 {
                let a: f64 = rng.random_range(-3.0..3.0);
                let b: f64 = rng.random_range(-3.0..3.0);
                // Finite differences are invalid within h of a kink.
                if KINKED.contains(&op) && ((a - b).abs() < 1e-2 || (a - 0.35).abs() < 1e-2 || a.abs() < 1e-2) {
                    continue;
                }
                checked += 1;

                let mut t = Tape::new();
                let (ta, tb) = (t.leaf(a), t.leaf(b));
                let out = op_expr(&mut t, op, ta, tb);
                let adj = t.backward(out);
                let grad = [adj.adjoint(ta), adj.adjoint(tb)];

                let f = |x: &[f64]| {
                    let mut p = Plain::new();
                    op_expr(&mut p, op, x[0], x[1])
                };
                let fd = grad_fd(f, &[a, b], h);
                let err = max_rel_err(&grad, &fd, 1e-6);
                assert!(
                    err < 1e-5,
                    "op {op} at ({a}, {b}): grad {grad:?} vs fd {fd:?}, rel err {err}"
                );
            }
        }
    }

    // Random composite graph over smooth operations. Decisions are driven by
    // a dedicated rng plus the running values, which both engines agree on,
    // so the same seed always builds the same graph on tape and Plain.
    fn mixed_graph<E: Engine>(e: &mut E, xs: &[E::V], seed: u64) -> E::V {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool: Vec<E::V> = xs.to_vec();
        for _ in 0..40 {
            let i = rng.random_range(0..pool.len());
            let j = rng.random_range(0..pool.len());
            let (a, b) = (pool[i], pool[j]);
            let op = rng.random_range(0..9);
            let mut v = match op {
                0 => e.add(a, b),
                1 => e.sub(a, b),
                2 => e.mul(a, b),
                3 => e.sin(a),
                4 => e.cos(a),
                5 => e.sigmoid(a),
                6 => e.softplus(a),
                7 => {
                    let d = e.sigmoid(b);
                    let d = e.add_const(d, 0.5);
                    e.div(a, d)
                }
                8 => {
                    let y = e.sigmoid(a);
                    let y = e.add_const(y, 1.0);
                    e.atan2(y, b)
                }
                _ => unreachable!(),
            };
            // Keep magnitudes bounded so finite differences stay accurate.
            if e.value(v).abs() > 10.0 {
                v = e.sin(v);
            }
            pool.push(v);
        }
        let mut acc = pool[pool.len() - 1];
        for k in 2..=3 {
            let s = e.sin(pool[pool.len() - k]);
            acc = e.add(acc, s);
        }
        acc
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]
        #[test]
        fn composite_gradients_match_finite_differences(
            seed in proptest::prelude::any::<u64>(),
            xs in proptest::collection::vec(-2.5f64..2.5, 6),
        ) {
            let mut t = Tape::new();
            let leaves: Vec<Var> = xs.iter().map(|&x| t.leaf(x)).collect();
            let out = mixed_graph(&mut t, &leaves, seed);
            let adj = t.backward(out);
            let grad: Vec<f64> = leaves.iter().map(|&l| adj.adjoint(l)).collect();

            let f = |x: &[f64]| {
                let mut p = Plain::new();
                let vals: Vec<f64> = x.to_vec();
                mixed_graph(&mut p, &vals, seed)
            };
            let fd = grad_fd(f, &xs, 1e-5);
            // Components far below the gradient scale are beyond what the
            // difference quotient resolves; floor the denominator there.
            let scale = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
            let err = max_rel_err(&grad, &fd, 1e-4 * scale);
            proptest::prop_assert!(err < 1e-5, "rel err {} grad {:?} fd {:?}", err, grad, fd);
        }

        #[test]
        fn backward_is_deterministic(
            seed in proptest::prelude::any::<u64>(),
            xs in proptest::collection::vec(-2.5f64..2.5, 6),
        ) {
            let run = || {
                let mut t = Tape::new();
                let leaves: Vec<Var> = xs.iter().map(|&x| t.leaf(x)).collect();
                let out = mixed_graph(&mut t, &leaves, seed);
                let adj = t.backward(out);
                (
                    t.value(out).to_bits(),
                    leaves.iter().map(|&l| adj.adjoint(l).to_bits()).collect::<Vec<u64>>(),
                )
            };
            proptest::prop_assert_eq!(run(), run());
        }
    }
}
