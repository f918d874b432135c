use num_complex::Complex64;

use super::{Engine, MAG2_FLOOR};

/// Complex value as a pair of engine scalars.
#[derive(Clone, Copy, Debug)]
pub struct Cx<V> {
    pub re: V,
    pub im: V,
}

impl<V> Cx<V> {
    pub fn new(re: V, im: V) -> Self {
        Cx { re, im }
    }
}

impl Cx<f64> {
    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// Lifts a complex constant into the engine.
pub fn constant<E: Engine>(e: &mut E, c: Complex64) -> Cx<E::V> {
    Cx::new(e.constant(c.re), e.constant(c.im))
}

/// Current numeric value of a complex node pair.
pub fn value<E: Engine>(e: &E, z: Cx<E::V>) -> Complex64 {
    Complex64::new(e.value(z.re), e.value(z.im))
}

pub fn cadd<E: Engine>(e: &mut E, a: Cx<E::V>, b: Cx<E::V>) -> Cx<E::V> {
    Cx::new(e.add(a.re, b.re), e.add(a.im, b.im))
}

pub fn csub<E: Engine>(e: &mut E, a: Cx<E::V>, b: Cx<E::V>) -> Cx<E::V> {
    Cx::new(e.sub(a.re, b.re), e.sub(a.im, b.im))
}

pub fn cmul<E: Engine>(e: &mut E, a: Cx<E::V>, b: Cx<E::V>) -> Cx<E::V> {
    let rr = e.mul(a.re, b.re);
    let ii = e.mul(a.im, b.im);
    let ri = e.mul(a.re, b.im);
    let ir = e.mul(a.im, b.re);
    Cx::new(e.sub(rr, ii), e.add(ri, ir))
}

/// Multiplies by a complex constant without lifting it.
pub fn cmul_const<E: Engine>(e: &mut E, a: Cx<E::V>, c: Complex64) -> Cx<E::V> {
    let rr = e.mul_const(a.re, c.re);
    let ii = e.mul_const(a.im, c.im);
    let ri = e.mul_const(a.re, c.im);
    let ir = e.mul_const(a.im, c.re);
    Cx::new(e.sub(rr, ii), e.add(ri, ir))
}

/// Scales both components by a real engine scalar.
pub fn cscale<E: Engine>(e: &mut E, a: Cx<E::V>, s: E::V) -> Cx<E::V> {
    Cx::new(e.mul(a.re, s), e.mul(a.im, s))
}

/// Integer power `z^n` for `n >= 1` by binary exponentiation.
pub fn cpow_int<E: Engine>(e: &mut E, z: Cx<E::V>, n: u32) -> Cx<E::V> {
    assert!(n >= 1, "cpow_int: power must be at least 1");
    let mut base = z;
    let mut acc: Option<Cx<E::V>> = None;
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            acc = Some(match acc {
                None => base,
                Some(a) => cmul(e, a, base),
            });
        }
        k >>= 1;
        if k > 0 {
            base = cmul(e, base, base);
        }
    }
    acc.expect("n >= 1 always selects at least one factor")
}

/// Squared magnitude.
pub fn cabs2<E: Engine>(e: &mut E, z: Cx<E::V>) -> E::V {
    e.abs2(z.re, z.im)
}

/// Magnitude, floored at 1e-12 so dividing by it is always safe and the
/// gradient stays finite near the origin.
pub fn cabs<E: Engine>(e: &mut E, z: Cx<E::V>) -> E::V {
    let m2 = e.abs2(z.re, z.im);
    let m2 = e.max_const(m2, MAG2_FLOOR);
    e.sqrt(m2)
}

/// Principal argument in (-pi, pi]. Panics at the exact origin.
pub fn carg<E: Engine>(e: &mut E, z: Cx<E::V>) -> E::V {
    e.atan2(z.im, z.re)
}

/// Unit phasor `exp(j * theta)`.
pub fn cexp_j<E: Engine>(e: &mut E, theta: E::V) -> Cx<E::V> {
    Cx::new(e.cos(theta), e.sin(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Plain, Tape};

    #[test]
    fn fourth_power_of_j_is_one() {
        let mut t = Tape::new();
        let z = constant(&mut t, Complex64::new(0.0, 1.0));
        let w = cpow_int(&mut t, z, 4);
        assert_eq!(t.value(w.re), 1.0);
        assert_eq!(t.value(w.im), 0.0);
    }

    #[test]
    fn powers_match_num_complex() {
        let mut p = Plain::new();
        for n in 1..=8u32 {
            let c = Complex64::new(0.83, -0.41);
            let z = constant(&mut p, c);
            let w = cpow_int(&mut p, z, n);
            let want = c.powu(n);
            assert!((value(&p, w) - want).norm() < 1e-12 * want.norm().max(1.0));
        }
    }

    #[test]
    fn arg_of_unit_phasor() {
        let mut t = Tape::new();
        let th = t.leaf(0.3);
        let z = cexp_j(&mut t, th);
        let a = carg(&mut t, z);
        assert!((t.value(a) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rotation_angle_gradient_is_one() {
        // d/d(theta) arg(z0 * exp(j theta)) = 1 away from the branch cut.
        let mut t = Tape::new();
        let z0 = constant(&mut t, Complex64::from_polar(1.0, 0.5));
        let th = t.leaf(0.2);
        let rot = cexp_j(&mut t, th);
        let z = cmul(&mut t, z0, rot);
        let a = carg(&mut t, z);
        assert!((t.value(a) - 0.7).abs() < 1e-14);
        let adj = t.backward(a);
        assert!((adj.adjoint(th) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn magnitude_is_floored_near_origin() {
        let mut p = Plain::new();
        let z = constant(&mut p, Complex64::new(0.0, 0.0));
        let m = cabs(&mut p, z);
        assert_eq!(m, 1e-12);
    }

    #[test]
    fn magnitude_gradient_is_direction() {
        let mut t = Tape::new();
        let re = t.leaf(3.0);
        let im = t.leaf(4.0);
        let m = cabs(&mut t, Cx::new(re, im));
        assert!((t.value(m) - 5.0).abs() < 1e-15);
        let adj = t.backward(m);
        assert!((adj.adjoint(re) - 0.6).abs() < 1e-15);
        assert!((adj.adjoint(im) - 0.8).abs() < 1e-15);
    }
}
