use super::{
    check_atan2, check_div, check_ln, check_powi, check_sqrt, sigmoid_f, softplus_f, Engine,
};

/// Direct f64 evaluator with the same domain checks as [`super::Tape`].
///
/// Running pipeline code on this backend skips all recording, which makes
/// large Monte-Carlo evaluations cheap while guaranteeing the formulas are
/// the ones that were trained.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Plain {
    pub fn new() -> Self {
        Plain
    }
}

impl Engine for Plain {
    type V = f64;

    fn constant(&mut self, c: f64) -> f64 {
        c
    }

    fn value(&self, v: f64) -> f64 {
        v
    }

    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }

    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }

    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }

    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / check_div(b)
    }

    fn neg(&mut self, a: f64) -> f64 {
        -a
    }

    fn add_const(&mut self, a: f64, c: f64) -> f64 {
        a + c
    }

    fn mul_const(&mut self, a: f64, c: f64) -> f64 {
        a * c
    }

    fn powi(&mut self, a: f64, n: i32) -> f64 {
        check_powi(a, n);
        if n == 0 {
            1.0
        } else {
            a.powi(n)
        }
    }

    fn sqrt(&mut self, a: f64) -> f64 {
        check_sqrt(a).sqrt()
    }

    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }

    fn ln(&mut self, a: f64) -> f64 {
        check_ln(a).ln()
    }

    fn sin(&mut self, a: f64) -> f64 {
        a.sin()
    }

    fn cos(&mut self, a: f64) -> f64 {
        a.cos()
    }

    fn atan2(&mut self, y: f64, x: f64) -> f64 {
        check_atan2(y, x);
        y.atan2(x)
    }

    fn abs2(&mut self, re: f64, im: f64) -> f64 {
        re * re + im * im
    }

    fn max(&mut self, a: f64, b: f64) -> f64 {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn max_const(&mut self, a: f64, c: f64) -> f64 {
        if a >= c {
            a
        } else {
            c
        }
    }

    fn relu(&mut self, a: f64) -> f64 {
        if a > 0.0 {
            a
        } else {
            0.0
        }
    }

    fn softplus(&mut self, a: f64) -> f64 {
        softplus_f(a)
    }

    fn sigmoid(&mut self, a: f64) -> f64 {
        sigmoid_f(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    // The two backends must agree bit for bit on forward values.
    #[test]
    fn matches_tape_forward_values() {
        let inputs = [0.3, -1.7, 2.25, 0.01];
        for &a in &inputs {
            for &b in &inputs {
                let mut p = Plain::new();
                let mut t = Tape::new();
                let (pa, pb) = (p.constant(a), p.constant(b));
                let (ta, tb) = (t.leaf(a), t.leaf(b));

                let plain = {
                    let s = p.mul(pa, pb);
                    let s = p.sin(s);
                    let s = p.softplus(s);
                    let q = p.abs2(pa, pb);
                    let q = p.sqrt(q);
                    let r = p.atan2(pb, q);
                    let u = p.add(s, r);
                    p.sigmoid(u)
                };
                let taped = {
                    let s = t.mul(ta, tb);
                    let s = t.sin(s);
                    let s = t.softplus(s);
                    let q = t.abs2(ta, tb);
                    let q = t.sqrt(q);
                    let r = t.atan2(tb, q);
                    let u = t.add(s, r);
                    let v = t.sigmoid(u);
                    t.value(v)
                };
                assert_eq!(plain.to_bits(), taped.to_bits());
            }
        }
    }
}
