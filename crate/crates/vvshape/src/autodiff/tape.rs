use super::{
    check_atan2, check_div, check_ln, check_powi, check_sqrt, sigmoid_f, softplus_f, Engine,
    MAG2_FLOOR,
};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    /// Position of the node on its tape.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Append-only record of an expression graph in evaluation order.
///
/// Each node stores its value, up to two parent indices, and the local
/// partial derivatives with respect to those parents, fixed when the node
/// is recorded. Node 0 is a reserved zero constant that unused parent
/// slots point at with a zero partial, which keeps the backward pass free
/// of per-node branching.
pub struct Tape {
    values: Vec<f64>,
    parents: Vec<[u32; 2]>,
    partials: Vec<[f64; 2]>,
}

impl Tape {
    pub fn new() -> Self {
        let mut t = Tape {
            values: Vec::new(),
            parents: Vec::new(),
            partials: Vec::new(),
        };
        t.push(0.0, [0, 0], [0.0, 0.0]);
        t
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let mut t = Tape {
            values: Vec::with_capacity(nodes),
            parents: Vec::with_capacity(nodes),
            partials: Vec::with_capacity(nodes),
        };
        t.push(0.0, [0, 0], [0.0, 0.0]);
        t
    }

    /// Number of recorded nodes, including the reserved zero node.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Drops all nodes but keeps the allocations for reuse. Handles from
    /// before the reset are invalidated.
    pub fn reset(&mut self) {
        self.values.clear();
        self.parents.clear();
        self.partials.clear();
        self.push(0.0, [0, 0], [0.0, 0.0]);
    }

    /// Records an input node. Its adjoint is available after `backward`.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, [0, 0], [0.0, 0.0])
    }

    fn push(&mut self, value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var {
        let id = self.values.len();
        assert!(id <= u32::MAX as usize, "tape overflow: too many nodes");
        self.values.push(value);
        self.parents.push(parents);
        self.partials.push(partials);
        Var(id as u32)
    }

    fn unary(&mut self, a: Var, value: f64, grad: f64) -> Var {
        self.push(value, [a.0, 0], [grad, 0.0])
    }

    fn binary(&mut self, a: Var, b: Var, value: f64, ga: f64, gb: f64) -> Var {
        self.push(value, [a.0, b.0], [ga, gb])
    }

    /// Accumulates adjoints of every node up to `root` by one reverse sweep.
    /// Deterministic: identical graphs give bit-identical adjoints.
    pub fn backward(&self, root: Var) -> Adjoints {
        let mut adj = Vec::new();
        let visited = self.backward_into(root, &mut adj);
        Adjoints { adj, visited }
    }

    /// As [`Tape::backward`] but reuses `adj` to avoid reallocation.
    /// Returns the number of nodes visited by the sweep.
    pub fn backward_into(&self, root: Var, adj: &mut Vec<f64>) -> usize {
        let n = root.index() + 1;
        assert!(n <= self.len(), "backward: root is not on this tape");
        adj.clear();
        adj.resize(n, 0.0);
        adj[root.index()] = 1.0;
        // Reverse order visits each node exactly once, after everything
        // that depends on it. Node 0 has no parents and is skipped.
        for i in (1..n).rev() {
            let a = adj[i];
            if a != 0.0 {
                let [p0, p1] = self.parents[i];
                let [g0, g1] = self.partials[i];
                adj[p0 as usize] += a * g0;
                adj[p1 as usize] += a * g1;
            }
        }
        n
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a backward sweep: one adjoint per node up to the root.
pub struct Adjoints {
    adj: Vec<f64>,
    visited: usize,
}

impl Adjoints {
    /// d(root)/d(v). Zero for nodes the root does not depend on.
    pub fn adjoint(&self, v: Var) -> f64 {
        self.adj[v.index()]
    }

    /// Nodes visited by the sweep that produced this result.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl Engine for Tape {
    type V = Var;

    fn constant(&mut self, c: f64) -> Var {
        self.push(c, [0, 0], [0.0, 0.0])
    }

    fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] + self.values[b.index()];
        self.binary(a, b, v, 1.0, 1.0)
    }

    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] - self.values[b.index()];
        self.binary(a, b, v, 1.0, -1.0)
    }

    fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        self.binary(a, b, va * vb, vb, va)
    }

    fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        check_div(vb);
        self.binary(a, b, va / vb, 1.0 / vb, -va / (vb * vb))
    }

    fn neg(&mut self, a: Var) -> Var {
        let v = -self.values[a.index()];
        self.unary(a, v, -1.0)
    }

    fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.index()] + c;
        self.unary(a, v, 1.0)
    }

    fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.index()] * c;
        self.unary(a, v, c)
    }

    fn powi(&mut self, a: Var, n: i32) -> Var {
        let va = self.values[a.index()];
        check_powi(va, n);
        if n == 0 {
            return self.unary(a, 1.0, 0.0);
        }
        let v = va.powi(n);
        let g = f64::from(n) * va.powi(n - 1);
        self.unary(a, v, g)
    }

    fn sqrt(&mut self, a: Var) -> Var {
        let va = check_sqrt(self.values[a.index()]);
        let v = va.sqrt();
        self.unary(a, v, 0.5 / v.max(1e-12))
    }

    fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.index()].exp();
        self.unary(a, v, v)
    }

    fn ln(&mut self, a: Var) -> Var {
        let va = check_ln(self.values[a.index()]);
        self.unary(a, va.ln(), 1.0 / va)
    }

    fn sin(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        self.unary(a, va.sin(), va.cos())
    }

    fn cos(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        self.unary(a, va.cos(), -va.sin())
    }

    fn atan2(&mut self, y: Var, x: Var) -> Var {
        let (vy, vx) = (self.values[y.index()], self.values[x.index()]);
        check_atan2(vy, vx);
        let d = (vx * vx + vy * vy).max(MAG2_FLOOR);
        self.binary(y, x, vy.atan2(vx), vx / d, -vy / d)
    }

    fn abs2(&mut self, re: Var, im: Var) -> Var {
        let (vr, vi) = (self.values[re.index()], self.values[im.index()]);
        self.binary(re, im, vr * vr + vi * vi, 2.0 * vr, 2.0 * vi)
    }

    fn max(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        if va >= vb {
            self.binary(a, b, va, 1.0, 0.0)
        } else {
            self.binary(a, b, vb, 0.0, 1.0)
        }
    }

    fn max_const(&mut self, a: Var, c: f64) -> Var {
        let va = self.values[a.index()];
        if va >= c {
            self.unary(a, va, 1.0)
        } else {
            self.unary(a, c, 0.0)
        }
    }

    fn relu(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        if va > 0.0 {
            self.unary(a, va, 1.0)
        } else {
            self.unary(a, 0.0, 0.0)
        }
    }

    fn softplus(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        self.unary(a, softplus_f(va), sigmoid_f(va))
    }

    fn sigmoid(&mut self, a: Var) -> Var {
        let v = sigmoid_f(self.values[a.index()]);
        self.unary(a, v, v * (1.0 - v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(3.0);
        let y = t.mul(x, x);
        assert_eq!(t.value(y), 9.0);
        let adj = t.backward(y);
        assert_eq!(adj.adjoint(x), 6.0);
    }

    #[test]
    fn product_and_chain_rule() {
        // f(x, y) = sin(x * y) + x^2, df/dx = y cos(xy) + 2x, df/dy = x cos(xy)
        let mut t = Tape::new();
        let (xv, yv) = (0.7, -1.3);
        let x = t.leaf(xv);
        let y = t.leaf(yv);
        let xy = t.mul(x, y);
        let s = t.sin(xy);
        let x2 = t.powi(x, 2);
        let f = t.add(s, x2);
        let adj = t.backward(f);
        let c = (xv * yv).cos();
        assert!((adj.adjoint(x) - (yv * c + 2.0 * xv)).abs() < 1e-14);
        assert!((adj.adjoint(y) - xv * c).abs() < 1e-14);
    }

    #[test]
    fn softplus_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.softplus(x);
        assert!((t.value(y) - 2.0f64.ln()).abs() < 1e-15);
        let adj = t.backward(y);
        assert!((adj.adjoint(x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_scaled_slope() {
        // d/dx sigmoid(3x) at 0 is 3/4.
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let s = t.mul_const(x, 3.0);
        let y = t.sigmoid(s);
        let adj = t.backward(y);
        assert!((adj.adjoint(x) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn atan2_on_positive_y_axis() {
        let mut t = Tape::new();
        let y = t.leaf(1.0);
        let x = t.leaf(0.0);
        let a = t.atan2(y, x);
        assert!((t.value(a) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let adj = t.backward(a);
        // d atan2 / dy = x / (x^2 + y^2) = 0, d atan2 / dx = -y / (x^2 + y^2) = -1.
        assert_eq!(adj.adjoint(y), 0.0);
        assert_eq!(adj.adjoint(x), -1.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x * x + x, df/dx = 2x + 1.
        let mut t = Tape::new();
        let x = t.leaf(2.5);
        let sq = t.mul(x, x);
        let f = t.add(sq, x);
        let adj = t.backward(f);
        assert_eq!(adj.adjoint(x), 6.0);
    }

    #[test]
    fn unused_leaf_has_zero_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(1.0);
        let u = t.leaf(9.0);
        let y = t.mul(x, x);
        let adj = t.backward(y);
        assert_eq!(adj.adjoint(u), 0.0);
        assert_eq!(adj.adjoint(x), 2.0);
    }

    #[test]
    fn backward_visits_each_node_once() {
        let mut t = Tape::new();
        let x = t.leaf(1.25);
        let mut acc = x;
        for _ in 0..50 {
            let s = t.sin(acc);
            acc = t.add(s, x);
        }
        let adj = t.backward(acc);
        assert_eq!(adj.visited(), t.len());
    }

    #[test]
    fn backward_of_interior_node() {
        let mut t = Tape::new();
        let x = t.leaf(0.4);
        let y = t.sin(x);
        let _z = t.mul(y, y);
        let adj = t.backward(y);
        assert!((adj.adjoint(x) - 0.4f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn reset_reuses_tape() {
        let mut t = Tape::new();
        let x = t.leaf(2.0);
        let y = t.mul(x, x);
        let first = t.backward(y).adjoint(x);
        t.reset();
        let x = t.leaf(2.0);
        let y = t.mul(x, x);
        let second = t.backward(y).adjoint(x);
        assert_eq!(first.to_bits(), second.to_bits());
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn relu_and_max_branches() {
        let mut t = Tape::new();
        let a = t.leaf(-0.5);
        let b = t.leaf(0.5);
        let ra = t.relu(a);
        let rb = t.relu(b);
        let m = t.max(a, b);
        assert_eq!(t.value(ra), 0.0);
        assert_eq!(t.value(rb), 0.5);
        assert_eq!(t.value(m), 0.5);
        let s1 = t.add(ra, rb);
        let s2 = t.add(s1, m);
        let adj = t.backward(s2);
        assert_eq!(adj.adjoint(a), 0.0);
        assert_eq!(adj.adjoint(b), 2.0);
    }

    #[test]
    #[should_panic(expected = "divisor is zero")]
    fn div_by_zero_panics() {
        let mut t = Tape::new();
        let a = t.leaf(1.0);
        let b = t.leaf(0.0);
        let _ = t.div(a, b);
    }

    #[test]
    #[should_panic(expected = "not strictly positive")]
    fn ln_of_negative_panics() {
        let mut t = Tape::new();
        let a = t.leaf(-1.0);
        let _ = t.ln(a);
    }

    #[test]
    #[should_panic(expected = "negative")]
    fn sqrt_of_negative_panics() {
        let mut t = Tape::new();
        let a = t.leaf(-1e-9);
        let _ = t.sqrt(a);
    }

    #[test]
    #[should_panic(expected = "origin")]
    fn atan2_at_origin_panics() {
        let mut t = Tape::new();
        let z = t.leaf(0.0);
        let _ = t.atan2(z, z);
    }

    #[test]
    #[should_panic(expected = "negative power")]
    fn zero_to_negative_power_panics() {
        let mut t = Tape::new();
        let a = t.leaf(0.0);
        let _ = t.powi(a, -2);
    }
}
