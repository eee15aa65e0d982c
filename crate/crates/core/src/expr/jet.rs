//! Forward-mode jets used to differentiate expression trees.
//!
//! [`Jet1`] carries a value and gradient, [`Jet2`] adds the Hessian. Every
//! elementary operation is expressed through [`Scalar::lift`] (unary chain
//! rule) or the product rule, and Hessians are assembled on the upper triangle
//! then mirrored, so `hess[i][j] == hess[j][i]` holds bit for bit.

/// Arithmetic needed to evaluate an expression tree.
pub trait Scalar: Clone + std::fmt::Debug {
    /// A constant (zero derivatives) in `n` variables.
    fn constant(c: f64, n: usize) -> Self;
    /// The `index`-th coordinate seeded with value `v`.
    fn variable(v: f64, index: usize, n: usize) -> Self;
    fn value(&self) -> f64;
    /// Apply a scalar function given its value and first two derivatives at `self.value()`.
    fn lift(&self, f0: f64, f1: f64, f2: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn is_finite(&self) -> bool;

    fn div(&self, o: &Self) -> Self {
        let v = o.value();
        self.mul(&o.lift(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v)))
    }
}

impl Scalar for f64 {
    fn constant(c: f64, _n: usize) -> Self {
        c
    }
    fn variable(v: f64, _index: usize, _n: usize) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, f0: f64, _f1: f64, _f2: f64) -> Self {
        f0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

/// Value and one directional derivative; `Copy`, so evaluation does not
/// allocate. Seed it by hand: `variable` has no direction to pick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Scalar for Dual {
    fn constant(c: f64, _n: usize) -> Self {
        Dual { value: c, deriv: 0.0 }
    }
    fn variable(v: f64, _index: usize, _n: usize) -> Self {
        Dual { value: v, deriv: 0.0 }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, f0: f64, f1: f64, _f2: f64) -> Self {
        Dual {
            value: f0,
            deriv: f1 * self.deriv,
        }
    }
    fn add(&self, o: &Self) -> Self {
        Dual {
            value: self.value + o.value,
            deriv: self.deriv + o.deriv,
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual {
            value: self.value - o.value,
            deriv: self.deriv - o.deriv,
        }
    }
    fn mul(&self, o: &Self) -> Self {
        Dual {
            value: self.value * o.value,
            deriv: o.value * self.deriv + self.value * o.deriv,
        }
    }
    fn neg(&self) -> Self {
        Dual {
            value: -self.value,
            deriv: -self.deriv,
        }
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.deriv.is_finite()
    }
}

/// First-order jet: value and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet1 {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Scalar for Jet1 {
    fn constant(c: f64, n: usize) -> Self {
        Jet1 {
            value: c,
            grad: vec![0.0; n],
        }
    }
    fn variable(v: f64, index: usize, n: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[index] = 1.0;
        Jet1 { value: v, grad }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, f0: f64, f1: f64, _f2: f64) -> Self {
        Jet1 {
            value: f0,
            grad: self.grad.iter().map(|g| f1 * g).collect(),
        }
    }
    fn add(&self, o: &Self) -> Self {
        Jet1 {
            value: self.value + o.value,
            grad: zip_map(&self.grad, &o.grad, |a, b| a + b),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Jet1 {
            value: self.value - o.value,
            grad: zip_map(&self.grad, &o.grad, |a, b| a - b),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let (u, v) = (self.value, o.value);
        Jet1 {
            value: u * v,
            grad: zip_map(&self.grad, &o.grad, |a, b| v * a + u * b),
        }
    }
    fn neg(&self) -> Self {
        Jet1 {
            value: -self.value,
            grad: self.grad.iter().map(|g| -g).collect(),
        }
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Second-order Taylor jet at a point: value, gradient and symmetric Hessian
/// (row-major, `n * n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Jet2 {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.dim() + j]
    }

    fn from_upper(value: f64, grad: Vec<f64>, mut entry: impl FnMut(usize, usize) -> f64) -> Self {
        let n = grad.len();
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let h = entry(i, j);
                hess[i * n + j] = h;
                hess[j * n + i] = h;
            }
        }
        Jet2 { value, grad, hess }
    }
}

impl Scalar for Jet2 {
    fn constant(c: f64, n: usize) -> Self {
        Jet2 {
            value: c,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
        }
    }
    fn variable(v: f64, index: usize, n: usize) -> Self {
        let mut j = Jet2::constant(v, n);
        j.grad[index] = 1.0;
        j
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let n = self.dim();
        let g = &self.grad;
        let grad = g.iter().map(|gi| f1 * gi).collect();
        Jet2::from_upper(f0, grad, |i, j| f2 * (g[i] * g[j]) + f1 * self.hess[i * n + j])
    }
    fn add(&self, o: &Self) -> Self {
        Jet2 {
            value: self.value + o.value,
            grad: zip_map(&self.grad, &o.grad, |a, b| a + b),
            hess: zip_map(&self.hess, &o.hess, |a, b| a + b),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Jet2 {
            value: self.value - o.value,
            grad: zip_map(&self.grad, &o.grad, |a, b| a - b),
            hess: zip_map(&self.hess, &o.hess, |a, b| a - b),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let n = self.dim();
        let (u, v) = (self.value, o.value);
        let (gu, gv) = (&self.grad, &o.grad);
        let grad = zip_map(gu, gv, |a, b| v * a + u * b);
        Jet2::from_upper(u * v, grad, |i, j| {
            v * self.hess[i * n + j] + u * o.hess[i * n + j] + (gu[i] * gv[j] + gv[i] * gu[j])
        })
    }
    fn neg(&self) -> Self {
        Jet2 {
            value: -self.value,
            grad: self.grad.iter().map(|g| -g).collect(),
            hess: self.hess.iter().map(|h| -h).collect(),
        }
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.hess.iter().all(|h| h.is_finite())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_second_order() {
        // f(x, y) = x * y at (2, 3): grad (3, 2), hess [[0,1],[1,0]]
        let x = Jet2::variable(2.0, 0, 2);
        let y = Jet2::variable(3.0, 1, 2);
        let p = x.mul(&y);
        assert_eq!(p.value, 6.0);
        assert_eq!(p.grad, vec![3.0, 2.0]);
        assert_eq!(p.hess, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn quotient_matches_hand_derivatives() {
        // f(x) = 1/x at x = 2: f' = -1/4, f'' = 1/4
        let x = Jet2::variable(2.0, 0, 1);
        let one = Jet2::constant(1.0, 1);
        let q = one.div(&x);
        assert!((q.value - 0.5).abs() < 1e-15);
        assert!((q.grad[0] + 0.25).abs() < 1e-15);
        assert!((q.hess[0] - 0.25).abs() < 1e-15);
    }
}
