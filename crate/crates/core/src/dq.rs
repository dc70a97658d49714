//! Vectors in the synchronously rotating dq frame.
//!
//! Balanced three-phase sinusoids become constant 2-vectors in this frame,
//! so inverter currents and voltages are plain `Dq` values here.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// The fixed 2x2 rotation used by dq cross products: `J = [[0, 1], [-1, 0]]`.
pub const J: [[f64; 2]; 2] = [[0.0, 1.0], [-1.0, 0.0]];

/// A 2-vector in the synchronous dq frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq {
    pub d: f64,
    pub q: f64,
}

impl Dq {
    pub const ZERO: Dq = Dq { d: 0.0, q: 0.0 };

    pub const fn new(d: f64, q: f64) -> Self {
        Dq { d, q }
    }

    pub fn dot(self, other: Dq) -> f64 {
        self.d * other.d + self.q * other.q
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `J * self`.
    pub fn rot_j(self) -> Dq {
        Dq::new(self.q, -self.d)
    }

    /// `J^T * self` (equivalently `-J * self`).
    pub fn rot_jt(self) -> Dq {
        Dq::new(-self.q, self.d)
    }

    pub fn is_finite(self) -> bool {
        self.d.is_finite() && self.q.is_finite()
    }
}

impl Add for Dq {
    type Output = Dq;
    fn add(self, rhs: Dq) -> Dq {
        Dq::new(self.d + rhs.d, self.q + rhs.q)
    }
}

impl AddAssign for Dq {
    fn add_assign(&mut self, rhs: Dq) {
        self.d += rhs.d;
        self.q += rhs.q;
    }
}

impl Sub for Dq {
    type Output = Dq;
    fn sub(self, rhs: Dq) -> Dq {
        Dq::new(self.d - rhs.d, self.q - rhs.q)
    }
}

impl Neg for Dq {
    type Output = Dq;
    fn neg(self) -> Dq {
        Dq::new(-self.d, -self.q)
    }
}

impl Mul<f64> for Dq {
    type Output = Dq;
    fn mul(self, rhs: f64) -> Dq {
        Dq::new(self.d * rhs, self.q * rhs)
    }
}

impl Div<f64> for Dq {
    type Output = Dq;
    fn div(self, rhs: f64) -> Dq {
        Dq::new(self.d / rhs, self.q / rhs)
    }
}
