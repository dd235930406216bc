//! Minimal 3-vector used for atomic positions (Cartesian, in angstrom).

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use crate::scalar::Scalar;

/// Cartesian 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vector3<F>(pub [F; 3]);

impl<F: Scalar> Vector3<F> {
    pub fn new(x: F, y: F, z: F) -> Self {
        Vector3([x, y, z])
    }

    pub fn zeros() -> Self {
        Vector3([F::zero(); 3])
    }

    pub fn x(&self) -> F {
        self.0[0]
    }

    pub fn y(&self) -> F {
        self.0[1]
    }

    pub fn z(&self) -> F {
        self.0[2]
    }

    pub fn dot(&self, other: &Self) -> F {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn cross(&self, other: &Self) -> Self {
        let [ax, ay, az] = self.0;
        let [bx, by, bz] = other.0;
        Vector3([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx])
    }

    pub fn norm(&self) -> F {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: F) -> Self {
        Vector3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    /// Unit vector in the same direction; `None` if the norm is below `eps`.
    pub fn normalized(&self, eps: F) -> Option<Self> {
        let n = self.norm();
        if n < eps {
            None
        } else {
            Some(self.scale(F::one() / n))
        }
    }

    pub fn distance(&self, other: &Self) -> F {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl<F: Scalar> Add for Vector3<F> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Vector3([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl<F: Scalar> Sub for Vector3<F> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Vector3([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl<F: Scalar> Neg for Vector3<F> {
    type Output = Self;
    fn neg(self) -> Self {
        Vector3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<F: Scalar> AddAssign for Vector3<F> {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..3 {
            self.0[i] += rhs.0[i];
        }
    }
}

impl<F: Scalar> SubAssign for Vector3<F> {
    fn sub_assign(&mut self, rhs: Self) {
        for i in 0..3 {
            self.0[i] -= rhs.0[i];
        }
    }
}

impl<F: Scalar> Mul<F> for Vector3<F> {
    type Output = Self;
    fn mul(self, s: F) -> Self {
        self.scale(s)
    }
}

impl<F> Index<usize> for Vector3<F> {
    type Output = F;
    fn index(&self, i: usize) -> &F {
        &self.0[i]
    }
}

/// A rigid transformation (proper rotation followed by translation).
#[derive(Debug, Clone, Copy)]
pub struct Rigid<F> {
    pub rotation: [[F; 3]; 3],
    pub translation: Vector3<F>,
}

impl<F: Scalar> Rigid<F> {
    pub fn identity() -> Self {
        let mut r = [[F::zero(); 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = F::one();
        }
        Rigid { rotation: r, translation: Vector3::zeros() }
    }

    /// Rotation about an axis (x=0, y=1, z=2) by `angle`, plus translation.
    pub fn from_axis_angle(axis: usize, angle: F, translation: Vector3<F>) -> Self {
        let (s, c) = angle.sin_cos();
        let mut r = [[F::zero(); 3]; 3];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        r[axis][axis] = F::one();
        r[a][a] = c;
        r[a][b] = -s;
        r[b][a] = s;
        r[b][b] = c;
        Rigid { rotation: r, translation }
    }

    /// Compose three axis rotations into a general rotation, plus translation.
    pub fn from_euler(yaw: F, pitch: F, roll: F, translation: Vector3<F>) -> Self {
        let rz = Rigid::from_axis_angle(2, yaw, Vector3::zeros());
        let ry = Rigid::from_axis_angle(1, pitch, Vector3::zeros());
        let rx = Rigid::from_axis_angle(0, roll, Vector3::zeros());
        let mut out = rz.compose(&ry).compose(&rx);
        out.translation = translation;
        out
    }

    pub fn compose(&self, other: &Self) -> Self {
        let mut r = [[F::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, other_row) in other.rotation.iter().enumerate() {
                    r[i][j] += self.rotation[i][k] * other_row[j];
                }
            }
        }
        Rigid {
            rotation: r,
            translation: self.apply(other.translation),
        }
    }

    pub fn apply(&self, v: Vector3<F>) -> Vector3<F> {
        let mut out = self.translation;
        for i in 0..3 {
            out.0[i] += self.rotation[i][0] * v.0[0]
                + self.rotation[i][1] * v.0[1]
                + self.rotation[i][2] * v.0[2];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_is_orthogonal() {
        let a: Vector3<f64> = Vector3::new(1.0, 2.0, 3.0);
        let b = Vector3::new(-2.0, 0.5, 1.0);
        let c = a.cross(&b);
        assert!(a.dot(&c).abs() < 1e-12);
        assert!(b.dot(&c).abs() < 1e-12);
    }

    #[test]
    fn rigid_preserves_distances() {
        let t = Rigid::from_euler(0.3, -1.1, 2.0, Vector3::new(1.0, -2.0, 0.5));
        let a = Vector3::new(0.2, 1.4, -0.7);
        let b = Vector3::new(-1.0, 0.1, 2.3);
        let d0: f64 = a.distance(&b);
        let d1 = t.apply(a).distance(&t.apply(b));
        assert!((d0 - d1).abs() < 1e-12);
    }
}
