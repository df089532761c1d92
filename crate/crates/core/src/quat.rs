//! Quaternion scalars and structure-of-arrays quaternion tensors.
//!
//! A quaternion `w + x·i + y·j + z·k` carries the four B-format channels
//! (W, X, Y, Z) as one entity. Tensors keep the four components in separate
//! real planes so that every quaternion operation decomposes into real
//! operations over planes.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Quaternion::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conjugate(self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_sqr(self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Conjugate and Euclidean norm in one call.
    pub fn conjugate_and_norm(self) -> (Quaternion, f64) {
        (self.conjugate(), self.norm())
    }

    pub fn scale(self, s: f64) -> Self {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Real 4×4 matrix `L(q)` with `L(q)·v = q ⊗ v` for `v` as a column `[w, x, y, z]`.
    pub fn left_matrix(self) -> [[f64; 4]; 4] {
        let Quaternion { w, x, y, z } = self;
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    }
}

/// The Hamilton product `p ⊗ q`.
#[inline]
pub fn hamilton_product(p: Quaternion, q: Quaternion) -> Quaternion {
    Quaternion {
        w: p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        x: p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        y: p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        z: p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        hamilton_product(self, rhs)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;

    fn add(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(self.w + rhs.w, self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Quaternion {
    fn add_assign(&mut self, rhs: Quaternion) {
        *self = *self + rhs;
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;

    fn sub(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(self.w - rhs.w, self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:+}i {:+}j {:+}k", self.w, self.x, self.y, self.z)
    }
}

/// Dense row-major real matrix. Only what the block representation and the
/// real-valued layers need.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RealMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = RealMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> RealMatrix {
        let mut out = RealMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A quaternion-valued array stored as four real planes (W, X, Y, Z) of one
/// shape, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuatTensor {
    shape: Vec<usize>,
    planes: [Vec<f64>; 4],
}

impl QuatTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        QuatTensor {
            shape: shape.to_vec(),
            planes: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_planes(shape: &[usize], planes: [Vec<f64>; 4]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if let Some(k) = planes.iter().position(|p| p.len() != n) {
            return Err(Error::shape(format!(
                "plane {k} has {} elements, shape {shape:?} needs {n}",
                planes[k].len()
            )));
        }
        Ok(QuatTensor { shape: shape.to_vec(), planes })
    }

    pub fn from_quaternions(shape: &[usize], values: &[Quaternion]) -> Result<Self> {
        let mut t = QuatTensor::zeros(shape);
        if values.len() != t.len() {
            return Err(Error::shape(format!(
                "{} quaternions for shape {shape:?}",
                values.len()
            )));
        }
        for (i, q) in values.iter().enumerate() {
            t.set(i, *q);
        }
        Ok(t)
    }

    /// Tensor filled with a constant quaternion.
    pub fn filled(shape: &[usize], q: Quaternion) -> Self {
        let n = shape.iter().product();
        QuatTensor {
            shape: shape.to_vec(),
            planes: [vec![q.w; n], vec![q.x; n], vec![q.y; n], vec![q.z; n]],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Number of quaternion elements.
    pub fn len(&self) -> usize {
        self.planes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        &self.planes[k]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.planes[k]
    }

    pub fn planes(&self) -> &[Vec<f64>; 4] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Vec<f64>; 4] {
        &mut self.planes
    }

    pub fn into_planes(self) -> [Vec<f64>; 4] {
        self.planes
    }

    #[inline]
    pub fn get(&self, i: usize) -> Quaternion {
        Quaternion::new(self.planes[0][i], self.planes[1][i], self.planes[2][i], self.planes[3][i])
    }

    #[inline]
    pub fn set(&mut self, i: usize, q: Quaternion) {
        self.planes[0][i] = q.w;
        self.planes[1][i] = q.x;
        self.planes[2][i] = q.y;
        self.planes[3][i] = q.z;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, q: Quaternion) {
        self.planes[0][i] += q.w;
        self.planes[1][i] += q.x;
        self.planes[2][i] += q.y;
        self.planes[3][i] += q.z;
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn at(&self, index: &[usize]) -> Quaternion {
        self.get(self.offset(index))
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map_planes(&self, f: impl Fn(f64) -> f64) -> Self {
        QuatTensor {
            shape: self.shape.clone(),
            planes: self.planes.clone().map(|p| p.into_iter().map(&f).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &QuatTensor) -> f64 {
        self.planes
            .iter()
            .zip(&other.planes)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &QuatTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.planes.iter_mut().zip(&other.planes) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Interleaved component stack `[w0, x0, y0, z0, w1, ...]`.
    pub fn to_interleaved(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.get(i).to_array()).collect()
    }

    /// Component stack `[W plane, X plane, Y plane, Z plane]`.
    pub fn to_stacked(&self) -> Vec<f64> {
        self.planes.concat()
    }
}

/// Real block representation of a quaternion matrix `[out, in]`.
///
/// The result is `[4·out, 4·in]` laid out plane-major, so that multiplying it
/// with the stacked vector `[v_W; v_X; v_Y; v_Z]` yields the stacked
/// components of `W ⊗ v`.
pub fn to_real_block(weights: &QuatTensor) -> Result<RealMatrix> {
    let &[out, inp] = weights.shape() else {
        return Err(Error::shape(format!(
            "to_real_block needs a 2-D quaternion matrix, got shape {:?}",
            weights.shape()
        )));
    };
    let mut m = RealMatrix::zeros(4 * out, 4 * inp);
    for o in 0..out {
        for i in 0..inp {
            let block = weights.get(o * inp + i).left_matrix();
            for (a, row) in block.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    m.set(a * out + o, b * inp + i, v);
                }
            }
        }
    }
    Ok(m)
}

/// Hamilton matrix-vector product `W ⊗ v` for `W: [out, in]`, `v: [in]`.
pub fn hamilton_matvec(weights: &QuatTensor, v: &QuatTensor) -> Result<QuatTensor> {
    let &[out, inp] = weights.shape() else {
        return Err(Error::shape(format!("weights must be 2-D, got {:?}", weights.shape())));
    };
    if v.shape() != [inp] {
        return Err(Error::shape(format!(
            "weights are [{out}, {inp}] but vector has shape {:?}",
            v.shape()
        )));
    }
    let mut y = QuatTensor::zeros(&[out]);
    for o in 0..out {
        let mut acc = Quaternion::ZERO;
        for i in 0..inp {
            acc += weights.get(o * inp + i) * v.get(i);
        }
        y.set(o, acc);
    }
    Ok(y)
}

/// Hamilton matrix-matrix product `A ⊗ B` for `A: [m, k]`, `B: [k, n]`.
pub fn hamilton_matmul(a: &QuatTensor, b: &QuatTensor) -> Result<QuatTensor> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::shape("hamilton_matmul needs 2-D operands"));
    };
    if k != k2 {
        return Err(Error::shape(format!("inner dimensions differ: {k} vs {k2}")));
    }
    let mut c = QuatTensor::zeros(&[m, n]);
    for r in 0..m {
        for col in 0..n {
            let mut acc = Quaternion::ZERO;
            for t in 0..k {
                acc += a.get(r * k + t) * b.get(t * n + col);
            }
            c.set(r * n + col, acc);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_neutral() {
        let q = Quaternion::new(0.3, -1.2, 4.0, 2.5);
        assert_eq!(Quaternion::ONE * q, q);
        assert_eq!(q * Quaternion::ONE, q);
    }

    #[test]
    fn basis_products() {
        assert_eq!(Quaternion::I * Quaternion::J, Quaternion::K);
        assert_eq!(Quaternion::J * Quaternion::I, -Quaternion::K);
        assert_eq!(Quaternion::J * Quaternion::K, Quaternion::I);
        assert_eq!(Quaternion::K * Quaternion::I, Quaternion::J);
        assert_eq!(Quaternion::I * Quaternion::I, -Quaternion::ONE);
    }

    #[test]
    fn worked_product() {
        let p = Quaternion::new(1.0, 2.0, 3.0, 4.0);
        let q = Quaternion::new(5.0, 6.0, 7.0, 8.0);
        let r = p * q;
        assert_eq!(r, Quaternion::new(-60.0, 12.0, 30.0, 24.0));
        assert_eq!(r.norm_sqr(), 5220.0);
        assert_eq!(p.norm_sqr() * q.norm_sqr(), 5220.0);
    }

    #[test]
    fn conjugate_and_norm_cases() {
        assert_eq!(Quaternion::ONE.conjugate_and_norm(), (Quaternion::ONE, 1.0));
        assert_eq!(
            Quaternion::new(0.0, 3.0, 0.0, 4.0).conjugate_and_norm(),
            (Quaternion::new(0.0, -3.0, 0.0, -4.0), 5.0)
        );
        assert_eq!(
            Quaternion::new(1.0, 1.0, 1.0, 1.0).conjugate_and_norm(),
            (Quaternion::new(1.0, -1.0, -1.0, -1.0), 2.0)
        );
        let q = Quaternion::new(0.5, -2.0, 1.5, 3.0);
        let p = q * q.conjugate();
        assert_eq!(p, Quaternion::new(q.norm_sqr(), 0.0, 0.0, 0.0));
    }

    #[test]
    fn block_of_identity_and_i() {
        let one = QuatTensor::from_quaternions(&[1, 1], &[Quaternion::ONE]).unwrap();
        assert_eq!(to_real_block(&one).unwrap(), RealMatrix::identity(4));

        let i = QuatTensor::from_quaternions(&[1, 1], &[Quaternion::I]).unwrap();
        let block = to_real_block(&i).unwrap();
        // columns are images of the basis quaternions
        let basis = [Quaternion::ONE, Quaternion::I, Quaternion::J, Quaternion::K];
        for (c, e) in basis.iter().enumerate() {
            let img = (Quaternion::I * *e).to_array();
            for r in 0..4 {
                assert_eq!(block.get(r, c), img[r]);
            }
        }
        // (w,x,y,z) -> (-x, w, -z, y)
        let v = block.matvec(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v, vec![-2.0, 1.0, -4.0, 3.0]);
    }

    #[test]
    fn block_rejects_non_matrix() {
        assert!(to_real_block(&QuatTensor::zeros(&[3])).is_err());
        assert!(to_real_block(&QuatTensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn from_planes_checks_lengths() {
        let err = QuatTensor::from_planes(&[2, 2], [vec![0.0; 4], vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]]);
        assert!(err.is_err());
    }
}
