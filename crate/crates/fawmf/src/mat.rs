//! Small dense containers used throughout the crate.
//!
//! Everything here is a flat `Vec<f64>` with row-major indexing; the hot
//! loops hand out row slices and iterate those directly.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Parallel-friendly view: disjoint mutable row slices.
    pub fn par_rows_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        use rayon::prelude::*;
        self.data.par_chunks_mut(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Dense rank-3 tensor, innermost dimension contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    d0: usize,
    d1: usize,
    d2: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Tensor3 {
            d0,
            d1,
            d2,
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d0, self.d1, self.d2)
    }

    /// Innermost vector at `[a][b]`.
    #[inline]
    pub fn at(&self, a: usize, b: usize) -> &[f64] {
        let start = (a * self.d1 + b) * self.d2;
        &self.data[start..start + self.d2]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, b: usize) -> &mut [f64] {
        let start = (a * self.d1 + b) * self.d2;
        &mut self.data[start..start + self.d2]
    }

    /// Copy the vector at `[a][b]` into `[b][a]`. Used to mirror symmetric
    /// reductions so both triangles hold bit-identical values.
    pub fn mirror(&mut self, a: usize, b: usize) {
        let src = (a * self.d1 + b) * self.d2;
        let dst = (b * self.d1 + a) * self.d2;
        let (lo, hi) = if src < dst { (src, dst) } else { (dst, src) };
        let (head, tail) = self.data.split_at_mut(hi);
        if src < dst {
            tail[..self.d2].copy_from_slice(&head[lo..lo + self.d2]);
        } else {
            head[lo..lo + self.d2].copy_from_slice(&tail[..self.d2]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Plain inner product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += scale * x`.
#[inline]
pub fn axpy(scale: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_rows_are_disjoint_slices() {
        let mut m = Mat::zeros(3, 2);
        m.row_mut(1).copy_from_slice(&[1.0, 2.0]);
        assert_eq!(m.row(0), &[0.0, 0.0]);
        assert_eq!(m.row(1), &[1.0, 2.0]);
        assert_eq!(m.get(1, 1), 2.0);
    }

    #[test]
    fn tensor_mirror_copies_exactly() {
        let mut t = Tensor3::zeros(2, 2, 3);
        t.at_mut(0, 1).copy_from_slice(&[1.5, -2.5, 3.25]);
        t.mirror(0, 1);
        assert_eq!(t.at(1, 0), t.at(0, 1));
    }

    #[test]
    fn dot_and_axpy() {
        let a = [1.0, 2.0, 3.0];
        let mut y = [1.0, 1.0, 1.0];
        assert_eq!(dot(&a, &a), 14.0);
        axpy(2.0, &a, &mut y);
        assert_eq!(y, [3.0, 5.0, 7.0]);
    }
}
