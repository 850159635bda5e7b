//! Symmetric profile (skyline) storage with an in-place LDL' factorization.
//!
//! Each column `j` stores the contiguous entries from its first nonzero row
//! `first[j]` up to the diagonal. The factorization is the classic active
//! column scheme; it fails with a named dof when a pivot loses positivity,
//! which doubles as the positive-definiteness check for assembled systems.

// Column arithmetic is clearest with explicit index loops.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use std::sync::Arc;

/// Dot product with four independent accumulators. The factorization spends
/// nearly all its time here; independent partial sums break the FMA latency
/// chain while keeping a fixed, deterministic summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ita = a.chunks_exact(8);
    let mut itb = b.chunks_exact(8);
    for (ca, cb) in (&mut ita).zip(&mut itb) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ita.remainder().iter().zip(itb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Sparsity profile of a symmetric matrix, shareable between many matrices
/// with identical structure.
#[derive(Debug)]
pub struct Profile {
    pub n: usize,
    /// First stored row of each column, `first[j] <= j`.
    pub first: Vec<usize>,
    /// Offset of entry `(first[j], j)` in packed storage; `col_ptr[n]` is the
    /// total length.
    pub col_ptr: Vec<usize>,
}

impl Profile {
    /// Build from the first coupled row of every column.
    pub fn new(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for (j, &f) in first.iter().enumerate() {
            debug_assert!(f <= j);
            col_ptr.push(total);
            total += j - f + 1;
        }
        col_ptr.push(total);
        Profile { n, first, col_ptr }
    }

    /// Packed index of entry `(i, j)` with `first[j] <= i <= j`.
    #[inline]
    pub fn pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.first[j] <= i && i <= j);
        self.col_ptr[j] + (i - self.first[j])
    }

    pub fn len(&self) -> usize {
        self.col_ptr[self.n]
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Symmetric matrix in skyline storage. After [`SkylineMatrix::factorize`]
/// the values hold the LDL' factor in place.
#[derive(Debug)]
pub struct SkylineMatrix {
    pub profile: Arc<Profile>,
    pub vals: Vec<f64>,
    factored: bool,
}

impl SkylineMatrix {
    pub fn zeros(profile: Arc<Profile>) -> Self {
        let len = profile.len();
        SkylineMatrix {
            profile,
            vals: vec![0.0; len],
            factored: false,
        }
    }

    /// Reset all values to zero for reassembly with the same structure.
    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.profile.pos(i, j);
        self.vals[idx] += v;
    }

    /// In-place LDL' factorization (active column scheme). Off-diagonal
    /// storage becomes `L`, diagonals become `D`. Fails naming the dof whose
    /// pivot is non-positive or non-finite.
    pub fn factorize(&mut self) -> Result<()> {
        assert!(!self.factored, "matrix already factored");
        let p = &*self.profile;
        let n = p.n;
        for j in 0..n {
            let mj = p.first[j];
            let cj = p.col_ptr[j];
            // Columns before j are finished factor columns; column j is the
            // active one. Split so both can be viewed at once.
            let (done, active) = self.vals.split_at_mut(cj);
            // Reduce column j against preceding columns.
            for i in (mj + 1)..j {
                let mi = p.first[i];
                let r0 = mi.max(mj);
                if r0 < i {
                    let ci = p.col_ptr[i];
                    let len = i - r0;
                    let s = dot(
                        &done[ci + (r0 - mi)..ci + (r0 - mi) + len],
                        &active[r0 - mj..r0 - mj + len],
                    );
                    active[i - mj] -= s;
                }
            }
            // Scale by preceding pivots and accumulate the new pivot.
            let mut djj = active[j - mj];
            for i in mj..j {
                let g = active[i - mj];
                let l = g / done[p.pos(i, i)];
                djj -= g * l;
                active[i - mj] = l;
            }
            if !(djj.is_finite() && djj > 0.0) {
                return Err(Error::Singular(format!(
                    "non-positive pivot {djj:.3e} at reduced dof {j} of {n}"
                )));
            }
            active[j - mj] = djj;
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A x = b` in place using the factor.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert!(self.factored, "solve before factorize");
        let p = &*self.profile;
        let n = p.n;
        assert_eq!(x.len(), n);
        // Forward: overwrite x with L^-1 b, column-oriented dot products.
        for j in 0..n {
            let mj = p.first[j];
            if mj < j {
                let cj = p.col_ptr[j];
                x[j] -= dot(&self.vals[cj..cj + (j - mj)], &x[mj..j]);
            }
        }
        // Diagonal scaling.
        for j in 0..n {
            x[j] /= self.vals[p.pos(j, j)];
        }
        // Backward: x <- L^-T x, column-oriented axpy.
        for j in (0..n).rev() {
            let mj = p.first[j];
            if mj < j {
                let cj = p.col_ptr[j];
                let xj = x[j];
                for (k, xv) in x[mj..j].iter_mut().enumerate() {
                    *xv -= self.vals[cj + k] * xj;
                }
            }
        }
    }

    /// Matrix-vector product using the unfactored values.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert!(!self.factored, "matvec needs unfactored values");
        let p = &*self.profile;
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..p.n {
            let mj = p.first[j];
            let cj = p.col_ptr[j];
            let xj = x[j];
            let mut s = self.vals[cj + (j - mj)] * xj;
            for (k, i) in (mj..j).enumerate() {
                let a = self.vals[cj + k];
                y[i] += a * xj;
                s += a * x[i];
            }
            y[j] += s;
        }
    }
}
