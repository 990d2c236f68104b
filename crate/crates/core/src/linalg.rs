//! Small dense complex linear algebra on fixed-size arrays.
//!
//! The model only ever needs 6×6 (and occasionally 2×2) systems, so a
//! stack-allocated LU with partial pivoting is both simpler and faster
//! than a general matrix library.

use num_complex::Complex64 as C64;

pub type Mat<const N: usize> = [[C64; N]; N];

pub fn zeros<const N: usize>() -> Mat<N> {
    [[C64::new(0.0, 0.0); N]; N]
}

pub fn identity<const N: usize>() -> Mat<N> {
    let mut m = zeros::<N>();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = C64::new(1.0, 0.0);
    }
    m
}

pub fn matmul<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> Mat<N> {
    let mut c = zeros::<N>();
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            if aik == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..N {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn frobenius<const N: usize>(a: &Mat<N>) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// LU factorisation `P·A = L·U` with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<const N: usize> {
    lu: Mat<N>,
    perm: [usize; N],
    sign: f64,
}

impl<const N: usize> Lu<N> {
    /// Factorises `a`. Returns `None` only if an exactly zero pivot is met.
    pub fn factor(mut a: Mat<N>) -> Option<Self> {
        let mut perm = [0usize; N];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        let mut sign = 1.0;
        for k in 0..N {
            let mut p = k;
            let mut best = a[k][k].norm();
            for (i, row) in a.iter().enumerate().skip(k + 1) {
                let v = row[k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return None;
            }
            if p != k {
                a.swap(p, k);
                perm.swap(p, k);
                sign = -sign;
            }
            let inv = a[k][k].inv();
            for i in k + 1..N {
                let f = a[i][k] * inv;
                a[i][k] = f;
                if f != C64::new(0.0, 0.0) {
                    for j in k + 1..N {
                        let t = a[k][j];
                        a[i][j] -= f * t;
                    }
                }
            }
        }
        Some(Lu { lu: a, perm, sign })
    }

    pub fn det(&self) -> C64 {
        let mut d = C64::new(self.sign, 0.0);
        for i in 0..N {
            d *= self.lu[i][i];
        }
        d
    }

    /// Ratio of the smallest to the largest pivot magnitude; a cheap
    /// conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..N {
            let v = self.lu[i][i].norm();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        lo / hi
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &[C64; N]) -> [C64; N] {
        let mut x = [C64::new(0.0, 0.0); N];
        for i in 0..N {
            x[i] = b[self.perm[i]];
        }
        for i in 0..N {
            for j in 0..i {
                let t = self.lu[i][j] * x[j];
                x[i] -= t;
            }
        }
        for i in (0..N).rev() {
            for j in i + 1..N {
                let t = self.lu[i][j] * x[j];
                x[i] -= t;
            }
            x[i] /= self.lu[i][i];
        }
        x
    }

    /// Solves `Aᵀ·x = b` (plain transpose, no conjugation).
    pub fn solve_transposed(&self, b: &[C64; N]) -> [C64; N] {
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, Lᵀ y = z, then x = Pᵀ y.
        let mut z = *b;
        for i in 0..N {
            for j in 0..i {
                let t = self.lu[j][i] * z[j];
                z[i] -= t;
            }
            z[i] /= self.lu[i][i];
        }
        for i in (0..N).rev() {
            for j in i + 1..N {
                let t = self.lu[j][i] * z[j];
                z[i] -= t;
            }
        }
        let mut x = [C64::new(0.0, 0.0); N];
        for i in 0..N {
            x[self.perm[i]] = z[i];
        }
        x
    }

    pub fn inverse(&self) -> Mat<N> {
        let mut inv = zeros::<N>();
        for j in 0..N {
            let mut e = [C64::new(0.0, 0.0); N];
            e[j] = C64::new(1.0, 0.0);
            let col = self.solve(&e);
            for i in 0..N {
                inv[i][j] = col[i];
            }
        }
        inv
    }
}

pub fn det<const N: usize>(a: Mat<N>) -> C64 {
    Lu::factor(a).map(|lu| lu.det()).unwrap_or(C64::new(0.0, 0.0))
}
