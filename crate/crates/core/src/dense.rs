//! Dense Cholesky kernels on row-major storage with exact flop counts.
//!
//! Matrices are `n x n` row-major; only the lower triangle is read or written.

/// Failure of a factorization at a given pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
    pub value: f64,
}

const NB: usize = 96;
const COL_CHUNK: usize = 256;
const MR: usize = 4;
const NR: usize = 8;

#[inline(always)]
fn fmadd(a: f64, b: f64, c: f64) -> f64 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, c)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        a * b + c
    }
}

fn max_diagonal(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max)
}

/// In-place Cholesky factorization `A = L L^T`. Fails when a pivot drops to
/// `rel_tol * max_i A_ii` or below. Returns the flop count, which always
/// equals [`crate::flops::dense_cholesky_flops`]`(n)` on success.
pub fn cholesky_in_place(a: &mut [f64], n: usize, rel_tol: f64) -> Result<u64, PivotFailure> {
    assert_eq!(a.len(), n * n);
    let floor = rel_tol * max_diagonal(a, n);
    if n <= 2 * NB {
        return unblocked(a, n, 0, n, floor);
    }
    let mut flops = 0u64;
    let mut panel_t = Vec::new();
    let mut kb = 0;
    while kb < n {
        let kend = (kb + NB).min(n);
        flops += unblocked(a, n, kb, kend, floor)?;
        if kend == n {
            break;
        }
        flops += panel_solve(a, n, kb, kend);
        flops += trailing_update(a, n, kb, kend, &mut panel_t);
        kb = kend;
    }
    Ok(flops)
}

/// Factors the diagonal block `[kb, kend)`; earlier columns are already
/// folded in by previous trailing updates.
fn unblocked(a: &mut [f64], n: usize, kb: usize, kend: usize, floor: f64) -> Result<u64, PivotFailure> {
    let mut flops = 0u64;
    for i in kb..kend {
        for j in kb..=i {
            let mut s = a[i * n + j];
            let (ri, rj) = (i * n, j * n);
            for t in kb..j {
                s -= a[ri + t] * a[rj + t];
            }
            flops += 2 * (j - kb) as u64;
            if i == j {
                if !(s > floor) {
                    return Err(PivotFailure { index: i, value: s });
                }
                a[ri + i] = s.sqrt();
            } else {
                a[ri + j] = s / a[rj + j];
            }
            flops += 1;
        }
    }
    Ok(flops)
}

/// Rows below the diagonal block: `A[i, kb..kend] <- A[i, kb..kend] L_kk^{-T}`.
fn panel_solve(a: &mut [f64], n: usize, kb: usize, kend: usize) -> u64 {
    let bs = kend - kb;
    let mut diag = vec![0.0; bs * bs];
    for r in 0..bs {
        diag[r * bs..r * bs + r + 1].copy_from_slice(&a[(kb + r) * n + kb..(kb + r) * n + kb + r + 1]);
    }
    for i in kend..n {
        let row = &mut a[i * n + kb..i * n + kend];
        for j in 0..bs {
            let mut s = row[j];
            let lj = &diag[j * bs..j * bs + j];
            for t in 0..j {
                s -= row[t] * lj[t];
            }
            row[j] = s / diag[j * bs + j];
        }
    }
    let m = (n - kend) as u64;
    let bs = bs as u64;
    m * (bs * (bs - 1) + bs)
}

/// `C <- C - P P^T` on the lower triangle of the trailing matrix, where `P`
/// is the solved panel `A[kend.., kb..kend]`.
fn trailing_update(a: &mut [f64], n: usize, kb: usize, kend: usize, panel_t: &mut Vec<f64>) -> u64 {
    let bs = kend - kb;
    let m = n - kend;
    // transposed copy: panel_t[t * m + r] = A[kend + r, kb + t]
    panel_t.clear();
    panel_t.resize(bs * m, 0.0);
    for r in 0..m {
        let row = &a[(kend + r) * n + kb..(kend + r) * n + kend];
        for t in 0..bs {
            panel_t[t * m + r] = row[t];
        }
    }
    let mut jc = 0;
    while jc < m {
        let jc_end = (jc + COL_CHUNK).min(m);
        // rows whose lower triangle intersects columns [jc, jc_end)
        let mut i0 = jc;
        while i0 < m {
            let i1 = (i0 + MR).min(m);
            let mut j0 = jc;
            while j0 < jc_end && j0 < i1 {
                let j1 = (j0 + NR).min(jc_end);
                if i1 - i0 == MR && j1 - j0 == NR {
                    tile_full(a, n, kb, kend, panel_t, m, i0, j0);
                } else {
                    tile_edge(a, n, kb, kend, panel_t, m, i0, i1, j0, j1);
                }
                j0 = j1;
            }
            i0 = i1;
        }
        jc = jc_end;
    }
    // one multiply-add per (i, j, t) with j <= i
    let pairs = (m * (m + 1) / 2) as u64;
    2 * pairs * bs as u64
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile_full(a: &mut [f64], n: usize, kb: usize, kend: usize, pt: &[f64], m: usize, i0: usize, j0: usize) {
    let bs = kend - kb;
    let mut acc = [[0.0f64; NR]; MR];
    let r0 = (kend + i0) * n + kb;
    let rows: [&[f64]; MR] = [
        &a[r0..r0 + bs],
        &a[r0 + n..r0 + n + bs],
        &a[r0 + 2 * n..r0 + 2 * n + bs],
        &a[r0 + 3 * n..r0 + 3 * n + bs],
    ];
    for t in 0..bs {
        let b: &[f64; NR] = pt[t * m + j0..t * m + j0 + NR].try_into().unwrap();
        for r in 0..MR {
            let av = rows[r][t];
            for c in 0..NR {
                acc[r][c] = fmadd(av, b[c], acc[r][c]);
            }
        }
    }
    for r in 0..MR {
        let i = i0 + r;
        let base = (kend + i) * n + kend;
        for c in 0..NR {
            let j = j0 + c;
            if j <= i {
                a[base + j] -= acc[r][c];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn tile_edge(
    a: &mut [f64],
    n: usize,
    kb: usize,
    kend: usize,
    pt: &[f64],
    m: usize,
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
) {
    let bs = kend - kb;
    for i in i0..i1 {
        let row = (kend + i) * n;
        for j in j0..j1.min(i + 1) {
            let mut s = 0.0;
            for t in 0..bs {
                s = fmadd(a[row + kb + t], pt[t * m + j], s);
            }
            a[row + kend + j] -= s;
        }
    }
}

/// Solves `L y = b` in place.
pub fn forward_substitution(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let mut s = b[i];
        for (lij, bj) in row.iter().zip(&b[..i]) {
            s -= lij * bj;
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = y` in place.
pub fn backward_substitution(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let xi = b[i] / l[i * n + i];
        b[i] = xi;
        let row = &l[i * n..i * n + i];
        for (bj, lij) in b[..i].iter_mut().zip(row) {
            *bj -= lij * xi;
        }
    }
}

/// Solves `L W = B` for `W` where `B` is `n x k` row-major, in place.
pub fn forward_substitution_multi(l: &[f64], n: usize, b: &mut [f64], k: usize) {
    for i in 0..n {
        for j in 0..i {
            let lij = l[i * n + j];
            if lij != 0.0 {
                let (head, tail) = b.split_at_mut(i * k);
                let src = &head[j * k..(j + 1) * k];
                for (d, s) in tail[..k].iter_mut().zip(src) {
                    *d -= lij * s;
                }
            }
        }
        let d = l[i * n + i];
        for v in &mut b[i * k..(i + 1) * k] {
            *v /= d;
        }
    }
}
