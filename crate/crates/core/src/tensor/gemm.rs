use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// Column block width of the plain kernel: a K×COL_BLOCK slab of B stays
/// cache resident while every row of C is updated against it.
const COL_BLOCK: usize = 512;
const ROW_GROUP: usize = 4;
const LANES: usize = 8;
/// Inner-dimension block of the transposed kernel; a multiple of LANES so
/// lane assignment is the same as in one unblocked pass.
const K_BLOCK: usize = 2048;
/// Rows of B handled by one work item of the transposed kernel.
const B_ROWS: usize = 16;
/// Below this many multiply-adds the kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;

/// `C ← alpha·A·B + beta·C` on 2-D tensors.
pub fn gemm(a: &Tensor, b: &Tensor, alpha: f32, beta: f32, c: &mut Tensor) -> Result<()> {
    let (m, k) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    let (cm, cn) = c.dims2()?;
    if k != kb || cm != m || cn != n {
        return Err(Error::dim(format!(
            "gemm shapes do not agree: A {:?} · B {:?} into C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    gemm_slices(
        Transpose::No,
        Transpose::No,
        m,
        n,
        k,
        alpha,
        a.data(),
        b.data(),
        beta,
        c.data_mut(),
    );
    Ok(())
}

/// Raw GEMM on row-major slices. `A` is logically M×K (stored K×M when
/// transposed), `B` is logically K×N (stored N×K when transposed).
///
/// Each output element is accumulated in a fixed order that depends only on
/// K, so results do not change with thread count or with how many other
/// rows/columns share the call.
#[allow(clippy::too_many_arguments)]
pub fn gemm_slices(
    trans_a: Transpose,
    trans_b: Transpose,
    m: usize,
    n: usize,
    k: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k, "A has wrong length");
    assert_eq!(b.len(), k * n, "B has wrong length");
    assert_eq!(c.len(), m * n, "C has wrong length");
    if m == 0 || n == 0 {
        return;
    }

    let transposed;
    let a = match trans_a {
        Transpose::No => a,
        Transpose::Yes => {
            transposed = transpose(a, k, m);
            &transposed[..]
        }
    };
    let parallel = m * n * k >= PAR_THRESHOLD;
    match trans_b {
        Transpose::No => gemm_nn(n, k, alpha, a, b, beta, c, parallel),
        Transpose::Yes => gemm_nt(n, k, alpha, a, b, beta, c, parallel),
    }
}

fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for (cidx, &v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
            out[cidx * rows + r] = v;
        }
    }
    out
}

/// Runs `work` over `items`, in parallel when asked; output order follows
/// `items` either way.
fn map_blocks<T, F>(items: Vec<(usize, usize)>, parallel: bool, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(&(usize, usize)) -> T + Sync + Send,
{
    if parallel {
        items.par_iter().map(work).collect()
    } else {
        items.iter().map(work).collect()
    }
}

fn blocks(len: usize, step: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(step)
        .map(|s| (s, (s + step).min(len)))
        .collect()
}

/// Per element: start from `beta·c` (or 0 when beta is 0), then add
/// `(alpha·a[r,p])·b[p,j]` for p ascending. The column block of B is packed
/// into LANES-wide strips so a ROW_GROUP×LANES tile of C stays in registers
/// for the whole p loop.
#[allow(clippy::too_many_arguments)]
fn gemm_nn(
    n: usize,
    k: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
    parallel: bool,
) {
    let m = c.len() / n;
    let c_in: &[f32] = c;
    let tiles = map_blocks(blocks(n, COL_BLOCK), parallel, |&(j0, j1)| {
        let bw = j1 - j0;
        let strips = bw.div_ceil(LANES);
        let mut packed = vec![0.0f32; strips * k * LANES];
        for (s, strip) in packed.chunks_exact_mut(k * LANES).enumerate() {
            let c0 = j0 + s * LANES;
            let cols = (j1 - c0).min(LANES);
            for (p, dst) in strip.chunks_exact_mut(LANES).enumerate() {
                dst[..cols].copy_from_slice(&b[p * n + c0..p * n + c0 + cols]);
            }
        }
        let mut tile = vec![0.0f32; m * bw];
        let mut coefs = vec![[0.0f32; ROW_GROUP]; k];
        for g0 in (0..m).step_by(ROW_GROUP) {
            let rows = (m - g0).min(ROW_GROUP);
            for (p, co) in coefs.iter_mut().enumerate() {
                for (r, v) in co.iter_mut().enumerate() {
                    *v = if r < rows {
                        alpha * a[(g0 + r) * k + p]
                    } else {
                        0.0
                    };
                }
            }
            for s in 0..strips {
                let cols = (bw - s * LANES).min(LANES);
                let mut acc = [[0.0f32; LANES]; ROW_GROUP];
                if beta != 0.0 {
                    for (r, accr) in acc.iter_mut().enumerate().take(rows) {
                        let src = &c_in[(g0 + r) * n + j0 + s * LANES..][..cols];
                        for (t, &v) in accr.iter_mut().zip(src) {
                            *t = if beta == 1.0 { v } else { v * beta };
                        }
                    }
                }
                let strip = &packed[s * k * LANES..(s + 1) * k * LANES];
                microkernel(&mut acc, strip, &coefs);
                for (r, accr) in acc.iter().enumerate().take(rows) {
                    tile[(g0 + r) * bw + s * LANES..][..cols].copy_from_slice(&accr[..cols]);
                }
            }
        }
        tile
    });
    for (&(j0, j1), tile) in blocks(n, COL_BLOCK).iter().zip(tiles) {
        let bw = j1 - j0;
        for r in 0..m {
            c[r * n + j0..r * n + j1].copy_from_slice(&tile[r * bw..(r + 1) * bw]);
        }
    }
}

/// `acc[r] += coefs[p][r]·strip[p]` for p ascending.
#[inline(never)]
fn microkernel(acc: &mut [[f32; LANES]; ROW_GROUP], strip: &[f32], coefs: &[[f32; ROW_GROUP]]) {
    let [mut r0, mut r1, mut r2, mut r3] = *acc;
    for (bv, co) in strip.chunks_exact(LANES).zip(coefs) {
        let bv: &[f32; LANES] = bv.try_into().expect("full strip");
        for l in 0..LANES {
            r0[l] += co[0] * bv[l];
            r1[l] += co[1] * bv[l];
            r2[l] += co[2] * bv[l];
            r3[l] += co[3] * bv[l];
        }
    }
    *acc = [r0, r1, r2, r3];
}

#[inline]
fn lanes_add(acc: &mut [f32; LANES], x: &[f32], y: &[f32]) {
    for (xs, ys) in x.chunks_exact(LANES).zip(y.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += xs[l] * ys[l];
        }
    }
}

/// `lanes_add` for four rows of A against one row of B.
#[inline]
fn lanes_add4(acc: &mut [[f32; LANES]], a: [&[f32]; 4], y: &[f32]) {
    let acc: &mut [[f32; LANES]; 4] = acc.try_into().expect("four accumulators");
    for (ch, ys) in y.chunks_exact(LANES).enumerate() {
        let ys: &[f32; LANES] = ys.try_into().expect("full chunk");
        for (r, row) in a.iter().enumerate() {
            let xs: &[f32; LANES] = row[ch * LANES..(ch + 1) * LANES]
                .try_into()
                .expect("full chunk");
            for l in 0..LANES {
                acc[r][l] += xs[l] * ys[l];
            }
        }
    }
}

#[inline]
fn lanes_finish(acc: &[f32; LANES], tail: f32) -> f32 {
    let pair = [
        acc[0] + acc[4],
        acc[1] + acc[5],
        acc[2] + acc[6],
        acc[3] + acc[7],
    ];
    (pair[0] + pair[2]) + (pair[1] + pair[3]) + tail
}

/// `C[i,j] = alpha·dot(A_i, B_j) (+ beta·C[i,j])`. The inner dimension is
/// walked in blocks with the partial sums carried across, which yields the
/// same value as one unblocked eight-lane dot product while every block of A is reused for B_ROWS rows
/// of B.
#[allow(clippy::too_many_arguments)]
fn gemm_nt(
    n: usize,
    k: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
    parallel: bool,
) {
    let m = c.len() / n;
    let full = k / LANES * LANES;
    let parts = map_blocks(blocks(n, B_ROWS), parallel, |&(j0, j1)| {
        let jn = j1 - j0;
        let mut acc = vec![[0.0f32; LANES]; jn * m];
        for (p0, p1) in blocks(full, K_BLOCK) {
            for (jj, j) in (j0..j1).enumerate() {
                let brow = &b[j * k + p0..j * k + p1];
                let row = |i: usize| &a[i * k + p0..i * k + p1];
                let quads = m / 4 * 4;
                for i in (0..quads).step_by(4) {
                    let rows = [row(i), row(i + 1), row(i + 2), row(i + 3)];
                    lanes_add4(&mut acc[jj * m + i..jj * m + i + 4], rows, brow);
                }
                for i in quads..m {
                    lanes_add(&mut acc[jj * m + i], row(i), brow);
                }
            }
        }
        let mut out = Vec::with_capacity(jn * m);
        for (jj, j) in (j0..j1).enumerate() {
            let btail = &b[j * k + full..(j + 1) * k];
            for i in 0..m {
                let atail = &a[i * k + full..(i + 1) * k];
                let tail = atail.iter().zip(btail).fold(0.0, |t, (x, y)| t + x * y);
                out.push(lanes_finish(&acc[jj * m + i], tail));
            }
        }
        out
    });
    for (&(j0, j1), part) in blocks(n, B_ROWS).iter().zip(parts) {
        for (jj, j) in (j0..j1).enumerate() {
            for i in 0..m {
                let d = alpha * part[jj * m + i];
                let cv = &mut c[i * n + j];
                *cv = if beta == 0.0 { d } else { beta * *cv + d };
            }
        }
    }
}
