//! Linear least-squares detector.
//!
//! Weights minimize `‖X̄w − ȳ‖₂` and are computed from a column-pivoted
//! Householder QR of the widened design matrix. The normal-equation form
//! `(X̄ᵀX̄)⁻¹X̄ᵀȳ` is never formed; its equivalence is checked in tests.

use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::iq::{narrow_predictions, WidenedDataset};
use crate::linalg::{dot, symmetric_eigenvalues, RealMatrix};

/// Diagonal entries of R below this fraction of the largest one count as
/// numerically zero.
pub const RANK_RTOL: f64 = 1e-10;

/// What to do when the design matrix is numerically rank deficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Fail with [`Error::IllConditioned`].
    #[default]
    Reject,
    /// Return the minimum-norm least-squares solution (the pseudo-inverse
    /// solution). Needed for noiseless scenarios with fewer users than
    /// antennas, where the widened design spans only `2K` dimensions.
    MinimumNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlsWeights {
    pub w: Vec<f64>,
    pub user_index: Option<usize>,
    /// Condition number estimate of `X̄ᵀX̄` (may be infinite).
    pub gram_condition: f64,
}

impl LlsWeights {
    pub fn new(w: Vec<f64>) -> Self {
        Self {
            w,
            user_index: None,
            gram_condition: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// The complex filter `g(r) = f(r1) + i f(r2)` for a single receive row.
    pub fn apply_complex(&self, r: &[Complex64]) -> Result<Complex64> {
        let m = r.len();
        if self.w.len() != 2 * m {
            return Err(dim_err(format!(
                "weights have {} entries, receive row needs {}",
                self.w.len(),
                2 * m
            )));
        }
        let (wr, wi) = self.w.split_at(m);
        let mut re = 0.0;
        let mut im = 0.0;
        for (a, z) in r.iter().enumerate() {
            re += wr[a] * z.re + wi[a] * z.im;
            im += wr[a] * z.im - wi[a] * z.re;
        }
        Ok(Complex64::new(re, im))
    }
}

/// Householder QR stored column-major, optionally with column pivoting.
#[derive(Debug, Clone)]
struct HouseholderQr {
    m: usize,
    n: usize,
    /// Column-major; the upper triangle holds R.
    a: Vec<f64>,
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    perm: Vec<usize>,
}

impl HouseholderQr {
    fn new(mut a: Vec<f64>, m: usize, n: usize, pivot: bool) -> Self {
        debug_assert_eq!(a.len(), m * n);
        let steps = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut vs = Vec::with_capacity(steps);
        let mut betas = Vec::with_capacity(steps);
        for k in 0..steps {
            if pivot {
                let mut best = k;
                let mut best_norm = -1.0;
                for j in k..n {
                    let col = &a[j * m + k..(j + 1) * m];
                    let nrm = dot(col, col);
                    if nrm > best_norm {
                        best_norm = nrm;
                        best = j;
                    }
                }
                if best != k {
                    for i in 0..m {
                        a.swap(k * m + i, best * m + i);
                    }
                    perm.swap(k, best);
                }
            }
            let x = &a[k * m + k..(k + 1) * m];
            let normx = dot(x, x).sqrt();
            if normx == 0.0 {
                let mut v = vec![0.0; m - k];
                v[0] = 1.0;
                vs.push(v);
                betas.push(0.0);
                continue;
            }
            let alpha = if x[0] >= 0.0 { -normx } else { normx };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let beta = 2.0 / dot(&v, &v);
            for j in k + 1..n {
                let col = &mut a[j * m + k..(j + 1) * m];
                let s = beta * dot(&v, col);
                for (c, vi) in col.iter_mut().zip(&v) {
                    *c -= s * vi;
                }
            }
            a[k * m + k] = alpha;
            for i in k + 1..m {
                a[k * m + i] = 0.0;
            }
            vs.push(v);
            betas.push(beta);
        }
        Self {
            m,
            n,
            a,
            vs,
            betas,
            perm,
        }
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.m + i]
    }

    fn apply_qt(&self, b: &mut [f64]) {
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            let seg = &mut b[k..];
            let s = beta * dot(v, seg);
            for (x, vi) in seg.iter_mut().zip(v) {
                *x -= s * vi;
            }
        }
    }

    fn apply_q(&self, b: &mut [f64]) {
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate().rev() {
            let seg = &mut b[k..];
            let s = beta * dot(v, seg);
            for (x, vi) in seg.iter_mut().zip(v) {
                *x -= s * vi;
            }
        }
    }
}

/// A factored design matrix, reusable across any number of target vectors.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    qr: HouseholderQr,
    rank: usize,
    gram_condition: f64,
    /// QR of the transposed leading rows of R, present when rank-deficient.
    min_norm: Option<HouseholderQr>,
}

impl LeastSquares {
    pub fn factor(design: &RealMatrix, policy: RankPolicy) -> Result<Self> {
        let (m, n) = design.shape();
        if n == 0 {
            return Err(dim_err("design matrix has no columns"));
        }
        if m < n {
            return Err(dim_err(format!(
                "least squares needs at least {n} rows, got {m}"
            )));
        }
        let mut colmajor = vec![0.0; m * n];
        for (i, row) in design.row_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                colmajor[j * m + i] = v;
            }
        }
        if colmajor.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("design matrix has non-finite entries".into()));
        }
        let qr = HouseholderQr::new(colmajor, m, n, true);

        let r00 = qr.r(0, 0).abs();
        let rank = (0..n)
            .take_while(|&k| r00 > 0.0 && qr.r(k, k).abs() > RANK_RTOL * r00)
            .count();

        // cond(X̄ᵀX̄) from the eigenvalues of RᵀR
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = (0..=i.min(j)).map(|k| qr.r(k, i) * qr.r(k, j)).sum();
            }
        }
        let ev = symmetric_eigenvalues(gram, n);
        let gram_condition = if ev[0] > 0.0 {
            ev[n - 1] / ev[0]
        } else {
            f64::INFINITY
        };

        let min_norm = if rank < n {
            match policy {
                RankPolicy::Reject => return Err(Error::IllConditioned { gram_condition }),
                RankPolicy::MinimumNorm if rank == 0 => None,
                RankPolicy::MinimumNorm => {
                    // Sᵀ (n×rank) where S = leading `rank` rows of R
                    let mut st = vec![0.0; n * rank];
                    for i in 0..rank {
                        for j in i..n {
                            st[i * n + j] = qr.r(i, j);
                        }
                    }
                    Some(HouseholderQr::new(st, n, rank, false))
                }
            }
        } else {
            None
        };

        Ok(Self {
            qr,
            rank,
            gram_condition,
            min_norm,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    pub fn solve(&self, target: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = (self.qr.m, self.qr.n);
        if target.len() != m {
            return Err(dim_err(format!(
                "design has {m} rows, target has {} entries",
                target.len()
            )));
        }
        let mut c = target.to_vec();
        self.qr.apply_qt(&mut c);

        let mut z = vec![0.0; n];
        if self.rank == n {
            for i in (0..n).rev() {
                let mut s = c[i];
                for j in i + 1..n {
                    s -= self.qr.r(i, j) * z[j];
                }
                z[i] = s / self.qr.r(i, i);
            }
        } else if let Some(q2) = &self.min_norm {
            // R2ᵀ u = c[..rank], then z = Q2 [u; 0]
            let r = self.rank;
            for i in 0..r {
                let mut s = c[i];
                for j in 0..i {
                    s -= q2.r(j, i) * z[j];
                }
                z[i] = s / q2.r(i, i);
            }
            q2.apply_q(&mut z);
        }

        let mut w = vec![0.0; n];
        for (j, &p) in self.qr.perm.iter().enumerate() {
            w[p] = z[j];
        }
        Ok(w)
    }
}

/// Fits one user's weights, rejecting rank-deficient designs.
pub fn fit(train: &WidenedDataset) -> Result<LlsWeights> {
    fit_with(train, RankPolicy::Reject)
}

pub fn fit_with(train: &WidenedDataset, policy: RankPolicy) -> Result<LlsWeights> {
    let targets = train.targets.as_deref().ok_or(Error::EmptyTrainingSet)?;
    let ls = LeastSquares::factor(&train.design, policy)?;
    Ok(LlsWeights {
        w: ls.solve(targets)?,
        user_index: train.user_index,
        gram_condition: ls.gram_condition(),
    })
}

/// Fits several target vectors against one shared design matrix; entry `i`
/// of the result is tagged with user `i + 1`.
pub fn fit_batch(
    design: &RealMatrix,
    targets: &[Vec<f64>],
    policy: RankPolicy,
) -> Result<Vec<LlsWeights>> {
    let ls = LeastSquares::factor(design, policy)?;
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(LlsWeights {
                w: ls.solve(t)?,
                user_index: Some(i + 1),
                gram_condition: ls.gram_condition(),
            })
        })
        .collect()
}

/// Real-valued readout `X̄ w`.
pub fn predict_real(weights: &LlsWeights, design: &RealMatrix) -> Result<Vec<f64>> {
    if design.cols() != weights.w.len() {
        return Err(dim_err(format!(
            "detection data has {} columns, weights have {}",
            design.cols(),
            weights.w.len()
        )));
    }
    design.mat_vec(&weights.w)
}

pub fn predict(weights: &LlsWeights, detect: &WidenedDataset) -> Result<Vec<Complex64>> {
    narrow_predictions(&predict_real(weights, &detect.design)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iq::widen_dataset;
    use crate::linalg::ComplexMatrix;
    use approx::assert_relative_eq;

    fn dataset(rows: usize, cols: usize, data: Vec<f64>, y: Vec<f64>) -> WidenedDataset {
        WidenedDataset {
            design: RealMatrix::from_vec(rows, cols, data).unwrap(),
            targets: Some(y),
            user_index: Some(1),
        }
    }

    #[test]
    fn identity_design_returns_targets() {
        let w = fit(&dataset(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.3, 0.7])).unwrap();
        assert_relative_eq!(w.w[0], 0.3, max_relative = 1e-15);
        assert_relative_eq!(w.w[1], 0.7, max_relative = 1e-15);
        assert_relative_eq!(w.gram_condition, 1.0, max_relative = 1e-12);
        assert_eq!(w.user_index, Some(1));
    }

    #[test]
    fn overdetermined_line_fit() {
        // y = 2x through three points plus a constant column of zeros is
        // rank deficient; with a proper second column it is exact
        let d = dataset(
            3,
            2,
            vec![1.0, 1.0, 2.0, 1.0, 3.0, 1.0],
            vec![3.0, 5.0, 7.0],
        );
        let w = fit(&d).unwrap();
        assert_relative_eq!(w.w[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(w.w[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn rank_deficient_is_rejected_by_default() {
        let d = dataset(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0], vec![1.0, 2.0, 3.0]);
        match fit(&d) {
            Err(Error::IllConditioned { gram_condition }) => assert!(gram_condition > 1e15),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
    }

    #[test]
    fn minimum_norm_on_duplicate_columns() {
        // two identical columns: min-norm splits the weight evenly
        let d = dataset(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0], vec![2.0, 4.0, 6.0]);
        let w = fit_with(&d, RankPolicy::MinimumNorm).unwrap();
        assert_relative_eq!(w.w[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(w.w[1], 1.0, max_relative = 1e-12);
        assert!(w.gram_condition.is_infinite() || w.gram_condition > 1e15);
    }

    #[test]
    fn zero_design_min_norm_is_zero() {
        let d = dataset(3, 2, vec![0.0; 6], vec![1.0, 2.0, 3.0]);
        let w = fit_with(&d, RankPolicy::MinimumNorm).unwrap();
        assert_eq!(w.w, vec![0.0, 0.0]);
    }

    #[test]
    fn too_few_rows_or_targets() {
        let d = dataset(1, 2, vec![1.0, 2.0], vec![1.0]);
        assert!(matches!(fit(&d), Err(Error::Dimension(_))));
        let mut d = dataset(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0]);
        d.targets = None;
        assert!(matches!(fit(&d), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn selector_weight_reads_first_antenna() {
        let x = ComplexMatrix::from_vec(
            2,
            2,
            vec![
                Complex64::new(0.3, -1.2),
                Complex64::new(5.0, 5.0),
                Complex64::new(-2.0, 0.5),
                Complex64::new(1.0, 1.0),
            ],
        )
        .unwrap();
        let det = widen_dataset(&x, None).unwrap();
        let w = LlsWeights::new(vec![1.0, 0.0, 0.0, 0.0]);
        let p = predict(&w, &det).unwrap();
        // r1 · e1 = Re c, r2 · e1 = Im c
        assert_eq!(p, vec![x.get(0, 0), x.get(1, 0)]);
        let zero = LlsWeights::new(vec![0.0; 4]);
        assert!(predict(&zero, &det).unwrap().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        assert!(predict(&LlsWeights::new(vec![1.0; 6]), &det).is_err());
    }

    #[test]
    fn apply_complex_matches_widened_readout() {
        let x = ComplexMatrix::from_fn(3, 2, |r, a| Complex64::new(r as f64 - a as f64, 0.5 * r as f64 + 1.0));
        let w = LlsWeights::new(vec![0.2, -0.4, 1.1, 0.7]);
        let det = widen_dataset(&x, None).unwrap();
        let p = predict(&w, &det).unwrap();
        for t in 0..3 {
            let g = w.apply_complex(x.row(t)).unwrap();
            assert_relative_eq!(g.re, p[t].re, max_relative = 1e-14);
            assert_relative_eq!(g.im, p[t].im, max_relative = 1e-14);
        }
    }

    #[test]
    fn batched_fit_matches_independent_fits() {
        let design = RealMatrix::from_fn(12, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 - 1.5 + 0.1 * c as f64);
        let targets: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..12).map(|r| ((r + k) % 4) as f64 * 0.25).collect())
            .collect();
        let batch = fit_batch(&design, &targets, RankPolicy::Reject).unwrap();
        for (k, t) in targets.iter().enumerate() {
            let single = fit(&WidenedDataset {
                design: design.clone(),
                targets: Some(t.clone()),
                user_index: None,
            })
            .unwrap();
            assert_eq!(batch[k].w, single.w);
            assert_eq!(batch[k].user_index, Some(k + 1));
        }
    }
}
