//! Real-valued widening of complex receive data.
//!
//! Each complex row `r` becomes the pair
//! `r1 = [Re r; Im r]` and `r2 = [Im r; -Re r]`, so a single real function
//! `f` predicts the real part from `r1` and the imaginary part from `r2`.
//! Rows are interleaved `(r1(1), r2(1), r1(2), r2(2), ...)`.

use num_complex::Complex64;

use crate::error::{dim_err, Result};
use crate::linalg::{ComplexMatrix, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct WidenedDataset {
    /// `2N×2M`
    pub design: RealMatrix,
    /// `[Re b(1), Im b(1), ...]`, absent for detection-phase data.
    pub targets: Option<Vec<f64>>,
    /// 1-based user the targets belong to.
    pub user_index: Option<usize>,
}

impl WidenedDataset {
    pub fn len(&self) -> usize {
        self.design.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.design.rows() == 0
    }

    /// Number of complex samples.
    pub fn num_symbols(&self) -> usize {
        self.design.rows() / 2
    }

    pub fn input_width(&self) -> usize {
        self.design.cols()
    }

    pub fn for_user(mut self, user: usize) -> Self {
        self.user_index = Some(user);
        self
    }

    /// Keeps only the first `n` complex samples (both rows of each pair).
    pub fn truncate_symbols(&self, n: usize) -> Self {
        let rows = (2 * n).min(self.design.rows());
        Self {
            design: self.design.slice_rows(0, rows),
            targets: self.targets.as_ref().map(|t| t[..rows].to_vec()),
            user_index: self.user_index,
        }
    }
}

pub fn widen_dataset(x: &ComplexMatrix, y: Option<&[Complex64]>) -> Result<WidenedDataset> {
    let (n, m) = x.shape();
    if n == 0 || m == 0 {
        return Err(dim_err("cannot widen an empty receive matrix"));
    }
    if let Some(y) = y {
        if y.len() != n {
            return Err(dim_err(format!(
                "receive matrix has {n} rows but {} targets were given",
                y.len()
            )));
        }
    }
    let mut design = RealMatrix::zeros(2 * n, 2 * m);
    for t in 0..n {
        let r = x.row(t);
        let (r1, r2) = {
            let data = design.as_mut_slice();
            let (a, b) = data[2 * t * 2 * m..(2 * t + 2) * 2 * m].split_at_mut(2 * m);
            (a, b)
        };
        for (a, z) in r.iter().enumerate() {
            r1[a] = z.re;
            r1[m + a] = z.im;
            r2[a] = z.im;
            r2[m + a] = -z.re;
        }
    }
    let targets = y.map(|y| y.iter().flat_map(|b| [b.re, b.im]).collect());
    Ok(WidenedDataset {
        design,
        targets,
        user_index: None,
    })
}

/// Inverse pairing of widened outputs: `out(t) = ŷ(2t-1) + i ŷ(2t)`.
pub fn narrow_predictions(pred: &[f64]) -> Result<Vec<Complex64>> {
    if !pred.len().is_multiple_of(2) {
        return Err(dim_err(format!(
            "widened predictions must have even length, got {}",
            pred.len()
        )));
    }
    Ok(pred
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect())
}

/// One real row `[Re r; Im r]` per symbol, without the symmetry pairing.
pub fn stack_real(x: &ComplexMatrix) -> RealMatrix {
    let (n, m) = x.shape();
    RealMatrix::from_fn(n, 2 * m, |t, c| {
        let z = x.get(t, c % m);
        if c < m {
            z.re
        } else {
            z.im
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn widen_two_antennas() {
        let x = ComplexMatrix::from_vec(1, 2, vec![c(1.0, 2.0), c(3.0, -1.0)]).unwrap();
        let w = widen_dataset(&x, None).unwrap();
        assert_eq!(w.design.row(0), &[1.0, 3.0, 2.0, -1.0]);
        assert_eq!(w.design.row(1), &[2.0, -1.0, -1.0, -3.0]);
        assert!(w.targets.is_none());
    }

    #[test]
    fn widen_with_target() {
        let x = ComplexMatrix::from_vec(1, 1, vec![c(1.0, 1.0)]).unwrap();
        let w = widen_dataset(&x, Some(&[c(0.5, -0.5)])).unwrap();
        assert_eq!(w.design.as_slice(), &[1.0, 1.0, 1.0, -1.0]);
        assert_eq!(w.targets.unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn widen_training_shape() {
        let x = ComplexMatrix::zeros(685, 4);
        assert_eq!(widen_dataset(&x, None).unwrap().design.shape(), (1370, 8));
    }

    #[test]
    fn widen_rejects_mismatch() {
        let x = ComplexMatrix::zeros(3, 2);
        assert!(widen_dataset(&x, Some(&[c(1.0, 0.0)])).is_err());
        assert!(widen_dataset(&ComplexMatrix::zeros(0, 2), None).is_err());
    }

    #[test]
    fn narrow_examples() {
        assert_eq!(narrow_predictions(&[0.5, -0.5]).unwrap(), vec![c(0.5, -0.5)]);
        assert_eq!(
            narrow_predictions(&[1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![c(1.0, 0.0), c(0.0, 1.0)]
        );
        assert!(narrow_predictions(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn truncation_keeps_pairs() {
        let x = ComplexMatrix::from_fn(5, 2, |r, a| c(r as f64, a as f64));
        let y: Vec<_> = (0..5).map(|t| c(t as f64, -(t as f64))).collect();
        let w = widen_dataset(&x, Some(&y)).unwrap().truncate_symbols(2);
        assert_eq!(w.design.rows(), 4);
        assert_eq!(w.targets.unwrap(), vec![0.0, -0.0, 1.0, -1.0]);
    }

    #[test]
    fn stack_real_is_first_row_of_each_pair() {
        let x = ComplexMatrix::from_fn(4, 3, |r, a| c(r as f64 + 0.5, a as f64 - 1.0));
        let w = widen_dataset(&x, None).unwrap();
        let s = stack_real(&x);
        for t in 0..4 {
            assert_eq!(s.row(t), w.design.row(2 * t));
        }
    }

    fn complex_rows() -> impl Strategy<Value = (usize, Vec<(f64, f64)>)> {
        (1usize..5, 1usize..6).prop_flat_map(|(n, m)| {
            (Just(m), prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), n * m))
        })
    }

    proptest! {
        #[test]
        fn pairs_preserve_norm_and_targets_round_trip((m, vals) in complex_rows()) {
            let n = vals.len() / m;
            let x = ComplexMatrix::from_vec(n, m, vals.iter().map(|&(a, b)| c(a, b)).collect()).unwrap();
            let y: Vec<_> = (0..n).map(|t| x.get(t, 0) * c(0.3, -0.7)).collect();
            let w = widen_dataset(&x, Some(&y)).unwrap();
            prop_assert_eq!(w.design.rows(), 2 * n);
            for t in 0..n {
                let norm: f64 = x.row(t).iter().map(|z| z.norm_sqr()).sum::<f64>();
                let n1: f64 = w.design.row(2 * t).iter().map(|v| v * v).sum();
                let n2: f64 = w.design.row(2 * t + 1).iter().map(|v| v * v).sum();
                prop_assert!((n1 - norm).abs() <= 1e-9 * norm.max(1.0));
                prop_assert!((n2 - norm).abs() <= 1e-9 * norm.max(1.0));
            }
            prop_assert_eq!(narrow_predictions(w.targets.as_ref().unwrap()).unwrap(), y);
        }
    }
}
