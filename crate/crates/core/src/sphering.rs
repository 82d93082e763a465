//! Spatial prewhitening `x ← E·D^(−1/2)·Eᵀ·x`.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::Square;
use crate::signal::TimeSeries;
use crate::{Error, Result};

/// Default relative eigenvalue floor.
pub const DEFAULT_EPS: f64 = 1e-10;

/// Symmetric whitening transform together with the spectrum it was built from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpheringTransform {
    /// `T = E·D^(−1/2)·Eᵀ`.
    pub matrix: Square<f64>,
    /// Eigenvalues of the covariance after flooring, descending.
    pub eigenvalues: Vec<f64>,
    pub regularization_eps: f64,
}

impl SpheringTransform {
    /// Pass-through transform, used when sphering is disabled.
    pub fn identity(channels: usize) -> Self {
        Self {
            matrix: Square::identity(channels),
            eigenvalues: alloc::vec![1.0; channels],
            regularization_eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.matrix.dim()
    }
}

/// `(1/n)·Σ_n x(n)·xᵀ(n)`.
pub fn estimate_spatial_covariance(ts: &TimeSeries) -> Square<f64> {
    let p = ts.channel_count();
    let n = ts.len() as f64;
    let mut cov = Square::zeros(p);
    for r in 0..p {
        for c in r..p {
            let s: f64 = ts.channel(r).iter().zip(ts.channel(c)).map(|(a, b)| a * b).sum();
            cov[(r, c)] = s / n;
            cov[(c, r)] = s / n;
        }
    }
    cov
}

/// Eigendecomposition of `cov` with eigenvalues floored at `eps·max(D)`.
pub fn compute_sphering(cov: &Square<f64>, eps: f64) -> Result<SpheringTransform> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue floor {eps} must lie in [0, 1)"
        )));
    }
    let scale = cov.max_abs();
    if !scale.is_finite() {
        return Err(Error::InvalidParameter("covariance has non-finite entries".into()));
    }
    let deviation = cov.max_asymmetry();
    if deviation > 1e-9 * scale {
        return Err(Error::NotSymmetric { deviation });
    }
    let (values, vectors) = cov.symmetric_eigen();
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::InvalidParameter(
            "covariance has no positive eigenvalue (all-zero signal?)".into(),
        ));
    }
    let floor = eps * top;
    let floored: Vec<f64> = values.iter().map(|&v| v.max(floor).max(f64::MIN_POSITIVE)).collect();
    let p = cov.dim();
    let matrix = Square::from_fn(p, |r, c| {
        (0..p)
            .map(|k| vectors[(r, k)] * vectors[(c, k)] / libm::sqrt(floored[k]))
            .sum()
    });
    Ok(SpheringTransform {
        matrix,
        eigenvalues: floored,
        regularization_eps: eps,
    })
}

/// Applies the transform sample by sample.
pub fn apply_sphering(t: &SpheringTransform, ts: &TimeSeries) -> Result<TimeSeries> {
    apply_matrix(&t.matrix, ts)
}

/// `y(n) = A·x(n)` for a constant real matrix.
pub fn apply_matrix(a: &Square<f64>, ts: &TimeSeries) -> Result<TimeSeries> {
    let p = ts.channel_count();
    if a.dim() != p {
        return Err(Error::DimensionMismatch {
            what: "sphering matrix size",
            expected: p,
            found: a.dim(),
        });
    }
    let n = ts.len();
    let mut out = alloc::vec![alloc::vec![0.0; n]; p];
    for (q, y) in out.iter_mut().enumerate() {
        for r in 0..p {
            let g = a[(q, r)];
            if g == 0.0 {
                continue;
            }
            for (yi, xi) in y.iter_mut().zip(ts.channel(r)) {
                *yi += g * xi;
            }
        }
    }
    ts.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    const TA: f64 = 0.000976;

    fn close(a: &Square<f64>, b: &Square<f64>, tol: f64) -> bool {
        a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn covariance_definition() {
        let zero = TimeSeries::zeros(3, 50, TA).unwrap();
        assert_eq!(estimate_spatial_covariance(&zero), Square::zeros(3));

        let x: Vec<f64> = (0..200).map(|i| libm::sin(i as f64 * 0.3) + 0.1).collect();
        let s2 = x.iter().map(|v| v * v).sum::<f64>() / 200.0;
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let cov = estimate_spatial_covariance(&TimeSeries::from_channels(vec![x, y], TA).unwrap());
        let want = Square::from_row_major(2, vec![s2, 2.0 * s2, 2.0 * s2, 4.0 * s2]);
        assert!(close(&cov, &want, 1e-12));
    }

    #[test]
    fn covariance_of_independent_noise() {
        let mut rng = crate::rng::stream(11, "test-noise");
        let n = 20000;
        let ch: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let cov = estimate_spatial_covariance(&TimeSeries::from_channels(ch, TA).unwrap());
        for r in 0..3 {
            assert!((cov[(r, r)] - 1.0).abs() < 0.1);
            for c in 0..3 {
                if r != c {
                    assert!(cov[(r, c)].abs() < 5.0 / libm::sqrt(n as f64));
                }
            }
        }
    }

    #[test]
    fn analytic_transforms() {
        let t = compute_sphering(&Square::diagonal(&[4.0, 1.0]), DEFAULT_EPS).unwrap();
        assert!(close(&t.matrix, &Square::diagonal(&[0.5, 1.0]), 1e-14));
        let t = compute_sphering(&Square::identity(3), DEFAULT_EPS).unwrap();
        assert!(close(&t.matrix, &Square::identity(3), 1e-14));
    }

    #[test]
    fn rank_deficient_is_floored() {
        let cov = Square::from_row_major(2, vec![1.0, 1.0, 1.0, 1.0]);
        let t = compute_sphering(&cov, 1e-6).unwrap();
        assert!(t.matrix.as_slice().iter().all(|v| v.is_finite()));
        // direct 2×2 oracle: eigenvalues 2 and 0, top direction (1,1)/√2
        assert!((t.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!((t.eigenvalues[1] - 2e-6).abs() < 1e-15);
        let w = t.matrix.matmul(&cov).matmul(&t.matrix.transpose());
        let u = [1.0 / libm::sqrt(2.0), 1.0 / libm::sqrt(2.0)];
        let wu = w.mul_vec(&u);
        let gain = wu[0] * u[0] + wu[1] * u[1];
        assert!((gain - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_asymmetric_and_zero() {
        let bad = Square::from_row_major(2, vec![1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(compute_sphering(&bad, DEFAULT_EPS), Err(Error::NotSymmetric { .. })));
        assert!(compute_sphering(&Square::zeros(2), DEFAULT_EPS).is_err());
    }

    #[test]
    fn apply_identity_and_zero() {
        let ts = TimeSeries::from_channels(vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]], TA).unwrap();
        assert_eq!(apply_sphering(&SpheringTransform::identity(2), &ts).unwrap(), ts);
        let z = TimeSeries::zeros(2, 3, TA).unwrap();
        let t = compute_sphering(&Square::diagonal(&[2.0, 3.0]), DEFAULT_EPS).unwrap();
        assert_eq!(apply_sphering(&t, &z).unwrap(), z);
        assert!(apply_sphering(&SpheringTransform::identity(3), &ts).is_err());
    }

    #[test]
    fn equalizes_a_thousandfold_imbalance() {
        let mut rng = crate::rng::stream(3, "imbalance");
        let n = 8000;
        let mut ch: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        // a shared 1000× component dominating every sensor
        let ecg: Vec<f64> = (0..n).map(|_| 1000.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        for (p, c) in ch.iter_mut().enumerate() {
            for (v, e) in c.iter_mut().zip(&ecg) {
                *v += e * (1.0 - 0.2 * p as f64);
            }
        }
        let ts = TimeSeries::from_channels(ch, TA).unwrap();
        let t = compute_sphering(&estimate_spatial_covariance(&ts), DEFAULT_EPS).unwrap();
        let out = apply_sphering(&t, &ts).unwrap();
        let cov = estimate_spatial_covariance(&out);
        for p in 0..4 {
            assert!((cov[(p, p)] - 1.0).abs() < 0.01);
        }
        assert!(close(&cov, &Square::identity(4), 1e-8));
    }

    fn spd() -> impl Strategy<Value = Square<f64>> {
        (prop::collection::vec(-1.0f64..1.0, 9), prop::collection::vec(0.1f64..3.0, 3)).prop_map(|(a, d)| {
            let a = Square::from_row_major(3, a);
            let b = a.matmul(&a.transpose());
            Square::from_fn(3, |r, c| b[(r, c)] + if r == c { d[r] } else { 0.0 })
        })
    }

    proptest! {
        #[test]
        fn whitens_full_rank(cov in spd()) {
            let t = compute_sphering(&cov, DEFAULT_EPS).unwrap();
            let w = t.matrix.matmul(&cov).matmul(&t.matrix.transpose());
            prop_assert!(close(&w, &Square::identity(3), 1e-8));
            prop_assert!(t.matrix.max_asymmetry() <= 1e-12 * t.matrix.max_abs().max(1.0));
            // eigenvalues multiply to the determinant
            let det = cov[(0, 0)] * (cov[(1, 1)] * cov[(2, 2)] - cov[(1, 2)] * cov[(2, 1)])
                - cov[(0, 1)] * (cov[(1, 0)] * cov[(2, 2)] - cov[(1, 2)] * cov[(2, 0)])
                + cov[(0, 2)] * (cov[(1, 0)] * cov[(2, 1)] - cov[(1, 1)] * cov[(2, 0)]);
            let prod: f64 = t.eigenvalues.iter().product();
            prop_assert!((prod - det).abs() <= 1e-6 * det.abs());
        }

        #[test]
        fn channel_scaling_is_undone(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = crate::rng::stream(seed, "scale");
            let n = 400;
            let ch: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let mut scaled = ch.clone();
            for v in scaled[1].iter_mut() {
                *v *= c;
            }
            let ts = TimeSeries::from_channels(scaled, TA).unwrap();
            let t = compute_sphering(&estimate_spatial_covariance(&ts), DEFAULT_EPS).unwrap();
            let cov = estimate_spatial_covariance(&apply_sphering(&t, &ts).unwrap());
            prop_assert!(close(&cov, &Square::identity(3), 1e-8));
        }
    }
}
