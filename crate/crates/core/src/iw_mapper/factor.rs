use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::cultural_space::ConfigId;

pub const IW_SCALE: [f64; 2] = [1.81, 1.61];
pub const IW_OFFSET: [f64; 2] = [0.38, -0.01];

const VARIMAX_TOL: f64 = 1e-6;
const VARIMAX_MAX_SWEEPS: usize = 100;

pub fn rescale_to_iw(pc1: f64, pc2: f64) -> (f64, f64) {
    (IW_SCALE[0] * pc1 + IW_OFFSET[0], IW_SCALE[1] * pc2 + IW_OFFSET[1])
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error("need at least {min} rows, got {n}")]
    TooFewRows { n: usize, min: usize },
    #[error("row {0} has a different width")]
    Ragged(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("correlation matrix has rank {rank}, need {k}")]
    RankDeficient { rank: usize, k: usize },
    #[error("incomplete indicator vector for config {}", .0 .0)]
    MissingValues(ConfigId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: DMatrix<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Column z-scores with population std. Zero-variance columns become zeros.
pub fn standardize(rows: &[Vec<f64>]) -> Result<Standardized, FactorError> {
    let n = rows.len();
    if n < 2 {
        return Err(FactorError::TooFewRows { n, min: 2 });
    }
    let p = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != p) {
        return Err(FactorError::Ragged(bad));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FactorError::NonFinite);
    }
    let raw = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let mut data = DMatrix::zeros(n, p);
    let (mut means, mut stds, mut degenerate) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..p {
        let col = raw.column(j);
        let mean = col.sum() / n as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let flat = std <= 1e-12 * (1.0 + mean.abs());
        if flat {
            log::warn!("indicator column {j} has zero variance");
        } else {
            for i in 0..n {
                data[(i, j)] = (raw[(i, j)] - mean) / std;
            }
        }
        means.push(mean);
        stds.push(std);
        degenerate.push(flat);
    }
    Ok(Standardized {
        data,
        means,
        stds,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// All eigenvalues of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// p x k rotated loadings.
    pub loadings: DMatrix<f64>,
    /// p x k rotated orthonormal directions (eigenvectors times rotation).
    pub axes: DMatrix<f64>,
    /// k x k orthogonal rotation applied to the unrotated loadings.
    pub rotation: DMatrix<f64>,
    /// n x k scores, standardized data times rotated loadings.
    pub scores: DMatrix<f64>,
    /// Share of total variance carried by each rotated component.
    pub variance_explained: Vec<f64>,
    pub sweeps: usize,
}

/// Top-`k` principal components of standardized data, varimax-rotated.
pub fn pca_varimax(z: &DMatrix<f64>, k: usize) -> Result<Factorization, FactorError> {
    let (n, p) = z.shape();
    if n <= p {
        return Err(FactorError::TooFewRows { n, min: p + 1 });
    }
    let corr = (z.transpose() * z) / n as f64;
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let rank = eigenvalues.iter().filter(|&&l| l > 1e-10 * p as f64).count();
    if rank < k {
        return Err(FactorError::RankDeficient { rank, k });
    }

    let mut vecs = DMatrix::zeros(p, k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        // sign rule: the largest-magnitude entry is positive
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(c, &v);
    }
    let unrotated = DMatrix::from_fn(p, k, |i, j| vecs[(i, j)] * eigenvalues[j].sqrt());
    let (loadings, rotation, sweeps) = varimax(&unrotated);
    let axes = &vecs * &rotation;
    let scores = z * &loadings;
    let variance_explained = (0..k).map(|j| loadings.column(j).norm_squared() / p as f64).collect();
    Ok(Factorization {
        eigenvalues,
        loadings,
        axes,
        rotation,
        scores,
        variance_explained,
        sweeps,
    })
}

/// Raw varimax criterion of a loading matrix.
pub fn varimax_criterion(x: &DMatrix<f64>) -> f64 {
    let p = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let s2: f64 = c.iter().map(|v| v * v).sum();
            let s4: f64 = c.iter().map(|v| v.powi(4)).sum();
            (p * s4 - s2 * s2) / (p * p)
        })
        .sum()
}

/// Kaiser-normalized varimax by pairwise planar rotations. Returns the
/// rotated loadings, the rotation matrix and the number of sweeps.
pub fn varimax(loadings: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let (p, k) = loadings.shape();
    let pf = p as f64;
    let mut x = loadings.clone();
    for i in 0..p {
        let h = loadings.row(i).norm();
        if h > 1e-15 {
            x.row_mut(i).scale_mut(1.0 / h);
        }
    }
    let mut rot = DMatrix::identity(k, k);
    let mut crit = varimax_criterion(&x);
    let mut sweeps = 0;
    while sweeps < VARIMAX_MAX_SWEEPS {
        sweeps += 1;
        for a in 0..k {
            for b in a + 1..k {
                let (mut sa, mut sb, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..p {
                    let (xa, xb) = (x[(i, a)], x[(i, b)]);
                    let u = xa * xa - xb * xb;
                    let v = 2.0 * xa * xb;
                    sa += u;
                    sb += v;
                    sc += u * u - v * v;
                    sd += 2.0 * u * v;
                }
                let num = sd - 2.0 * sa * sb / pf;
                let den = sc - (sa * sa - sb * sb) / pf;
                let phi = num.atan2(den) / 4.0;
                if phi.abs() < 1e-15 {
                    continue;
                }
                let (s, c) = phi.sin_cos();
                for m in [&mut x, &mut rot] {
                    for i in 0..m.nrows() {
                        let (ma, mb) = (m[(i, a)], m[(i, b)]);
                        m[(i, a)] = c * ma + s * mb;
                        m[(i, b)] = -s * ma + c * mb;
                    }
                }
            }
        }
        let next = varimax_criterion(&x);
        let delta = (next - crit).abs();
        crit = next;
        if delta < VARIMAX_TOL {
            break;
        }
    }
    (loadings * &rot, rot, sweeps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    #[test]
    fn standardize_hand_example() {
        let s = standardize(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let e = (1.5f64).sqrt();
        assert!((s.data[(0, 0)] + e).abs() < 1e-12);
        assert_eq!(s.data[(1, 0)], 0.0);
        assert!((s.data[(2, 0)] - e).abs() < 1e-12);
        assert!((s.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_flagged() {
        let s = standardize(&[vec![0.1, 1.0], vec![0.1, 2.0], vec![0.1, 4.0]]).unwrap();
        assert_eq!(s.degenerate, [true, false]);
        assert!(s.data.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_needs_two_rows() {
        assert!(matches!(standardize(&[vec![1.0]]), Err(FactorError::TooFewRows { .. })));
        assert!(matches!(
            standardize(&[vec![1.0], vec![1.0, 2.0]]),
            Err(FactorError::Ragged(1))
        ));
    }

    fn planted(n: usize, noise: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        // unit-communality rows clustered symmetrically around the two axes
        let angles = [-10.0f64, -5.0, 0.0, 5.0, 10.0, 80.0, 85.0, 90.0, 95.0, 100.0];
        let lam = DMatrix::from_fn(10, 2, |i, j| {
            let t = angles[i].to_radians();
            if j == 0 {
                t.cos()
            } else {
                t.sin()
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        let f = DMatrix::from_fn(n, 2, |_, _| g.sample(&mut rng));
        let e = DMatrix::from_fn(n, 10, |_, _| noise * g.sample(&mut rng));
        (f * lam.transpose() + e, lam)
    }

    #[test]
    fn planted_loadings_are_recovered() {
        let (x, lam) = planted(2000, 0.01, 7);
        let s = standardize(&rows(&x)).unwrap();
        let fact = pca_varimax(&s.data, 2).unwrap();
        let l = &fact.loadings;
        let mut best = f64::INFINITY;
        for swap in [false, true] {
            for s0 in [1.0, -1.0] {
                for s1 in [1.0, -1.0] {
                    let mut dev: f64 = 0.0;
                    for i in 0..10 {
                        let (c0, c1) = if swap { (1, 0) } else { (0, 1) };
                        dev = dev.max((s0 * l[(i, c0)] - lam[(i, 0)]).abs());
                        dev = dev.max((s1 * l[(i, c1)] - lam[(i, 1)]).abs());
                    }
                    best = best.min(dev);
                }
            }
        }
        assert!(best < 0.05, "max deviation {best}");
    }

    #[test]
    fn varimax_optimum_is_a_fixpoint() {
        let (x, _) = planted(500, 0.3, 11);
        let s = standardize(&rows(&x)).unwrap();
        let fact = pca_varimax(&s.data, 2).unwrap();
        let before = varimax_criterion(&fact.loadings);
        let (again, rot, _) = varimax(&fact.loadings);
        assert!((varimax_criterion(&again) - before).abs() < 1e-9);
        assert!((rot - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-3);
    }

    #[test]
    fn rank_one_input_is_rejected() {
        let data: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let s = standardize(&data).unwrap();
        assert_eq!(
            pca_varimax(&s.data, 2),
            Err(FactorError::RankDeficient { rank: 1, k: 2 })
        );
    }

    fn kaiser(m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for mut row in out.row_iter_mut() {
            let h = row.norm();
            if h > 1e-15 {
                row /= h;
            }
        }
        out
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 12..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_keeps_axes_orthonormal_and_variance_sum(data in matrix_strategy()) {
            let s = standardize(&data).unwrap();
            let Ok(f) = pca_varimax(&s.data, 2) else { return Ok(()); };
            let gram = f.axes.transpose() * &f.axes;
            prop_assert!((gram[(0, 1)]).abs() < 1e-8);
            prop_assert!((gram[(0, 0)] - 1.0).abs() < 1e-8 && (gram[(1, 1)] - 1.0).abs() < 1e-8);
            let rotated: f64 = f.variance_explained.iter().sum();
            let unrotated = (f.eigenvalues[0] + f.eigenvalues[1]) / 6.0;
            prop_assert!((rotated - unrotated).abs() < 1e-8);
            for v in &f.variance_explained {
                prop_assert!((0.0..=1.0).contains(v));
            }
            let unrot = &f.loadings * f.rotation.transpose();
            prop_assert!(varimax_criterion(&kaiser(&f.loadings)) >= varimax_criterion(&kaiser(&unrot)) - 1e-9);
        }

        #[test]
        fn standardize_is_idempotent(data in matrix_strategy()) {
            let once = standardize(&data).unwrap();
            let twice = standardize(&rows(&once.data)).unwrap();
            prop_assert!((&once.data - &twice.data).abs().max() < 1e-9);
            for j in 0..6 {
                prop_assert!(once.data.column(j).sum().abs() / (data.len() as f64) < 1e-10);
            }
        }

        #[test]
        fn rescale_preserves_order(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let (za, _) = rescale_to_iw(a, 0.0);
            let (zb, _) = rescale_to_iw(b, 0.0);
            prop_assert_eq!(a < b, za < zb);
            let (_, ya) = rescale_to_iw(0.0, a);
            let (_, yb) = rescale_to_iw(0.0, b);
            prop_assert_eq!(a < b, ya < yb);
        }
    }
}
