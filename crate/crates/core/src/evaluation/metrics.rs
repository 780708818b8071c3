use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::motion::PoseSequence;

fn stats(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let mut mean = DVector::zeros(dim);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mean, cov)
}

/// Square root of a symmetric positive semidefinite matrix; negative eigenvalues clip to 0.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `Tr((A B)^{1/2})` evaluated as `Tr((A^{1/2} B A^{1/2})^{1/2})`.
fn cross_trace(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let sa = psd_sqrt(a);
    psd_sqrt(&(&sa * b * &sa)).trace()
}

/// Fréchet distance between Gaussian fits of two latent sets. With fewer than `H + 1` vectors in
/// a set the covariances are reduced to their diagonals.
pub fn fgd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("fgd needs two non-empty latent sets"));
    }
    let h = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != h) {
        return Err(Error::invalid("latent vectors differ in dimension"));
    }
    if a.iter().chain(b).flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite latent value"));
    }
    let (ma, mut ca) = stats(a, h);
    let (mb, mut cb) = stats(b, h);
    let diagonal = a.len() < h + 1 || b.len() < h + 1;
    let cross = if diagonal {
        log::warn!("fewer than H + 1 = {} latents, using diagonal covariances", h + 1);
        ca = DMatrix::from_diagonal(&ca.diagonal());
        cb = DMatrix::from_diagonal(&cb.diagonal());
        (0..h).map(|i| (ca[(i, i)] * cb[(i, i)]).max(0.0).sqrt()).sum::<f64>()
    } else {
        // both orders, so the result is symmetric in (a, b) to the last bit
        0.5 * (cross_trace(&ca, &cb) + cross_trace(&cb, &ca))
    };
    let mean_term: f64 = ma.iter().zip(mb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    let d = mean_term + (ca.trace() + cb.trace()) - 2.0 * cross;
    Ok(d.max(0.0))
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Mean over `trials` of the mean L1 distance of `pairs` distinct unordered pairs drawn
/// uniformly. `pairs` is capped at the number of distinct pairs.
pub fn diversity(latents: &[Vec<f64>], pairs: usize, trials: usize, rng: &mut impl Rng) -> Result<f64> {
    let n = latents.len();
    if n < 2 {
        return Err(Error::invalid("diversity needs at least 2 latents"));
    }
    if pairs == 0 || trials == 0 {
        return Err(Error::invalid("pairs and trials must be positive"));
    }
    let total = n * (n - 1) / 2;
    let p = pairs.min(total);
    let mut sum = 0.0;
    for _ in 0..trials {
        let mut acc = 0.0;
        if total <= 4 * p || total <= 4096 {
            for k in sample(rng, total, p) {
                let (i, j) = pair_at(k, n);
                acc += l1(&latents[i], &latents[j]);
            }
        } else {
            let mut seen = HashSet::with_capacity(p);
            while seen.len() < p {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                if i != j && seen.insert((i.min(j), i.max(j))) {
                    acc += l1(&latents[i], &latents[j]);
                }
            }
        }
        sum += acc / p as f64;
    }
    Ok(sum / trials as f64)
}

/// k-th pair `(i, j)`, `i < j`, in row-major order.
fn pair_at(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Mean absolute joint error over every frame, joint and axis.
pub fn maje(generated: &PoseSequence, reference: &PoseSequence) -> Result<f64> {
    if generated.frames().dim() != reference.frames().dim() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            generated.frames().dim(),
            reference.frames().dim()
        )));
    }
    if (generated.fps() - reference.fps()).abs() > 1e-9 {
        return Err(Error::invalid(format!("fps mismatch: {} vs {}", generated.fps(), reference.fps())));
    }
    let n = generated.frames().len();
    let sum: f64 = generated
        .frames()
        .iter()
        .zip(reference.frames().iter())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum();
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Skeleton;
    use crate::nn::seeded;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn gaussian(n: usize, mean: &[f64], rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| mean.iter().map(|m| m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect::<Vec<f64>>())
            .collect()
    }

    #[test]
    fn fgd_identity_and_shift() {
        let mut rng = seeded(1);
        let x = gaussian(500, &[0.0, 0.0, 0.0], &mut rng);
        assert!(fgd(&x, &x).unwrap() <= 1e-6);
        let a = gaussian(100_000, &[0.0, 0.0], &mut rng);
        let b = gaussian(100_000, &[1.0, 0.0], &mut rng);
        let d = fgd(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        assert_eq!(fgd(&a, &b).unwrap(), fgd(&b, &a).unwrap());
    }

    #[test]
    fn fgd_errors_and_fallback() {
        assert!(fgd(&[], &[vec![1.0]]).is_err());
        assert!(fgd(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
        // 2 vectors in 3 dimensions use the diagonal fallback
        let a = vec![vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]];
        let b = vec![vec![2.0, 0.0, 0.0], vec![3.0, 1.0, 1.0]];
        assert!((fgd(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fgd_permutation_invariant(seed in 0u64..1000, shift in -2.0f64..2.0) {
            let mut rng = seeded(seed);
            let a = gaussian(12, &[0.0, shift], &mut rng);
            let b = gaussian(9, &[shift, 0.0], &mut rng);
            let d = fgd(&a, &b).unwrap();
            prop_assert!(d >= -1e-8);
            let mut ar = a.clone();
            ar.reverse();
            let mut br = b.clone();
            br.rotate_left(3);
            prop_assert!((fgd(&ar, &br).unwrap() - d).abs() < 1e-9);
            prop_assert_eq!(fgd(&a, &b).unwrap(), fgd(&b, &a).unwrap());
        }

        #[test]
        fn diversity_relabel_and_scale(seed in 0u64..1000, c in 0.1f64..5.0) {
            let mut rng = seeded(seed);
            let x = gaussian(10, &[0.0, 0.0, 0.0], &mut rng);
            let d = diversity(&x, 45, 3, &mut seeded(7)).unwrap();
            let mut shuffled = x.clone();
            shuffled.reverse();
            // all 45 pairs every trial, so order does not matter
            prop_assert!((diversity(&shuffled, 45, 3, &mut seeded(9)).unwrap() - d).abs() < 1e-9);
            let scaled: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|e| e * c).collect()).collect();
            let ds = diversity(&scaled, 10, 5, &mut seeded(7)).unwrap();
            let d10 = diversity(&x, 10, 5, &mut seeded(7)).unwrap();
            prop_assert!((ds - c * d10).abs() < 1e-9 * (1.0 + ds));
        }

        #[test]
        fn maje_metric_axioms(seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let sk = Arc::new(Skeleton::upper_body());
            let mut mk = || {
                let f = ndarray::Array3::from_shape_fn((5, 16, 3), |_| rng.gen_range(-1.0f32..1.0));
                PoseSequence::new(sk.clone(), 15.0, f).unwrap()
            };
            let (a, b, c) = (mk(), mk(), mk());
            let ab = maje(&a, &b).unwrap();
            prop_assert_eq!(ab, maje(&b, &a).unwrap());
            prop_assert!(ab <= maje(&a, &c).unwrap() + maje(&c, &b).unwrap() + 1e-9);
            prop_assert_eq!(maje(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn diversity_examples() {
        let same = vec![vec![1.0, 2.0]; 5];
        assert_eq!(diversity(&same, 100, 10, &mut seeded(0)).unwrap(), 0.0);
        let two = vec![vec![0.0, 0.0], vec![1.0, -2.0]];
        assert_eq!(diversity(&two, 1, 50, &mut seeded(0)).unwrap(), 3.0);
        assert!(diversity(&two[..1], 1, 1, &mut seeded(0)).is_err());
        for n in 2..7 {
            let all: Vec<(usize, usize)> = (0..n * (n - 1) / 2).map(|k| pair_at(k, n)).collect();
            let set: HashSet<_> = all.iter().copied().collect();
            assert_eq!(set.len(), all.len());
            assert!(all.iter().all(|&(i, j)| i < j && j < n));
        }
    }

    #[test]
    fn diversity_estimator_concentrates() {
        let mut rng = seeded(3);
        let x = gaussian(300, &[0.0; 4], &mut rng);
        let spread = |trials: usize| {
            let runs: Vec<f64> = (0..30).map(|s| diversity(&x, 100, trials, &mut seeded(100 + s)).unwrap()).collect();
            let m = runs.iter().sum::<f64>() / 30.0;
            (runs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 29.0).sqrt()
        };
        let ratio = spread(1000) / spread(10);
        assert!(ratio < 0.2, "{ratio}");
    }

    #[test]
    fn maje_examples() {
        let sk = Arc::new(Skeleton::upper_body());
        let a = PoseSequence::rest(sk.clone(), 15.0, 4).unwrap();
        assert_eq!(maje(&a, &a).unwrap(), 0.0);
        let b = PoseSequence::new(sk.clone(), 15.0, a.frames().mapv(|x| x + 0.01)).unwrap();
        assert!((maje(&a, &b).unwrap() - 0.01).abs() < 1e-6);
        let mut f = a.frames().clone();
        f.slice_mut(ndarray::s![.., .., 0]).mapv_inplace(|x| x + 0.01);
        let c = PoseSequence::new(sk.clone(), 15.0, f).unwrap();
        assert!((maje(&a, &c).unwrap() - 0.01 / 3.0).abs() < 1e-6);
        let short = PoseSequence::rest(sk, 15.0, 3).unwrap();
        assert!(maje(&a, &short).is_err());
    }
}
