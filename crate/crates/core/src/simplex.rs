//! Uniform sampling from the unit simplex.
//!
//! Shares are built by drawing `n` uniforms, taking `-ln` of each and
//! normalizing by their sum. Every coordinate is then marginally
//! `Beta(1, n - 1)` with density `(n - 1)(1 - ε)^(n - 2)`.

use rand::{Rng, RngCore};

use crate::{Error, Result};

/// Source of uniform variates on `[0, 1]`.
///
/// Implemented for every random generator; tests can inject fixed draws
/// through [`FixedDraws`].
pub trait UniformSource {
    fn uniform(&mut self) -> f64;
}

impl<R: RngCore + ?Sized> UniformSource for R {
    #[inline]
    fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// Replays a fixed sequence of uniform draws. Panics when exhausted.
#[derive(Debug, Clone)]
pub struct FixedDraws<I: Iterator<Item = f64>>(pub I);

impl<I: Iterator<Item = f64>> UniformSource for FixedDraws<I> {
    fn uniform(&mut self) -> f64 {
        self.0.next().expect("fixed uniform draws exhausted")
    }
}

/// A point on the unit simplex: `n >= 2` nonnegative shares summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSample {
    weights: Vec<f64>,
}

impl SimplexSample {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

/// Draws a uniform on `(0, 1]`, redrawing exact zeros (`-ln 0` is infinite).
#[inline]
fn nonzero_uniform<S: UniformSource + ?Sized>(src: &mut S) -> f64 {
    loop {
        let u = src.uniform();
        if u > 0.0 {
            return u;
        }
    }
}

/// Fills `out` with simplex shares. `out.len()` must be at least 2.
///
/// This is the allocation-free form used by the simulation hot loop.
#[inline]
pub fn fill_simplex<S: UniformSource + ?Sized>(out: &mut [f64], src: &mut S) {
    debug_assert!(out.len() >= 2);
    let mut total = 0.0;
    for slot in out.iter_mut() {
        let e = -nonzero_uniform(src).ln();
        *slot = e;
        total += e;
    }
    // total == 0 only if every draw was exactly 1.0
    if total == 0.0 {
        let share = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|x| *x = share);
        return;
    }
    let inv = 1.0 / total;
    out.iter_mut().for_each(|x| *x *= inv);
}

pub fn sample_simplex<S: UniformSource + ?Sized>(n: usize, src: &mut S) -> Result<SimplexSample> {
    if n < 2 {
        return Err(Error::InvalidArity { n });
    }
    let mut weights = vec![0.0; n];
    fill_simplex(&mut weights, src);
    Ok(SimplexSample { weights })
}

fn check_unit(what: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: x,
            domain: "[0, 1]",
        })
    }
}

/// Marginal density of one share: `(n - 1)(1 - ε)^(n - 2)`.
pub fn epsilon_marginal_pdf(eps: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArity { n });
    }
    check_unit("eps", eps)?;
    Ok((n - 1) as f64 * (1.0 - eps).powi(n as i32 - 2))
}

/// Marginal distribution function of one share: `1 - (1 - θ)^(n - 1)`.
pub fn epsilon_marginal_cdf(theta: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArity { n });
    }
    check_unit("theta", theta)?;
    Ok(1.0 - (1.0 - theta).powi(n as i32 - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn rejects_arity_below_two() {
        let mut rng = stream_rng(1, 0);
        assert!(matches!(
            sample_simplex(1, &mut rng),
            Err(Error::InvalidArity { n: 1 })
        ));
        assert!(matches!(
            sample_simplex(0, &mut rng),
            Err(Error::InvalidArity { .. })
        ));
    }

    #[test]
    fn equal_draws_split_evenly() {
        let e = (-1.0f64).exp();
        let s = sample_simplex(2, &mut FixedDraws([e, e].into_iter())).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_draws_are_redrawn() {
        let e = (-1.0f64).exp();
        let draws = [0.0, e, 0.0, 0.0, e];
        let s = sample_simplex(2, &mut FixedDraws(draws.into_iter())).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn all_unit_draws_fall_back_to_even_split() {
        let s = sample_simplex(4, &mut FixedDraws(std::iter::repeat(1.0))).unwrap();
        assert_eq!(s.weights(), &[0.25; 4]);
    }

    #[test]
    fn pdf_examples() {
        assert_eq!(epsilon_marginal_pdf(0.3, 2).unwrap(), 1.0);
        assert_eq!(epsilon_marginal_pdf(1.0, 3).unwrap(), 0.0);
        assert!((epsilon_marginal_pdf(0.25, 5).unwrap() - 1.6875).abs() < 1e-15);
        assert!(matches!(
            epsilon_marginal_pdf(1.5, 3),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            epsilon_marginal_pdf(-0.1, 3),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(epsilon_marginal_cdf(0.0, 7).unwrap(), 0.0);
        assert_eq!(epsilon_marginal_cdf(0.5, 2).unwrap(), 0.5);
        assert!((epsilon_marginal_cdf(0.2, 4).unwrap() - 0.488).abs() < 1e-12);
        assert_eq!(epsilon_marginal_cdf(1.0, 9).unwrap(), 1.0);
        assert!(epsilon_marginal_cdf(1.01, 2).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        // composite Simpson, 10^4 intervals
        for n in [2usize, 3, 5, 20, 100] {
            let m = 10_000;
            let h = 1.0 / m as f64;
            let mut acc = 0.0;
            for i in 0..=m {
                let w = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * epsilon_marginal_pdf(i as f64 * h, n).unwrap();
            }
            let integral = acc * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "n={n}: {integral}");
        }
    }

    #[test]
    fn mean_of_first_share_is_one_over_n() {
        let n = 10;
        let draws = 1_000_000;
        let mut rng = stream_rng(11, 0);
        let mut buf = vec![0.0; n];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            fill_simplex(&mut buf, &mut rng);
            s += buf[0];
            s2 += buf[0] * buf[0];
        }
        let mean = s / draws as f64;
        let var = s2 / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!((mean - 0.1).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(n in 2usize..300, seed in any::<u64>()) {
            let mut rng = stream_rng(seed, 0);
            let s = sample_simplex(n, &mut rng).unwrap();
            prop_assert_eq!(s.len(), n);
            let total: f64 = s.weights().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(s.weights().iter().all(|&w| (0.0..=1.0).contains(&w)));
        }

        #[test]
        fn cdf_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, n in 2usize..50) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(epsilon_marginal_cdf(lo, n).unwrap() <= epsilon_marginal_cdf(hi, n).unwrap());
        }
    }
}
