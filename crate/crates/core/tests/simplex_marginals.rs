use kinex::rng::stream_rng;
use kinex::simplex::{epsilon_marginal_cdf, fill_simplex, sample_simplex};
use kinex::statfit::{ks_statistic, ks_two_sample};
use proptest::prelude::*;

const DRAWS: usize = 100_000;

fn coordinates(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    let mut buf = vec![0.0; n];
    (0..DRAWS)
        .map(|_| {
            fill_simplex(&mut buf, &mut rng);
            (buf[0], buf[n - 1])
        })
        .unzip()
}

#[test]
fn first_coordinate_follows_beta_marginal() {
    for n in [2, 5, 100] {
        let (first, _) = coordinates(n, 11);
        let ks = ks_statistic(&first, |x| epsilon_marginal_cdf(x, n).unwrap()).unwrap();
        assert!(ks < 0.01, "n={n}: ks={ks}");
    }
}

#[test]
fn coordinates_are_exchangeable() {
    for n in [3, 10, 50] {
        let (first, last) = coordinates(n, 12);
        let ks = ks_two_sample(&first, &last).unwrap();
        assert!(ks < 0.01, "n={n}: ks={ks}");
    }
}

#[test]
fn binary_split_is_uniform() {
    let (first, _) = coordinates(2, 13);
    let ks = ks_statistic(&first, |x| x).unwrap();
    assert!(ks < 0.01, "ks={ks}");
}

proptest! {
    #[test]
    fn samples_lie_on_the_simplex(n in 2usize..200, seed in any::<u64>()) {
        let s = sample_simplex(n, &mut stream_rng(seed, 0)).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.weights().iter().all(|&e| e > 0.0 && e < 1.0));
        prop_assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
