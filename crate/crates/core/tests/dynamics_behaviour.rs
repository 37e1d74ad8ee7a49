use kinex::analytics::{central_moment, firm_means};
use kinex::dynamics::{run, Arity, EconomyConfig, GlvSpec, Mode, ShockDist, TurnoverProfile};
use kinex::statfit::{self, ks_two_sample};

fn config(
    n: usize,
    turnover: TurnoverProfile,
    steps: u64,
    burn_in: u64,
    stride: u64,
) -> EconomyConfig {
    let mut cfg = EconomyConfig::new(n, turnover, steps);
    cfg.burn_in = burn_in;
    cfg.record_stride = stride;
    cfg.seed = 2024;
    cfg
}

fn glv(lambda: ShockDist, a: ShockDist, steps: u64) -> EconomyConfig {
    let mut cfg = config(200, TurnoverProfile::constant(0.0), steps, 100, 1);
    cfg.mode = Mode::Glv;
    cfg.glv = Some(GlvSpec { lambda, a });
    cfg
}

#[test]
fn binary_and_nary_differ_for_positive_turnover() {
    let mut binary = config(1000, TurnoverProfile::constant(0.5), 400_000, 50_000, 500);
    binary.arity = Arity::Fixed(2);
    let nary = config(1000, TurnoverProfile::constant(0.5), 4000, 500, 5);
    let (b, a) = (run(&binary).unwrap(), run(&nary).unwrap());
    // Sampling noise in the KS distance is about 0.003 at these sizes.
    let ks = ks_two_sample(b.pooled(), a.pooled()).unwrap();
    assert!(ks > 0.02, "ks={ks}");
    let (vb, va) = (
        central_moment(b.pooled(), 2).unwrap(),
        central_moment(a.pooled(), 2).unwrap(),
    );
    assert!(va - vb > 0.05, "binary {vb} vs n-ary {va}");
}

#[test]
fn glv_with_constant_lambda_matches_reduced_map() {
    let lambda = 0.6;
    // Shocks are shared across firms, so one firm per time step is one draw;
    // stride 20 makes consecutive records nearly independent.
    let mut g = glv(
        ShockDist::Constant { value: lambda },
        ShockDist::Exponential { mean: 1.0 - lambda },
        400_000,
    );
    g.firm_count = 2;
    g.record_stride = 20;
    let glv_sizes: Vec<f64> = run(&g).unwrap().snapshots().map(|s| s[0]).collect();

    let mut r = config(1000, TurnoverProfile::constant(lambda), 300, 100, 20);
    r.mode = Mode::Reduced;
    let reduced = run(&r).unwrap();
    let ks = ks_two_sample(&glv_sizes, reduced.pooled()).unwrap();
    assert!(ks < 0.02, "ks={ks} over {} glv draws", glv_sizes.len());
}

#[test]
fn glv_with_zero_lambda_copies_shock() {
    let series = run(&glv(
        ShockDist::Constant { value: 0.0 },
        ShockDist::Exponential { mean: 0.5 },
        20_000,
    ))
    .unwrap();
    for s in series.snapshots() {
        assert!(s.iter().all(|&v| v == s[0]));
    }
    let draws: Vec<f64> = series.snapshots().map(|s| s[0]).collect();
    let fit = statfit::fit_exponential(&draws).unwrap();
    assert!((fit.param("rate") - 2.0).abs() < 3.0 * fit.param("rate_se") + 1e-9);
}

#[test]
fn glv_with_occasional_growth_has_finite_tail() {
    let mut cfg = glv(
        ShockDist::Uniform {
            low: 0.5,
            high: 1.1,
        },
        ShockDist::Exponential { mean: 0.1 },
        1_000_000,
    );
    cfg.firm_count = 2;
    cfg.burn_in = 1000;
    let draws: Vec<f64> = run(&cfg).unwrap().snapshots().map(|s| s[0]).collect();
    assert!(draws.iter().all(|v| v.is_finite() && *v > 0.0));
    let fit = statfit::fit_powerlaw_tail_quantile(&draws, 0.99).unwrap();
    let alpha = fit.param("alpha");
    assert!(alpha.is_finite() && alpha > 1.0, "alpha={alpha}");
}

#[test]
fn reduced_distributed_time_average() {
    let mut cfg = config(
        2,
        TurnoverProfile::explicit(vec![0.9, 0.0]).with_c(0.1),
        1_000_000,
        1000,
        1,
    );
    cfg.mode = Mode::Reduced;
    let means = firm_means(&run(&cfg).unwrap());
    assert!((means[0] - 1.0).abs() < 0.02, "λ=0.9 mean={}", means[0]);
    assert!((means[1] - 0.1).abs() < 0.002, "λ=0 mean={}", means[1]);
}

#[test]
fn zero_turnover_unit_pool_is_exponential() {
    let mut cfg = config(
        1000,
        TurnoverProfile::explicit(vec![0.0; 1000]).with_c(1.0),
        1100,
        100,
        1,
    );
    cfg.mode = Mode::Reduced;
    let series = run(&cfg).unwrap();
    let fit = statfit::fit_exponential(series.pooled()).unwrap();
    assert!((fit.param("rate") - 1.0).abs() < 3.0 * fit.param("rate_se"));
    assert!(fit.ks_statistic.unwrap() < 0.01);
    let v = central_moment(series.pooled(), 2).unwrap();
    assert!((v - 1.0).abs() < 0.01);
}

#[test]
fn nary_steps_mix_faster_than_binary() {
    // One step touches every firm in the N-ary map but only two in the
    // binary one, so the same step budget leaves binary runs far less mixed.
    let lag_correlation = |arity: Arity| {
        let mut cfg = config(500, TurnoverProfile::constant(0.5), 300, 100, 1);
        cfg.arity = arity;
        let s = run(&cfg).unwrap();
        let (a, b) = (s.snapshot(0), s.snapshot(s.len() - 1));
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    assert!(lag_correlation(Arity::Fixed(2)) > 0.5);
    assert!(lag_correlation(Arity::All).abs() < 0.2);
}
