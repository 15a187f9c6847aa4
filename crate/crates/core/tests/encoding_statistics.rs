use ssnn_bp::rng::RngStream;
use ssnn_bp::spike::poisson_encode;

/// χ² goodness of fit (1 degree of freedom) of spike/no-spike counts over
/// 10⁶ Bernoulli draws; 6.635 is the 0.01 critical value.
#[test]
fn encoding_rate_passes_chi_square() {
    for (k, &rate) in [0.05, 0.3, 0.5, 0.83].iter().enumerate() {
        let train = poisson_encode(&[rate; 100], 10_000, &RngStream::new(2024, k as u64)).unwrap();
        let n = 1_000_000.0;
        let ones = train.total() as f64;
        let zeros = n - ones;
        let (e1, e0) = (n * rate, n * (1.0 - rate));
        let chi2 = (ones - e1).powi(2) / e1 + (zeros - e0).powi(2) / e0;
        assert!(chi2 < 6.635, "rate {rate}: chi2 {chi2}");
    }
}

#[test]
fn encoding_is_bit_identical_across_threads() {
    let reference = poisson_encode(&[0.2, 0.7, 0.4], 500, &RngStream::new(9, 3)).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| std::thread::spawn(|| poisson_encode(&[0.2, 0.7, 0.4], 500, &RngStream::new(9, 3)).unwrap()))
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), reference);
    }
}
