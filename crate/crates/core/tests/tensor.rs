use objdecode::tensor::gradcheck::standard_battery;
use objdecode::tensor::{softmax_rows, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_passes_the_battery_on_ten_instances() {
    let reports = standard_battery::<f64>(10, 1e-4).unwrap();
    for r in &reports {
        assert_eq!(r.instances, 10);
        assert!(r.passed, "{} max relative error {}", r.name, r.max_rel_error);
    }
    for op in ["conv2d", "batch_norm_train", "linear", "lstm_cell", "softmax_cross_entropy", "dropout"] {
        assert!(reports.iter().any(|r| r.name == op), "battery lacks {op}");
    }
}

#[test]
fn f32_battery_is_looser_than_f64() {
    let r32 = standard_battery::<f32>(2, 1.0).unwrap();
    let r64 = standard_battery::<f64>(2, 1.0).unwrap();
    let worst = |rs: &[objdecode::tensor::gradcheck::GradCheckReport]| rs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    assert!(worst(&r32) > worst(&r64));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 1usize..80,
        seed in any::<u64>(),
        scale in 0.1f64..200.0,
    ) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect();
        let p = softmax_rows(&logits, cols);
        for row in p.chunks(cols) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn valid_convolution_extents(
        h in 1usize..12,
        w in 1usize..12,
        kh in 1usize..12,
        kw in 1usize..12,
        cin in 1usize..3,
        cout in 1usize..3,
    ) {
        prop_assume!(kh <= h && kw <= w);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[2, cin, h, w]));
        let k = tape.constant(Tensor::ones(&[cout, cin, kh, kw]));
        let y = tape.conv2d(x, k, None).unwrap();
        prop_assert_eq!(tape.shape(y), &[2, cout, h - kh + 1, w - kw + 1][..]);
        let full = (cin * kh * kw) as f32;
        prop_assert!(tape.value(y).data().iter().all(|&v| v == full));
    }
}
