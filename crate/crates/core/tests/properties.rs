use proptest::prelude::*;
use radnet::ops::{avgpool2d, concat_channels, conv2d, maxpool2d, softmax, split_channels};
use radnet::oracle::naive_conv2d;
use radnet::selftest::{self, Check};
use radnet::Tensor;

fn tensor4(n: usize, c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f32..1.0, n * c * h * w).prop_map(move |d| Tensor::new([n, c, h, w], d).unwrap())
}

proptest! {
    #[test]
    fn conv_matches_naive_loops(
        (x, wt, stride, pad) in (1usize..3, 1usize..4, 1usize..4, 1usize..4, 3usize..8, 1usize..3)
            .prop_flat_map(|(n, cin, cout, k, size, stride)| {
                let k = k.min(size);
                (tensor4(n, cin, size, size), tensor4(cout, cin, k, k), Just(stride), 0..=k / 2)
            })
    ) {
        let fast = conv2d(&x, &wt, None, stride, pad).unwrap();
        let slow = naive_conv2d(&x, &wt, None, stride, pad).unwrap();
        prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-5);
    }

    #[test]
    fn concat_then_split_is_identity(a in tensor4(2, 3, 2, 2), b in tensor4(2, 1, 2, 2), c in tensor4(2, 2, 2, 2)) {
        let joined = concat_channels(&[&a, &b, &c]).unwrap();
        prop_assert_eq!(joined.shape()[1], 6);
        let parts = split_channels(&joined, &[3, 1, 2]).unwrap();
        prop_assert_eq!(&parts[0], &a);
        prop_assert_eq!(&parts[1], &b);
        prop_assert_eq!(&parts[2], &c);
    }

    #[test]
    fn softmax_rows_are_distributions(d in prop::collection::vec(-50.0f32..50.0, 12)) {
        let p = softmax(&Tensor::new([4, 3], d).unwrap()).unwrap();
        for row in p.data().chunks(3) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn max_pool_dominates_average_pool(x in tensor4(1, 2, 6, 6)) {
        let m = maxpool2d(&x, 2, 2, 0).unwrap().output;
        let a = avgpool2d(&x, 2, 2).unwrap();
        prop_assert!(m.data().iter().zip(a.data()).all(|(m, a)| m >= a));
    }
}

#[test]
fn selftest_suites_pass_and_faults_are_named() {
    let clean = selftest::run(&Check::ALL, None).unwrap();
    for o in &clean {
        assert!(o.passed, "{}: {}", o.check, o.detail);
    }
    for fault in Check::ALL {
        let out = selftest::run(&Check::ALL, Some(fault)).unwrap();
        let failed: Vec<Check> = out.iter().filter(|o| !o.passed).map(|o| o.check).collect();
        assert_eq!(failed, vec![fault]);
    }
}
