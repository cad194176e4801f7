use attnae::data::{
    make_windows, scale, split_train_val, unscale, ChannelBounds, ScalerBounds, SignalFrame,
    CHANNELS,
};
use attnae::numeric::Matrix;
use proptest::prelude::*;

fn frame_from(rows: usize, values: Vec<f64>) -> SignalFrame {
    SignalFrame::standard(Matrix::from_vec(rows, CHANNELS.len(), values).unwrap()).unwrap()
}

fn bounds_from(ranges: &[(f64, f64)]) -> ScalerBounds {
    ScalerBounds {
        provenance: "test".into(),
        channels: CHANNELS
            .iter()
            .zip(ranges)
            .map(|(c, &(min, width))| {
                (
                    c.to_string(),
                    ChannelBounds {
                        min,
                        max: min + width,
                    },
                )
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn window_count_is_n_minus_t_plus_one(n in 1usize..400, t_frac in 0.0f64..1.0, stride in 1usize..4) {
        let t = 1 + ((n - 1) as f64 * t_frac) as usize;
        let f = frame_from(n, vec![0.5; n * CHANNELS.len()]);
        let b = make_windows(&f, t, stride).unwrap();
        prop_assert_eq!(b.len(), (n - t) / stride + 1);
        prop_assert!(b.starts.iter().all(|&s| s + t <= n));
    }

    #[test]
    fn scale_round_trip_within_range_tolerance(
        ranges in proptest::collection::vec((-100.0f64..100.0, 0.01f64..1e3), 6),
        unit in proptest::collection::vec(0.0f64..=1.0, 6 * 30),
    ) {
        let b = bounds_from(&ranges);
        let values: Vec<f64> = unit
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let (min, width) = ranges[i % 6];
                min + u * width
            })
            .collect();
        let f = frame_from(30, values);
        let back = unscale(&scale(&f, &b).unwrap(), &b).unwrap();
        for r in 0..30 {
            for (c, &(_, width)) in ranges.iter().enumerate() {
                let err = (back.values.get(r, c) - f.values.get(r, c)).abs() / width;
                prop_assert!(err <= 1e-12, "row {} col {}: {}", r, c, err);
            }
        }
    }

    #[test]
    fn split_leaves_a_guard_gap(n in 10usize..300, t in 1usize..25, fraction in 0.5f64..0.9) {
        let values: Vec<f64> = (0..n * 6).map(|i| (i / 6) as f64).collect();
        let f = frame_from(n, values);
        if let Ok((tr, va)) = split_train_val(&f, fraction, t) {
            let last_train = tr.values.get(tr.len() - 1, 0);
            let first_val = va.values.get(0, 0);
            prop_assert!(first_val - last_train > t as f64);
            prop_assert_eq!(tr.len() + va.len() + t, n);
        }
    }
}

#[test]
fn out_of_range_values_are_clamped() {
    let b = bounds_from(&[(0.0, 1.0); 6]);
    let mut values = vec![0.5; 12];
    values[0] = -3.0;
    values[7] = 9.0;
    let s = scale(&frame_from(2, values), &b).unwrap();
    assert_eq!(s.values.get(0, 0), 0.0);
    assert_eq!(s.values.get(1, 1), 1.0);
}
