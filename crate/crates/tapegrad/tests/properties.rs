use proptest::prelude::*;
use tapegrad::Tape;

proptest! {
    // Softmax rows are a probability distribution; masked entries get
    // exactly zero weight and the rest still sum to one.
    #[test]
    fn softmax_rows_are_distributions(
        values in prop::collection::vec(-50.0f64..50.0, 12),
        mask_bits in prop::collection::vec(prop::bool::ANY, 12),
    ) {
        let rows = 3;
        let cols = 4;
        // keep at least one live entry per row
        let mut mask: Vec<f64> = mask_bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        for r in 0..rows {
            if mask[r * cols..(r + 1) * cols].iter().all(|&m| m == 0.0) {
                mask[r * cols] = 1.0;
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(vec![rows, cols], values).unwrap();
        let m = tape.constant(vec![rows, cols], mask.clone()).unwrap();
        let y = tape.softmax_masked(x, m).unwrap();
        let d = tape.data(y);
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                prop_assert!(v >= 0.0);
                if mask[r * cols + j] == 0.0 {
                    prop_assert_eq!(v, 0.0);
                }
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    // Broadcast add agrees with explicit expansion.
    #[test]
    fn broadcast_add_matches_manual(
        a in prop::collection::vec(-10.0f64..10.0, 12),
        b in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let mut tape = Tape::new();
        let av = tape.constant(vec![3, 4], a.clone()).unwrap();
        let bv = tape.constant(vec![4], b.clone()).unwrap();
        let y = tape.add(av, bv).unwrap();
        let d = tape.data(y);
        for r in 0..3 {
            for c in 0..4 {
                prop_assert_eq!(d[r * 4 + c], a[r * 4 + c] + b[c]);
            }
        }
    }
}
