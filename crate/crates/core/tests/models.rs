use llnsim::analytics::{model_classic, model_lln, model_lln_burst, multihop_bound, ModelParams};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (50.0..1500.0f64, 1_000.0..5_000_000.0f64, 1.0..64.0f64, 0.0..0.5f64, 0.5..4.0f64)
        .prop_map(|(mss, rtt, w, p, ell)| ModelParams { ell, ..ModelParams::new(mss, rtt, w, p) })
}

proptest! {
    #[test]
    fn lln_monotone(q in params(), k in 1.01..3.0f64) {
        let g = model_lln(&q).unwrap();
        let more = |f: &dyn Fn(&mut ModelParams)| {
            let mut x = q;
            f(&mut x);
            model_lln(&x).unwrap()
        };
        prop_assert!(more(&|x| x.mss_bytes *= k) > g);
        prop_assert!(more(&|x| x.w *= k) > g);
        prop_assert!(more(&|x| x.rtt_us *= k) < g);
        if q.p * k < 1.0 && q.p > 0.0 {
            prop_assert!(more(&|x| x.p *= k) < g);
        }
    }

    #[test]
    fn burst_form_agrees(q in params()) {
        let a = model_lln(&q).unwrap();
        let b = model_lln_burst(&q).unwrap();
        prop_assert!(((a - b) / a).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn classic_above_lln_for_small_windows(mss in 50.0..1500.0f64, rtt in 1_000.0..5_000_000.0f64, p in 1e-4..0.1f64) {
        let lln = model_lln(&ModelParams::new(mss, rtt, 4.0, p)).unwrap();
        let classic = model_classic(mss, rtt, p).unwrap();
        prop_assert!(classic > lln);
    }

    #[test]
    fn multihop_bound_flat_past_three(b in 1.0..1e6f64, h in 3u32..20) {
        prop_assert_eq!(multihop_bound(b, h), b / 3.0);
        prop_assert!(multihop_bound(b, 1) >= multihop_bound(b, 2));
    }
}

#[test]
fn eq1_at_ell_two() {
    for &(mss, rtt, w, p) in &[(462.0, 100_000.0, 4.0, 0.06), (100.0, 2e6, 1.0, 0.3), (1000.0, 5e4, 16.0, 0.0)] {
        let direct = mss * 8.0 / (rtt / 1e6) / (1.0 / w + 2.0 * p);
        let m = model_lln(&ModelParams::new(mss, rtt, w, p)).unwrap();
        assert!(((m - direct) / direct).abs() < 1e-12);
    }
}
