use llnsim::sixlowpan::{fragment, HeaderBudget, Reassembler, Reassembly, MAX_DATAGRAM_PAYLOAD, REASSEMBLY_TIMEOUT_US};
use llnsim::SimTime;
use proptest::prelude::*;

fn budget() -> impl Strategy<Value = HeaderBudget> {
    (38u16..=107, 16u16..=35).prop_map(|(f, n)| HeaderBudget::new(f, n).unwrap())
}

proptest! {
    #[test]
    fn roundtrip_in_any_order(
        b in budget(),
        payload in proptest::collection::vec(any::<u8>(), 0..=MAX_DATAGRAM_PAYLOAD),
        order in any::<u64>(),
        tag in any::<u16>(),
    ) {
        let mut frags = fragment(7u32, &payload, &b, tag).unwrap();
        prop_assert_eq!(frags.len(), b.frames_for(payload.len()));
        let on_air: usize = frags.iter().map(|f| f.frame_len as usize).sum();
        prop_assert_eq!(on_air, b.bytes_on_air(payload.len()));
        prop_assert!(frags.iter().all(|f| f.frame_len as usize <= 127));
        // deterministic shuffle driven by `order`
        let mut k = order;
        for i in (1..frags.len()).rev() {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            frags.swap(i, (k >> 33) as usize % (i + 1));
        }
        let mut r = Reassembler::new(REASSEMBLY_TIMEOUT_US);
        let n = frags.len();
        for (i, f) in frags.into_iter().enumerate() {
            match r.reassemble(SimTime::ZERO, 3, f) {
                Reassembly::Complete(h, bytes) => {
                    prop_assert_eq!(i, n - 1);
                    prop_assert_eq!(h, 7);
                    prop_assert_eq!(&bytes, &payload);
                }
                Reassembly::Pending => prop_assert!(i < n - 1),
            }
        }
        prop_assert_eq!(r.in_progress(), 0);
    }

    /// Two senders interleaving datagrams that reuse the same tag.
    #[test]
    fn interleaved_senders_stay_apart(
        a in proptest::collection::vec(any::<u8>(), 200..=1280),
        c in proptest::collection::vec(any::<u8>(), 200..=1280),
    ) {
        let b = HeaderBudget::default();
        let fa = fragment(1u8, &a, &b, 9).unwrap();
        let fc = fragment(2u8, &c, &b, 9).unwrap();
        let mut r = Reassembler::new(REASSEMBLY_TIMEOUT_US);
        let mut done = Vec::new();
        let mut ia = fa.into_iter();
        let mut ic = fc.into_iter();
        loop {
            let (x, y) = (ia.next(), ic.next());
            if x.is_none() && y.is_none() {
                break;
            }
            for (src, f) in [(10, x), (11, y)] {
                if let Some(f) = f {
                    if let Reassembly::Complete(h, bytes) = r.reassemble(SimTime::ZERO, src, f) {
                        done.push((h, bytes));
                    }
                }
            }
        }
        done.sort();
        prop_assert_eq!(done, vec![(1u8, a), (2u8, c)]);
    }
}
