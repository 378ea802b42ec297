//! Two TCP endpoints joined by a lossy, jittery pipe.

use llnsim::tcp::{Segment, TcpConfig, TcpConn, TcpState};
use llnsim::SimTime;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    sent: Vec<u8>,
    received: Vec<u8>,
    aborted: bool,
    max_rto_fires: u64,
}

fn run_pipe(seed: u64, loss: f64, len: usize, cfg: TcpConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
    let mut ends = [TcpConn::connect(cfg.clone(), 100, SimTime::ZERO), TcpConn::listen(cfg, 9000)];
    // (arrival time, tiebreak, destination end, segment)
    let mut wire: Vec<(u64, u64, usize, Segment)> = Vec::new();
    let mut written = 0;
    let mut received = Vec::new();
    let mut now = 0u64;
    let mut n = 0u64;
    let mut aborted = false;
    while now < 3_600_000_000 {
        let t = SimTime::from_micros(now);
        if ends[0].state() == TcpState::Established && written < data.len() {
            written += ends[0].send(&data[written..]);
        }
        received.extend(ends[1].recv(usize::MAX));
        for side in 0..2 {
            for seg in ends[side].poll_output(t) {
                if rng.gen_bool(loss) {
                    continue;
                }
                let delay = 20_000 + rng.gen_range(0..60_000);
                n += 1;
                wire.push((now + delay, n, 1 - side, seg));
            }
        }
        if received.len() == data.len() {
            break;
        }
        if ends.iter().any(|e| e.state() == TcpState::Closed) {
            aborted = true;
            break;
        }
        let next_wire = wire.iter().map(|w| (w.0, w.1)).min();
        let next_timer = ends.iter().filter_map(|e| e.next_deadline()).map(|d| d.micros()).min();
        let Some(next) = next_wire.map(|w| w.0).into_iter().chain(next_timer).min() else {
            break;
        };
        now = next.max(now);
        let t = SimTime::from_micros(now);
        if let Some(i) = wire.iter().position(|w| (w.0, w.1) == next_wire.unwrap_or((u64::MAX, 0)) && w.0 <= now) {
            let (_, _, to, seg) = wire.swap_remove(i);
            ends[to].tcp_input(t, seg);
        }
        for e in ends.iter_mut() {
            if e.next_deadline().is_some_and(|d| d <= t) {
                e.on_timer(t);
            }
        }
        assert_eq!(ends[1].recv_buffer().truncated(), 0, "sender overran the advertised window");
        assert!(ends[0].unacked_data() <= ends[0].send_buffer().capacity());
    }
    Outcome {
        sent: data,
        received,
        aborted,
        max_rto_fires: ends[0].stats().rto_fires,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn byte_stream_survives_loss(seed in any::<u64>(), loss in 0.0..0.2f64, len in 1usize..20_000) {
        let o = run_pipe(seed, loss, len, TcpConfig::default());
        prop_assume!(!o.aborted);
        prop_assert_eq!(o.received, o.sent);
    }

    #[test]
    fn byte_stream_without_sack_or_delack(seed in any::<u64>(), loss in 0.0..0.15f64) {
        let cfg = TcpConfig { sack: false, delayed_ack: false, ..TcpConfig::default() };
        let o = run_pipe(seed, loss, 8_000, cfg);
        prop_assume!(!o.aborted);
        prop_assert_eq!(o.received, o.sent);
    }
}

#[test]
fn lossless_pipe_needs_no_timeouts() {
    let o = run_pipe(1, 0.0, 50_000, TcpConfig::default());
    assert!(!o.aborted);
    assert_eq!(o.received, o.sent);
    assert_eq!(o.max_rto_fires, 0);
}
