use criterion::{black_box, criterion_group, criterion_main, Criterion};
use llnsim::buffers::RecvBuffer;
use llnsim::experiments::run_scenario;
use llnsim::sim::SimTime;
use llnsim::sixlowpan::{fragment, HeaderBudget, Reassembler, Reassembly};
use llnsim_bench::{scrambled_segments, short_chain, short_single_hop};

fn recv_buffer(c: &mut Criterion) {
    let segs = scrambled_segments(64 * 1024, 462);
    let data = vec![7u8; 462];
    c.bench_function("recv_buffer_scrambled_64k", |b| {
        b.iter(|| {
            let mut rb = RecvBuffer::new(64 * 1024);
            for &(off, len) in &segs {
                rb.rb_insert(off, &data[..len]);
            }
            black_box(rb.rb_read(64 * 1024).len())
        })
    });
}

fn frag_roundtrip(c: &mut Criterion) {
    let budget = HeaderBudget::default();
    let payload: Vec<u8> = (0..1280u32).map(|i| i as u8).collect();
    c.bench_function("fragment_reassemble_1280", |b| {
        b.iter(|| {
            let frags = fragment((), &payload, &budget, 1).unwrap();
            let mut r = Reassembler::new(1_000_000);
            let mut out = None;
            for f in frags.into_iter().rev() {
                if let Reassembly::Complete(_, d) = r.reassemble(SimTime::from_micros(0), 3, f) {
                    out = Some(d);
                }
            }
            black_box(out.unwrap().len())
        })
    });
}

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    let one = short_single_hop();
    let three = short_chain();
    g.bench_function("single_hop_10s", |b| b.iter(|| run_scenario(&one).unwrap().summary.goodput_bps));
    g.bench_function("chain3_10s", |b| b.iter(|| run_scenario(&three).unwrap().summary.goodput_bps));
    g.finish();
}

criterion_group!(benches, recv_buffer, frag_roundtrip, scenarios);
criterion_main!(benches);
