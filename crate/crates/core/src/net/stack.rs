//! Forwarding: queues, fragmentation, reassembly, the wired cloud link and
//! loss injected at the border router.

use super::{Body, Datagram, Ev, FrameBody, FwdEntry, MacFrame, World};
use crate::mmc::IndirectQueue;
use crate::phy::{FrameKind, RedVerdict};
use crate::sim::NodeId;
use crate::sixlowpan::{fragment, Fragment, Reassembly};

impl World {
    pub(crate) fn new_datagram(&mut self, src: NodeId, dst: NodeId, body: Body, ect: bool) -> Datagram {
        self.next_dg += 1;
        Datagram {
            id: self.next_dg,
            src,
            dst,
            ect,
            ce: false,
            body,
        }
    }

    fn node_stats(&mut self, n: NodeId) -> &mut super::NodeStats {
        if n == self.cloud {
            &mut self.cloud_stats
        } else {
            &mut self.nodes[n as usize].stats
        }
    }

    /// Hands a datagram originated at `n` to the network.
    pub(crate) fn net_send(&mut self, n: NodeId, dg: Datagram) {
        self.node_stats(n).originated += 1;
        if dg.dst == n {
            self.deliver_local(n, dg);
            return;
        }
        if n == self.cloud {
            self.wire(self.br, dg);
            return;
        }
        if n == self.br && self.inject_drop() {
            return;
        }
        self.route(n, dg, false);
    }

    fn inject_drop(&mut self) -> bool {
        let p = self.p.injected_loss;
        if p > 0.0 && self.rng_injected.chance(p) {
            self.nodes[self.br as usize].stats.injected_drops += 1;
            true
        } else {
            false
        }
    }

    fn wire(&mut self, to: NodeId, dg: Datagram) {
        self.q.schedule_in(self.p.wired_delay_us, to, Ev::Wired(Box::new(dg)));
    }

    pub(crate) fn wired_arrival(&mut self, at: NodeId, dg: Datagram) {
        if at == self.cloud {
            self.deliver_local(at, dg);
            return;
        }
        if self.inject_drop() {
            return;
        }
        if dg.dst == at {
            self.deliver_local(at, dg);
        } else {
            self.nodes[at as usize].stats.forwarded += 1;
            self.route(at, dg, true);
        }
    }

    /// A datagram reassembled at radio node `r`.
    fn on_datagram(&mut self, r: NodeId, dg: Datagram) {
        if r == self.br && self.inject_drop() {
            return;
        }
        if dg.dst == r {
            self.deliver_local(r, dg);
        } else {
            self.nodes[r as usize].stats.forwarded += 1;
            self.route(r, dg, true);
        }
    }

    fn route(&mut self, n: NodeId, dg: Datagram, forwarded: bool) {
        if dg.dst == self.cloud && n == self.br {
            self.wire(self.cloud, dg);
            return;
        }
        let target = if dg.dst == self.cloud { self.br } else { dg.dst };
        let next = self.topo.next_hop(n, target).expect("connected topology");
        if self.nodes[next as usize].sleepy {
            self.enqueue_indirect(n, next, dg);
            return;
        }
        if forwarded {
            let frames = self.fragment_datagram(n, next, dg);
            let total = frames.len();
            for (i, f) in frames.into_iter().enumerate() {
                if !self.relay_frame(n, f, if i == 0 { total } else { 0 }) {
                    break;
                }
            }
        } else {
            self.next_enq += 1;
            let stamp = self.next_enq;
            self.nodes[n as usize].local_q.push_back((stamp, dg));
        }
        self.mac_kick(n);
    }

    /// Queues one relayed fragment. Admission is per datagram: the first
    /// fragment passes RED and reserves `frames` slots for the whole
    /// datagram, later ones (`frames == 0`) ride on that reservation.
    fn relay_frame(&mut self, n: NodeId, frame: MacFrame, frames: usize) -> bool {
        self.next_enq += 1;
        let stamp = self.next_enq;
        let now = self.now();
        let node = &mut self.nodes[n as usize];
        let verdict = if frames > 0 {
            let ect = match &frame.body {
                FrameBody::Frag(f) => f.header.as_ref().is_some_and(|h| h.ect),
                _ => false,
            };
            node.relay_q.red_enqueue((stamp, frame), frames, ect, now, &mut node.rng_queue, |item| {
                if let FrameBody::Frag(f) = &mut item.1.body {
                    if let Some(h) = f.header.as_mut() {
                        h.ce = true;
                    }
                }
            })
        } else {
            node.relay_q.push((stamp, frame), 0)
        };
        match verdict {
            RedVerdict::TailDrop => node.stats.queue_drops += 1,
            RedVerdict::EarlyDrop => node.stats.red_drops += 1,
            RedVerdict::Marked => node.stats.red_marks += 1,
            RedVerdict::Enqueued => {}
        }
        verdict.accepted()
    }

    /// Next hop for a fragmented datagram that `r` forwards fragment by
    /// fragment. None when `r` must reassemble it: it is the destination,
    /// the border router, or the parent of a sleepy next hop.
    fn forward_hop(&self, r: NodeId, dg: &Datagram) -> Option<NodeId> {
        if !self.p.fragment_forwarding || dg.dst == r || r == self.br {
            return None;
        }
        let target = if dg.dst == self.cloud { self.br } else { dg.dst };
        let next = self.topo.next_hop(r, target)?;
        (!self.nodes[next as usize].sleepy).then_some(next)
    }

    fn forward_fragment(&mut self, r: NodeId, key: (NodeId, u16), mut frag: Fragment<Datagram>) {
        let now = self.now();
        let first = frag.offset == 0;
        let reserve = match frag.header.as_ref() {
            Some(h) if first => {
                let budget = if h.is_coap() { self.p.coap_budget } else { self.p.budget };
                budget.frames_for(frag.datagram_size as usize).max(1)
            }
            _ => 0,
        };
        let timeout = self.p.reassembly_timeout_us;
        let node = &mut self.nodes[r as usize];
        if first {
            let next = match node.fwd.get(&key) {
                Some(e) if e.deadline > now && e.left > 0 && !e.dead => return,
                _ => self.forward_hop(r, frag.header.as_ref().expect("first fragment")).expect("checked"),
            };
            let node = &mut self.nodes[r as usize];
            node.fwd.retain(|_, e| e.deadline > now);
            node.frag_tag = node.frag_tag.wrapping_add(1);
            node.stats.forwarded += 1;
            node.fwd.insert(
                key,
                FwdEntry {
                    next,
                    tag: node.frag_tag,
                    left: frag.datagram_size as usize,
                    dead: false,
                    deadline: now + timeout,
                },
            );
        }
        let node = &mut self.nodes[r as usize];
        let e = node.fwd.get_mut(&key).expect("entry");
        e.left = e.left.saturating_sub(frag.data.len());
        let (next, tag, dead, done) = (e.next, e.tag, e.dead, e.left == 0);
        if done {
            node.fwd.remove(&key);
        }
        if dead {
            return;
        }
        frag.tag = tag;
        let frame = MacFrame {
            src: r,
            dst: next,
            kind: FrameKind::Data,
            len: frag.frame_len,
            mac_overhead: self.p.budget.mac_overhead,
            requires_ack: true,
            pending: false,
            seq: 0,
            body: FrameBody::Frag(frag),
        };
        if !self.relay_frame(r, frame, reserve) {
            self.kill_forward(r, next, tag);
        }
        self.mac_kick(r);
    }

    /// Stops forwarding the datagram sent to `next` under `tag`.
    pub(crate) fn kill_forward(&mut self, r: NodeId, next: NodeId, tag: u16) {
        let node = &mut self.nodes[r as usize];
        if let Some(e) = node.fwd.values_mut().find(|e| e.next == next && e.tag == tag) {
            e.dead = true;
        }
    }

    fn enqueue_indirect(&mut self, n: NodeId, child: NodeId, dg: Datagram) {
        let frames = self.fragment_datagram(n, child, dg);
        let cap = self.p.duty.as_ref().expect("sleepy child").indirect_capacity;
        let mut seqs = Vec::with_capacity(frames.len());
        for _ in 0..frames.len() {
            let node = &mut self.nodes[n as usize];
            node.tx_seq = node.tx_seq.wrapping_add(1);
            seqs.push(node.tx_seq);
        }
        let node = &mut self.nodes[n as usize];
        let q = node.indirect.entry(child).or_insert_with(|| IndirectQueue::new(cap));
        for (mut f, seq) in frames.into_iter().zip(seqs) {
            f.seq = seq;
            if q.parent_enqueue_indirect(f).is_some() {
                node.stats.indirect_drops += 1;
            }
        }
        if node.awake_children.contains(&child) {
            self.mac_kick(n);
        }
    }

    fn fragment_datagram(&mut self, n: NodeId, next: NodeId, mut dg: Datagram) -> Vec<MacFrame> {
        let budget = if dg.is_coap() { self.p.coap_budget } else { self.p.budget };
        let payload = dg.take_payload();
        let node = &mut self.nodes[n as usize];
        node.frag_tag = node.frag_tag.wrapping_add(1);
        let frags = fragment(dg, &payload, &budget, node.frag_tag).expect("datagram within size limit");
        frags
            .into_iter()
            .map(|f| MacFrame {
                src: n,
                dst: next,
                kind: FrameKind::Data,
                len: f.frame_len,
                mac_overhead: budget.mac_overhead,
                requires_ack: true,
                pending: false,
                seq: 0,
                body: FrameBody::Frag(f),
            })
            .collect()
    }

    /// Loads the radio with the oldest queued datagram or relayed fragment.
    pub(crate) fn dequeue_datagram(&mut self, n: NodeId) {
        let now = self.now();
        let node = &mut self.nodes[n as usize];
        let local = node.local_q.front().map(|x| x.0);
        let relay = node.relay_q.front().map(|x| x.0);
        let take_local = match (local, relay) {
            (None, None) => return,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(b)) => a < b,
        };
        if !take_local {
            let (_, frame) = node.relay_q.pop(now).expect("non-empty");
            node.cur.push_back(frame);
            return;
        }
        let (_, dg) = node.local_q.pop_front().expect("non-empty");
        let target = if dg.dst == self.cloud { self.br } else { dg.dst };
        let next = self.topo.next_hop(n, target).expect("connected topology");
        let frames = self.fragment_datagram(n, next, dg);
        self.nodes[n as usize].cur = frames.into();
    }

    pub(crate) fn on_fragment(&mut self, r: NodeId, from: NodeId, frag: Fragment<Datagram>) {
        let now = self.now();
        if frag.fragmented {
            let key = (from, frag.tag);
            let relay = if frag.offset == 0 {
                frag.header.as_ref().is_some_and(|h| self.forward_hop(r, h).is_some())
            } else {
                self.nodes[r as usize].fwd.contains_key(&key)
            };
            if relay {
                self.forward_fragment(r, key, frag);
                return;
            }
        }
        if let Reassembly::Complete(mut dg, bytes) = self.nodes[r as usize].reasm.reassemble(now, from, frag) {
            dg.put_payload(bytes);
            self.on_datagram(r, dg);
        }
    }

    fn deliver_local(&mut self, n: NodeId, dg: Datagram) {
        let ce = dg.ce;
        match dg.body {
            Body::Tcp { conn, to, mut seg } => {
                seg.ce = ce;
                debug_assert_eq!(self.conns[conn as usize].ends[to as usize].node, n);
                self.tcp_deliver(conn, to, seg);
            }
            Body::Coap { flow, to, msg } => self.coap_deliver(flow, to, msg),
        }
    }
}
