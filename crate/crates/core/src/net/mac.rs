//! CSMA-CA MAC, the shared medium and sleepy-leaf polling.

use super::{Ev, FrameBody, MacFrame, World};
use crate::mmc::DutyTrigger;
use crate::phy::{
    arbitrate_reception, occupancy_for_frame, AirTx, FrameKind, ListenState, RxOutcome, ACK_FRAME_BYTES, ACK_WAIT_US,
    CCA_US, LOAD_US, POST_US, TURNAROUND_US,
};
use crate::sim::{EventHandle, Layer, NodeId, SimRng, SimTime};

/// Data request command frame length.
pub const POLL_FRAME_BYTES: u16 = 18;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) enum Phase {
    #[default]
    Idle,
    Load,
    Backoff,
    Cca,
    Turnaround,
    Tx,
    AckWait,
    Post,
    RetryWait,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum JobKind {
    Data,
    Indirect(NodeId),
    Poll,
}

#[derive(Clone, Debug)]
pub(crate) struct Job {
    pub frame: MacFrame,
    pub kind: JobKind,
    pub attempts: u32,
    pub max_attempts: u32,
    pub nb: u8,
    pub be: u8,
    pub cca_start: SimTime,
    pub acked: bool,
    /// Frame-pending bit of the ACK that acknowledged this frame.
    pub ack_pending: bool,
}

impl Job {
    fn new(frame: MacFrame, kind: JobKind, max_attempts: u32) -> Self {
        Job {
            frame,
            kind,
            attempts: 0,
            max_attempts,
            nb: 0,
            be: 0,
            cca_start: SimTime::ZERO,
            acked: false,
            ack_pending: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Mac {
    pub phase: Phase,
    pub job: Option<Job>,
    /// A job set aside for a sleepy child's frame.
    pub suspended: Option<Job>,
    pub ev: Option<EventHandle>,
    pub busy_us: u64,
}

impl World {
    fn mac_schedule(&mut self, n: NodeId, delay: u64) {
        let h = self.q.schedule_in(delay, n, Ev::Mac);
        self.nodes[n as usize].mac.ev = Some(h);
    }

    fn next_seq(&mut self, n: NodeId) -> u8 {
        let node = &mut self.nodes[n as usize];
        node.tx_seq = node.tx_seq.wrapping_add(1);
        node.tx_seq
    }

    /// Starts the next frame if the MAC is idle.
    pub(crate) fn mac_kick(&mut self, n: NodeId) {
        if !self.is_radio(n) || self.nodes[n as usize].mac.phase != Phase::Idle {
            return;
        }
        match self.next_job(n) {
            Some(job) => {
                self.nodes[n as usize].mac.job = Some(job);
                self.start_attempt(n);
            }
            None => self.maybe_sleep(n),
        }
    }

    fn indirect_ready(&self, n: NodeId) -> Option<NodeId> {
        let node = &self.nodes[n as usize];
        node.awake_children
            .iter()
            .copied()
            .find(|c| node.indirect.get(c).is_some_and(|q| !q.is_empty()))
    }

    fn next_job(&mut self, n: NodeId) -> Option<Job> {
        if let Some(child) = self.indirect_ready(n) {
            let attempts = 1 + self.p.duty.as_ref().map_or(0, |d| d.indirect_retries as u32);
            let q = self.nodes[n as usize].indirect.get_mut(&child).expect("ready");
            q.in_progress = true;
            let mut f = q.front().expect("non-empty").clone();
            f.pending = q.more_after_front();
            return Some(Job::new(f, JobKind::Indirect(child), attempts));
        }
        if let Some(job) = self.nodes[n as usize].mac.suspended.take() {
            return Some(job);
        }
        let max_attempts = self.p.link.max_attempts();
        let poll = self.nodes[n as usize].duty.as_mut().is_some_and(|d| std::mem::take(&mut d.poll_due));
        if poll {
            let parent = self.topo.parent(n).expect("sleepy node has a parent");
            let seq = self.next_seq(n);
            let frame = MacFrame {
                src: n,
                dst: parent,
                kind: FrameKind::DataRequest,
                len: POLL_FRAME_BYTES,
                mac_overhead: POLL_FRAME_BYTES - 1,
                requires_ack: true,
                pending: false,
                seq,
                body: FrameBody::Poll,
            };
            self.nodes[n as usize].stats.polls += 1;
            return Some(Job::new(frame, JobKind::Poll, max_attempts));
        }
        if self.nodes[n as usize].cur.is_empty() {
            self.dequeue_datagram(n);
        }
        let mut frame = self.nodes[n as usize].cur.pop_front()?;
        frame.seq = self.next_seq(n);
        Some(Job::new(frame, JobKind::Data, max_attempts))
    }

    fn start_attempt(&mut self, n: NodeId) {
        self.wake(n);
        let min_be = self.p.link.csma.min_be;
        let node = &mut self.nodes[n as usize];
        let job = node.mac.job.as_mut().expect("attempt without a job");
        job.attempts += 1;
        job.nb = 0;
        job.be = min_be;
        job.acked = false;
        job.ack_pending = false;
        node.mac.phase = Phase::Load;
        node.mac.busy_us += LOAD_US;
        self.mac_schedule(n, LOAD_US);
        self.update_listen(n);
    }

    fn backoff(&mut self, n: NodeId) {
        let csma = self.p.link.csma;
        let node = &mut self.nodes[n as usize];
        let be = node.mac.job.as_ref().expect("job").be;
        let d = csma.backoff(be, &mut node.rng_csma);
        node.mac.phase = Phase::Backoff;
        self.mac_schedule(n, d);
        self.update_listen(n);
    }

    pub(crate) fn mac_phase_end(&mut self, n: NodeId) {
        let now = self.now();
        self.nodes[n as usize].mac.ev = None;
        match self.nodes[n as usize].mac.phase {
            Phase::Load => self.backoff(n),
            Phase::Backoff => {
                let node = &mut self.nodes[n as usize];
                node.mac.phase = Phase::Cca;
                node.mac.busy_us += CCA_US;
                node.mac.job.as_mut().expect("job").cca_start = now;
                self.mac_schedule(n, CCA_US);
                self.update_listen(n);
            }
            Phase::Cca => {
                let since = self.nodes[n as usize].mac.job.as_ref().expect("job").cca_start;
                if self.channel_busy(n, since) {
                    let csma = self.p.link.csma;
                    let job = self.nodes[n as usize].mac.job.as_mut().expect("job");
                    job.nb += 1;
                    job.be = (job.be + 1).min(csma.max_be);
                    if job.nb > csma.max_backoffs {
                        let dst = job.frame.dst;
                        self.links.entry((n, dst)).or_default().cca_failures += 1;
                        self.attempt_done(n, false);
                    } else {
                        self.backoff(n);
                    }
                } else {
                    let node = &mut self.nodes[n as usize];
                    node.mac.phase = Phase::Turnaround;
                    node.mac.busy_us += TURNAROUND_US;
                    self.mac_schedule(n, TURNAROUND_US);
                    self.update_listen(n);
                }
            }
            Phase::Turnaround => {
                let frame = {
                    let node = &mut self.nodes[n as usize];
                    node.mac.phase = Phase::Tx;
                    node.mac.job.as_ref().expect("job").frame.clone()
                };
                self.links.entry((n, frame.dst)).or_default().attempts += 1;
                let air = self.start_air(n, frame);
                self.nodes[n as usize].mac.busy_us += air;
                self.update_listen(n);
            }
            Phase::AckWait => {
                let node = &mut self.nodes[n as usize];
                node.mac.phase = Phase::Post;
                node.mac.busy_us += POST_US;
                self.mac_schedule(n, POST_US);
            }
            Phase::Post => {
                let ok = self.nodes[n as usize].mac.job.as_ref().expect("job").acked;
                self.attempt_done(n, ok);
            }
            Phase::RetryWait => self.start_attempt(n),
            Phase::Idle | Phase::Tx => unreachable!("no timer in phase {:?}", self.nodes[n as usize].mac.phase),
        }
    }

    fn channel_busy(&self, n: NodeId, since: SimTime) -> bool {
        let node = &self.nodes[n as usize];
        node.ack_busy || node.heard_active > 0 || node.heard_last_end > since
    }

    fn attempt_done(&mut self, n: NodeId, ok: bool) {
        if ok {
            self.finish_job(n, true);
            return;
        }
        let (attempts, max, kind, dst) = {
            let job = self.nodes[n as usize].mac.job.as_ref().expect("job");
            (job.attempts, job.max_attempts, job.kind, job.frame.dst)
        };
        if attempts >= max {
            self.finish_job(n, false);
            return;
        }
        self.links.entry((n, dst)).or_default().retries += 1;
        let preempt = self.p.duty.as_ref().is_some_and(|d| d.preemption)
            && !matches!(kind, JobKind::Indirect(_))
            && self.indirect_ready(n).is_some();
        if preempt {
            let node = &mut self.nodes[n as usize];
            node.mac.suspended = node.mac.job.take();
            node.mac.phase = Phase::Idle;
            self.mac_kick(n);
            return;
        }
        let link = self.p.link;
        let d = link.retry_delay(&mut self.nodes[n as usize].rng_retry);
        if d == 0 {
            self.start_attempt(n);
        } else {
            self.nodes[n as usize].mac.phase = Phase::RetryWait;
            self.mac_schedule(n, d);
            self.update_listen(n);
        }
    }

    fn finish_job(&mut self, n: NodeId, ok: bool) {
        let job = {
            let node = &mut self.nodes[n as usize];
            node.mac.phase = Phase::Idle;
            node.mac.job.take().expect("job")
        };
        let link = self.links.entry((n, job.frame.dst)).or_default();
        if ok {
            link.delivered += 1;
        } else {
            link.failed += 1;
        }
        match job.kind {
            JobKind::Data => {
                let node = &mut self.nodes[n as usize];
                if !ok && !node.cur.is_empty() {
                    node.cur.clear();
                }
                if !ok {
                    node.stats.mac_drops += 1;
                    if let FrameBody::Frag(f) = &job.frame.body {
                        self.kill_forward(n, job.frame.dst, f.tag);
                    }
                }
                let node = &mut self.nodes[n as usize];
                if ok && job.ack_pending && node.sleepy {
                    let cap = self.p.duty.as_ref().expect("sleepy").pending_listen_cap_us;
                    self.open_window(n, cap);
                }
            }
            JobKind::Indirect(child) => {
                let node = &mut self.nodes[n as usize];
                let q = node.indirect.get_mut(&child).expect("queue");
                if ok {
                    q.pop();
                    if !job.frame.pending {
                        node.awake_children.remove(&child);
                    }
                } else {
                    q.in_progress = false;
                    q.retry_count = q.retry_count.saturating_add(1);
                    node.awake_children.remove(&child);
                }
            }
            JobKind::Poll => {
                if ok {
                    let d = self.p.duty.as_ref().expect("sleepy");
                    let dur = if job.ack_pending {
                        d.pending_listen_cap_us
                    } else {
                        d.data_request_timeout_us
                    };
                    self.open_window(n, dur);
                }
            }
        }
        self.mac_kick(n);
    }

    fn start_air(&mut self, n: NodeId, frame: MacFrame) -> u64 {
        let now = self.now();
        let (air, _) = occupancy_for_frame(frame.len as usize);
        let id = self.next_air;
        self.next_air += 1;
        let tx = AirTx {
            src: n,
            start: now,
            end: now + air,
        };
        let hearers: Vec<NodeId> = self.topo.neighbors(n).collect();
        for m in hearers {
            self.nodes[m as usize].heard_active += 1;
        }
        self.active_air.insert(id, (tx, frame));
        self.q.schedule(tx.end, n, Ev::AirEnd(id));
        air
    }

    fn listen_state(&self, r: NodeId, start: SimTime) -> ListenState {
        let node = &self.nodes[r as usize];
        if node.asleep || node.last_wake > start {
            ListenState::Slept
        } else if !node.listening || node.listen_since > start {
            ListenState::Busy
        } else {
            ListenState::Listening
        }
    }

    pub(crate) fn air_end(&mut self, id: u64) {
        let now = self.now();
        let (tx, frame) = self.active_air.remove(&id).expect("live transmission");
        let hearers: Vec<NodeId> = self.topo.neighbors(tx.src).collect();
        for m in hearers {
            let node = &mut self.nodes[m as usize];
            node.heard_active -= 1;
            node.heard_last_end = now;
        }
        let dst = frame.dst;
        let listen = self.listen_state(dst, tx.start);
        let others: Vec<AirTx> = self
            .active_air
            .values()
            .map(|(t, _)| *t)
            .chain(self.recent_air.iter().copied())
            .collect();
        let draw = self.nodes[dst as usize].rng_channel.unit();
        let outcome = arbitrate_reception(&self.topo, dst, &tx, &others, listen, draw);
        self.recent_air.push(tx);
        let horizon = self.active_air.values().map(|(t, _)| t.start).min();
        match horizon {
            Some(h) => self.recent_air.retain(|t| t.end > h),
            None => self.recent_air.clear(),
        }
        let kind = frame.kind;
        let link = self.links.entry((tx.src, dst)).or_default();
        if kind == FrameKind::Ack {
            link.acks_sent += 1;
            if outcome != RxOutcome::Decoded {
                link.acks_lost += 1;
            }
            let node = &mut self.nodes[tx.src as usize];
            node.ack_busy = false;
            self.update_listen(tx.src);
        } else {
            match outcome {
                RxOutcome::Decoded => link.rx_decoded += 1,
                RxOutcome::Collision => link.rx_collision += 1,
                RxOutcome::Asleep => link.rx_asleep += 1,
                RxOutcome::Busy => link.rx_busy += 1,
                RxOutcome::Random => link.rx_random += 1,
            }
            let node = &mut self.nodes[tx.src as usize];
            node.mac.phase = Phase::AckWait;
            node.mac.busy_us += ACK_WAIT_US;
            self.mac_schedule(tx.src, ACK_WAIT_US);
            self.update_listen(tx.src);
        }
        if outcome == RxOutcome::Decoded {
            self.receive_frame(dst, frame);
        }
        if kind == FrameKind::Ack {
            self.maybe_sleep(tx.src);
        }
    }

    fn receive_frame(&mut self, r: NodeId, frame: MacFrame) {
        let src = frame.src;
        match frame.kind {
            FrameKind::Ack => {
                let node = &mut self.nodes[r as usize];
                if node.mac.phase == Phase::AckWait {
                    if let Some(job) = node.mac.job.as_mut() {
                        if job.frame.dst == src && job.frame.seq == frame.seq {
                            job.acked = true;
                            job.ack_pending = frame.pending;
                        }
                    }
                }
            }
            FrameKind::DataRequest => {
                let pending = self.nodes[r as usize].indirect.get(&src).is_some_and(|q| !q.is_empty());
                self.send_link_ack(r, src, frame.seq, pending);
                if pending {
                    self.nodes[r as usize].awake_children.insert(src);
                    self.mac_kick(r);
                }
            }
            FrameKind::Data => {
                let pending = self.nodes[src as usize].sleepy
                    && self.nodes[r as usize].indirect.get(&src).is_some_and(|q| !q.is_empty());
                self.send_link_ack(r, src, frame.seq, pending);
                if pending {
                    self.nodes[r as usize].awake_children.insert(src);
                    self.mac_kick(r);
                }
                let node = &mut self.nodes[r as usize];
                if node.last_rx_seq.insert(src, frame.seq) == Some(frame.seq) {
                    node.stats.dup_frames += 1;
                    return;
                }
                if node.sleepy {
                    if frame.pending {
                        let cap = self.p.duty.as_ref().expect("sleepy").pending_listen_cap_us;
                        self.open_window(r, cap);
                    } else if let Some(d) = self.nodes[r as usize].duty.as_mut() {
                        d.window = None;
                    }
                }
                if let FrameBody::Frag(f) = frame.body {
                    self.on_fragment(r, src, f);
                }
            }
        }
    }

    fn send_link_ack(&mut self, r: NodeId, dst: NodeId, seq: u8, pending: bool) {
        let node = &mut self.nodes[r as usize];
        if node.ack_busy {
            return;
        }
        node.ack_out = Some(MacFrame {
            src: r,
            dst,
            kind: FrameKind::Ack,
            len: ACK_FRAME_BYTES,
            mac_overhead: ACK_FRAME_BYTES,
            requires_ack: false,
            pending,
            seq,
            body: FrameBody::Ack,
        });
        node.ack_busy = true;
        self.q.schedule_in(TURNAROUND_US, r, Ev::AckTx);
        self.update_listen(r);
    }

    pub(crate) fn ack_tx_start(&mut self, r: NodeId) {
        if let Some(frame) = self.nodes[r as usize].ack_out.take() {
            self.start_air(r, frame);
        }
    }

    pub(crate) fn update_listen(&mut self, n: NodeId) {
        let now = self.now();
        let deaf = self.p.link.deaf_listening;
        let node = &mut self.nodes[n as usize];
        let phase = node.mac.phase;
        let want = !node.asleep
            && !node.ack_busy
            && !matches!(phase, Phase::Turnaround | Phase::Tx)
            && !(deaf && phase == Phase::Backoff);
        if want != node.listening {
            node.listening = want;
            if want {
                node.listen_since = now;
            }
        }
    }

    // ---- sleepy leaves ----

    pub(crate) fn sleepy_start(&mut self, n: NodeId) {
        let base = self.nodes[n as usize].duty.as_ref().expect("sleepy").state.base_sleep_interval;
        let mut rng = SimRng::for_node(self.p.seed, n, Layer::Duty);
        let offset = rng.upto(base);
        let node = &mut self.nodes[n as usize];
        node.asleep = true;
        node.listening = false;
        node.meter.set_off(SimTime::ZERO);
        self.schedule_poll(n, SimTime(offset));
    }

    fn schedule_poll(&mut self, n: NodeId, at: SimTime) {
        let old = self.nodes[n as usize].duty.as_mut().and_then(|d| d.poll_ev.take());
        if let Some(h) = old {
            self.q.cancel(h);
        }
        let h = self.q.schedule(at, n, Ev::Poll);
        let d = self.nodes[n as usize].duty.as_mut().expect("sleepy");
        d.poll_at = at;
        d.poll_ev = Some(h);
    }

    pub(crate) fn poll_due(&mut self, n: NodeId) {
        let now = self.now();
        let d = self.nodes[n as usize].duty.as_mut().expect("sleepy");
        d.poll_ev = None;
        d.poll_due = true;
        let iv = d.state.next_interval(now);
        self.schedule_poll(n, now + iv);
        self.mac_kick(n);
    }

    /// Shortens the poll interval of a sleepy node after a transport event.
    pub(crate) fn duty_trigger(&mut self, n: NodeId, trigger: DutyTrigger, hold_us: u64) {
        if !self.is_radio(n) || !self.nodes[n as usize].sleepy {
            return;
        }
        let now = self.now();
        let d = self.nodes[n as usize].duty.as_mut().expect("sleepy");
        let iv = d.state.adapt_duty(now, trigger, hold_us);
        if now + iv < d.poll_at {
            self.schedule_poll(n, now + iv);
        }
    }

    fn open_window(&mut self, n: NodeId, dur: u64) {
        let now = self.now();
        let d = self.nodes[n as usize].duty.as_mut().expect("sleepy");
        d.gen += 1;
        let g = d.gen;
        d.window = Some((g, now + dur));
        self.q.schedule(now + dur, n, Ev::ListenEnd(g));
        self.wake(n);
    }

    pub(crate) fn listen_end(&mut self, n: NodeId, gen: u64) {
        let d = self.nodes[n as usize].duty.as_mut().expect("sleepy");
        if d.window.is_some_and(|(g, _)| g == gen) {
            d.window = None;
            self.maybe_sleep(n);
        }
    }

    pub(crate) fn wake(&mut self, n: NodeId) {
        let now = self.now();
        let node = &mut self.nodes[n as usize];
        if node.asleep {
            node.asleep = false;
            node.meter.set_on(now);
            node.last_wake = now;
            self.update_listen(n);
        }
    }

    pub(crate) fn maybe_sleep(&mut self, n: NodeId) {
        let now = self.now();
        let node = &mut self.nodes[n as usize];
        if !node.sleepy || node.asleep {
            return;
        }
        let d = node.duty.as_ref().expect("sleepy");
        if node.mac.phase != Phase::Idle
            || node.mac.job.is_some()
            || node.mac.suspended.is_some()
            || node.ack_busy
            || d.window.is_some()
            || d.poll_due
            || !node.cur.is_empty()
            || !node.local_q.is_empty()
            || !node.relay_q.is_empty()
        {
            return;
        }
        node.asleep = true;
        node.meter.set_off(now);
        self.update_listen(n);
    }
}
