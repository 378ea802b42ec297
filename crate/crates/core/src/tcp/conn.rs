use crate::analytics::RetxCounts;
use crate::buffers::{RecvBuffer, SendBuffer};
use crate::sim::SimTime;

use super::{Flags, RttEstimator, Segment, TcpConfig, MAX_SACK_BLOCKS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcpState {
    Closed,
    Listen,
    SynSent,
    SynReceived,
    Established,
    FinWait1,
    FinWait2,
    CloseWait,
    Closing,
    LastAck,
}

impl TcpState {
    pub fn is_synchronized(self) -> bool {
        !matches!(
            self,
            TcpState::Closed | TcpState::Listen | TcpState::SynSent | TcpState::SynReceived
        )
    }
}

/// Notifications for the application and the duty-cycle logic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcpEvent {
    SynReceived,
    Established,
    /// New in-sequence data is readable.
    Readable,
    /// Send-buffer space was freed.
    Writable,
    PeerClosed,
    Closed,
    Aborted,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TcpStats {
    /// Data-bearing segments handed to the network, retransmissions included.
    pub data_segments_sent: u64,
    pub data_segments_received: u64,
    pub pure_acks_sent: u64,
    pub bytes_acked: u64,
    pub retx: RetxCounts,
    pub rto_fires: u64,
    pub ecn_reductions: u64,
    pub ce_received: u64,
    pub rtt_samples_us: Vec<u64>,
    pub probes_sent: u64,
}

/// One TCP endpoint. Inputs are segments, application calls and timer
/// expirations; outputs are drained with [`TcpConn::poll_output`].
#[derive(Clone, Debug)]
pub struct TcpConn {
    cfg: TcpConfig,
    state: TcpState,
    iss: u64,
    irs: u64,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    snd_wnd: u64,
    cwnd: u64,
    ssthresh: u64,
    dupacks: u32,
    in_recovery: bool,
    recover: u64,
    high_rxt: u64,
    sacked: Vec<(u64, u64)>,
    limited_extra: u64,
    rtt: RttEstimator,
    rto_deadline: Option<SimTime>,
    rto_fires: u32,
    persist_deadline: Option<SimTime>,
    persist_shift: u32,
    delack_deadline: Option<SimTime>,
    unacked_segs: u32,
    ack_now: bool,
    ts_recent: u64,
    last_ack_sent: u64,
    ecn_ok: bool,
    ece_pending: bool,
    cwr_pending: bool,
    ecn_recover: u64,
    sb: SendBuffer,
    rb: RecvBuffer,
    rcv_nxt: u64,
    fin_queued: bool,
    fin_sent: bool,
    peer_fin: bool,
    outbox: Vec<Segment>,
    events: Vec<TcpEvent>,
    stats: TcpStats,
}

impl TcpConn {
    fn blank(cfg: TcpConfig, state: TcpState, iss: u64) -> Self {
        let rtt = RttEstimator::new(cfg.rto_initial_us, cfg.rto_min_us, cfg.rto_max_us);
        let sb = SendBuffer::new(cfg.send_buffer);
        let rb = RecvBuffer::new(cfg.recv_buffer);
        TcpConn {
            state,
            iss,
            irs: 0,
            snd_una: iss,
            snd_nxt: iss,
            snd_max: iss,
            snd_wnd: 0,
            cwnd: (cfg.initial_cwnd_segments * cfg.mss) as u64,
            ssthresh: cfg.recv_buffer as u64,
            dupacks: 0,
            in_recovery: false,
            recover: iss,
            high_rxt: iss,
            sacked: Vec::new(),
            limited_extra: 0,
            rtt,
            rto_deadline: None,
            rto_fires: 0,
            persist_deadline: None,
            persist_shift: 0,
            delack_deadline: None,
            unacked_segs: 0,
            ack_now: false,
            ts_recent: 0,
            last_ack_sent: 0,
            ecn_ok: false,
            ece_pending: false,
            cwr_pending: false,
            ecn_recover: iss,
            sb,
            rb,
            rcv_nxt: 0,
            fin_queued: false,
            fin_sent: false,
            peer_fin: false,
            outbox: Vec::new(),
            events: Vec::new(),
            stats: TcpStats::default(),
            cfg,
        }
    }

    /// Active open: queues a SYN.
    pub fn connect(cfg: TcpConfig, iss: u64, now: SimTime) -> Self {
        let mut c = Self::blank(cfg, TcpState::SynSent, iss);
        c.snd_nxt = iss + 1;
        c.snd_max = iss + 1;
        c.send_syn(now, false);
        c.arm_rto(now);
        c
    }

    /// Passive open.
    pub fn listen(cfg: TcpConfig, iss: u64) -> Self {
        Self::blank(cfg, TcpState::Listen, iss)
    }

    pub fn state(&self) -> TcpState {
        self.state
    }

    pub fn config(&self) -> &TcpConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &TcpStats {
        &self.stats
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn snd_wnd(&self) -> u64 {
        self.snd_wnd
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn srtt_us(&self) -> Option<u64> {
        self.rtt.srtt_us()
    }

    pub fn rto_us(&self) -> u64 {
        self.rtt.rto_us()
    }

    pub fn retransmit_count(&self) -> u32 {
        self.rto_fires
    }

    pub fn dupacks(&self) -> u32 {
        self.dupacks
    }

    pub fn in_recovery(&self) -> bool {
        self.in_recovery
    }

    pub fn ecn_enabled(&self) -> bool {
        self.ecn_ok
    }

    pub fn send_buffer(&self) -> &SendBuffer {
        &self.sb
    }

    pub fn recv_buffer(&self) -> &RecvBuffer {
        &self.rb
    }

    /// Unacknowledged bytes in flight.
    pub fn flight(&self) -> u64 {
        self.snd_max - self.snd_una
    }

    /// Data or FIN is outstanding, so an ACK is due from the peer.
    pub fn expects_ack(&self) -> bool {
        self.snd_max > self.snd_una || matches!(self.state, TcpState::SynSent | TcpState::SynReceived)
    }

    /// Bytes appended but not yet acknowledged.
    pub fn unacked_data(&self) -> usize {
        self.sb.len()
    }

    pub fn take_events(&mut self) -> Vec<TcpEvent> {
        std::mem::take(&mut self.events)
    }

    /// Earliest pending timer.
    pub fn next_deadline(&self) -> Option<SimTime> {
        [self.rto_deadline, self.persist_deadline, self.delack_deadline]
            .into_iter()
            .flatten()
            .min()
    }

    fn mss(&self) -> u64 {
        self.cfg.mss as u64
    }

    /// Stream offset of sequence number `seq` on the send side.
    fn off(&self, seq: u64) -> u64 {
        seq - self.iss - 1
    }

    /// Sequence number one past the last byte the application appended.
    fn data_end(&self) -> u64 {
        self.iss + 1 + self.sb.end_offset()
    }

    fn fin_seq(&self) -> u64 {
        self.data_end()
    }

    fn arm_rto(&mut self, now: SimTime) {
        self.rto_deadline = Some(now + self.rtt.rto_us());
    }

    fn tsval(now: SimTime) -> u64 {
        now.micros() + 1
    }

    // ---- application side ----

    /// Appends to the send buffer; returns bytes accepted.
    pub fn send(&mut self, data: &[u8]) -> usize {
        if self.fin_queued || matches!(self.state, TcpState::Closed) {
            return 0;
        }
        self.sb.sb_append(data)
    }

    pub fn send_free(&self) -> usize {
        if self.fin_queued {
            0
        } else {
            self.sb.free()
        }
    }

    pub fn readable(&self) -> usize {
        self.rb.readable()
    }

    /// Reads up to `max` bytes and sends a window update if the window
    /// opened substantially.
    pub fn recv(&mut self, max: usize) -> Vec<u8> {
        let before = self.rb.advertised_window() as u64;
        let out = self.rb.rb_read(max);
        let after = self.rb.advertised_window() as u64;
        if self.state.is_synchronized()
            && !out.is_empty()
            && (before < self.mss() || after - before >= 2 * self.mss())
            && (after >= self.mss())
        {
            self.ack_now = true;
        }
        out
    }

    /// Sends FIN once all buffered data is out.
    pub fn close(&mut self) {
        if matches!(self.state, TcpState::Listen | TcpState::SynSent) {
            self.set_closed(TcpEvent::Closed);
            return;
        }
        self.fin_queued = true;
    }

    /// Resets the connection.
    pub fn abort(&mut self, now: SimTime) {
        if self.state != TcpState::Closed {
            let seg = Segment {
                seq: self.snd_nxt,
                ack: self.rcv_nxt,
                flags: Flags {
                    rst: true,
                    ack: true,
                    ..Flags::default()
                },
                ts: Some((Self::tsval(now), self.ts_recent)),
                ..Segment::default()
            };
            self.outbox.push(seg);
            self.set_closed(TcpEvent::Aborted);
        }
    }

    fn set_closed(&mut self, ev: TcpEvent) {
        self.state = TcpState::Closed;
        self.rto_deadline = None;
        self.persist_deadline = None;
        self.delack_deadline = None;
        self.events.push(ev);
    }

    // ---- segment construction ----

    fn base_segment(&self, now: SimTime, seq: u64) -> Segment {
        let sack = if self.cfg.sack && self.state.is_synchronized() {
            self.rb
                .ooo_blocks()
                .into_iter()
                .take(MAX_SACK_BLOCKS)
                .map(|(s, e)| (self.rcv_nxt + s as u64, self.rcv_nxt + e as u64))
                .collect()
        } else {
            Vec::new()
        };
        Segment {
            seq,
            ack: self.rcv_nxt,
            flags: Flags {
                ack: true,
                ece: self.ece_pending,
                ..Flags::default()
            },
            window: self.rb.advertised_window() as u32,
            ts: Some((Self::tsval(now), self.ts_recent)),
            sack,
            ..Segment::default()
        }
    }

    fn note_ack_sent(&mut self) {
        self.last_ack_sent = self.rcv_nxt;
        self.unacked_segs = 0;
        self.ack_now = false;
        self.delack_deadline = None;
    }

    fn send_syn(&mut self, now: SimTime, with_ack: bool) {
        let mut seg = Segment {
            seq: self.iss,
            ack: if with_ack { self.rcv_nxt } else { 0 },
            flags: Flags {
                syn: true,
                ack: with_ack,
                ..Flags::default()
            },
            window: self.rb.advertised_window() as u32,
            mss: Some(self.cfg.mss as u16),
            ts: Some((Self::tsval(now), self.ts_recent)),
            ..Segment::default()
        };
        if self.cfg.ecn {
            if with_ack {
                seg.flags.ece = self.ecn_ok;
            } else {
                seg.flags.ece = true;
                seg.flags.cwr = true;
            }
        }
        if with_ack {
            self.note_ack_sent();
        }
        self.outbox.push(seg);
    }

    fn send_pure_ack(&mut self, now: SimTime) {
        let seg = self.base_segment(now, self.snd_nxt);
        self.note_ack_sent();
        self.stats.pure_acks_sent += 1;
        self.outbox.push(seg);
    }

    /// Emits a data segment at `seq`; returns the sequence space it covers.
    fn send_data(&mut self, now: SimTime, seq: u64, max_len: u64) -> u64 {
        let avail = self.data_end().saturating_sub(seq);
        let len = max_len.min(avail).min(self.mss());
        let mut seg = self.base_segment(now, seq);
        if len > 0 {
            seg.payload = self.sb.sb_transmit_view(self.off(seq), len as usize).to_vec();
            seg.ect = self.ecn_ok;
            if self.cwr_pending && seq >= self.snd_max {
                seg.flags.cwr = true;
                self.cwr_pending = false;
            }
            self.stats.data_segments_sent += 1;
        }
        let end = seq + len;
        if self.fin_queued && end == self.fin_seq() && (!self.fin_sent || self.snd_max == self.fin_seq() + 1) {
            seg.flags.fin = true;
        }
        let seq_end = end + seg.flags.fin as u64;
        if seg.flags.fin && !self.fin_sent {
            self.fin_sent = true;
            self.state = match self.state {
                TcpState::Established => TcpState::FinWait1,
                TcpState::CloseWait => TcpState::LastAck,
                s => s,
            };
        }
        if seq_end > self.snd_max {
            self.snd_max = seq_end;
        }
        self.note_ack_sent();
        self.outbox.push(seg);
        if self.rto_deadline.is_none() {
            self.arm_rto(now);
        }
        seq_end - seq
    }

    /// Collects everything ready to go out now, new data included.
    pub fn poll_output(&mut self, now: SimTime) -> Vec<Segment> {
        if self.state.is_synchronized() {
            self.transmit_new(now);
        }
        if self.ack_now && self.state.is_synchronized() {
            self.send_pure_ack(now);
        }
        std::mem::take(&mut self.outbox)
    }

    fn transmit_new(&mut self, now: SimTime) {
        let mss = self.mss();
        loop {
            let wnd = self.cwnd.min(self.snd_wnd) + self.limited_extra.min(self.snd_wnd.saturating_sub(self.cwnd.min(self.snd_wnd)));
            let flight = self.snd_nxt - self.snd_una;
            let avail = self.data_end().saturating_sub(self.snd_nxt);
            let fin_due = self.fin_queued && self.snd_nxt == self.fin_seq() && !self.fin_sent;
            if avail == 0 {
                if fin_due {
                    self.snd_nxt += self.send_data(now, self.snd_nxt, 0);
                }
                break;
            }
            let usable = wnd.saturating_sub(flight);
            let len = avail.min(usable).min(mss);
            if len == 0 {
                break;
            }
            // avoid a silly window: hold back a short segment if more data
            // waits and something is already in flight
            if len < mss && len < avail && flight > 0 {
                break;
            }
            let retx = self.snd_nxt < self.snd_max;
            if retx {
                self.stats.retx.timeout += 1;
            }
            let sent = self.send_data(now, self.snd_nxt, len);
            self.snd_nxt += sent;
            if self.limited_extra > 0 && !retx {
                self.limited_extra = self.limited_extra.saturating_sub(sent);
            }
        }
        if self.snd_wnd == 0
            && self.data_end() > self.snd_nxt
            && self.snd_nxt == self.snd_una
            && self.persist_deadline.is_none()
        {
            self.persist_deadline = Some(now + (self.rtt.rto_us() << self.persist_shift.min(6)));
        }
    }

    /// Retransmits the segment starting at `seq`, bounded by the next
    /// SACKed block.
    fn retransmit_at(&mut self, now: SimTime, seq: u64) -> u64 {
        let limit = self
            .sacked
            .iter()
            .find(|(s, _)| *s > seq)
            .map(|(s, _)| s - seq)
            .unwrap_or(u64::MAX);
        let len = self.send_data(now, seq, limit.min(self.mss()));
        self.high_rxt = self.high_rxt.max(seq + len);
        len
    }

    /// First byte at or after `from` that is neither acknowledged nor SACKed.
    fn next_hole(&self, from: u64) -> Option<u64> {
        let mut s = from.max(self.snd_una);
        for &(a, b) in &self.sacked {
            if s >= a && s < b {
                s = b;
            }
        }
        let top = self.sacked.last().map(|b| b.0).unwrap_or(0);
        (s < top && s < self.snd_max).then_some(s)
    }

    fn merge_sack(&mut self, blocks: &[(u64, u64)]) {
        for &(a, b) in blocks {
            if b <= self.snd_una || a >= b || b > self.snd_max {
                continue;
            }
            self.sacked.push((a.max(self.snd_una), b));
        }
        self.sacked.retain(|&(_, b)| b > self.snd_una);
        for blk in self.sacked.iter_mut() {
            blk.0 = blk.0.max(self.snd_una);
        }
        self.sacked.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.sacked.len());
        for &(a, b) in &self.sacked {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        self.sacked = merged;
    }

    // ---- timers ----

    /// Handles every timer due at or before `now`.
    pub fn on_timer(&mut self, now: SimTime) {
        if self.delack_deadline.is_some_and(|d| d <= now) {
            self.delack_deadline = None;
            if self.state.is_synchronized() {
                self.send_pure_ack(now);
            }
        }
        if self.persist_deadline.is_some_and(|d| d <= now) {
            self.persist_deadline = None;
            self.persist_probe(now);
        }
        if self.rto_deadline.is_some_and(|d| d <= now) {
            self.rto_deadline = None;
            self.rto_fire(now);
        }
    }

    fn persist_probe(&mut self, now: SimTime) {
        if !self.state.is_synchronized() || self.snd_wnd > 0 || self.data_end() <= self.snd_una {
            self.persist_shift = 0;
            return;
        }
        let mut seg = self.base_segment(now, self.snd_una);
        seg.payload = self.sb.sb_transmit_view(self.off(self.snd_una), 1).to_vec();
        self.note_ack_sent();
        self.outbox.push(seg);
        self.stats.probes_sent += 1;
        self.persist_shift += 1;
        self.persist_deadline = Some(now + (self.rtt.rto_us() << self.persist_shift.min(6)).min(self.cfg.rto_max_us));
    }

    /// Retransmission timer expiry.
    pub fn rto_fire(&mut self, now: SimTime) {
        if self.state == TcpState::Closed {
            return;
        }
        self.rto_fires += 1;
        self.stats.rto_fires += 1;
        if self.rto_fires >= self.cfg.max_rto_fires {
            self.set_closed(TcpEvent::Aborted);
            return;
        }
        self.rtt.backoff();
        match self.state {
            TcpState::SynSent => {
                self.send_syn(now, false);
                self.arm_rto(now);
                return;
            }
            TcpState::SynReceived => {
                self.send_syn(now, true);
                self.arm_rto(now);
                return;
            }
            _ => {}
        }
        if self.snd_max == self.snd_una {
            return;
        }
        let mss = self.mss();
        self.ssthresh = (self.flight() / 2).max(2 * mss);
        self.cwnd = mss;
        self.in_recovery = false;
        self.dupacks = 0;
        self.limited_extra = 0;
        self.sacked.clear();
        self.recover = self.snd_max;
        self.snd_nxt = self.snd_una;
        self.stats.retx.timeout += 1;
        let sent = self.send_data(now, self.snd_una, mss);
        self.snd_nxt = self.snd_una + sent;
        self.arm_rto(now);
    }

    // ---- input ----

    pub fn tcp_input(&mut self, now: SimTime, seg: Segment) {
        if seg.flags.rst {
            if self.state != TcpState::Listen && self.state != TcpState::Closed {
                self.set_closed(TcpEvent::Aborted);
            }
            return;
        }
        match self.state {
            TcpState::Closed => {}
            TcpState::Listen => self.input_listen(now, seg),
            TcpState::SynSent => self.input_syn_sent(now, seg),
            _ => self.input_synchronized(now, seg),
        }
    }

    fn input_listen(&mut self, now: SimTime, seg: Segment) {
        if !seg.flags.syn || seg.flags.ack {
            return;
        }
        self.irs = seg.seq;
        self.rcv_nxt = seg.seq + 1;
        self.ecn_ok = self.cfg.ecn && seg.flags.ece && seg.flags.cwr;
        if let Some(m) = seg.mss {
            self.cfg.mss = self.cfg.mss.min(m as usize);
        }
        if let Some((tsval, _)) = seg.ts {
            self.ts_recent = tsval;
        }
        self.snd_wnd = seg.window as u64;
        self.snd_nxt = self.iss + 1;
        self.snd_max = self.iss + 1;
        self.state = TcpState::SynReceived;
        self.events.push(TcpEvent::SynReceived);
        self.send_syn(now, true);
        self.arm_rto(now);
    }

    fn input_syn_sent(&mut self, now: SimTime, seg: Segment) {
        if !(seg.flags.syn && seg.flags.ack && seg.ack == self.iss + 1) {
            return;
        }
        self.irs = seg.seq;
        self.rcv_nxt = seg.seq + 1;
        self.ecn_ok = self.cfg.ecn && seg.flags.ece;
        if let Some(m) = seg.mss {
            self.cfg.mss = self.cfg.mss.min(m as usize);
        }
        if let Some((tsval, tsecr)) = seg.ts {
            self.ts_recent = tsval;
            self.sample_rtt(now, tsecr);
        }
        self.snd_una = self.iss + 1;
        self.snd_wnd = seg.window as u64;
        self.ssthresh = self.snd_wnd.max(2 * self.mss());
        self.rto_fires = 0;
        self.rtt.restore();
        self.rto_deadline = None;
        self.state = TcpState::Established;
        self.events.push(TcpEvent::Established);
        self.ack_now = true;
    }

    fn sample_rtt(&mut self, now: SimTime, tsecr: u64) {
        if tsecr == 0 || tsecr > Self::tsval(now) {
            return;
        }
        let sample = Self::tsval(now) - tsecr;
        self.rtt.rtt_update(sample);
        self.stats.rtt_samples_us.push(sample);
    }

    fn input_synchronized(&mut self, now: SimTime, seg: Segment) {
        if seg.flags.syn {
            // our SYN-ACK or final ACK was lost
            if self.state == TcpState::SynReceived {
                self.send_syn(now, true);
            } else {
                self.ack_now = true;
            }
            return;
        }
        if self.state == TcpState::SynReceived {
            if seg.flags.ack && seg.ack == self.iss + 1 {
                self.snd_una = self.iss + 1;
                self.snd_wnd = seg.window as u64;
                self.ssthresh = self.snd_wnd.max(2 * self.mss());
                if let Some((_, tsecr)) = seg.ts {
                    self.sample_rtt(now, tsecr);
                }
                self.rto_fires = 0;
                self.rtt.restore();
                self.rto_deadline = None;
                self.state = TcpState::Established;
                self.events.push(TcpEvent::Established);
            } else {
                return;
            }
        }
        let seg_len = seg.seq_len();
        // timestamps: remember the peer's clock for segments at the left edge
        if let Some((tsval, _)) = seg.ts {
            if seg.seq <= self.last_ack_sent.max(self.rcv_nxt) && (seg.seq + seg_len >= self.rcv_nxt || seg_len == 0) {
                self.ts_recent = tsval;
            }
        }
        if seg.flags.ack {
            self.process_ack(now, &seg);
            if self.state == TcpState::Closed {
                return;
            }
        }
        if !seg.payload.is_empty() || seg.flags.fin {
            self.process_data(now, seg);
        }
    }

    fn process_ack(&mut self, now: SimTime, seg: &Segment) {
        if seg.ack > self.snd_max {
            self.ack_now = true;
            return;
        }
        if seg.ack < self.snd_una {
            return;
        }
        let mss = self.mss();
        let old_wnd = self.snd_wnd;
        self.snd_wnd = seg.window as u64;
        if self.snd_wnd > 0 {
            self.persist_deadline = None;
            self.persist_shift = 0;
        }
        if self.cfg.sack {
            self.merge_sack(&seg.sack);
        }
        let flight_before = self.flight();
        let mut reduced = false;
        if seg.flags.ece && self.ecn_ok && !self.in_recovery && seg.ack > self.ecn_recover && flight_before > 0 {
            self.ssthresh = (flight_before / 2).max(2 * mss);
            self.cwnd = self.ssthresh;
            self.ecn_recover = self.snd_max;
            self.cwr_pending = true;
            self.stats.ecn_reductions += 1;
            reduced = true;
        }
        if seg.ack > self.snd_una {
            let acked = seg.ack - self.snd_una;
            if let Some((_, tsecr)) = seg.ts {
                self.sample_rtt(now, tsecr);
            }
            let data_acked_to = seg.ack.min(self.data_end());
            let off = self.off(data_acked_to);
            if off > self.sb.una_offset() {
                let freed = self
                    .sb
                    .sb_release_acked(off)
                    .expect("ACK within sent data");
                self.stats.bytes_acked += freed as u64;
                if freed > 0 {
                    self.events.push(TcpEvent::Writable);
                }
            }
            self.snd_una = seg.ack;
            if self.snd_nxt < self.snd_una {
                self.snd_nxt = self.snd_una;
            }
            self.high_rxt = self.high_rxt.max(self.snd_una);
            self.rto_fires = 0;
            self.rtt.restore();
            if self.in_recovery {
                if seg.ack >= self.recover {
                    self.in_recovery = false;
                    self.cwnd = self.ssthresh.min(self.flight() + mss).max(mss);
                    self.dupacks = 0;
                } else {
                    // partial ACK: the next hole is lost too
                    self.cwnd = self.cwnd.saturating_sub(acked).max(mss) + mss;
                    let hole = self.next_hole(self.snd_una).unwrap_or(self.snd_una);
                    if hole == self.snd_una {
                        self.stats.retx.fast += 1;
                    } else {
                        self.stats.retx.sack_hole += 1;
                    }
                    self.retransmit_at(now, hole);
                }
            } else {
                self.dupacks = 0;
                self.limited_extra = 0;
                if reduced {
                } else if self.cwnd < self.ssthresh {
                    self.cwnd += acked.min(mss);
                } else {
                    self.cwnd += (mss * acked.min(mss) / self.cwnd.max(1)).max(1);
                }
                self.cwnd = self.cwnd.min(self.cfg.cwnd_cap as u64);
            }
            self.rto_deadline = None;
            if self.snd_max > self.snd_una {
                self.arm_rto(now);
            }
            self.after_ack_state();
        } else if seg.payload.is_empty()
            && !seg.flags.fin
            && self.snd_wnd <= old_wnd
            && self.snd_max > self.snd_una
        {
            self.dupacks += 1;
            if self.in_recovery {
                self.cwnd += mss;
                if self.cfg.sack {
                    if let Some(hole) = self.next_hole(self.high_rxt) {
                        self.stats.retx.sack_hole += 1;
                        self.retransmit_at(now, hole);
                    }
                }
            } else if self.dupacks == 3 {
                self.ssthresh = (self.flight() / 2).max(2 * mss);
                self.recover = self.snd_max;
                self.in_recovery = true;
                self.limited_extra = 0;
                self.high_rxt = self.snd_una;
                self.stats.retx.fast += 1;
                self.retransmit_at(now, self.snd_una);
                self.cwnd = self.ssthresh + 3 * mss;
                self.arm_rto(now);
            } else if self.dupacks < 3 && self.cfg.limited_transmit {
                self.limited_extra = self.dupacks as u64 * mss;
            }
        }
    }

    fn after_ack_state(&mut self) {
        let fin_acked = self.fin_sent && self.snd_una == self.fin_seq() + 1;
        if !fin_acked {
            return;
        }
        match self.state {
            TcpState::FinWait1 => self.state = TcpState::FinWait2,
            TcpState::Closing | TcpState::LastAck => self.set_closed(TcpEvent::Closed),
            _ => {}
        }
    }

    fn process_data(&mut self, now: SimTime, seg: Segment) {
        if matches!(self.state, TcpState::CloseWait | TcpState::LastAck | TcpState::Closing) && !seg.payload.is_empty() && seg.seq + seg.payload.len() as u64 <= self.rcv_nxt {
            self.ack_now = true;
            return;
        }
        if seg.ce {
            self.stats.ce_received += 1;
        }
        if seg.flags.cwr {
            self.ece_pending = false;
        }
        if seg.ce && self.ecn_ok {
            self.ece_pending = true;
        }
        let len = seg.payload.len() as u64;
        if len > 0 {
            self.stats.data_segments_received += 1;
        }
        let before_nxt = self.rcv_nxt;
        let had_ooo = self.rb.out_of_order() > 0;
        let mut newly = 0u64;
        let mut progress = false;
        if len > 0 && seg.seq + len > self.rcv_nxt {
            let skip = self.rcv_nxt.saturating_sub(seg.seq);
            let rel = self.rb.readable() as u64 + seg.seq.max(self.rcv_nxt) - self.rcv_nxt;
            let ooo_before = self.rb.out_of_order();
            let data = &seg.payload[skip as usize..];
            newly = self.rb.rb_insert(rel as usize, data) as u64;
            self.rcv_nxt += newly;
            progress = newly > 0 || self.rb.out_of_order() > ooo_before;
            if newly > 0 {
                self.events.push(TcpEvent::Readable);
            }
        }
        let mut fin_now = false;
        if seg.flags.fin && !self.peer_fin && seg.seq + len == self.rcv_nxt {
            self.rcv_nxt += 1;
            self.peer_fin = true;
            fin_now = true;
            self.events.push(TcpEvent::PeerClosed);
            match self.state {
                TcpState::Established => self.state = TcpState::CloseWait,
                TcpState::FinWait1 => {
                    if self.fin_sent && self.snd_una == self.fin_seq() + 1 {
                        self.set_closed(TcpEvent::Closed);
                    } else {
                        self.state = TcpState::Closing;
                    }
                }
                TcpState::FinWait2 => self.set_closed(TcpEvent::Closed),
                _ => {}
            }
        }
        let out_of_order = seg.seq > before_nxt;
        let filled_gap = had_ooo && newly > len;
        let duplicate = !progress && !fin_now;
        if out_of_order || filled_gap || duplicate || fin_now || self.rb.advertised_window() == 0 || !self.cfg.delayed_ack {
            if self.state == TcpState::Closed {
                // final ACK for the peer's FIN
                let seg = self.base_segment(now, self.snd_nxt);
                self.outbox.push(seg);
                self.stats.pure_acks_sent += 1;
            } else {
                self.ack_now = true;
            }
            return;
        }
        self.unacked_segs += 1;
        if self.unacked_segs >= 2 {
            self.ack_now = true;
        } else if self.delack_deadline.is_none() {
            self.delack_deadline = Some(now + self.cfg.delack_us);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{MS, SEC};

    fn cfg() -> TcpConfig {
        TcpConfig::default()
    }

    fn t(ms: u64) -> SimTime {
        SimTime::from_millis(ms)
    }

    /// Moves every pending segment from `a` to `b`, returning the count.
    fn pump(now: SimTime, a: &mut TcpConn, b: &mut TcpConn) -> usize {
        let segs = a.poll_output(now);
        let n = segs.len();
        for s in segs {
            b.tcp_input(now, s);
        }
        n
    }

    fn established() -> (TcpConn, TcpConn) {
        let mut c = TcpConn::connect(cfg(), 1000, t(0));
        let mut s = TcpConn::listen(cfg(), 5000);
        pump(t(0), &mut c, &mut s);
        pump(t(50), &mut s, &mut c);
        pump(t(100), &mut c, &mut s);
        (c, s)
    }

    #[test]
    fn handshake_lossless() {
        let (c, s) = established();
        assert_eq!(c.state(), TcpState::Established);
        assert_eq!(s.state(), TcpState::Established);
        assert_eq!(c.stats().rtt_samples_us, vec![50 * MS]);
        assert_eq!(c.ssthresh(), 1848);
        assert_eq!(c.cwnd(), 2 * 462);
    }

    #[test]
    fn syn_lost_once_then_established_after_rto() {
        let mut c = TcpConn::connect(cfg(), 0, t(0));
        let mut s = TcpConn::listen(cfg(), 0);
        assert_eq!(c.poll_output(t(0)).len(), 1);
        assert_eq!(c.next_deadline(), Some(t(1000)));
        c.on_timer(t(1000));
        pump(t(1000), &mut c, &mut s);
        pump(t(1050), &mut s, &mut c);
        assert_eq!(c.state(), TcpState::Established);
        assert_eq!(c.retransmit_count(), 0);
    }

    #[test]
    fn four_segments_back_to_back() {
        let (mut c, mut s) = established();
        c.cwnd = 1848;
        assert_eq!(c.send(&[7u8; 2000]), 1848);
        let segs = c.poll_output(t(200));
        assert_eq!(segs.len(), 4);
        assert!(segs.iter().all(|x| x.payload.len() == 462));
        for x in segs {
            s.tcp_input(t(250), x);
        }
        assert_eq!(s.readable(), 1848);
    }

    #[test]
    fn cwnd_one_mss_after_timeout() {
        let (mut c, _s) = established();
        c.send(&[1u8; 1848]);
        let first = c.poll_output(t(200));
        assert_eq!(first.len(), 2);
        let d = c.next_deadline().unwrap();
        c.on_timer(d);
        let segs = c.poll_output(d);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].seq, first[0].seq);
        assert_eq!(c.cwnd(), 462);
        assert_eq!(c.stats().retx.timeout, 1);
    }

    #[test]
    fn rto_doubles_and_aborts_after_twelve() {
        let (mut c, _s) = established();
        c.send(&[1u8; 100]);
        c.poll_output(t(200));
        let mut rtos = Vec::new();
        for _ in 0..3 {
            let d = c.next_deadline().unwrap();
            c.on_timer(d);
            c.poll_output(d);
            rtos.push(c.rto_us());
        }
        assert_eq!(rtos, vec![2 * SEC, 4 * SEC, 8 * SEC]);
        for _ in 3..11 {
            let d = c.next_deadline().unwrap();
            c.on_timer(d);
        }
        assert_eq!(c.state(), TcpState::Established);
        let d = c.next_deadline().unwrap();
        c.on_timer(d);
        assert_eq!(c.state(), TcpState::Closed);
        assert!(c.take_events().contains(&TcpEvent::Aborted));
        assert!(c.retransmit_count() <= 12);
    }

    #[test]
    fn ack_after_backoff_resets_count() {
        let (mut c, mut s) = established();
        c.send(&[1u8; 100]);
        c.poll_output(t(200));
        let d = c.next_deadline().unwrap();
        c.on_timer(d);
        pump(d, &mut c, &mut s);
        s.on_timer(d + 200 * MS);
        pump(d + 200 * MS, &mut s, &mut c);
        assert_eq!(c.retransmit_count(), 0);
        assert_eq!(c.rto_us(), SEC);
    }

    #[test]
    fn three_dupacks_fast_retransmit() {
        let (mut c, mut s) = established();
        c.cwnd = 1848;
        c.send(&[3u8; 1848]);
        let segs = c.poll_output(t(200));
        assert_eq!(segs.len(), 4);
        let lost_seq = segs[0].seq;
        for x in segs.into_iter().skip(1) {
            s.tcp_input(t(250), x);
            pump(t(250), &mut s, &mut c);
        }
        assert_eq!(c.dupacks(), 3);
        assert!(c.in_recovery());
        assert_eq!(c.ssthresh(), 924);
        let out = c.poll_output(t(250));
        let _ = out;
        assert_eq!(c.stats().retx.fast, 1);
        // the retransmission was queued when the third duplicate arrived
        let mut c2 = c.clone();
        let _ = c2.poll_output(t(251));
        assert!(c.stats().data_segments_sent >= 5);
        let _ = lost_seq;
    }

    #[test]
    fn full_buffer_acks_immediately() {
        let mut small = cfg();
        small.recv_buffer = 462;
        let mut c = TcpConn::connect(cfg(), 0, t(0));
        let mut s = TcpConn::listen(small, 0);
        pump(t(0), &mut c, &mut s);
        pump(t(10), &mut s, &mut c);
        pump(t(20), &mut c, &mut s);
        c.send(&[9u8; 462]);
        pump(t(30), &mut c, &mut s);
        let acks = s.poll_output(t(30));
        assert_eq!(acks.len(), 1);
        assert_eq!(acks[0].window, 0);
    }

    #[test]
    fn single_in_order_segment_delays_ack() {
        let (mut c, mut s) = established();
        c.send(&[1u8; 100]);
        pump(t(200), &mut c, &mut s);
        assert!(s.poll_output(t(200)).is_empty());
        assert_eq!(s.next_deadline(), Some(t(300)));
        s.on_timer(t(300));
        assert_eq!(s.poll_output(t(300)).len(), 1);
    }

    #[test]
    fn out_of_order_acks_immediately_with_sack() {
        let (mut c, mut s) = established();
        c.cwnd = 1848;
        c.send(&[1u8; 924]);
        let segs = c.poll_output(t(200));
        s.tcp_input(t(210), segs[1].clone());
        let acks = s.poll_output(t(210));
        assert_eq!(acks.len(), 1);
        assert_eq!(acks[0].ack, segs[0].seq);
        assert_eq!(acks[0].sack, vec![(segs[1].seq, segs[1].seq + 462)]);
    }

    #[test]
    fn timestamp_echo_samples_retransmission() {
        let (mut c, mut s) = established();
        c.send(&[1u8; 100]);
        c.poll_output(t(200));
        c.on_timer(t(1200));
        let rtx = c.poll_output(t(1200));
        assert_eq!(rtx.len(), 1);
        s.tcp_input(t(1260), rtx[0].clone());
        s.on_timer(t(1360));
        pump(t(1360), &mut s, &mut c);
        // echo of the retransmission's own timestamp: 160 ms, not 1160 ms
        assert_eq!(*c.stats().rtt_samples_us.last().unwrap(), 160 * MS);
    }

    #[test]
    fn zero_window_probe() {
        let mut small = cfg();
        small.recv_buffer = 462;
        let mut c = TcpConn::connect(cfg(), 0, t(0));
        let mut s = TcpConn::listen(small, 0);
        pump(t(0), &mut c, &mut s);
        pump(t(10), &mut s, &mut c);
        pump(t(20), &mut c, &mut s);
        c.send(&[9u8; 900]);
        pump(t(30), &mut c, &mut s);
        pump(t(40), &mut s, &mut c);
        assert_eq!(c.snd_wnd(), 0);
        assert!(c.poll_output(t(40)).is_empty());
        let d = c.next_deadline().unwrap();
        c.on_timer(d);
        let probe = c.poll_output(d);
        assert_eq!(probe.len(), 1);
        assert_eq!(probe[0].payload.len(), 1);
    }

    #[test]
    fn ecn_halves_once_per_window() {
        let mut ecfg = cfg();
        ecfg.ecn = true;
        let mut c = TcpConn::connect(ecfg.clone(), 0, t(0));
        let mut s = TcpConn::listen(ecfg, 0);
        pump(t(0), &mut c, &mut s);
        pump(t(10), &mut s, &mut c);
        pump(t(20), &mut c, &mut s);
        assert!(c.ecn_enabled() && s.ecn_enabled());
        c.cwnd = 1848;
        c.send(&[1u8; 1848]);
        let segs = c.poll_output(t(30));
        assert!(segs.iter().all(|x| x.ect));
        for mut x in segs {
            x.ce = true;
            s.tcp_input(t(40), x);
            pump(t(40), &mut s, &mut c);
        }
        assert_eq!(c.stats().ecn_reductions, 1);
        assert_eq!(c.ssthresh(), 924);
        assert!(c.cwnd() < 1848);
        s.recv(4000);
        pump(t(45), &mut s, &mut c);
        c.send(&[1u8; 462]);
        let next = c.poll_output(t(50));
        assert!(next[0].flags.cwr);
    }

    #[test]
    fn close_handshake() {
        let (mut c, mut s) = established();
        c.send(b"hello");
        c.close();
        pump(t(200), &mut c, &mut s);
        assert_eq!(s.state(), TcpState::CloseWait);
        s.close();
        pump(t(210), &mut s, &mut c);
        pump(t(220), &mut c, &mut s);
        assert_eq!(c.state(), TcpState::Closed);
        assert_eq!(s.state(), TcpState::Closed);
        assert_eq!(s.recv(100), b"hello".to_vec());
    }
}
