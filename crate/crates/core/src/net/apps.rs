//! Transport glue (TCP connections, CoAP endpoints) and the applications
//! driving them.

use std::collections::BTreeSet;

use super::{
    AppSpec, Body, CoapEnd, Ev, Flow, FlowSpec, FlowStats, NodeStats, RequestRecord, SeriesPoint, TcpEnd, TcpSlot,
    World, WorldOutput,
};
use crate::coap::{CoapClient, CoapExchange, CoapMode, CoapMsg, CoapServer, CoapTimeout};
use crate::mmc::{duty_metric, DutyTrigger};
use crate::sim::{NodeId, SimTime};
use crate::tcp::{Segment, TcpConn, TcpEvent, TcpState};
use crate::workloads::{reading_bytes, reading_id, AppQueue, Reading, Transport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum AppEv {
    Start,
    Reading,
    Request,
}

pub(crate) struct WebState {
    next_id: u64,
    /// (request id, index into the flow's request records)
    active: Option<(u64, usize)>,
    /// CoAP: response bytes received so far, and left to send as blocks.
    got: u64,
    block_left: u64,
}

pub(crate) struct SenseState {
    queue: AppQueue,
    next_id: u64,
    flushing: usize,
    /// Readings written into / parsed out of the current connection.
    written: u64,
    received: u64,
    rx_buf: Vec<u8>,
    /// Ids of the readings riding in the outstanding CoAP exchange.
    inflight: Vec<u64>,
    /// Readings the server has seen, and those written off as lost that
    /// may still turn up late.
    seen: BTreeSet<u64>,
    written_off: BTreeSet<u64>,
}

pub(crate) enum AppState {
    Bulk,
    Web(WebState),
    Sense(SenseState),
}

/// Byte `off` of a bulk stream.
fn stream_byte(off: u64) -> u8 {
    (off % 251) as u8
}

fn stream_chunk(off: u64, len: usize) -> Vec<u8> {
    (0..len as u64).map(|i| stream_byte(off + i)).collect()
}

impl World {
    pub(crate) fn add_flow(&mut self, spec: FlowSpec) {
        let id = self.flows.len() as u32;
        let app_name = match spec.app {
            AppSpec::Bulk => "bulk",
            AppSpec::Web { .. } => "web",
            AppSpec::Sense { .. } => "sense",
        };
        let stats = FlowStats::new(id, app_name, spec.transport, spec.src, spec.dst);
        let coap = (spec.transport != Transport::Tcp).then(|| {
            let end = |node| CoapEnd {
                node,
                client: CoapClient::new(self.p.coap.clone()),
                server: CoapServer::default(),
                timer: None,
            };
            [end(spec.src), end(spec.dst)]
        });
        let app = match &spec.app {
            AppSpec::Bulk => AppState::Bulk,
            AppSpec::Web { .. } => AppState::Web(WebState {
                next_id: 0,
                active: None,
                got: 0,
                block_left: 0,
            }),
            AppSpec::Sense { app_queue, .. } => AppState::Sense(SenseState {
                queue: AppQueue::new(*app_queue),
                next_id: 0,
                flushing: 0,
                written: 0,
                received: 0,
                rx_buf: Vec::new(),
                inflight: Vec::new(),
                seen: BTreeSet::new(),
                written_off: BTreeSet::new(),
            }),
        };
        self.q.schedule(SimTime(spec.start_us), spec.src, Ev::App(id, AppEv::Start));
        self.flows.push(Flow {
            spec,
            conn: None,
            coap,
            app,
            stats,
        });
    }

    fn generating(&self) -> bool {
        self.now().micros() < self.p.stop_us
    }

    pub(crate) fn app_event(&mut self, f: u32, ev: AppEv) {
        let spec = self.flows[f as usize].spec.clone();
        match ev {
            AppEv::Start => match spec.app {
                AppSpec::Bulk => match spec.transport {
                    Transport::Tcp => {
                        self.tcp_open(f, spec.src, spec.dst, 0);
                    }
                    _ => self.coap_bulk_pump(f),
                },
                AppSpec::Web { interval_us, .. } => {
                    let d = self.rng_app.upto(interval_us);
                    self.q.schedule_in(d, spec.dst, Ev::App(f, AppEv::Request));
                }
                AppSpec::Sense { period_us, .. } => {
                    if spec.transport == Transport::Tcp {
                        self.tcp_open(f, spec.src, spec.dst, 0);
                    }
                    let d = self.rng_app.upto(period_us - 1);
                    self.q.schedule_in(d, spec.src, Ev::App(f, AppEv::Reading));
                }
            },
            AppEv::Reading => self.sense_reading(f),
            AppEv::Request => self.web_request(f),
        }
    }

    // ---- TCP glue ----

    fn tcp_open(&mut self, f: u32, a: NodeId, b: NodeId, sender: u8) -> u32 {
        let now = self.now();
        let cfg = self.p.tcp.clone();
        let iss_a = self.rng_transport.upto(1 << 30);
        let iss_b = self.rng_transport.upto(1 << 30);
        let end = |node, conn| TcpEnd {
            node,
            conn,
            timer: None,
            written: 0,
            read: 0,
            done: false,
        };
        let cid = self.conns.len() as u32;
        self.conns.push(TcpSlot {
            flow: f,
            ends: [
                end(a, TcpConn::connect(cfg.clone(), iss_a, now)),
                end(b, TcpConn::listen(cfg, iss_b)),
            ],
            sender,
            req_to_write: 0,
            resp_to_write: 0,
            served: 0,
            completed: 0,
        });
        let flow = &mut self.flows[f as usize];
        flow.conn = Some(cid);
        flow.stats.connections += 1;
        self.tcp_pump(cid, 0);
        cid
    }

    /// Drains output and events of one endpoint until it is quiet.
    fn tcp_pump(&mut self, cid: u32, e: u8) {
        loop {
            let now = self.now();
            let end = &mut self.conns[cid as usize].ends[e as usize];
            if end.done {
                break;
            }
            let segs = end.conn.poll_output(now);
            let events = end.conn.take_events();
            if segs.is_empty() && events.is_empty() {
                break;
            }
            let src = end.node;
            let dst = self.conns[cid as usize].ends[1 - e as usize].node;
            for seg in segs {
                let ect = seg.ect;
                let dg = self.new_datagram(src, dst, Body::Tcp { conn: cid, to: 1 - e, seg }, ect);
                self.net_send(src, dg);
            }
            for ev in events {
                self.on_tcp_event(cid, e, ev);
            }
        }
        self.tcp_rearm(cid, e);
        let end = &self.conns[cid as usize].ends[e as usize];
        if !end.done && end.conn.expects_ack() {
            let rto = end.conn.rto_us();
            let hold = end.conn.srtt_us().unwrap_or(rto) + rto;
            self.duty_trigger(end.node, DutyTrigger::AckExpected, hold);
        }
    }

    fn tcp_rearm(&mut self, cid: u32, e: u8) {
        let now = self.now();
        let end = &mut self.conns[cid as usize].ends[e as usize];
        let want = if end.done { None } else { end.conn.next_deadline() };
        if end.timer.map(|t| t.0) == want {
            return;
        }
        if let Some((_, h)) = end.timer.take() {
            self.q.cancel(h);
        }
        if let Some(d) = want {
            let h = self.q.schedule(d.max(now), end.node, Ev::TcpTimer(cid, e));
            end.timer = Some((d, h));
        }
    }

    pub(crate) fn tcp_timer(&mut self, cid: u32, e: u8) {
        let now = self.now();
        let end = &mut self.conns[cid as usize].ends[e as usize];
        end.timer = None;
        if end.done {
            return;
        }
        end.conn.on_timer(now);
        self.tcp_pump(cid, e);
    }

    pub(crate) fn tcp_deliver(&mut self, cid: u32, to: u8, seg: Segment) {
        let now = self.now();
        let end = &mut self.conns[cid as usize].ends[to as usize];
        if end.done {
            return;
        }
        end.conn.tcp_input(now, seg);
        self.tcp_pump(cid, to);
    }

    fn kill_conn(&mut self, cid: u32) {
        for e in 0..2 {
            let end = &mut self.conns[cid as usize].ends[e];
            end.done = true;
            if let Some((_, h)) = end.timer.take() {
                self.q.cancel(h);
            }
        }
    }

    fn on_tcp_event(&mut self, cid: u32, e: u8, ev: TcpEvent) {
        let f = self.conns[cid as usize].flow;
        let node = self.conns[cid as usize].ends[e as usize].node;
        match ev {
            TcpEvent::SynReceived => {
                let rto = self.conns[cid as usize].ends[e as usize].conn.rto_us();
                self.duty_trigger(node, DutyTrigger::SynReceived, rto);
            }
            TcpEvent::Established | TcpEvent::Writable => self.app_writable(cid, e),
            TcpEvent::Readable => self.app_readable(cid, e),
            TcpEvent::PeerClosed => {
                if matches!(self.flows[f as usize].spec.app, AppSpec::Web { .. }) {
                    self.conns[cid as usize].ends[e as usize].conn.close();
                }
            }
            TcpEvent::Closed => {
                let end = &mut self.conns[cid as usize].ends[e as usize];
                end.done = true;
            }
            TcpEvent::Aborted => self.conn_aborted(cid),
        }
    }

    fn conn_aborted(&mut self, cid: u32) {
        self.kill_conn(cid);
        let f = self.conns[cid as usize].flow;
        let spec = self.flows[f as usize].spec.clone();
        let flow = &mut self.flows[f as usize];
        flow.stats.aborts += 1;
        if flow.conn == Some(cid) {
            flow.conn = None;
        }
        match &mut flow.app {
            AppState::Sense(s) => {
                flow.stats.lost += s.written - s.received;
                s.written = 0;
                s.received = 0;
                s.rx_buf.clear();
            }
            AppState::Web(w) => {
                if let Some((_, idx)) = w.active.take() {
                    let _ = idx;
                }
            }
            AppState::Bulk => {}
        }
        if matches!(spec.app, AppSpec::Bulk | AppSpec::Sense { .. }) && self.generating() {
            let new = self.tcp_open(f, spec.src, spec.dst, 0);
            if matches!(spec.app, AppSpec::Sense { .. }) {
                self.sense_pump(f);
                self.tcp_pump(new, 0);
            }
        }
    }

    fn app_writable(&mut self, cid: u32, e: u8) {
        let f = self.conns[cid as usize].flow;
        let app = self.flows[f as usize].spec.app.clone();
        match app {
            AppSpec::Bulk => {
                if e != 0 || !self.generating() {
                    return;
                }
                let end = &mut self.conns[cid as usize].ends[0];
                loop {
                    let free = end.conn.send_free();
                    if free == 0 {
                        break;
                    }
                    let chunk = stream_chunk(end.written, free);
                    let n = end.conn.send(&chunk);
                    if n == 0 {
                        break;
                    }
                    end.written += n as u64;
                }
            }
            AppSpec::Web { response_bytes, persistent, .. } => {
                let slot = &mut self.conns[cid as usize];
                if e == 0 {
                    let end = &mut slot.ends[0];
                    let n = (slot.req_to_write as usize).min(end.conn.send_free());
                    if n > 0 {
                        let wrote = end.conn.send(&vec![b'q'; n]);
                        slot.req_to_write -= wrote as u64;
                    }
                } else {
                    let end = &mut slot.ends[1];
                    let n = (slot.resp_to_write as usize).min(end.conn.send_free());
                    if n > 0 {
                        let off = end.written;
                        let wrote = end.conn.send(&stream_chunk(off, n));
                        end.written += wrote as u64;
                        slot.resp_to_write -= wrote as u64;
                    }
                    if slot.resp_to_write == 0 && slot.served > 0 && !persistent {
                        let _ = response_bytes;
                        slot.ends[1].conn.close();
                    }
                }
            }
            AppSpec::Sense { .. } => {
                if e == 0 {
                    self.sense_pump(f);
                }
            }
        }
    }

    fn app_readable(&mut self, cid: u32, e: u8) {
        let now = self.now();
        let f = self.conns[cid as usize].flow;
        let app = self.flows[f as usize].spec.app.clone();
        let end = &mut self.conns[cid as usize].ends[e as usize];
        let data = end.conn.recv(usize::MAX);
        if data.is_empty() {
            return;
        }
        let off = end.read;
        end.read += data.len() as u64;
        match app {
            AppSpec::Bulk => {
                let flow = &mut self.flows[f as usize];
                if data.iter().enumerate().any(|(i, &b)| b != stream_byte(off + i as u64)) {
                    flow.stats.integrity_errors += 1;
                }
                flow.stats.deliveries.push((now.micros(), data.len() as u64));
            }
            AppSpec::Web {
                request_bytes,
                response_bytes,
                persistent,
                ..
            } => {
                let slot = &mut self.conns[cid as usize];
                if e == 1 {
                    while slot.ends[1].read >= (slot.served + 1) * request_bytes as u64 {
                        slot.served += 1;
                        slot.resp_to_write += response_bytes as u64;
                    }
                    self.app_writable(cid, 1);
                } else {
                    let flow = &mut self.flows[f as usize];
                    if data.iter().enumerate().any(|(i, &b)| b != stream_byte(off + i as u64)) {
                        flow.stats.integrity_errors += 1;
                    }
                    flow.stats.deliveries.push((now.micros(), data.len() as u64));
                    let mut done = 0;
                    while slot.ends[0].read >= (slot.completed + 1) * response_bytes as u64 {
                        slot.completed += 1;
                        done += 1;
                    }
                    if done > 0 && !persistent {
                        slot.ends[0].conn.close();
                    }
                    for _ in 0..done {
                        self.web_complete(f);
                    }
                }
            }
            AppSpec::Sense { reading_bytes: rb, .. } => {
                let flow = &mut self.flows[f as usize];
                let AppState::Sense(s) = &mut flow.app else {
                    unreachable!()
                };
                s.rx_buf.extend_from_slice(&data);
                let whole = s.rx_buf.len() / rb;
                for k in 0..whole {
                    let _id = reading_id(&s.rx_buf[k * rb..(k + 1) * rb]);
                    s.received += 1;
                    flow.stats.delivered += 1;
                }
                s.rx_buf.drain(..whole * rb);
                flow.stats.deliveries.push((now.micros(), data.len() as u64));
            }
        }
    }

    // ---- web ----

    fn web_request(&mut self, f: u32) {
        let now = self.now();
        let spec = self.flows[f as usize].spec.clone();
        let AppSpec::Web {
            request_bytes,
            response_bytes,
            interval_us,
            persistent,
            max_requests,
        } = spec.app
        else {
            unreachable!()
        };
        if !self.generating() {
            return;
        }
        let next = interval_us / 2 + self.rng_app.upto(interval_us);
        self.q.schedule_in(next, spec.dst, Ev::App(f, AppEv::Request));
        let flow = &mut self.flows[f as usize];
        let AppState::Web(w) = &mut flow.app else { unreachable!() };
        if w.active.is_some() || max_requests.is_some_and(|m| w.next_id >= m) {
            return;
        }
        let id = w.next_id;
        w.next_id += 1;
        w.active = Some((id, flow.stats.requests.len()));
        w.got = 0;
        flow.stats.requests.push(RequestRecord {
            flow: f,
            id,
            start_us: now.micros(),
            end_us: None,
            bytes: response_bytes as u64,
        });
        match spec.transport {
            Transport::Tcp => {
                let live = flow.conn.filter(|&c| {
                    let s = &self.conns[c as usize];
                    persistent && !s.ends[0].done && s.ends[0].conn.state() == TcpState::Established
                });
                let cid = match live {
                    Some(c) => c,
                    None => self.tcp_open(f, spec.dst, spec.src, 1),
                };
                self.conns[cid as usize].req_to_write += request_bytes as u64;
                self.app_writable(cid, 0);
                self.tcp_pump(cid, 0);
            }
            _ => self.coap_client_send(f, 1, vec![b'q'; request_bytes]),
        }
    }

    fn web_complete(&mut self, f: u32) {
        let now = self.now();
        let flow = &mut self.flows[f as usize];
        let AppState::Web(w) = &mut flow.app else { unreachable!() };
        if let Some((_, idx)) = w.active.take() {
            flow.stats.requests[idx].end_us = Some(now.micros());
        }
    }

    // ---- sense-and-send ----

    fn sense_reading(&mut self, f: u32) {
        let now = self.now();
        if !self.generating() {
            return;
        }
        let spec = self.flows[f as usize].spec.clone();
        let AppSpec::Sense { period_us, .. } = spec.app else { unreachable!() };
        self.q.schedule_in(period_us, spec.src, Ev::App(f, AppEv::Reading));
        let flow = &mut self.flows[f as usize];
        let AppState::Sense(s) = &mut flow.app else { unreachable!() };
        let r = Reading {
            id: s.next_id,
            generated_at: now,
        };
        s.next_id += 1;
        flow.stats.generated += 1;
        s.queue.app_enqueue(r);
        self.sense_pump(f);
        if let Some(cid) = self.flows[f as usize].conn {
            self.tcp_pump(cid, 0);
        }
    }

    /// Moves queued readings into the transport. Callers pump the TCP
    /// endpoint afterwards.
    fn sense_pump(&mut self, f: u32) {
        let block = self.p.coap_block;
        let flow = &mut self.flows[f as usize];
        let AppSpec::Sense { reading_bytes: rb, batch, .. } = flow.spec.app else {
            unreachable!()
        };
        let AppState::Sense(s) = &mut flow.app else { unreachable!() };
        if s.flushing == 0 && s.queue.len() >= batch {
            s.flushing = s.queue.len();
        }
        s.flushing = s.flushing.min(s.queue.len());
        if flow.spec.transport == Transport::Tcp {
            let Some(cid) = flow.conn else { return };
            let end = &mut self.conns[cid as usize].ends[0];
            if end.done || !matches!(end.conn.state(), TcpState::Established | TcpState::CloseWait) {
                return;
            }
            while s.flushing > 0 && end.conn.send_free() >= rb {
                let r = s.queue.take(1)[0];
                let n = end.conn.send(&reading_bytes(r.id, rb));
                debug_assert_eq!(n, rb);
                end.written += n as u64;
                s.written += 1;
                s.flushing -= 1;
            }
            return;
        }
        let per_msg = (block / rb).max(1);
        loop {
            let flow = &mut self.flows[f as usize];
            let AppState::Sense(s) = &mut flow.app else { unreachable!() };
            let idle = flow.coap.as_ref().expect("coap flow")[0].client.is_idle();
            if !idle || s.flushing == 0 {
                return;
            }
            let k = per_msg.min(s.flushing);
            s.flushing -= k;
            let readings = s.queue.take(k);
            s.inflight = readings.iter().map(|r| r.id).collect();
            let mut payload = Vec::with_capacity(k * rb);
            for r in &readings {
                payload.extend_from_slice(&reading_bytes(r.id, rb));
            }
            let nonconfirmable = self.p.coap.mode == CoapMode::NonConfirmable;
            self.coap_client_send(f, 0, payload);
            if nonconfirmable {
                // nothing comes back: count them lost until the server sees them
                let flow = &mut self.flows[f as usize];
                let AppState::Sense(s) = &mut flow.app else { unreachable!() };
                for id in s.inflight.drain(..) {
                    if !s.seen.contains(&id) && s.written_off.insert(id) {
                        flow.stats.lost += 1;
                    }
                }
            }
        }
    }

    // ---- CoAP glue ----

    fn coap_end(&mut self, f: u32, e: u8) -> &mut CoapEnd {
        &mut self.flows[f as usize].coap.as_mut().expect("coap flow")[e as usize]
    }

    fn coap_transmit(&mut self, f: u32, from: u8, msg: CoapMsg) {
        let src = self.coap_end(f, from).node;
        let dst = self.coap_end(f, 1 - from).node;
        let dg = self.new_datagram(src, dst, Body::Coap { flow: f, to: 1 - from, msg }, false);
        self.net_send(src, dg);
    }

    fn coap_client_send(&mut self, f: u32, e: u8, payload: Vec<u8>) {
        let now = self.now();
        let end = &mut self.flows[f as usize].coap.as_mut().expect("coap flow")[e as usize];
        let msg = end.client.coap_send(now, payload, &mut self.rng_transport);
        let node = end.node;
        let rto = end.client.current().map(|x| x.current_rto);
        self.coap_transmit(f, e, msg);
        self.coap_rearm(f, e);
        if let Some(rto) = rto {
            self.duty_trigger(node, DutyTrigger::CoapResponseExpected, rto);
        }
    }

    fn coap_rearm(&mut self, f: u32, e: u8) {
        let now = self.now();
        let end = &mut self.flows[f as usize].coap.as_mut().expect("coap flow")[e as usize];
        let want = end.client.next_deadline();
        if end.timer.map(|t| t.0) == want {
            return;
        }
        if let Some((_, h)) = end.timer.take() {
            self.q.cancel(h);
        }
        if let Some(d) = want {
            let h = self.q.schedule(d.max(now), end.node, Ev::CoapTimer(f, e));
            end.timer = Some((d, h));
        }
    }

    pub(crate) fn coap_timer(&mut self, f: u32, e: u8) {
        let now = self.now();
        let end = self.coap_end(f, e);
        end.timer = None;
        let out = end.client.on_timer(now);
        let node = end.node;
        match out {
            Some(CoapTimeout::Retransmit(msg)) => {
                let rto = self.coap_end(f, e).client.current().map(|x| x.current_rto);
                self.coap_transmit(f, e, msg);
                if let Some(rto) = rto {
                    self.duty_trigger(node, DutyTrigger::CoapResponseExpected, rto);
                }
            }
            Some(CoapTimeout::GaveUp(ex)) => self.coap_gave_up(f, e, ex),
            None => {}
        }
        self.coap_rearm(f, e);
    }

    pub(crate) fn coap_deliver(&mut self, f: u32, to: u8, msg: CoapMsg) {
        let now = self.now();
        if msg.is_ack {
            let ex = self.coap_end(f, to).client.on_ack(now, msg.mid);
            self.coap_rearm(f, to);
            if let Some(ex) = ex {
                self.coap_acked(f, to, ex, msg.payload);
            }
            return;
        }
        let (ack, fresh) = self.coap_end(f, to).server.on_request(&msg);
        let mut ack = ack;
        let app = self.flows[f as usize].spec.app.clone();
        match app {
            AppSpec::Bulk => {
                if fresh {
                    let flow = &mut self.flows[f as usize];
                    flow.stats.deliveries.push((now.micros(), msg.payload.len() as u64));
                }
            }
            AppSpec::Sense { reading_bytes: rb, .. } => {
                if fresh {
                    let flow = &mut self.flows[f as usize];
                    let AppState::Sense(s) = &mut flow.app else { unreachable!() };
                    for chunk in msg.payload.chunks_exact(rb) {
                        let id = reading_id(chunk);
                        if s.seen.insert(id) {
                            flow.stats.delivered += 1;
                            if s.written_off.remove(&id) {
                                flow.stats.lost -= 1;
                            }
                        }
                    }
                    flow.stats.deliveries.push((now.micros(), msg.payload.len() as u64));
                }
            }
            AppSpec::Web { response_bytes, .. } => {
                if to == 0 {
                    // request at the server
                    if response_bytes <= self.p.coap_block {
                        if let Some(a) = ack.as_mut() {
                            a.payload = stream_chunk(0, response_bytes);
                        }
                    } else if fresh {
                        let AppState::Web(w) = &mut self.flows[f as usize].app else { unreachable!() };
                        w.block_left = response_bytes as u64;
                        self.coap_block_pump(f);
                    }
                } else if fresh {
                    // response block at the client
                    let flow = &mut self.flows[f as usize];
                    flow.stats.deliveries.push((now.micros(), msg.payload.len() as u64));
                    let AppState::Web(w) = &mut flow.app else { unreachable!() };
                    w.got += msg.payload.len() as u64;
                    if w.got >= response_bytes as u64 {
                        w.got = 0;
                        self.web_complete(f);
                    }
                }
            }
        }
        if let Some(a) = ack {
            self.coap_transmit(f, to, a);
        }
    }

    fn coap_acked(&mut self, f: u32, e: u8, ex: CoapExchange, payload: Vec<u8>) {
        let now = self.now();
        let app = self.flows[f as usize].spec.app.clone();
        self.flows[f as usize]
            .stats
            .rtt_samples_us
            .push(now.micros() - ex.first_tx.micros());
        match app {
            AppSpec::Bulk => self.coap_bulk_pump(f),
            AppSpec::Sense { .. } => {
                let AppState::Sense(s) = &mut self.flows[f as usize].app else { unreachable!() };
                s.inflight.clear();
                self.sense_pump(f);
            }
            AppSpec::Web { .. } => {
                if e == 1 {
                    if !payload.is_empty() {
                        let flow = &mut self.flows[f as usize];
                        flow.stats.deliveries.push((now.micros(), payload.len() as u64));
                        self.web_complete(f);
                    }
                } else {
                    let block = self.p.coap_block as u64;
                    let AppState::Web(w) = &mut self.flows[f as usize].app else { unreachable!() };
                    w.block_left = w.block_left.saturating_sub(block.min(ex.payload.len() as u64));
                    self.coap_block_pump(f);
                }
            }
        }
    }

    fn coap_gave_up(&mut self, f: u32, e: u8, _ex: CoapExchange) {
        let app = self.flows[f as usize].spec.app.clone();
        match app {
            AppSpec::Bulk => self.coap_bulk_pump(f),
            AppSpec::Sense { .. } => {
                let flow = &mut self.flows[f as usize];
                let AppState::Sense(s) = &mut flow.app else { unreachable!() };
                for id in s.inflight.drain(..) {
                    if !s.seen.contains(&id) && s.written_off.insert(id) {
                        flow.stats.lost += 1;
                    }
                }
                self.sense_pump(f);
            }
            AppSpec::Web { .. } => {
                if e == 1 {
                    // the request is abandoned
                    let AppState::Web(w) = &mut self.flows[f as usize].app else { unreachable!() };
                    w.active = None;
                } else {
                    self.coap_block_pump(f);
                }
            }
        }
    }

    fn coap_bulk_pump(&mut self, f: u32) {
        if !self.generating() {
            return;
        }
        let idle = self.coap_end(f, 0).client.is_idle();
        if idle {
            let block = self.p.coap_block;
            self.coap_client_send(f, 0, stream_chunk(0, block));
        }
    }

    fn coap_block_pump(&mut self, f: u32) {
        let block = self.p.coap_block as u64;
        let AppState::Web(w) = &self.flows[f as usize].app else { unreachable!() };
        let left = w.block_left;
        if left == 0 || !self.coap_end(f, 0).client.is_idle() {
            return;
        }
        self.coap_client_send(f, 0, stream_chunk(0, left.min(block) as usize));
    }

    // ---- sampling and results ----

    pub(crate) fn sample(&mut self) {
        let now = self.now();
        for (i, flow) in self.flows.iter().enumerate() {
            let Some(cid) = flow.conn else { continue };
            let slot = &self.conns[cid as usize];
            let end = &slot.ends[slot.sender as usize];
            if end.done {
                continue;
            }
            let c = &end.conn;
            self.series.push(SeriesPoint {
                t_us: now.micros(),
                flow: i as u32,
                cwnd: c.cwnd(),
                ssthresh: c.ssthresh(),
                flight: c.flight(),
                snd_wnd: c.snd_wnd(),
                srtt_us: c.srtt_us().unwrap_or(0),
                rto_us: c.rto_us(),
            });
        }
        if now.micros() + self.p.sample_us <= self.p.end_us {
            self.q.schedule_in(self.p.sample_us, self.cloud, Ev::Sample);
        }
    }

    pub(crate) fn finish(mut self) -> WorldOutput {
        let now = self.now();
        for slot in &self.conns {
            let flow = &mut self.flows[slot.flow as usize];
            let tx = slot.ends[slot.sender as usize].conn.stats();
            let rx = slot.ends[1 - slot.sender as usize].conn.stats();
            let st = &mut flow.stats;
            st.segments_sent += tx.data_segments_sent;
            st.segments_received += rx.data_segments_received;
            st.retx.timeout += tx.retx.timeout;
            st.retx.fast += tx.retx.fast;
            st.retx.sack_hole += tx.retx.sack_hole;
            st.rto_fires += tx.rto_fires;
            st.ecn_reductions += tx.ecn_reductions;
            st.rtt_samples_us.extend_from_slice(&tx.rtt_samples_us);
        }
        for flow in &mut self.flows {
            if let Some(ends) = &flow.coap {
                for end in ends {
                    let s = end.client.stats();
                    flow.stats.coap_transmissions += s.transmissions;
                    flow.stats.coap_retransmissions += s.retransmissions;
                    flow.stats.coap_give_ups += s.give_ups;
                }
            }
            if let AppState::Sense(s) = &flow.app {
                flow.stats.overflow = s.queue.overflow_drops();
                let in_conn = s.written.saturating_sub(s.received);
                let unseen = s.inflight.iter().filter(|id| !s.seen.contains(id)).count() as u64;
                flow.stats.pending = s.queue.len() as u64 + in_conn + unseen;
            }
        }
        let span = now.micros().saturating_sub(self.p.warmup_us);
        let mut nodes: Vec<NodeStats> = Vec::with_capacity(self.nodes.len() + 1);
        for (i, node) in self.nodes.iter().enumerate() {
            let mut s = node.stats.clone();
            s.label = self.topo.label(i as NodeId);
            s.role = Some(node.role);
            s.sleepy = node.sleepy;
            s.radio_on_us = node.meter.on_time(now);
            let at_warmup = self.meter_at_warmup.get(i).copied().unwrap_or(0);
            s.duty_cycle = if span == 0 {
                0.0
            } else {
                duty_metric(at_warmup, s.radio_on_us, SimTime(self.p.warmup_us), now)
            };
            s.mac_busy_us = node.mac.busy_us;
            s.reasm_expired = node.reasm.expired();
            s.reasm_evicted = node.reasm.evicted();
            nodes.push(s);
        }
        let mut cloud = self.cloud_stats.clone();
        cloud.label = 0;
        nodes.push(cloud);
        WorldOutput {
            flows: self.flows.into_iter().map(|f| f.stats).collect(),
            nodes,
            links: self.links,
            series: self.series,
            trace: self.trace,
            events: self.q.processed(),
            warmup_us: self.p.warmup_us,
            end_us: self.p.end_us,
            stop_us: self.p.stop_us,
        }
    }
}
