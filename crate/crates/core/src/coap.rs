//! CoAP-style request/response reliability: confirmable stop-and-wait with
//! exponential backoff, the CoCoA variant that feeds retransmission-
//! inclusive samples into its timeout, and nonconfirmable fire-and-forget.

use crate::sim::{SimRng, SimTime, SEC};
use crate::tcp::RttEstimator;

pub const ACK_TIMEOUT_US: u64 = 3 * SEC;
pub const MAX_RETRANSMIT: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoapMode {
    Confirmable,
    Cocoa,
    NonConfirmable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoapConfig {
    pub mode: CoapMode,
    pub ack_timeout_us: u64,
    pub max_retransmit: u32,
    /// Scale the first timeout by U[1, 1.5].
    pub jitter: bool,
    pub cocoa_rto_min_us: u64,
    pub cocoa_rto_max_us: u64,
}

impl Default for CoapConfig {
    fn default() -> Self {
        CoapConfig {
            mode: CoapMode::Confirmable,
            ack_timeout_us: ACK_TIMEOUT_US,
            max_retransmit: MAX_RETRANSMIT,
            jitter: false,
            cocoa_rto_min_us: 300_000,
            cocoa_rto_max_us: 60 * SEC,
        }
    }
}

/// A CoAP message as the network sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct CoapMsg {
    pub mid: u32,
    pub confirmable: bool,
    pub is_ack: bool,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExchangeState {
    Pending,
    Acked,
    GivenUp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoapExchange {
    pub mid: u32,
    pub payload: Vec<u8>,
    pub retx_count: u32,
    pub current_rto: u64,
    pub first_tx: SimTime,
    pub state: ExchangeState,
}

/// Timeout estimator fed with samples measured from the first
/// transmission of each exchange.
#[derive(Clone, Debug, PartialEq)]
pub struct CocoaEstimator {
    est: RttEstimator,
}

impl CocoaEstimator {
    pub fn new(initial_us: u64, min_us: u64, max_us: u64) -> Self {
        CocoaEstimator {
            est: RttEstimator::new(initial_us, min_us, max_us),
        }
    }

    pub fn rto_us(&self) -> u64 {
        self.est.rto_us()
    }

    pub fn srtt_us(&self) -> Option<u64> {
        self.est.srtt_us()
    }

    /// Folds in a completed exchange; returns the new timeout.
    pub fn cocoa_on_sample(&mut self, first_tx: SimTime, completed: SimTime) -> u64 {
        self.est.rtt_update(completed - first_tx)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoapStats {
    pub exchanges: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub give_ups: u64,
    pub completed: u64,
    pub samples_us: Vec<u64>,
}

/// What a timer expiry produced.
#[derive(Clone, Debug, PartialEq)]
pub enum CoapTimeout {
    Retransmit(CoapMsg),
    GaveUp(CoapExchange),
}

/// Client side of one flow: at most one confirmable exchange outstanding.
#[derive(Clone, Debug)]
pub struct CoapClient {
    cfg: CoapConfig,
    cocoa: CocoaEstimator,
    current: Option<CoapExchange>,
    deadline: Option<SimTime>,
    next_mid: u32,
    stats: CoapStats,
}

impl CoapClient {
    pub fn new(cfg: CoapConfig) -> Self {
        let cocoa = CocoaEstimator::new(cfg.ack_timeout_us, cfg.cocoa_rto_min_us, cfg.cocoa_rto_max_us);
        CoapClient {
            cfg,
            cocoa,
            current: None,
            deadline: None,
            next_mid: 1,
            stats: CoapStats::default(),
        }
    }

    pub fn config(&self) -> &CoapConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &CoapStats {
        &self.stats
    }

    pub fn estimator(&self) -> &CocoaEstimator {
        &self.cocoa
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none()
    }

    pub fn current(&self) -> Option<&CoapExchange> {
        self.current.as_ref()
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    fn initial_rto(&self, rng: &mut SimRng) -> u64 {
        match self.cfg.mode {
            CoapMode::Cocoa => self.cocoa.rto_us(),
            _ if self.cfg.jitter => self.cfg.ack_timeout_us + rng.upto(self.cfg.ack_timeout_us / 2),
            _ => self.cfg.ack_timeout_us,
        }
    }

    /// Starts an exchange (or sends a nonconfirmable message).
    ///
    /// # Panics
    /// If a confirmable exchange is already outstanding.
    pub fn coap_send(&mut self, now: SimTime, payload: Vec<u8>, rng: &mut SimRng) -> CoapMsg {
        let mid = self.next_mid;
        self.next_mid = self.next_mid.wrapping_add(1);
        self.stats.exchanges += 1;
        self.stats.transmissions += 1;
        if self.cfg.mode == CoapMode::NonConfirmable {
            return CoapMsg {
                mid,
                confirmable: false,
                is_ack: false,
                payload,
            };
        }
        assert!(self.current.is_none(), "stop-and-wait: exchange already outstanding");
        let rto = self.initial_rto(rng);
        let msg = CoapMsg {
            mid,
            confirmable: true,
            is_ack: false,
            payload: payload.clone(),
        };
        self.current = Some(CoapExchange {
            mid,
            payload,
            retx_count: 0,
            current_rto: rto,
            first_tx: now,
            state: ExchangeState::Pending,
        });
        self.deadline = Some(now + rto);
        msg
    }

    /// Handles an ACK; returns the completed exchange if it matched.
    pub fn on_ack(&mut self, now: SimTime, mid: u32) -> Option<CoapExchange> {
        match &self.current {
            Some(ex) if ex.mid == mid => {}
            _ => return None,
        }
        let mut ex = self.current.take().expect("checked");
        ex.state = ExchangeState::Acked;
        self.deadline = None;
        self.stats.completed += 1;
        self.stats.samples_us.push(now - ex.first_tx);
        if self.cfg.mode == CoapMode::Cocoa {
            self.cocoa.cocoa_on_sample(ex.first_tx, now);
        }
        Some(ex)
    }

    /// Timer expiry: retransmit with a doubled timeout, or give up.
    pub fn on_timer(&mut self, now: SimTime) -> Option<CoapTimeout> {
        if !self.deadline.is_some_and(|d| d <= now) {
            return None;
        }
        let ex = self.current.as_mut()?;
        if ex.retx_count >= self.cfg.max_retransmit {
            let mut ex = self.current.take().expect("checked");
            ex.state = ExchangeState::GivenUp;
            self.deadline = None;
            self.stats.give_ups += 1;
            return Some(CoapTimeout::GaveUp(ex));
        }
        ex.retx_count += 1;
        ex.current_rto *= 2;
        self.deadline = Some(now + ex.current_rto);
        self.stats.transmissions += 1;
        self.stats.retransmissions += 1;
        Some(CoapTimeout::Retransmit(CoapMsg {
            mid: ex.mid,
            confirmable: true,
            is_ack: false,
            payload: ex.payload.clone(),
        }))
    }
}

/// Server-side duplicate detection for one client.
#[derive(Clone, Debug, Default)]
pub struct CoapServer {
    seen: std::collections::BTreeSet<u32>,
}

impl CoapServer {
    /// Returns the ACK to send (if confirmable) and whether the payload is
    /// new.
    pub fn on_request(&mut self, msg: &CoapMsg) -> (Option<CoapMsg>, bool) {
        let fresh = self.seen.insert(msg.mid);
        let ack = msg.confirmable.then(|| CoapMsg {
            mid: msg.mid,
            confirmable: false,
            is_ack: true,
            payload: Vec::new(),
        });
        (ack, fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::MS;

    fn rng() -> SimRng {
        SimRng::new(3, 3)
    }

    #[test]
    fn lossless_single_transmission() {
        let mut c = CoapClient::new(CoapConfig::default());
        let m = c.coap_send(SimTime::ZERO, vec![1; 10], &mut rng());
        let ex = c.on_ack(SimTime::from_millis(150), m.mid).unwrap();
        assert_eq!(ex.state, ExchangeState::Acked);
        assert_eq!(c.stats().transmissions, 1);
        assert!(c.is_idle());
    }

    #[test]
    fn give_up_schedule() {
        let mut c = CoapClient::new(CoapConfig::default());
        c.coap_send(SimTime::ZERO, vec![], &mut rng());
        let mut tx_times = vec![0u64];
        loop {
            let d = c.next_deadline().unwrap();
            match c.on_timer(d).unwrap() {
                CoapTimeout::Retransmit(_) => tx_times.push(d.micros() / SEC),
                CoapTimeout::GaveUp(ex) => {
                    assert_eq!(ex.retx_count, 4);
                    break;
                }
            }
        }
        assert_eq!(tx_times, vec![0, 3, 9, 21, 45]);
        assert!(c.is_idle());
        let mut r = rng();
        c.coap_send(SimTime::from_secs(200), vec![], &mut r);
        assert_eq!(c.current().unwrap().current_rto, 3 * SEC);
    }

    #[test]
    #[should_panic]
    fn stop_and_wait_enforced() {
        let mut c = CoapClient::new(CoapConfig::default());
        c.coap_send(SimTime::ZERO, vec![], &mut rng());
        c.coap_send(SimTime::ZERO, vec![], &mut rng());
    }

    #[test]
    fn cocoa_converges_near_rtt() {
        let cfg = CoapConfig {
            mode: CoapMode::Cocoa,
            cocoa_rto_min_us: 0,
            ..CoapConfig::default()
        };
        let mut c = CoapClient::new(cfg);
        let mut now = SimTime::ZERO;
        for _ in 0..100 {
            let m = c.coap_send(now, vec![], &mut rng());
            now += 150 * MS;
            c.on_ack(now, m.mid);
            now += SEC;
        }
        let rto = c.estimator().rto_us();
        assert!((150 * MS..300 * MS).contains(&rto), "{rto}");
    }

    #[test]
    fn cocoa_sample_includes_backoff() {
        let cfg = CoapConfig {
            mode: CoapMode::Cocoa,
            ..CoapConfig::default()
        };
        let mut c = CoapClient::new(cfg);
        let m = c.coap_send(SimTime::ZERO, vec![], &mut rng());
        let d = c.next_deadline().unwrap();
        c.on_timer(d);
        c.on_ack(d + 150 * MS, m.mid);
        assert!(c.stats().samples_us[0] > 150 * MS);
        assert!(c.estimator().srtt_us().unwrap() > 3 * SEC);
    }

    #[test]
    fn nonconfirmable_keeps_no_state() {
        let cfg = CoapConfig {
            mode: CoapMode::NonConfirmable,
            ..CoapConfig::default()
        };
        let mut c = CoapClient::new(cfg);
        let m = c.coap_send(SimTime::ZERO, vec![1], &mut rng());
        assert!(!m.confirmable);
        assert!(c.is_idle());
        assert!(c.next_deadline().is_none());
        c.coap_send(SimTime::ZERO, vec![2], &mut rng());
    }

    #[test]
    fn server_dedups() {
        let mut s = CoapServer::default();
        let m = CoapMsg {
            mid: 5,
            confirmable: true,
            is_ack: false,
            payload: vec![],
        };
        assert!(s.on_request(&m).1);
        let (ack, fresh) = s.on_request(&m);
        assert!(!fresh);
        assert!(ack.unwrap().is_ack);
    }
}
