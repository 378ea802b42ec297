/// Smoothed RTT estimator with the standard gains (1/8, 1/4) and a
/// clamped, exponentially backed-off timeout.
#[derive(Clone, Debug, PartialEq)]
pub struct RttEstimator {
    srtt: Option<f64>,
    rttvar: f64,
    rto: u64,
    initial_us: u64,
    min_us: u64,
    max_us: u64,
}

impl RttEstimator {
    pub fn new(initial_us: u64, min_us: u64, max_us: u64) -> Self {
        assert!(min_us <= max_us);
        RttEstimator {
            srtt: None,
            rttvar: 0.0,
            rto: initial_us.clamp(min_us, max_us),
            initial_us: initial_us.clamp(min_us, max_us),
            min_us,
            max_us,
        }
    }

    pub fn srtt_us(&self) -> Option<u64> {
        self.srtt.map(|s| s.round() as u64)
    }

    pub fn rttvar_us(&self) -> u64 {
        self.rttvar.round() as u64
    }

    pub fn rto_us(&self) -> u64 {
        self.rto
    }

    fn computed(&self) -> u64 {
        match self.srtt {
            Some(s) => ((s + 4.0 * self.rttvar).round() as u64).clamp(self.min_us, self.max_us),
            None => self.initial_us,
        }
    }

    /// Feeds one sample and returns the new timeout.
    pub fn rtt_update(&mut self, sample_us: u64) -> u64 {
        let r = sample_us as f64;
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - r).abs();
                self.srtt = Some(0.875 * s + 0.125 * r);
            }
        }
        self.rto = self.computed();
        self.rto
    }

    /// Doubles the timeout, capped at the maximum.
    pub fn backoff(&mut self) -> u64 {
        self.rto = (self.rto.saturating_mul(2)).min(self.max_us);
        self.rto
    }

    /// Drops any backoff and returns to the estimate.
    pub fn restore(&mut self) -> u64 {
        self.rto = self.computed();
        self.rto
    }
}
