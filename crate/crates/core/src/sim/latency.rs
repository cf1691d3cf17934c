use std::collections::HashMap;

use crate::protocol::ProcessId;

use super::scenario::LatencyRamp;

/// Per-link delay model: a deterministic per-link base in
/// `[base_min, base_max]` scaled by the ramp factor, unless the link has a
/// fixed delay.
#[derive(Clone, Debug)]
pub struct LatencyModel {
    seed: u64,
    ramp: LatencyRamp,
    fixed: HashMap<(ProcessId, ProcessId), u64>,
    direct: HashMap<(ProcessId, ProcessId), u64>,
}

impl LatencyModel {
    pub fn new(seed: u64, ramp: LatencyRamp) -> Self {
        LatencyModel {
            seed,
            ramp,
            fixed: HashMap::new(),
            direct: HashMap::new(),
        }
    }

    pub fn set_fixed(&mut self, from: ProcessId, to: ProcessId, ms: u64) {
        self.fixed.insert((from, to), ms);
    }

    pub fn set_direct(&mut self, from: ProcessId, to: ProcessId, ms: u64) {
        self.direct.insert((from, to), ms);
    }

    pub fn ramp(&self) -> &LatencyRamp {
        &self.ramp
    }

    pub fn base(&self, from: ProcessId, to: ProcessId) -> f64 {
        let u = unit(mix(self.seed ^ mix(from.0.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ to.0)));
        self.ramp.base_min + (self.ramp.base_max - self.ramp.base_min) * u
    }

    pub fn link_delay(&self, from: ProcessId, to: ProcessId, now: u64) -> u64 {
        if let Some(ms) = self.fixed.get(&(from, to)) {
            return *ms;
        }
        (self.base(from, to) * self.ramp.factor_at(now)).round() as u64
    }

    /// Delay on the out-of-band channel used for pongs.
    pub fn direct_delay(&self, from: ProcessId, to: ProcessId, now: u64) -> u64 {
        if let Some(ms) = self.direct.get(&(from, to)) {
            return *ms;
        }
        if let Some(ms) = self.fixed.get(&(from, to)) {
            return *ms;
        }
        (self.base(from, to) * self.ramp.factor_at(now)).round() as u64
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_is_stable_and_in_range() {
        let m = LatencyModel::new(7, LatencyRamp::constant(100.0));
        for a in 0..20 {
            for b in 0..20 {
                let x = m.base(ProcessId(a), ProcessId(b));
                assert!((0.5..=1.0).contains(&x));
                assert_eq!(x, m.base(ProcessId(a), ProcessId(b)));
            }
        }
        assert_ne!(m.base(ProcessId(1), ProcessId(2)), m.base(ProcessId(2), ProcessId(1)));
    }

    #[test]
    fn fixed_and_direct_override() {
        let mut m = LatencyModel::new(1, LatencyRamp::constant(0.0));
        assert_eq!(m.link_delay(ProcessId(0), ProcessId(1), 10), 0);
        m.set_fixed(ProcessId(0), ProcessId(1), 40);
        m.set_direct(ProcessId(1), ProcessId(0), 3);
        assert_eq!(m.link_delay(ProcessId(0), ProcessId(1), 10), 40);
        assert_eq!(m.direct_delay(ProcessId(0), ProcessId(1), 10), 40);
        assert_eq!(m.direct_delay(ProcessId(1), ProcessId(0), 10), 3);
    }
}
