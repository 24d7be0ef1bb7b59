use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiple-access scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Hybrid-domain NOMA: two SCMA-encoded groups superimposed in power domain.
    Hd,
    /// Sparse code multiple access with group decoding (no inter-group SIC).
    Scma,
    /// Power-domain NOMA: single-subcarrier users, per-carrier SIC.
    Pd,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Hd => "hd",
            Scheme::Scma => "scma",
            Scheme::Pd => "pd",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hd" => Ok(Scheme::Hd),
            "scma" => Ok(Scheme::Scma),
            "pd" => Ok(Scheme::Pd),
            other => Err(Error::Parse(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Convert a dBm figure to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// System-level parameters shared by the three schemes.
///
/// Powers are in watts internally; the CLI layer converts from dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub scheme: Scheme,
    /// Number of orthogonal subcarriers.
    pub k: usize,
    /// Strong-user (SU) group size.
    pub j_s: usize,
    /// Weak-user (WU) group size.
    pub j_w: usize,
    /// Receive antennas at the base station.
    pub n_r: usize,
    /// Max subcarriers one SU may occupy.
    pub per_user_cap_s: usize,
    /// Max subcarriers one WU may occupy.
    pub per_user_cap_w: usize,
    /// Max SUs sharing one subcarrier (PD: combined with the WU cap, see below).
    pub per_carrier_cap_s: usize,
    /// Max WUs sharing one subcarrier.
    pub per_carrier_cap_w: usize,
    /// Per-user transmit power budget, watts.
    pub p_bar: f64,
    /// Per-WU minimum rate targets, b/s/Hz (length `j_w`).
    pub r_bar_w: Vec<f64>,
    /// SU-group minimum sum rate, b/s/Hz.
    pub r_bar_s: f64,
    /// Noise power per subcarrier, watts.
    pub sigma2: f64,
    pub bandwidth_hz: f64,
    pub cell_radius_m: f64,
    pub su_radius_m: f64,
}

impl SystemConfig {
    /// Ratio of served users to subcarriers.
    pub fn overloading(&self) -> f64 {
        (self.j_s + self.j_w) as f64 / self.k as f64
    }

    /// Per-carrier user budget. PD superimposes the two groups on each
    /// subcarrier, so its cap binds the combined column sum; HD and SCMA
    /// cap each group's column separately.
    pub fn combined_carrier_cap(&self) -> usize {
        self.per_carrier_cap_s + self.per_carrier_cap_w
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k < 1 {
            return fail("k must be >= 1".into());
        }
        if self.n_r < 1 {
            return fail("n_r must be >= 1".into());
        }
        if !(self.p_bar >= 0.0) {
            return fail(format!("p_bar must be >= 0, got {}", self.p_bar));
        }
        if !(self.sigma2 > 0.0) {
            return fail(format!("sigma2 must be > 0, got {}", self.sigma2));
        }
        if self.r_bar_w.len() != self.j_w {
            return fail(format!(
                "r_bar_w has {} entries but j_w = {}",
                self.r_bar_w.len(),
                self.j_w
            ));
        }
        if self.r_bar_w.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return fail("r_bar_w entries must be finite and >= 0".into());
        }
        if !self.r_bar_s.is_finite() || self.r_bar_s < 0.0 {
            return fail("r_bar_s must be finite and >= 0".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            return fail("bandwidth_hz must be > 0".into());
        }
        if !(self.su_radius_m > 0.0) || self.su_radius_m > self.cell_radius_m {
            return fail("need 0 < su_radius_m <= cell_radius_m".into());
        }
        for (name, cap, j) in [
            ("per_user_cap_s", self.per_user_cap_s, self.j_s),
            ("per_user_cap_w", self.per_user_cap_w, self.j_w),
        ] {
            if j > 0 && !(1 <= cap && cap <= self.k) {
                return fail(format!("{name} = {cap} outside 1..={}", self.k));
            }
        }
        for (name, cap, j) in [
            ("per_carrier_cap_s", self.per_carrier_cap_s, self.j_s),
            ("per_carrier_cap_w", self.per_carrier_cap_w, self.j_w),
        ] {
            if j > 0 && !(1 <= cap && cap <= j) {
                return fail(format!("{name} = {cap} outside 1..={j}"));
            }
        }
        if self.scheme == Scheme::Pd {
            if self.j_s > 0 && self.per_user_cap_s != 1
                || self.j_w > 0 && self.per_user_cap_w != 1
            {
                return fail("PD requires per-user caps of exactly 1".into());
            }
            if self.combined_carrier_cap() != 3 {
                return fail(format!(
                    "PD requires per_carrier_cap_s + per_carrier_cap_w = 3, got {}",
                    self.combined_carrier_cap()
                ));
            }
        }
        Ok(())
    }

    /// Simulation defaults: BW = 1 MHz, K = 4, J_s = J_w = 6, N_R = 4,
    /// P̄ = 24 dBm, noise derived from BW/K.
    pub fn default_for(scheme: Scheme) -> Self {
        let k = 4;
        let bandwidth_hz = 1e6;
        let (pu_s, pu_w, pc_s, pc_w) = match scheme {
            Scheme::Hd | Scheme::Scma => (2, 2, 3, 3),
            Scheme::Pd => (1, 1, 2, 1),
        };
        SystemConfig {
            scheme,
            k,
            j_s: 6,
            j_w: 6,
            n_r: 4,
            per_user_cap_s: pu_s,
            per_user_cap_w: pu_w,
            per_carrier_cap_s: pc_s,
            per_carrier_cap_w: pc_w,
            p_bar: dbm_to_watts(24.0),
            r_bar_w: vec![0.5; 6],
            r_bar_s: 1.0,
            sigma2: crate::model::noise_power(bandwidth_hz, k),
            bandwidth_hz,
            cell_radius_m: 100.0,
            su_radius_m: 50.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for scheme in [Scheme::Hd, Scheme::Scma, Scheme::Pd] {
            SystemConfig::default_for(scheme).validate().unwrap();
        }
    }

    #[test]
    fn overloading_factor() {
        let cfg = SystemConfig::default_for(Scheme::Hd);
        assert_eq!(cfg.overloading(), 3.0);
    }

    #[test]
    fn pd_cap_invariant_enforced() {
        let mut cfg = SystemConfig::default_for(Scheme::Pd);
        cfg.per_carrier_cap_s = 3;
        assert!(cfg.validate().is_err());
        cfg.per_carrier_cap_s = 2;
        cfg.per_user_cap_s = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(24.0) - 0.251188643150958).abs() < 1e-12);
    }
}
