use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{ChannelSet, Scheme, SystemConfig};

/// Factor-graph assignment plus power allocation for both user groups.
///
/// `f_*` entries live in [0,1] (relaxed) or {0,1} (binary); `p_*` entries are
/// transmit powers in watts. Shapes are (user, subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub f_s: Array2<f64>,
    pub f_w: Array2<f64>,
    pub p_s: Array2<f64>,
    pub p_w: Array2<f64>,
    /// Whether every `f` entry is exactly 0 or 1.
    pub binary: bool,
}

impl Allocation {
    pub fn zeros(config: &SystemConfig) -> Self {
        Allocation {
            f_s: Array2::zeros((config.j_s, config.k)),
            f_w: Array2::zeros((config.j_w, config.k)),
            p_s: Array2::zeros((config.j_s, config.k)),
            p_w: Array2::zeros((config.j_w, config.k)),
            binary: true,
        }
    }

    pub fn dims_match(&self, config: &SystemConfig) -> Result<()> {
        let want_s = (config.j_s, config.k);
        let want_w = (config.j_w, config.k);
        if self.f_s.dim() != want_s
            || self.p_s.dim() != want_s
            || self.f_w.dim() != want_w
            || self.p_w.dim() != want_w
        {
            return Err(Error::DimensionMismatch(format!(
                "allocation shaped {:?}/{:?}, config wants {:?}/{:?}",
                self.f_s.dim(),
                self.f_w.dim(),
                want_s,
                want_w
            )));
        }
        Ok(())
    }

    /// Entry-range invariants: f in [0,1], p >= 0, exact binary when flagged.
    pub fn check_entries(&self) -> Result<()> {
        for f in self.f_s.iter().chain(self.f_w.iter()) {
            if !(*f >= 0.0 && *f <= 1.0) {
                return Err(Error::Domain(format!("assignment entry {f} outside [0,1]")));
            }
            if self.binary && *f != 0.0 && *f != 1.0 {
                return Err(Error::Domain(format!(
                    "binary allocation has fractional entry {f}"
                )));
            }
        }
        for p in self.p_s.iter().chain(self.p_w.iter()) {
            if !(*p >= 0.0) {
                return Err(Error::Domain(format!("power entry {p} is negative")));
            }
        }
        Ok(())
    }
}

/// Constraint families of the joint allocation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFamily {
    /// Per-WU minimum rate.
    WuMinRate,
    /// SU-group minimum sum rate (not enforced for SCMA, where the target is 0).
    SuGroupRate,
    /// Max subcarriers per user (row sums).
    PerUserCap,
    /// Max users per subcarrier (column sums; combined across groups for PD).
    PerCarrierCap,
    /// Per-user power budget.
    PowerBudget,
    /// Exact binariness of the assignment matrices.
    Binary,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 6] = [
        ConstraintFamily::WuMinRate,
        ConstraintFamily::SuGroupRate,
        ConstraintFamily::PerUserCap,
        ConstraintFamily::PerCarrierCap,
        ConstraintFamily::PowerBudget,
        ConstraintFamily::Binary,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintFamily::WuMinRate => "wu_min_rate",
            ConstraintFamily::SuGroupRate => "su_group_rate",
            ConstraintFamily::PerUserCap => "per_user_cap",
            ConstraintFamily::PerCarrierCap => "per_carrier_cap",
            ConstraintFamily::PowerBudget => "power_budget",
            ConstraintFamily::Binary => "binary",
        }
    }
}

/// Outcome for one constraint family: worst margin across its members.
/// Positive slack means satisfied with room; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub family: ConstraintFamily,
    pub passed: bool,
    pub slack: f64,
}

/// Feasibility report covering every constraint family exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
}

const RATE_TOL: f64 = 1e-6;

impl ValidationReport {
    pub fn check(&self, family: ConstraintFamily) -> &ConstraintCheck {
        self.checks
            .iter()
            .find(|c| c.family == family)
            .expect("report lists every family")
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Degree caps, power budget, and binariness (everything except rates).
    pub fn structural_pass(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| {
                !matches!(
                    c.family,
                    ConstraintFamily::WuMinRate | ConstraintFamily::SuGroupRate
                )
            })
            .all(|c| c.passed)
    }
}

fn min_fold(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::INFINITY, f64::min)
}

/// Evaluate every constraint family with its measured slack. Infeasibility
/// is reported, never thrown.
pub fn validate(config: &SystemConfig, channels: &ChannelSet, alloc: &Allocation) -> ValidationReport {
    let mut checks = Vec::with_capacity(ConstraintFamily::ALL.len());

    // Per-WU rates.
    let wu_slack = min_fold((0..config.j_w).map(|i| {
        let rate = super::rate::wu_user_rate(config, channels, alloc, i)
            .expect("index in range");
        rate - config.r_bar_w[i]
    }));
    checks.push(ConstraintCheck {
        family: ConstraintFamily::WuMinRate,
        passed: wu_slack >= -RATE_TOL,
        slack: wu_slack,
    });

    // SU group rate. SCMA formulates no SU-group constraint; its target is 0.
    let su_target = match config.scheme {
        Scheme::Scma => 0.0,
        _ => config.r_bar_s,
    };
    let su_slack = if config.j_s == 0 && su_target <= 0.0 {
        f64::INFINITY
    } else {
        super::rate::su_group_rate(config, channels, alloc).expect("dims checked") - su_target
    };
    checks.push(ConstraintCheck {
        family: ConstraintFamily::SuGroupRate,
        passed: su_slack >= -RATE_TOL,
        slack: su_slack,
    });

    // Row caps.
    let row_slack = |f: &Array2<f64>, cap: usize| {
        min_fold(f.rows().into_iter().map(|r| cap as f64 - r.sum()))
    };
    let per_user = f64::min(
        row_slack(&alloc.f_s, config.per_user_cap_s),
        row_slack(&alloc.f_w, config.per_user_cap_w),
    );
    checks.push(ConstraintCheck {
        family: ConstraintFamily::PerUserCap,
        passed: per_user >= 0.0,
        slack: per_user,
    });

    // Column caps: combined for PD, per-group otherwise.
    let per_carrier = match config.scheme {
        Scheme::Pd => min_fold((0..config.k).map(|k| {
            let total = alloc.f_s.column(k).sum() + alloc.f_w.column(k).sum();
            config.combined_carrier_cap() as f64 - total
        })),
        _ => f64::min(
            min_fold((0..config.k).map(|k| {
                config.per_carrier_cap_s as f64 - alloc.f_s.column(k).sum()
            })),
            min_fold((0..config.k).map(|k| {
                config.per_carrier_cap_w as f64 - alloc.f_w.column(k).sum()
            })),
        ),
    };
    checks.push(ConstraintCheck {
        family: ConstraintFamily::PerCarrierCap,
        passed: per_carrier >= 0.0,
        slack: per_carrier,
    });

    // Power budgets (non-strict).
    let budget = |f: &Array2<f64>, p: &Array2<f64>| {
        min_fold(
            f.rows()
                .into_iter()
                .zip(p.rows())
                .map(|(fr, pr)| config.p_bar - fr.iter().zip(pr).map(|(f, p)| f * p).sum::<f64>()),
        )
    };
    let power = f64::min(budget(&alloc.f_s, &alloc.p_s), budget(&alloc.f_w, &alloc.p_w));
    checks.push(ConstraintCheck {
        family: ConstraintFamily::PowerBudget,
        passed: power >= 0.0,
        slack: power,
    });

    // Binariness: worst deviation from {0,1}.
    let deviation = min_fold(
        alloc
            .f_s
            .iter()
            .chain(alloc.f_w.iter())
            .map(|f| -f64::min(f.abs(), (1.0 - f).abs())),
    );
    let deviation = if deviation == f64::INFINITY { 0.0 } else { deviation };
    checks.push(ConstraintCheck {
        family: ConstraintFamily::Binary,
        passed: deviation == 0.0,
        slack: deviation,
    });

    ValidationReport { checks }
}
