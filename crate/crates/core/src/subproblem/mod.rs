//! Transformation chain from the mixed-integer rate-maximization problem to
//! the per-iteration cone program: slack lifting, reweighted-ℓ1 relaxation
//! of the binary assignment, and difference-of-convex linearization of the
//! bilinear terms.

mod build;

pub use build::{build_power_subproblem, build_subproblem, Subproblem, SubproblemVars};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{Allocation, ChannelSet, Scheme, SystemConfig};

/// Slack variables of the lifted problem, in physical units (powers in
/// watts, β's in watts, γ's dimensionless SINRs).
///
/// `z` has K entries for HD/PD. For SCMA the objective splits into one log
/// per group per carrier, so `z` has 2K entries (SU block first) and the
/// group-level SINR slacks live in `gamma_s`/`beta_s` (SU side, shape (1,K))
/// and `gamma_w_grp`/`beta_w_grp` (WU side, length K).
///
/// `gamma_s`/`beta_s` shapes: (1, K) for HD/SCMA, (J_s, K) for PD where the
/// SU group rate is a per-user SIC sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackPoint {
    pub z: Vec<f64>,
    pub t_s: Array2<f64>,
    pub t_w: Array2<f64>,
    pub gamma_w: Array2<f64>,
    pub beta_w: Array2<f64>,
    pub gamma_s: Array2<f64>,
    pub beta_s: Array2<f64>,
    pub gamma_w_grp: Vec<f64>,
    pub beta_w_grp: Vec<f64>,
}

/// Reweighted-ℓ1 state: elementwise penalty weights 1/(|f|+ε) from the
/// previous iterate, plus the fixed penalty magnitude λ.
#[derive(Debug, Clone)]
pub struct ReweightState {
    pub w_s: Array2<f64>,
    pub w_w: Array2<f64>,
    pub epsilon: f64,
    pub lambda: f64,
}

impl ReweightState {
    pub fn new(prev_alloc: &Allocation, epsilon: f64, lambda: f64) -> Self {
        let (w_s, w_w) = reweight(prev_alloc, epsilon);
        ReweightState {
            w_s,
            w_w,
            epsilon,
            lambda,
        }
    }
}

/// Current SCA iterate: relaxed allocation plus its slack point.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub alloc: Allocation,
    pub slacks: SlackPoint,
    pub index: usize,
}

/// Elementwise penalty weights 1/(|f|+ε) for both groups.
pub fn reweight(prev_alloc: &Allocation, epsilon: f64) -> (Array2<f64>, Array2<f64>) {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let w = |f: &Array2<f64>| f.mapv(|v| 1.0 / (v.abs() + epsilon));
    (w(&prev_alloc.f_s), w(&prev_alloc.f_w))
}

/// Difference-of-convex split of a product: xy = 0.25(x+y)² − 0.25(x−y)².
pub fn dc_split(x: f64, y: f64) -> (f64, f64) {
    (0.25 * (x + y).powi(2), 0.25 * (x - y).powi(2))
}

/// Affine minorant of the convex term 0.25(f+p)² around (f0, p0):
/// a + b(f−f0) + b(p−p0), exact at the expansion point.
#[derive(Debug, Clone, Copy)]
pub struct LowerMinorant {
    pub a: f64,
    pub b: f64,
    pub f0: f64,
    pub p0: f64,
}

pub fn linearize_bilinear_lower(f0: f64, p0: f64) -> LowerMinorant {
    LowerMinorant {
        a: 0.25 * (f0 + p0).powi(2),
        b: 0.5 * (f0 + p0),
        f0,
        p0,
    }
}

impl LowerMinorant {
    pub fn eval(&self, f: f64, p: f64) -> f64 {
        self.a + self.b * (f - self.f0) + self.b * (p - self.p0)
    }
}

/// Affine minorant of the convex term 0.25(γ−β)² around (g0, b0):
/// value 0.25(g0−b0)², slope +0.5(g0−b0) in γ and −0.5(g0−b0) in β.
#[derive(Debug, Clone, Copy)]
pub struct UpperMinorant {
    pub a: f64,
    pub slope: f64,
    pub g0: f64,
    pub b0: f64,
}

pub fn linearize_bilinear_upper(g0: f64, b0: f64) -> UpperMinorant {
    UpperMinorant {
        a: 0.25 * (g0 - b0).powi(2),
        slope: 0.5 * (g0 - b0),
        g0,
        b0,
    }
}

impl UpperMinorant {
    pub fn eval(&self, gamma: f64, beta: f64) -> f64 {
        self.a + self.slope * (gamma - self.g0) - self.slope * (beta - self.b0)
    }
}

/// Tight slack assignment at an allocation: every lifted constraint holds
/// with equality. Used to seed the SCA loop and to map solver iterates back.
pub fn lift_to_slacks(
    config: &SystemConfig,
    channels: &ChannelSet,
    alloc: &Allocation,
) -> Result<SlackPoint> {
    alloc.dims_match(config)?;
    let (j_s, j_w, k_count) = (config.j_s, config.j_w, config.k);
    let s2 = config.sigma2;

    let t_s = {
        let mut t = Array2::zeros((j_s, k_count));
        for i in 0..j_s {
            for k in 0..k_count {
                t[[i, k]] = alloc.f_s[[i, k]] * alloc.p_s[[i, k]];
            }
        }
        t
    };
    let t_w = {
        let mut t = Array2::zeros((j_w, k_count));
        for j in 0..j_w {
            for k in 0..k_count {
                t[[j, k]] = alloc.f_w[[j, k]] * alloc.p_w[[j, k]];
            }
        }
        t
    };

    let su_mass = |k: usize| -> f64 {
        (0..j_s).map(|i| channels.eff_gain_s[[i, k]] * t_s[[i, k]]).sum()
    };
    let wu_mass = |k: usize| -> f64 {
        (0..j_w).map(|j| channels.eff_gain_w[[j, k]] * t_w[[j, k]]).sum()
    };
    let wu_mass_below = |j: usize, k: usize| -> f64 {
        (0..j).map(|m| channels.eff_gain_w[[m, k]] * t_w[[m, k]]).sum()
    };
    let su_mass_below = |i: usize, k: usize| -> f64 {
        (0..i).map(|m| channels.eff_gain_s[[m, k]] * t_s[[m, k]]).sum()
    };

    // Per-WU SIC slacks: β = interference + σ² (plus the whole SU group for
    // SCMA, which never cancels it), γ = signal/β.
    let mut gamma_w = Array2::zeros((j_w, k_count));
    let mut beta_w = Array2::zeros((j_w, k_count));
    for j in 0..j_w {
        for k in 0..k_count {
            let mut beta = wu_mass_below(j, k) + s2;
            if config.scheme == Scheme::Scma {
                beta += su_mass(k);
            }
            beta_w[[j, k]] = beta;
            gamma_w[[j, k]] = channels.eff_gain_w[[j, k]] * t_w[[j, k]] / beta;
        }
    }

    let (gamma_s, beta_s) = match config.scheme {
        Scheme::Hd | Scheme::Scma => {
            let mut gamma = Array2::zeros((1, k_count));
            let mut beta = Array2::zeros((1, k_count));
            for k in 0..k_count {
                let b = wu_mass(k) + s2;
                beta[[0, k]] = b;
                gamma[[0, k]] = su_mass(k) / b;
            }
            (gamma, beta)
        }
        Scheme::Pd => {
            let mut gamma = Array2::zeros((j_s, k_count));
            let mut beta = Array2::zeros((j_s, k_count));
            for i in 0..j_s {
                for k in 0..k_count {
                    let b = su_mass_below(i, k) + wu_mass(k) + s2;
                    beta[[i, k]] = b;
                    gamma[[i, k]] = channels.eff_gain_s[[i, k]] * t_s[[i, k]] / b;
                }
            }
            (gamma, beta)
        }
    };

    let (z, gamma_w_grp, beta_w_grp) = match config.scheme {
        Scheme::Hd | Scheme::Pd => {
            let z = (0..k_count)
                .map(|k| 1.0 + (su_mass(k) + wu_mass(k)) / s2)
                .collect();
            (z, Vec::new(), Vec::new())
        }
        Scheme::Scma => {
            // SU block then WU block; the group slacks are tight at the
            // same cross-interference SINRs.
            let mut z = Vec::with_capacity(2 * k_count);
            let mut gw = Vec::with_capacity(k_count);
            let mut bw = Vec::with_capacity(k_count);
            for k in 0..k_count {
                z.push(1.0 + gamma_s[[0, k]]);
            }
            for k in 0..k_count {
                let b = su_mass(k) + s2;
                let g = wu_mass(k) / b;
                z.push(1.0 + g);
                gw.push(g);
                bw.push(b);
            }
            (z, gw, bw)
        }
    };

    Ok(SlackPoint {
        z,
        t_s,
        t_w,
        gamma_w,
        beta_w,
        gamma_s,
        beta_s,
        gamma_w_grp,
        beta_w_grp,
    })
}

impl SlackPoint {
    /// Every slack is nonnegative and finite.
    pub fn check_nonnegative(&self) -> Result<()> {
        let all = self
            .z
            .iter()
            .chain(self.t_s.iter())
            .chain(self.t_w.iter())
            .chain(self.gamma_w.iter())
            .chain(self.beta_w.iter())
            .chain(self.gamma_s.iter())
            .chain(self.beta_s.iter())
            .chain(self.gamma_w_grp.iter())
            .chain(self.beta_w_grp.iter());
        for v in all {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("slack {v} out of range")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{draw_channels, Topology};
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reweight_examples() {
        let mut cfg = SystemConfig::default_for(Scheme::Hd);
        cfg.j_s = 1;
        cfg.j_w = 0;
        cfg.k = 1;
        cfg.r_bar_w = vec![];
        let mut alloc = Allocation::zeros(&cfg);

        alloc.f_s[[0, 0]] = 0.0;
        let (w, _) = reweight(&alloc, 0.001);
        assert!((w[[0, 0]] - 1000.0).abs() < 1e-12);

        alloc.f_s[[0, 0]] = 1.0;
        let (w, _) = reweight(&alloc, 0.001);
        assert!((w[[0, 0]] - 1.0 / 1.001).abs() < 1e-12);

        alloc.f_s[[0, 0]] = 0.5;
        let (w, _) = reweight(&alloc, 0.5);
        assert!((w[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reweight_bounds_property() {
        let mut cfg = SystemConfig::default_for(Scheme::Hd);
        cfg.r_bar_w = vec![0.0; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut alloc = Allocation::zeros(&cfg);
            for v in alloc.f_s.iter_mut().chain(alloc.f_w.iter_mut()) {
                *v = rng.random::<f64>();
            }
            let eps = 10f64.powf(rng.random_range(-4.0..0.0));
            let (ws, ww) = reweight(&alloc, eps);
            for w in ws.iter().chain(ww.iter()) {
                assert!(*w > 0.0 && *w <= 1.0 / eps);
            }
        }
    }

    #[test]
    fn dc_split_examples() {
        let (plus, minus) = dc_split(2.0, 3.0);
        assert_eq!((plus, minus), (6.25, 0.25));
        assert_eq!(plus - minus, 6.0);

        let (plus, minus) = dc_split(1.7, 1.7);
        assert_eq!(minus, 0.0);
        assert!((plus - 1.7f64.powi(2)).abs() < 1e-15);

        let (plus, minus) = dc_split(0.0, 4.2);
        assert!((plus - minus).abs() < 1e-15);
    }

    #[test]
    fn dc_split_reconstruction_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let y: f64 = rng.random_range(-10.0..10.0);
            let (plus, minus) = dc_split(x, y);
            assert!((plus - minus - x * y).abs() <= 1e-12 * (1.0 + (x * y).abs()));
        }
    }

    #[test]
    fn lower_minorant_examples() {
        let m = linearize_bilinear_lower(0.3, 0.8);
        assert!((m.eval(0.3, 0.8) - 0.25 * 1.1f64.powi(2)).abs() < 1e-15);

        let m = linearize_bilinear_lower(1.0, 1.0);
        assert_eq!(m.eval(2.0, 2.0), 3.0); // ≤ 0.25·16 = 4

        let m = linearize_bilinear_lower(0.0, 0.0);
        assert_eq!(m.eval(0.7, 0.2), 0.0);
    }

    #[test]
    fn lower_minorant_is_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let f0: f64 = rng.random_range(0.0..2.0);
            let p0: f64 = rng.random_range(0.0..2.0);
            let m = linearize_bilinear_lower(f0, p0);
            let f: f64 = rng.random_range(-1.0..3.0);
            let p: f64 = rng.random_range(-1.0..3.0);
            assert!(m.eval(f, p) <= 0.25 * (f + p).powi(2) + 1e-12);
        }
    }

    #[test]
    fn upper_minorant_examples() {
        let m = linearize_bilinear_upper(2.0, 2.0);
        assert_eq!(m.eval(5.0, 1.0), 0.0);

        let m = linearize_bilinear_upper(3.0, 1.0);
        assert_eq!(m.eval(4.0, 1.0), 2.0); // ≤ 0.25·9 = 2.25

        let m = linearize_bilinear_upper(0.4, 1.9);
        assert!((m.eval(0.4, 1.9) - 0.25 * 1.5f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn upper_minorant_is_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let g0: f64 = rng.random_range(0.0..5.0);
            let b0: f64 = rng.random_range(0.0..5.0);
            let m = linearize_bilinear_upper(g0, b0);
            let g: f64 = rng.random_range(0.0..6.0);
            let b: f64 = rng.random_range(0.0..6.0);
            assert!(m.eval(g, b) <= 0.25 * (g - b).powi(2) + 1e-12);
        }
    }

    fn unit_channels(config: &SystemConfig) -> ChannelSet {
        let g_s = Array3::from_elem((config.j_s, config.k, config.n_r), Complex64::new(1.0, 0.0));
        let g_w = Array3::from_elem((config.j_w, config.k, config.n_r), Complex64::new(1.0, 0.0));
        ChannelSet::from_parts(g_s, g_w, vec![1.0; config.j_s], vec![1.0; config.j_w]).unwrap()
    }

    fn one_user_config() -> SystemConfig {
        let mut cfg = SystemConfig::default_for(Scheme::Hd);
        cfg.k = 1;
        cfg.j_s = 1;
        cfg.j_w = 1;
        cfg.n_r = 1;
        cfg.per_user_cap_s = 1;
        cfg.per_user_cap_w = 1;
        cfg.per_carrier_cap_s = 1;
        cfg.per_carrier_cap_w = 1;
        cfg.r_bar_w = vec![0.0];
        cfg.r_bar_s = 0.0;
        cfg.sigma2 = 0.25;
        cfg
    }

    #[test]
    fn lift_zero_powers() {
        let cfg = one_user_config();
        let ch = unit_channels(&cfg);
        let alloc = Allocation::zeros(&cfg);
        let sp = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        assert_eq!(sp.t_s[[0, 0]], 0.0);
        assert_eq!(sp.gamma_s[[0, 0]], 0.0);
        assert_eq!(sp.beta_s[[0, 0]], cfg.sigma2);
        assert_eq!(sp.z[0], 1.0);
        sp.check_nonnegative().unwrap();
    }

    #[test]
    fn lift_single_su_at_noise_level() {
        let cfg = one_user_config();
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = cfg.sigma2; // g = 1 so g·t = σ²
        let sp = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        assert!((sp.gamma_s[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((sp.z[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lift_scales_linearly_without_interference() {
        let cfg = one_user_config();
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = 0.1;
        let sp1 = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        alloc.p_s[[0, 0]] = 0.2;
        let sp2 = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        assert!((sp2.t_s[[0, 0]] - 2.0 * sp1.t_s[[0, 0]]).abs() < 1e-15);
        assert!((sp2.gamma_s[[0, 0]] - 2.0 * sp1.gamma_s[[0, 0]]).abs() < 1e-12);
    }

    #[test]
    fn lift_scma_blocks() {
        let mut cfg = one_user_config();
        cfg.scheme = Scheme::Scma;
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = 0.5;
        alloc.f_w[[0, 0]] = 1.0;
        alloc.p_w[[0, 0]] = 0.25;
        let sp = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        assert_eq!(sp.z.len(), 2);
        // SU sees WU as noise: γ̃s = 0.5/(0.25+0.25) = 1.
        assert!((sp.z[0] - 2.0).abs() < 1e-12);
        // WU sees SU as noise: γ̃w = 0.25/(0.5+0.25) = 1/3.
        assert!((sp.z[1] - (1.0 + 1.0 / 3.0)).abs() < 1e-12);
        // The per-WU QoS β includes the SU mass.
        assert!((sp.beta_w[[0, 0]] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lift_pd_per_user_su_slacks() {
        let mut cfg = SystemConfig::default_for(Scheme::Pd);
        cfg.k = 2;
        cfg.j_s = 2;
        cfg.j_w = 1;
        cfg.n_r = 1;
        cfg.r_bar_w = vec![0.0];
        cfg.sigma2 = 1.0;
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = 2.0;
        alloc.f_s[[1, 0]] = 1.0;
        alloc.p_s[[1, 0]] = 4.0;
        let sp = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        assert_eq!(sp.gamma_s.dim(), (2, 2));
        // User 0 decoded last: no SU interference below it.
        assert!((sp.gamma_s[[0, 0]] - 2.0).abs() < 1e-12);
        // User 1 interfered by user 0: 4/(2+1).
        assert!((sp.gamma_s[[1, 0]] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lift_matches_rates_through_z() {
        // ∏z = 2^sum_rate for HD at the tight point.
        let mut cfg = SystemConfig::default_for(Scheme::Hd);
        cfg.r_bar_w = vec![0.0; 6];
        let ch = draw_channels(3, &cfg, &Topology::Uniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut alloc = Allocation::zeros(&cfg);
        for v in alloc.f_s.iter_mut().chain(alloc.f_w.iter_mut()) {
            *v = rng.random::<f64>();
        }
        for v in alloc.p_s.iter_mut().chain(alloc.p_w.iter_mut()) {
            *v = rng.random::<f64>() * cfg.p_bar;
        }
        alloc.binary = false;
        let sp = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        let log_prod: f64 = sp.z.iter().map(|z| z.log2()).sum();
        let rate = crate::model::sum_rate(&cfg, &ch, &alloc).unwrap();
        assert!((log_prod - rate).abs() < 1e-10 * rate.max(1.0));
    }
}
