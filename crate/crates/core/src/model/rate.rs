use crate::error::{Error, Result};
use crate::model::{Allocation, ChannelSet, Scheme, SystemConfig};

// Received signal mass Σ_u eff·f·p on subcarrier `k` for one group.
fn group_mass(eff: &ndarray::Array2<f64>, f: &ndarray::Array2<f64>, p: &ndarray::Array2<f64>, k: usize) -> f64 {
    (0..eff.nrows())
        .map(|u| eff[[u, k]] * f[[u, k]] * p[[u, k]])
        .sum()
}

// Partial mass over users with index strictly below `user` (the not-yet-
// decoded interferers under the descending-index SIC order).
fn mass_below(
    eff: &ndarray::Array2<f64>,
    f: &ndarray::Array2<f64>,
    p: &ndarray::Array2<f64>,
    k: usize,
    user: usize,
) -> f64 {
    (0..user).map(|u| eff[[u, k]] * f[[u, k]] * p[[u, k]]).sum()
}

/// Achievable sum rate in b/s/Hz for the configured scheme.
///
/// HD and PD assume the SU group is decoded and cancelled, so the per-carrier
/// numerator is the additive mass of both groups. SCMA decodes the groups
/// separately, each treating the other as noise.
pub fn sum_rate(config: &SystemConfig, channels: &ChannelSet, alloc: &Allocation) -> Result<f64> {
    alloc.dims_match(config)?;
    check_channel_dims(config, channels)?;
    let s2 = config.sigma2;
    let mut total = 0.0;
    for k in 0..config.k {
        let s_mass = group_mass(&channels.eff_gain_s, &alloc.f_s, &alloc.p_s, k);
        let w_mass = group_mass(&channels.eff_gain_w, &alloc.f_w, &alloc.p_w, k);
        total += match config.scheme {
            Scheme::Hd | Scheme::Pd => (1.0 + (s_mass + w_mass) / s2).log2(),
            Scheme::Scma => {
                (1.0 + s_mass / (w_mass + s2)).log2() + (1.0 + w_mass / (s_mass + s2)).log2()
            }
        };
    }
    Ok(total)
}

/// Achievable rate of WU `i` under the scheme's SIC/decoding model.
pub fn wu_user_rate(
    config: &SystemConfig,
    channels: &ChannelSet,
    alloc: &Allocation,
    i: usize,
) -> Result<f64> {
    alloc.dims_match(config)?;
    check_channel_dims(config, channels)?;
    if i >= config.j_w {
        return Err(Error::IndexOutOfRange {
            what: "weak user",
            index: i,
            len: config.j_w,
        });
    }
    let s2 = config.sigma2;
    let mut total = 0.0;
    for k in 0..config.k {
        let signal = channels.eff_gain_w[[i, k]] * alloc.f_w[[i, k]] * alloc.p_w[[i, k]];
        let mut interference = mass_below(&channels.eff_gain_w, &alloc.f_w, &alloc.p_w, k, i);
        if config.scheme == Scheme::Scma {
            // The SU group is never cancelled before WU decoding in SCMA.
            interference += group_mass(&channels.eff_gain_s, &alloc.f_s, &alloc.p_s, k);
        }
        total += (1.0 + signal / (interference + s2)).log2();
    }
    Ok(total)
}

/// Achievable sum rate of the SU group.
///
/// HD/SCMA: one log per carrier with the WU mass as noise floor. PD: per-user
/// SIC logs with both the not-yet-decoded SUs and the whole WU group as
/// interference.
pub fn su_group_rate(config: &SystemConfig, channels: &ChannelSet, alloc: &Allocation) -> Result<f64> {
    alloc.dims_match(config)?;
    check_channel_dims(config, channels)?;
    let s2 = config.sigma2;
    let mut total = 0.0;
    for k in 0..config.k {
        let w_mass = group_mass(&channels.eff_gain_w, &alloc.f_w, &alloc.p_w, k);
        match config.scheme {
            Scheme::Hd | Scheme::Scma => {
                let s_mass = group_mass(&channels.eff_gain_s, &alloc.f_s, &alloc.p_s, k);
                total += (1.0 + s_mass / (w_mass + s2)).log2();
            }
            Scheme::Pd => {
                for i in 0..config.j_s {
                    let signal =
                        channels.eff_gain_s[[i, k]] * alloc.f_s[[i, k]] * alloc.p_s[[i, k]];
                    let interference =
                        mass_below(&channels.eff_gain_s, &alloc.f_s, &alloc.p_s, k, i) + w_mass;
                    total += (1.0 + signal / (interference + s2)).log2();
                }
            }
        }
    }
    Ok(total)
}

fn check_channel_dims(config: &SystemConfig, channels: &ChannelSet) -> Result<()> {
    if channels.eff_gain_s.dim() != (config.j_s, config.k)
        || channels.eff_gain_w.dim() != (config.j_w, config.k)
    {
        return Err(Error::DimensionMismatch(format!(
            "channels shaped {:?}/{:?}, config wants ({}, {})/({}, {})",
            channels.eff_gain_s.dim(),
            channels.eff_gain_w.dim(),
            config.j_s,
            config.k,
            config.j_w,
            config.k
        )));
    }
    Ok(())
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

    // Channel set with unit small-scale gains so eff = pl · n_r is explicit.
    fn unit_channels(config: &SystemConfig) -> ChannelSet {
        let ones_s = Array3::from_elem((config.j_s, config.k, config.n_r), Complex64::new(1.0, 0.0));
        let ones_w = Array3::from_elem((config.j_w, config.k, config.n_r), Complex64::new(1.0, 0.0));
        ChannelSet::from_parts(ones_s, ones_w, vec![1.0; config.j_s], vec![1.0; config.j_w]).unwrap()
    }

    fn tiny_config(scheme: Scheme, j_s: usize, j_w: usize, k: usize) -> SystemConfig {
        let mut cfg = SystemConfig::default_for(scheme);
        cfg.k = k;
        cfg.j_s = j_s;
        cfg.j_w = j_w;
        cfg.n_r = 1;
        cfg.per_user_cap_s = 1;
        cfg.per_user_cap_w = 1;
        cfg.per_carrier_cap_s = if scheme == Scheme::Pd { 2 } else { j_s.max(1) };
        cfg.per_carrier_cap_w = if scheme == Scheme::Pd { 1 } else { j_w.max(1) };
        cfg.r_bar_w = vec![0.0; j_w];
        cfg.r_bar_s = 0.0;
        cfg.sigma2 = 1e-3;
        cfg
    }

    #[test]
    fn zero_powers_zero_rate() {
        let cfg = tiny_config(Scheme::Hd, 1, 1, 1);
        let ch = unit_channels(&cfg);
        let alloc = Allocation::zeros(&cfg);
        assert_eq!(sum_rate(&cfg, &ch, &alloc).unwrap(), 0.0);
        assert_eq!(su_group_rate(&cfg, &ch, &alloc).unwrap(), 0.0);
    }

    #[test]
    fn single_su_at_noise_power_gives_one_bit() {
        let cfg = tiny_config(Scheme::Hd, 1, 1, 1);
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = cfg.sigma2; // eff gain is 1
        assert!((sum_rate(&cfg, &ch, &alloc).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hd_numerator_is_additive() {
        let cfg = tiny_config(Scheme::Hd, 1, 1, 1);
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = cfg.sigma2;
        alloc.f_w[[0, 0]] = 1.0;
        alloc.p_w[[0, 0]] = 2.0 * cfg.sigma2;
        assert!((sum_rate(&cfg, &ch, &alloc).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wu_rate_interference_ladder() {
        let cfg = tiny_config(Scheme::Hd, 0, 2, 1);
        let mut cfg = cfg;
        cfg.per_carrier_cap_w = 2;
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_w[[0, 0]] = 1.0;
        alloc.p_w[[0, 0]] = cfg.sigma2;
        alloc.f_w[[1, 0]] = 1.0;
        alloc.p_w[[1, 0]] = 2.0 * cfg.sigma2;
        // First-decoded-last user (index 0) sees no interference.
        assert!((wu_user_rate(&cfg, &ch, &alloc, 0).unwrap() - 1.0).abs() < 1e-12);
        // User 1 is interfered by user 0: log2(1 + 2σ²/(σ²+σ²)) = 1.
        assert!((wu_user_rate(&cfg, &ch, &alloc, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(wu_user_rate(&cfg, &ch, &alloc, 2).is_err());
    }

    #[test]
    fn su_group_rate_with_wu_floor() {
        let cfg = tiny_config(Scheme::Hd, 1, 1, 1);
        let ch = unit_channels(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = 2.0 * cfg.sigma2;
        alloc.f_w[[0, 0]] = 1.0;
        alloc.p_w[[0, 0]] = cfg.sigma2;
        // log2(1 + 2/(1+1)) = 1.
        assert!((su_group_rate(&cfg, &ch, &alloc).unwrap() - 1.0).abs() < 1e-12);
    }

    fn random_alloc(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> Allocation {
        let mut alloc = Allocation::zeros(cfg);
        for m in [&mut alloc.f_s, &mut alloc.f_w] {
            for v in m.iter_mut() {
                *v = rng.random::<f64>();
            }
        }
        for m in [&mut alloc.p_s, &mut alloc.p_w] {
            for v in m.iter_mut() {
                *v = rng.random::<f64>() * cfg.p_bar;
            }
        }
        alloc.binary = false;
        alloc
    }

    #[test]
    fn sic_chain_telescopes() {
        // Σ_i wu_user_rate = Σ_k log2(1 + Σ_j mass_j/σ²) for HD and PD.
        for scheme in [Scheme::Hd, Scheme::Pd] {
            let mut cfg = tiny_config(scheme, 0, 4, 3);
            if scheme == Scheme::Pd {
                cfg.per_carrier_cap_s = 2;
                cfg.per_carrier_cap_w = 1;
            } else {
                cfg.per_carrier_cap_w = 4;
            }
            let cfg = cfg;
            let ch = draw_channels(17, &cfg, &Topology::Uniform).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..20 {
                let alloc = random_alloc(&cfg, &mut rng);
                let per_user: f64 = (0..cfg.j_w)
                    .map(|i| wu_user_rate(&cfg, &ch, &alloc, i).unwrap())
                    .sum();
                let group: f64 = (0..cfg.k)
                    .map(|k| {
                        let m = group_mass(&ch.eff_gain_w, &alloc.f_w, &alloc.p_w, k);
                        (1.0 + m / cfg.sigma2).log2()
                    })
                    .sum();
                let denom = group.abs().max(1.0);
                assert!((per_user - group).abs() / denom < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_wu_group_reduces_to_single_group_form() {
        let cfg = tiny_config(Scheme::Hd, 3, 0, 2);
        let mut cfg = cfg;
        cfg.per_carrier_cap_s = 3;
        let cfg = cfg;
        let ch = draw_channels(23, &cfg, &Topology::Uniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let alloc = random_alloc(&cfg, &mut rng);
            let hd = sum_rate(&cfg, &ch, &alloc).unwrap();
            let single: f64 = (0..cfg.k)
                .map(|k| {
                    let m = group_mass(&ch.eff_gain_s, &alloc.f_s, &alloc.p_s, k);
                    (1.0 + m / cfg.sigma2).log2()
                })
                .sum();
            assert!((hd - single).abs() <= 1e-12 * single.abs().max(1.0));
        }
    }

    #[test]
    fn rates_nonnegative_and_power_monotone() {
        for scheme in [Scheme::Hd, Scheme::Pd, Scheme::Scma] {
            let mut cfg = tiny_config(scheme, 2, 2, 2);
            if scheme == Scheme::Pd {
                cfg.per_carrier_cap_s = 2;
                cfg.per_carrier_cap_w = 1;
            }
            let cfg = cfg;
            let ch = draw_channels(31, &cfg, &Topology::Uniform).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..20 {
                let alloc = random_alloc(&cfg, &mut rng);
                let base = sum_rate(&cfg, &ch, &alloc).unwrap();
                assert!(base >= 0.0);
                assert!(su_group_rate(&cfg, &ch, &alloc).unwrap() >= 0.0);
                for i in 0..cfg.j_w {
                    assert!(wu_user_rate(&cfg, &ch, &alloc, i).unwrap() >= 0.0);
                }
                if scheme == Scheme::Scma {
                    continue; // cross-interference: power monotonicity not claimed
                }
                let mut bumped = alloc.clone();
                let u = rng.random_range(0..cfg.j_s);
                let k = rng.random_range(0..cfg.k);
                bumped.p_s[[u, k]] += 0.1 * cfg.p_bar;
                assert!(sum_rate(&cfg, &ch, &bumped).unwrap() >= base - 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg = tiny_config(Scheme::Hd, 2, 2, 2);
        let ch = draw_channels(1, &cfg, &Topology::Uniform).unwrap();
        let other = tiny_config(Scheme::Hd, 2, 2, 3);
        let alloc = Allocation::zeros(&other);
        assert!(sum_rate(&cfg, &ch, &alloc).is_err());
    }
}
