//! mmWave link model.
//!
//! Path loss mixes LOS and NLOS indoor-hotspot losses with a distance
//! dependent LOS probability. Antennas are ideal sectors: a flat mainlobe of
//! gain 2π/θ inside the beamwidth θ and a constant sidelobe level outside.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LosMode {
    /// Probability-weighted mean of the linear LOS/NLOS losses.
    #[default]
    Expected,
    /// Independent LOS draw at every path-loss refresh.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub tx_power_dbm: f64,
    pub tx_beamwidth_deg: f64,
    pub rx_beamwidth_deg: f64,
    pub sidelobe_gain: f64,
    pub ema_beta: f64,
    pub pathloss_refresh_s: f64,
    pub los_mode: LosMode,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            carrier_ghz: 28.0,
            bandwidth_hz: 0.85e9,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 0.0,
            tx_power_dbm: 24.0,
            tx_beamwidth_deg: 90.0,
            rx_beamwidth_deg: 45.0,
            sidelobe_gain: 0.1,
            ema_beta: 0.9,
            pathloss_refresh_s: 0.1,
            los_mode: LosMode::Expected,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, bw) in [
            ("tx_beamwidth_deg", self.tx_beamwidth_deg),
            ("rx_beamwidth_deg", self.rx_beamwidth_deg),
        ] {
            if !(bw > 0.0 && bw < 360.0) {
                return Err(Error::Config(format!("{name} must be in (0, 360), got {bw}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return Err(Error::Config(format!(
                "ema_beta must be in [0, 1], got {}",
                self.ema_beta
            )));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("bandwidth_hz must be positive".into()));
        }
        if !(self.carrier_ghz > 0.0) {
            return Err(Error::Config("carrier_ghz must be positive".into()));
        }
        if !(self.sidelobe_gain >= 0.0) {
            return Err(Error::Config("sidelobe_gain must be non-negative".into()));
        }
        if !(self.pathloss_refresh_s > 0.0) {
            return Err(Error::Config("pathloss_refresh_s must be positive".into()));
        }
        Ok(())
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Thermal noise power over the band, in watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(thermal_noise_dbm(self.noise_psd_dbm_hz, self.bandwidth_hz) + self.noise_figure_db)
    }

    pub fn mainlobe_tx_gain(&self) -> f64 {
        antenna_gain(0.0, self.tx_beamwidth_deg, self.sidelobe_gain)
    }

    pub fn mainlobe_rx_gain(&self) -> f64 {
        antenna_gain(0.0, self.rx_beamwidth_deg, self.sidelobe_gain)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    linear_to_db(w) + 30.0
}

pub fn thermal_noise_dbm(psd_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    psd_dbm_hz + linear_to_db(bandwidth_hz)
}

pub fn los_probability(d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be non-negative, got {d}")));
    }
    Ok(if d <= 5.0 {
        1.0
    } else if d <= 49.0 {
        (-(d - 5.0) / 70.8).exp()
    } else {
        (-(d - 49.0) / 211.7).exp() * 0.54
    })
}

/// LOS or NLOS path loss in dB; distances below 1 m are clamped to 1 m.
pub fn path_loss_db(d: f64, los: bool, cfg: &ChannelConfig) -> f64 {
    let d = d.max(1.0);
    let f = cfg.carrier_ghz.log10();
    let los_db = 32.4 + 17.3 * d.log10() + 20.0 * f;
    if los {
        los_db
    } else {
        los_db.max(17.3 + 38.3 * d.log10() + 24.9 * f)
    }
}

/// Probability-weighted linear path loss.
pub fn effective_path_loss(d: f64, cfg: &ChannelConfig) -> Result<f64> {
    let p = los_probability(d)?;
    let los = db_to_linear(path_loss_db(d, true, cfg));
    if p >= 1.0 {
        return Ok(los);
    }
    let nlos = db_to_linear(path_loss_db(d, false, cfg));
    Ok(p * los + (1.0 - p) * nlos)
}

/// Linear path loss with the LOS state drawn from `rng`.
pub fn sampled_path_loss<R: Rng + ?Sized>(d: f64, cfg: &ChannelConfig, rng: &mut R) -> Result<(f64, bool)> {
    let p = los_probability(d)?;
    let los = rng.random::<f64>() < p;
    Ok((db_to_linear(path_loss_db(d, los, cfg)), los))
}

pub fn antenna_gain(alignment_deg: f64, beamwidth_deg: f64, sidelobe: f64) -> f64 {
    if alignment_deg.abs() <= beamwidth_deg / 2.0 {
        2.0 * PI / beamwidth_deg.to_radians()
    } else {
        sidelobe
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Bearing from `self` to `other` in degrees.
    pub fn bearing_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x).to_degrees()
    }
}

/// Absolute angle in degrees between the ray `from → aim` and `from → target`.
pub fn misalignment_deg(from: Point, aim: Point, target: Point) -> f64 {
    let a = from.bearing_to(&aim);
    let b = from.bearing_to(&target);
    crate::geometry::wrap_degrees(b - a).abs()
}

/// Large-scale state of one user–SBS link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    /// Linear path loss ℓ (≥ 1).
    pub pathloss: f64,
    /// LOS draw when the Bernoulli mode is used.
    pub los: Option<bool>,
    pub g_tx: f64,
    pub g_rx: f64,
    /// Multiplicative small-scale fading; 1 unless a fading model is plugged in.
    pub fading: f64,
}

impl LinkState {
    /// Aligned link with the given path loss.
    pub fn aligned(pathloss: f64, cfg: &ChannelConfig) -> Self {
        LinkState {
            pathloss,
            los: None,
            g_tx: cfg.mainlobe_tx_gain(),
            g_rx: cfg.mainlobe_rx_gain(),
            fading: 1.0,
        }
    }

    pub fn channel_gain(&self) -> f64 {
        self.fading / self.pathloss
    }

    /// Received signal power in watts.
    pub fn received_power(&self, cfg: &ChannelConfig) -> f64 {
        cfg.tx_power_w() * self.channel_gain() * self.g_rx * self.g_tx
    }
}

/// An SBS transmitting to some other user, seen from a victim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveLink {
    pub sbs: Point,
    /// The user the SBS beam is pointed at.
    pub target: Point,
}

/// Interference power term of one interferer, in watts.
pub fn interference_term(tx_power_w: f64, g_tx: f64, g_rx: f64, pathloss: f64) -> f64 {
    tx_power_w * g_tx * g_rx / pathloss
}

/// Sum of received interference at `victim`, whose receive beam points at
/// `victim_aim`. `pathloss` maps an interfering SBS position to the linear
/// loss between it and the victim.
pub fn instantaneous_interference(
    victim: Point,
    victim_aim: Point,
    active: &[ActiveLink],
    cfg: &ChannelConfig,
    mut pathloss: impl FnMut(Point) -> f64,
) -> f64 {
    let p = cfg.tx_power_w();
    active
        .iter()
        .map(|l| {
            let g_tx = antenna_gain(
                misalignment_deg(l.sbs, l.target, victim),
                cfg.tx_beamwidth_deg,
                cfg.sidelobe_gain,
            );
            let g_rx = antenna_gain(
                misalignment_deg(victim, victim_aim, l.sbs),
                cfg.rx_beamwidth_deg,
                cfg.sidelobe_gain,
            );
            interference_term(p, g_tx, g_rx, pathloss(l.sbs))
        })
        .sum()
}

/// Exponential moving average of interference: β·Ĩ(t−1) + (1−β)·Î(t−1).
pub fn update_interference_ema(inst_prev: f64, ema_prev: f64, beta: f64) -> f64 {
    beta * inst_prev + (1.0 - beta) * ema_prev
}

pub fn sinr(link: &LinkState, interference_w: f64, cfg: &ChannelConfig) -> f64 {
    link.received_power(cfg) / (interference_w + cfg.noise_power_w())
}

/// Shannon rate in bit/s.
pub fn achievable_rate(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}
