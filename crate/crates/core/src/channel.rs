//! Physical-layer rates and losses for ground, uplink and inter-satellite links.
//!
//! Everything here works in linear SI units: watts, hertz, meters, bits per
//! second. Decibel quantities are converted once, when a configuration is
//! assembled (see [`db_to_linear`] and [`dbm_to_watts`]).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Speed of light in vacuum, m/s.
pub const LIGHT_SPEED: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("bandwidth must be positive, got {0} Hz")]
    NonPositiveBandwidth(f64),
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("carrier frequency must be positive, got {0} Hz")]
    NonPositiveCarrier(f64),
    #[error("noise temperature must be positive, got {0} K")]
    NonPositiveTemperature(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub noise_temperature_k: f64,
    pub boltzmann: f64,
    /// Inter-satellite carrier, Hz. Ka-band by default.
    pub carrier_hz: f64,
    pub light_speed: f64,
    /// When set, the noise floor comes from this PSD instead of `k_B * T`.
    pub noise_psd_dbm_hz: Option<f64>,
    /// Channel bandwidth used for satellite-band links that do not set one.
    pub satellite_bandwidth_hz: f64,
    /// Channel bandwidth used for ground-band links that do not set one.
    pub ground_bandwidth_hz: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            noise_temperature_k: 290.0,
            boltzmann: BOLTZMANN,
            carrier_hz: 27.0e9,
            light_speed: LIGHT_SPEED,
            noise_psd_dbm_hz: Some(-174.0),
            satellite_bandwidth_hz: 500.0e6,
            ground_bandwidth_hz: 100.0e6,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.noise_temperature_k > 0.0) {
            return Err(ChannelError::NonPositiveTemperature(self.noise_temperature_k));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(ChannelError::NonPositiveCarrier(self.carrier_hz));
        }
        if !(self.satellite_bandwidth_hz > 0.0) {
            return Err(ChannelError::NonPositiveBandwidth(self.satellite_bandwidth_hz));
        }
        if !(self.ground_bandwidth_hz > 0.0) {
            return Err(ChannelError::NonPositiveBandwidth(self.ground_bandwidth_hz));
        }
        Ok(())
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_psd_w_per_hz(&self) -> f64 {
        match self.noise_psd_dbm_hz {
            Some(dbm) => dbm_to_watts(dbm),
            None => self.boltzmann * self.noise_temperature_k,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Thermal noise power over `bandwidth_hz`, watts.
pub fn noise_power(bandwidth_hz: f64, p: &ChannelParams) -> Result<f64, ChannelError> {
    if !(bandwidth_hz > 0.0) {
        return Err(ChannelError::NonPositiveBandwidth(bandwidth_hz));
    }
    Ok(p.noise_psd_w_per_hz() * bandwidth_hz)
}

/// Shannon rate of a TDMA ground or ground-to-satellite uplink, bits/s.
///
/// `B * log2(1 + g * p / (B * N0))`; no interference term because slots are
/// time-divided.
pub fn ground_uplink_rate(
    bandwidth_hz: f64,
    gain: f64,
    tx_power_w: f64,
    p: &ChannelParams,
) -> Result<f64, ChannelError> {
    let noise = noise_power(bandwidth_hz, p)?;
    Ok(bandwidth_hz * (1.0 + gain * tx_power_w / noise).log2())
}

/// Free-space path loss `(4 pi f d / c)^2`, linear.
pub fn fspl(dist_m: f64, carrier_hz: f64) -> Result<f64, ChannelError> {
    fspl_with(dist_m, carrier_hz, LIGHT_SPEED)
}

pub fn fspl_with(dist_m: f64, carrier_hz: f64, light_speed: f64) -> Result<f64, ChannelError> {
    if !(dist_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(dist_m));
    }
    if !(carrier_hz > 0.0) {
        return Err(ChannelError::NonPositiveCarrier(carrier_hz));
    }
    let x = 4.0 * std::f64::consts::PI * carrier_hz * dist_m / light_speed;
    Ok(x * x)
}

/// Inter-satellite signal-to-noise ratio.
pub fn isl_snr(tx_power_w: f64, gain_tx: f64, gain_rx: f64, loss: f64, noise_w: f64) -> f64 {
    tx_power_w * gain_tx * gain_rx / (noise_w * loss)
}

/// Inter-satellite Shannon rate, bits/s.
pub fn isl_rate(bandwidth_hz: f64, snr: f64) -> f64 {
    bandwidth_hz * (1.0 + snr).log2()
}

/// End-to-end ISL rate for a given geometry.
pub fn isl_rate_for_distance(
    bandwidth_hz: f64,
    tx_power_w: f64,
    gain_tx: f64,
    gain_rx: f64,
    dist_m: f64,
    p: &ChannelParams,
) -> Result<f64, ChannelError> {
    let loss = fspl_with(dist_m, p.carrier_hz, p.light_speed)?;
    let noise = noise_power(bandwidth_hz, p)?;
    Ok(isl_rate(bandwidth_hz, isl_snr(tx_power_w, gain_tx, gain_rx, loss, noise)))
}

/// Per-step channel power gain model: i.i.d. log-normal around `mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainModel {
    pub mean: f64,
    #[serde(default)]
    pub sigma: f64,
}

impl GainModel {
    pub fn fixed(mean: f64) -> Self {
        Self { mean, sigma: 0.0 }
    }
}

/// Channel gain of `link` at `step`. Deterministic in `(link, step, seed)`.
///
/// The log-normal is parameterised so its expectation equals `model.mean`.
pub fn sample_gain(model: &GainModel, link: usize, step: u64, seed: u64) -> f64 {
    if model.sigma == 0.0 {
        return model.mean;
    }
    let mut r = rng::stream(seed, &[rng::tag::GAIN, link as u64, step]);
    let z: f64 = StandardNormal.sample(&mut r);
    model.mean * (model.sigma * z - 0.5 * model.sigma * model.sigma).exp()
}

/// Pre-sampled gains, `gains[link][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGainTrace {
    gains: Vec<Vec<f64>>,
}

impl ChannelGainTrace {
    pub fn generate(models: &[GainModel], steps: u64, seed: u64) -> Self {
        let gains = models
            .iter()
            .enumerate()
            .map(|(l, m)| (0..steps).map(|t| sample_gain(m, l, t, seed)).collect())
            .collect();
        Self { gains }
    }

    pub fn gain(&self, link: usize, step: usize) -> Option<f64> {
        self.gains.get(link).and_then(|g| g.get(step)).copied()
    }

    pub fn links(&self) -> usize {
        self.gains.len()
    }
}
