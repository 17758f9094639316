use serde::{Deserialize, Serialize};

use crate::consensus::SharedMeasurement;
use crate::error::{Error, Result};

/// Default per-channel threshold, as a fraction of the channel scale.
pub const DEFAULT_STATIC_THRESHOLD: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticDetectorConfig {
    pub thresholds: SharedMeasurement,
}

impl StaticDetectorConfig {
    pub fn uniform(threshold: f64) -> Self {
        Self {
            thresholds: SharedMeasurement { omega: threshold, power_share: threshold, reactive_share: threshold },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.thresholds;
        if [t.omega, t.power_share, t.reactive_share].iter().all(|&v| v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("static detector thresholds must be positive".into()))
        }
    }
}

impl Default for StaticDetectorConfig {
    fn default() -> Self {
        Self::uniform(DEFAULT_STATIC_THRESHOLD)
    }
}

/// Per-channel `|received − nominal| / scale`.
pub fn channel_residuals(received: &SharedMeasurement, nominal: &SharedMeasurement, scales: &SharedMeasurement) -> [f64; 3] {
    [
        (received.omega - nominal.omega).abs() / scales.omega,
        (received.power_share - nominal.power_share).abs() / scales.power_share,
        (received.reactive_share - nominal.reactive_share).abs() / scales.reactive_share,
    ]
}

/// Flags a message whose residual exceeds its channel threshold on any channel.
pub fn static_detect(
    received: &SharedMeasurement,
    nominal: &SharedMeasurement,
    scales: &SharedMeasurement,
    config: &StaticDetectorConfig,
) -> bool {
    let r = channel_residuals(received, nominal, scales);
    let t = config.thresholds;
    r[0] > t.omega || r[1] > t.power_share || r[2] > t.reactive_share
}
