//! Sounding records and the propagation-scenario labels attached to them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cir::ImpulseResponse;
use crate::error::{Error, Result};

/// Measurement scenario. Soft obstructions (metal sheet, person) are pooled
/// with line-of-sight; only wall blockage counts as NLOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "LOS")]
    Los,
    #[serde(rename = "NLOS-M")]
    NlosMetal,
    #[serde(rename = "NLOS-P")]
    NlosPerson,
    #[serde(rename = "NLOS-W")]
    NlosWall,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Los,
        Scenario::NlosMetal,
        Scenario::NlosPerson,
        Scenario::NlosWall,
    ];

    pub fn class(self) -> LinkClass {
        match self {
            Scenario::Los | Scenario::NlosMetal | Scenario::NlosPerson => LinkClass::Los,
            Scenario::NlosWall => LinkClass::Nlos,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Los => "LOS",
            Scenario::NlosMetal => "NLOS-M",
            Scenario::NlosPerson => "NLOS-P",
            Scenario::NlosWall => "NLOS-W",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario `{s}`")))
    }
}

/// Binary channel state used by the ranging model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkClass {
    #[serde(rename = "LOS")]
    Los,
    #[serde(rename = "NLOS")]
    Nlos,
}

impl LinkClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkClass::Los => "LOS",
            LinkClass::Nlos => "NLOS",
        }
    }
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sounding, already in the time domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub record_id: String,
    pub tx_id: String,
    pub rx_id: String,
    /// Ground-truth distance in meters, present on training records.
    pub true_distance_m: Option<f64>,
    pub scenario: Option<Scenario>,
    pub cir: ImpulseResponse,
}

impl SweepRecord {
    /// Line-of-flight arrival time in ns, if the distance is known.
    pub fn true_toa_ns(&self) -> Option<f64> {
        self.true_distance_m
            .map(|d| d / crate::SPEED_OF_LIGHT_M_PER_NS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_rule() {
        assert_eq!(Scenario::Los.class(), LinkClass::Los);
        assert_eq!(Scenario::NlosMetal.class(), LinkClass::Los);
        assert_eq!(Scenario::NlosPerson.class(), LinkClass::Los);
        assert_eq!(Scenario::NlosWall.class(), LinkClass::Nlos);
    }

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.as_str().parse::<Scenario>().unwrap(), sc);
            let json = serde_json::to_string(&sc).unwrap();
            assert_eq!(json, format!("\"{}\"", sc.as_str()));
        }
        assert!("NLOS".parse::<Scenario>().is_err());
    }
}
