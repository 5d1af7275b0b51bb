use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Movement classes, ordered by id. The ordering doubles as the tie-break
/// order wherever a decision has to pick between equally good movements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Rest,
    HandOpen,
    PowerGrasp,
    WristPronate,
    WristSupinate,
    TripodGrasp,
    KeyGrasp,
    IndexPoint,
    PrecisionPinch,
}

impl Movement {
    pub const ALL: [Movement; 9] = [
        Movement::Rest,
        Movement::HandOpen,
        Movement::PowerGrasp,
        Movement::WristPronate,
        Movement::WristSupinate,
        Movement::TripodGrasp,
        Movement::KeyGrasp,
        Movement::IndexPoint,
        Movement::PrecisionPinch,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Movement> {
        Movement::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Movement::Rest => "rest",
            Movement::HandOpen => "hand_open",
            Movement::PowerGrasp => "power_grasp",
            Movement::WristPronate => "wrist_pronate",
            Movement::WristSupinate => "wrist_supinate",
            Movement::TripodGrasp => "tripod_grasp",
            Movement::KeyGrasp => "key_grasp",
            Movement::IndexPoint => "index_point",
            Movement::PrecisionPinch => "precision_pinch",
        }
    }

    /// Hand-closing grips that can be prompted in an FLT trial.
    pub fn is_closing_grasp(self) -> bool {
        matches!(
            self,
            Movement::PowerGrasp
                | Movement::TripodGrasp
                | Movement::KeyGrasp
                | Movement::IndexPoint
                | Movement::PrecisionPinch
        )
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown movement `{0}`")]
pub struct UnknownMovementName(pub String);

impl FromStr for Movement {
    type Err = UnknownMovementName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Movement::ALL
            .iter()
            .copied()
            .find(|m| m.name() == norm)
            .ok_or_else(|| UnknownMovementName(s.to_string()))
    }
}

/// FLT test location within the reaching volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// Directly in front of the user (board location 5).
    Neutral,
    /// Reaching to the periphery at neutral elevation (board location 4/6).
    Periphery,
    /// Reaching across the midline, elevated (board location 3/1).
    AcrossMidline,
}

impl Location {
    pub const ALL: [Location; 3] = [Location::Neutral, Location::Periphery, Location::AcrossMidline];

    /// Checkerboard position the location corresponds to.
    pub fn board_position(self) -> u8 {
        match self {
            Location::Neutral => 5,
            Location::Periphery => 4,
            Location::AcrossMidline => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Movement::ALL {
            assert_eq!(m.name().parse::<Movement>().unwrap(), m);
            assert_eq!(Movement::from_id(m.id()), Some(m));
        }
        assert_eq!("Power Grasp".parse::<Movement>().unwrap(), Movement::PowerGrasp);
        assert!("fist".parse::<Movement>().is_err());
    }

    #[test]
    fn rest_has_lowest_id() {
        assert!(Movement::ALL.iter().all(|m| *m >= Movement::Rest));
    }
}
