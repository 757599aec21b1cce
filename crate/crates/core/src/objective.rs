use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Self-supervised objective trained by the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Predict the (stop-gradient) latent of the target view.
    Jepa,
    /// Reconstruct the target view in input space.
    Mae,
}

impl Objective {
    pub const ALL: [Objective; 2] = [Objective::Jepa, Objective::Mae];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Jepa => "jepa",
            Objective::Mae => "mae",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jepa" => Ok(Objective::Jepa),
            "mae" => Ok(Objective::Mae),
            other => Err(format!("unknown objective `{other}` (expected `jepa` or `mae`)")),
        }
    }
}
