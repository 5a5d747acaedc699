use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which response a decoder learns.
///
/// `Property`: six channels, `(T, q_x, q_y)` under horizontal loading then
/// under vertical loading. `Field`: one channel, `T` under the field-recovery
/// boundary condition (right edge 1, other edges 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Property,
    Field,
}

impl Task {
    pub fn channels(self) -> usize {
        match self {
            Task::Property => 6,
            Task::Field => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Property => "property",
            Task::Field => "field",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "property" => Ok(Task::Property),
            "field" => Ok(Task::Field),
            other => Err(Error::invalid(format!("unknown task '{other}' (expected property or field)"))),
        }
    }
}
