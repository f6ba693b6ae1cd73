use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which embedding tables receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainStatus {
    /// Train object embeddings, freeze state embeddings.
    #[serde(rename = "o")]
    Object,
    /// Train state embeddings, freeze object embeddings.
    #[serde(rename = "a")]
    State,
    /// Train both.
    #[serde(rename = "ao")]
    Joint,
}

impl TrainStatus {
    pub const ALL: [TrainStatus; 3] = [TrainStatus::Object, TrainStatus::State, TrainStatus::Joint];

    pub fn trains_states(self) -> bool {
        matches!(self, TrainStatus::State | TrainStatus::Joint)
    }

    pub fn trains_objects(self) -> bool {
        matches!(self, TrainStatus::Object | TrainStatus::Joint)
    }

    pub fn code(self) -> &'static str {
        match self {
            TrainStatus::Object => "o",
            TrainStatus::State => "a",
            TrainStatus::Joint => "ao",
        }
    }
}

impl fmt::Display for TrainStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TrainStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "o" => Ok(TrainStatus::Object),
            "a" => Ok(TrainStatus::State),
            "ao" => Ok(TrainStatus::Joint),
            other => Err(Error::Config(format!("unknown status {other:?}, expected o, a or ao"))),
        }
    }
}

/// Ordered cycle of three statuses, each held for `round_range` epochs.
///
/// A regular schedule visits every status once per round. The only other
/// accepted form repeats a single status, which expresses ablations such as
/// always-joint tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct StatusSchedule {
    sequence: [TrainStatus; 3],
    round_range: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    sequence: [TrainStatus; 3],
    round_range: usize,
}

impl TryFrom<RawSchedule> for StatusSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        let [x, y, z] = raw.sequence;
        if x == y && y == z {
            StatusSchedule::forced(x, raw.round_range)
        } else {
            StatusSchedule::new(raw.sequence, raw.round_range)
        }
    }
}

impl From<StatusSchedule> for RawSchedule {
    fn from(s: StatusSchedule) -> Self {
        RawSchedule {
            sequence: s.sequence,
            round_range: s.round_range,
        }
    }
}

impl Default for StatusSchedule {
    /// o → a → ao with K = 3.
    fn default() -> Self {
        StatusSchedule {
            sequence: TrainStatus::ALL,
            round_range: 3,
        }
    }
}

impl StatusSchedule {
    pub fn new(sequence: [TrainStatus; 3], round_range: usize) -> Result<Self> {
        if round_range == 0 {
            return Err(Error::Config("round range K must be >= 1".into()));
        }
        let distinct = TrainStatus::ALL.iter().all(|s| sequence.contains(s));
        if !distinct {
            return Err(Error::Config(format!(
                "status sequence must be a permutation of o, a, ao; got {}",
                format_sequence(&sequence)
            )));
        }
        Ok(StatusSchedule {
            sequence,
            round_range,
        })
    }

    /// The same status for every epoch.
    pub fn forced(status: TrainStatus, round_range: usize) -> Result<Self> {
        if round_range == 0 {
            return Err(Error::Config("round range K must be >= 1".into()));
        }
        Ok(StatusSchedule {
            sequence: [status; 3],
            round_range,
        })
    }

    /// The six orderings of o, a, ao, starting with the default o → a → ao.
    pub fn all_sequences() -> [[TrainStatus; 3]; 6] {
        use TrainStatus::*;
        [
            [Object, State, Joint],
            [Object, Joint, State],
            [State, Object, Joint],
            [State, Joint, Object],
            [Joint, Object, State],
            [Joint, State, Object],
        ]
    }

    pub fn sequence(&self) -> [TrainStatus; 3] {
        self.sequence
    }

    pub fn round_range(&self) -> usize {
        self.round_range
    }

    pub fn label(&self) -> String {
        format_sequence(&self.sequence)
    }
}

/// Parse `o-a-ao` (also accepts `,` or `>` separators and `→`).
impl FromStr for StatusSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<TrainStatus> = s
            .replace('→', "-")
            .split(['-', ',', '>'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        let sequence: [TrainStatus; 3] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("expected three statuses in {s:?}")))?;
        StatusSchedule::try_from(RawSchedule {
            sequence,
            round_range: 3,
        })
    }
}

impl StatusSchedule {
    pub fn with_round_range(self, round_range: usize) -> Result<Self> {
        StatusSchedule::try_from(RawSchedule {
            sequence: self.sequence,
            round_range,
        })
    }
}

fn format_sequence(seq: &[TrainStatus; 3]) -> String {
    seq.iter().map(|s| s.code()).collect::<Vec<_>>().join("-")
}

/// `sequence[(epoch / K) mod 3]`.
pub fn status_for_epoch(schedule: &StatusSchedule, epoch: usize) -> TrainStatus {
    schedule.sequence[(epoch / schedule.round_range) % 3]
}
