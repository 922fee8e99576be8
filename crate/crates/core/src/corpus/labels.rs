use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A closed label set with a fixed code/name bijection and dense indices.
pub trait Taxonomy: Copy + Ord + fmt::Debug + Send + Sync + 'static {
    const COUNT: usize;

    fn all() -> &'static [Self];
    fn index(self) -> usize;
    fn code(self) -> &'static str;
    fn name(self) -> &'static str;

    fn from_index(i: usize) -> Option<Self> {
        Self::all().get(i).copied()
    }

    fn from_code(code: &str) -> Option<Self> {
        Self::all().iter().copied().find(|l| l.code() == code)
    }
}

/// The twelve speech-act themes used to label utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeechAct {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
    S8,
    S9,
    S10,
    S11,
    S12,
}

impl SpeechAct {
    pub const ALL: [SpeechAct; 12] = [
        SpeechAct::S1,
        SpeechAct::S2,
        SpeechAct::S3,
        SpeechAct::S4,
        SpeechAct::S5,
        SpeechAct::S6,
        SpeechAct::S7,
        SpeechAct::S8,
        SpeechAct::S9,
        SpeechAct::S10,
        SpeechAct::S11,
        SpeechAct::S12,
    ];
}

impl Taxonomy for SpeechAct {
    const COUNT: usize = 12;

    fn all() -> &'static [Self] {
        &Self::ALL
    }

    fn index(self) -> usize {
        self as usize
    }

    fn code(self) -> &'static str {
        match self {
            SpeechAct::S1 => "S1",
            SpeechAct::S2 => "S2",
            SpeechAct::S3 => "S3",
            SpeechAct::S4 => "S4",
            SpeechAct::S5 => "S5",
            SpeechAct::S6 => "S6",
            SpeechAct::S7 => "S7",
            SpeechAct::S8 => "S8",
            SpeechAct::S9 => "S9",
            SpeechAct::S10 => "S10",
            SpeechAct::S11 => "S11",
            SpeechAct::S12 => "S12",
        }
    }

    fn name(self) -> &'static str {
        match self {
            SpeechAct::S1 => "Question/Seek",
            SpeechAct::S2 => "Accept/Reject",
            SpeechAct::S3 => "Counter/Offer",
            SpeechAct::S4 => "Answer",
            SpeechAct::S5 => "Clarify",
            SpeechAct::S6 => "Inform/Declare",
            SpeechAct::S7 => "Evaluation",
            SpeechAct::S8 => "Instruct",
            SpeechAct::S9 => "Repeat",
            SpeechAct::S10 => "Confirmation",
            SpeechAct::S11 => "Courtesy",
            SpeechAct::S12 => "Greetings/Closing",
        }
    }
}

/// The four agent-side search-action themes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SearchAction {
    SR1,
    SR2,
    SR3,
    SR4,
}

impl SearchAction {
    pub const ALL: [SearchAction; 4] = [
        SearchAction::SR1,
        SearchAction::SR2,
        SearchAction::SR3,
        SearchAction::SR4,
    ];
}

impl Taxonomy for SearchAction {
    const COUNT: usize = 4;

    fn all() -> &'static [Self] {
        &Self::ALL
    }

    fn index(self) -> usize {
        self as usize
    }

    fn code(self) -> &'static str {
        match self {
            SearchAction::SR1 => "SR1",
            SearchAction::SR2 => "SR2",
            SearchAction::SR3 => "SR3",
            SearchAction::SR4 => "SR4",
        }
    }

    fn name(self) -> &'static str {
        match self {
            SearchAction::SR1 => "Query Creation/Refinement",
            SearchAction::SR2 => "SERP Scanning",
            SearchAction::SR3 => "Document Scanning",
            SearchAction::SR4 => "Organizing Answers from Multiple Documents",
        }
    }
}

macro_rules! taxonomy_str_impls {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$ty as Taxonomy>::from_code(s.trim()).ok_or_else(|| s.to_string())
            }
        }
    };
}

taxonomy_str_impls!(SpeechAct);
taxonomy_str_impls!(SearchAction);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Agent => "agent",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speaker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "user" => Ok(Speaker::User),
            "agent" => Ok(Speaker::Agent),
            other => Err(other.to_string()),
        }
    }
}
