use std::fmt;
use std::str::FromStr;

use crate::dafe::{DomainId, TaskId};
use crate::error::{Error, Result};

/// One sub-step type of a training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepKind {
    /// Denoising LM on in-domain monolingual text.
    InLm,
    /// Denoising LM on out-of-domain monolingual text.
    OutLm,
    /// Translation on out-of-domain parallel data.
    OutMt,
    /// Translation on synthetic in-domain parallel data.
    InMt,
}

impl StepKind {
    pub fn domain(self) -> DomainId {
        match self {
            StepKind::InLm | StepKind::InMt => DomainId::In,
            StepKind::OutLm | StepKind::OutMt => DomainId::Out,
        }
    }

    pub fn task(self) -> TaskId {
        match self {
            StepKind::InLm | StepKind::OutLm => TaskId::Lm,
            StepKind::OutMt | StepKind::InMt => TaskId::Mt,
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::InLm => "in-lm",
            StepKind::OutLm => "out-lm",
            StepKind::OutMt => "out-mt",
            StepKind::InMt => "in-mt",
        })
    }
}

impl FromStr for StepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-lm" => Ok(StepKind::InLm),
            "out-lm" => Ok(StepKind::OutLm),
            "out-mt" => Ok(StepKind::OutMt),
            "in-mt" => Ok(StepKind::InMt),
            other => Err(Error::Format(format!("unknown step kind `{other}`"))),
        }
    }
}

/// Batches per sub-step within a round, written `in_lm:out_lm:out_mt[:in_mt]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mix {
    pub in_lm: usize,
    pub out_lm: usize,
    pub out_mt: usize,
    pub in_mt: usize,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            in_lm: 1,
            out_lm: 1,
            out_mt: 1,
            in_mt: 1,
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.in_lm, self.out_lm, self.out_mt, self.in_mt)
    }
}

impl FromStr for Mix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(':')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("train.mix `{s}`: {e}")))?;
        let mix = match parts.as_slice() {
            [a, b, c] => Mix {
                in_lm: *a,
                out_lm: *b,
                out_mt: *c,
                in_mt: 1,
            },
            [a, b, c, d] => Mix {
                in_lm: *a,
                out_lm: *b,
                out_mt: *c,
                in_mt: *d,
            },
            _ => {
                return Err(Error::Config(format!(
                    "train.mix `{s}` must have three or four `:`-separated counts"
                )))
            }
        };
        if mix.out_mt == 0 {
            return Err(Error::Config("train.mix needs at least one translation step".into()));
        }
        Ok(mix)
    }
}

/// The ordered sub-steps executed each round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSchedule {
    pub steps: Vec<StepKind>,
}

impl TrainingSchedule {
    /// In-domain LM, out-of-domain LM, out-of-domain MT, in that order; with
    /// `synthetic`, in-domain MT steps follow.
    pub fn alternating(mix: Mix, synthetic: bool) -> Self {
        let mut steps = Vec::new();
        steps.extend(std::iter::repeat_n(StepKind::InLm, mix.in_lm));
        steps.extend(std::iter::repeat_n(StepKind::OutLm, mix.out_lm));
        steps.extend(std::iter::repeat_n(StepKind::OutMt, mix.out_mt));
        if synthetic {
            steps.extend(std::iter::repeat_n(StepKind::InMt, mix.in_mt));
        }
        TrainingSchedule { steps }
    }

    /// Plain supervised training: translation steps only.
    pub fn translation_only(mix: Mix) -> Self {
        TrainingSchedule {
            steps: vec![StepKind::OutMt; mix.out_mt],
        }
    }

    pub fn kinds(&self) -> Vec<StepKind> {
        let mut k = self.steps.clone();
        k.sort();
        k.dedup();
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_is_the_three_step_cycle() {
        let s = TrainingSchedule::alternating(Mix::default(), false);
        assert_eq!(s.steps, vec![StepKind::InLm, StepKind::OutLm, StepKind::OutMt]);
        let s = TrainingSchedule::alternating(Mix::default(), true);
        assert_eq!(s.steps.last(), Some(&StepKind::InMt));
    }

    #[test]
    fn mix_parses_three_or_four_counts() {
        let m: Mix = "2:1:3".parse().unwrap();
        assert_eq!((m.in_lm, m.out_lm, m.out_mt, m.in_mt), (2, 1, 3, 1));
        let m: Mix = "1:1:1:4".parse().unwrap();
        assert_eq!(m.in_mt, 4);
        assert!("1:1".parse::<Mix>().is_err());
        assert!("1:1:0".parse::<Mix>().is_err());
        assert_eq!(m.to_string().parse::<Mix>().unwrap(), m);
    }

    #[test]
    fn step_kinds_carry_their_domain_and_task() {
        assert_eq!(StepKind::InLm.domain(), DomainId::In);
        assert_eq!(StepKind::InLm.task(), TaskId::Lm);
        assert_eq!(StepKind::OutMt.domain(), DomainId::Out);
        assert_eq!(StepKind::InMt.task(), TaskId::Mt);
    }
}
