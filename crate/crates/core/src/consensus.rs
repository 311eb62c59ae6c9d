//! Functionality experiments: repeat power-cycle, trigger, probe until a
//! supermajority of readings agree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("invalid consensus configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid bound parameters: need 0 <= p < threshold <= 1")]
    InvalidBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub min_iterations: u32,
    pub threshold: f64,
    /// Safety cap; reaching it yields [`Verdict::Inconclusive`].
    pub max_iterations: u32,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            min_iterations: 10,
            threshold: 0.8,
            max_iterations: 200,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            return Err(ConsensusError::InvalidConfig("threshold must be in (0.5, 1]"));
        }
        if self.min_iterations < 1 {
            return Err(ConsensusError::InvalidConfig("min_iterations must be >= 1"));
        }
        if self.max_iterations < self.min_iterations {
            return Err(ConsensusError::InvalidConfig(
                "max_iterations must be >= min_iterations",
            ));
        }
        Ok(())
    }

    /// Whether `count` of `n` readings reach the threshold. Comparison is
    /// inclusive and done in integers so 8/10 qualifies at 0.8 exactly.
    fn reaches(&self, count: u32, n: u32) -> bool {
        u64::from(count) * 1_000_000 >= (self.threshold * 1_000_000.0).round() as u64 * u64::from(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    Failure,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentVerdict {
    pub verdict: Verdict,
    pub successes: u32,
    pub failures: u32,
    pub iterations: u32,
    /// Probe readings in order (`true` = function observed working).
    pub iteration_log: Vec<bool>,
}

impl ExperimentVerdict {
    pub fn succeeded(&self) -> bool {
        self.verdict == Verdict::Success
    }
}

/// One iteration of a functionality experiment. `trigger` covers power
/// cycling and invoking the function; `probe` reports whether it ran.
pub trait FunctionTest {
    type Error;
    fn trigger(&mut self) -> Result<(), Self::Error>;
    fn probe(&mut self) -> Result<bool, Self::Error>;
}

/// Adapts a closure producing one probe reading per call.
pub struct ReadingFn<F>(pub F);

impl<F, E> FunctionTest for ReadingFn<F>
where
    F: FnMut() -> Result<bool, E>,
{
    type Error = E;
    fn trigger(&mut self) -> Result<(), E> {
        Ok(())
    }
    fn probe(&mut self) -> Result<bool, E> {
        (self.0)()
    }
}

/// Runs iterations until `threshold` of them agree, with at least
/// `min_iterations` and at most `max_iterations`. Errors from the test abort
/// the experiment without a verdict.
pub fn run_functionality_experiment<T: FunctionTest>(
    test: &mut T,
    config: &ConsensusConfig,
) -> Result<ExperimentVerdict, T::Error> {
    let mut log = Vec::with_capacity(config.min_iterations as usize);
    let (mut s, mut f) = (0u32, 0u32);
    loop {
        test.trigger()?;
        let ok = test.probe()?;
        log.push(ok);
        if ok {
            s += 1;
        } else {
            f += 1;
        }
        let n = s + f;
        if n < config.min_iterations {
            continue;
        }
        let verdict = if config.reaches(s, n) {
            Some(Verdict::Success)
        } else if config.reaches(f, n) {
            Some(Verdict::Failure)
        } else if n >= config.max_iterations {
            Some(Verdict::Inconclusive)
        } else {
            None
        };
        if let Some(verdict) = verdict {
            return Ok(ExperimentVerdict {
                verdict,
                successes: s,
                failures: f,
                iterations: n,
                iteration_log: log,
            });
        }
    }
}

fn ln_choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| f64::from(n - i).ln() - f64::from(i + 1).ln()).sum()
}

/// Upper bound on the chance that an experiment with `n` iterations reaches
/// a wrong verdict: `P[X >= ceil(threshold * n)]` for `X ~ Binomial(n, p)`,
/// where `p` is the per-reading error probability.
pub fn wrong_verdict_bound(n: u32, p: f64, threshold: f64) -> Result<f64, ConsensusError> {
    if !(0.0..threshold).contains(&p) || threshold > 1.0 || n == 0 {
        return Err(ConsensusError::InvalidBound);
    }
    let k_min = ((threshold * f64::from(n)) - 1e-9).ceil().max(0.0) as u32;
    if p == 0.0 {
        return Ok(if k_min == 0 { 1.0 } else { 0.0 });
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let tail = (k_min..=n)
        .map(|k| (ln_choose(n, k) + f64::from(k) * lp + f64::from(n - k) * lq).exp())
        .sum::<f64>();
    Ok(tail.min(1.0))
}
