//! Exact halting measures over finite schedules.
//!
//! `tau` weights the n-th program by `2^-n`; `omega` weights a program by
//! `2^-|p|`. Both come with finite-horizon approximants that only count
//! programs known to halt within the horizon.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::codes::{self, RunOutcome};

pub type ExactRational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeasureError {
    #[error("horizon {horizon} exceeds schedule coverage ({covered})")]
    HorizonUncovered { horizon: u64, covered: u64 },
    #[error("Kraft sum {0} exceeds 1")]
    KraftViolation(String),
    #[error("value {0} outside [0, 1)")]
    OutOfUnitInterval(String),
    #[error("base must be at least 2, got {0}")]
    BadBase(u32),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `2^-n` as an exact rational.
pub fn pow2_inv(n: u64) -> ExactRational {
    BigRational::new(BigInt::one(), BigInt::one() << n as usize)
}

/// Formats as `num/den`, always with an explicit denominator.
pub fn fmt_rational(x: &ExactRational) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

pub fn parse_rational(s: &str) -> Result<ExactRational, String> {
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| format!("bad numerator in {s:?}"))?;
    let d: BigInt = d.parse().map_err(|_| format!("bad denominator in {s:?}"))?;
    if d.is_zero() {
        return Err(format!("zero denominator in {s:?}"));
    }
    Ok(BigRational::new(n, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub index: u64,
    pub code_length: u64,
    /// Step at which the program halts, if it does.
    pub halt_step: Option<u64>,
}

impl ScheduleEntry {
    pub fn halting(index: u64, code_length: u64, halt_step: u64) -> Self {
        Self { index, code_length, halt_step: Some(halt_step) }
    }

    pub fn diverging(index: u64, code_length: u64) -> Self {
        Self { index, code_length, halt_step: None }
    }

    pub fn halts(&self) -> bool {
        self.halt_step.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleSource {
    Synthetic,
    Vm { max_len: usize, budget: u64 },
}

/// How much of the program universe a schedule describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    /// The entries are every program there is.
    Closed,
    /// Only indices `<= max_index` and lengths `<= max_length` are decided.
    Prefix { max_index: u64, max_length: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaltingSchedule {
    entries: Vec<ScheduleEntry>,
    source: ScheduleSource,
    coverage: Coverage,
}

impl HaltingSchedule {
    pub fn new(entries: Vec<ScheduleEntry>, source: ScheduleSource, coverage: Coverage) -> Result<Self, MeasureError> {
        for w in entries.windows(2) {
            if w[0].index >= w[1].index {
                return Err(MeasureError::InvalidSchedule(format!(
                    "indices not strictly increasing at {}",
                    w[1].index
                )));
            }
        }
        for e in &entries {
            if e.index == 0 || e.code_length == 0 {
                return Err(MeasureError::InvalidSchedule(format!("entry {} has zero index or length", e.index)));
            }
            if e.halt_step == Some(0) {
                return Err(MeasureError::InvalidSchedule(format!("entry {} halts at step 0", e.index)));
            }
        }
        Ok(Self { entries, source, coverage })
    }

    pub fn synthetic(entries: Vec<ScheduleEntry>) -> Result<Self, MeasureError> {
        Self::new(entries, ScheduleSource::Synthetic, Coverage::Closed)
    }

    /// Every program of length `<= max_len`, run on empty input for `budget`
    /// steps. Programs still running are recorded as diverging.
    pub fn from_vm(max_len: usize, budget: u64) -> Self {
        let programs = codes::enumerate_programs(max_len);
        let entries: Vec<ScheduleEntry> = programs
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let outcome = codes::run(&p.machine, &codes::Bitstring::new(), budget);
                let halt_step = match outcome {
                    RunOutcome::Halted { steps, .. } => Some(steps),
                    RunOutcome::OutOfBudget(_) => None,
                };
                ScheduleEntry { index: i as u64 + 1, code_length: p.len() as u64, halt_step }
            })
            .collect();
        Self { entries, source: ScheduleSource::Vm { max_len, budget }, coverage: Coverage::Closed }
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn source(&self) -> ScheduleSource {
        self.source
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    /// Smallest horizon at which both approximant sequences reach their limits.
    pub fn exhaustion_horizon(&self) -> u64 {
        self.entries
            .iter()
            .flat_map(|e| [e.index, e.code_length, e.halt_step.unwrap_or(0)])
            .max()
            .unwrap_or(0)
            .max(1)
    }

    pub fn kraft_sum(&self) -> ExactRational {
        self.entries.iter().map(|e| pow2_inv(e.code_length)).sum()
    }

    fn check_index_cover(&self, i: u64) -> Result<(), MeasureError> {
        match self.coverage {
            Coverage::Prefix { max_index, .. } if i > max_index => {
                Err(MeasureError::HorizonUncovered { horizon: i, covered: max_index })
            }
            _ => Ok(()),
        }
    }

    fn check_length_cover(&self, i: u64) -> Result<(), MeasureError> {
        match self.coverage {
            Coverage::Prefix { max_length, .. } if i > max_length => {
                Err(MeasureError::HorizonUncovered { horizon: i, covered: max_length })
            }
            _ => Ok(()),
        }
    }

    /// Text form: `<index> <len> H <step>` or `<index> <len> D`, with an
    /// optional `# coverage <max_index> <max_length>` directive.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Coverage::Prefix { max_index, max_length } = self.coverage {
            out.push_str(&format!("# coverage {max_index} {max_length}\n"));
        }
        for e in &self.entries {
            match e.halt_step {
                Some(s) => out.push_str(&format!("{} {} H {}\n", e.index, e.code_length, s)),
                None => out.push_str(&format!("{} {} D\n", e.index, e.code_length)),
            }
        }
        out
    }
}

impl FromStr for HaltingSchedule {
    type Err = MeasureError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        let mut coverage = Coverage::Closed;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| MeasureError::Parse { line: lineno + 1, msg: msg.to_string() };
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let words: Vec<&str> = comment.split_whitespace().collect();
                if let ["coverage", idx, len] = words.as_slice() {
                    coverage = Coverage::Prefix {
                        max_index: idx.parse().map_err(|_| err("bad coverage index"))?,
                        max_length: len.parse().map_err(|_| err("bad coverage length"))?,
                    };
                }
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u64>().map_err(|_| err("expected a positive integer"));
            let entry = match words.as_slice() {
                [i, l, "H", s] => ScheduleEntry::halting(num(i)?, num(l)?, num(s)?),
                [i, l, "D"] => ScheduleEntry::diverging(num(i)?, num(l)?),
                _ => return Err(err("expected `<index> <len> H <step>` or `<index> <len> D`")),
            };
            entries.push(entry);
        }
        Self::new(entries, ScheduleSource::Synthetic, coverage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Tau,
    Omega,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasureValue {
    pub value: ExactRational,
    pub kind: MeasureKind,
    /// `None` for the exact limit.
    pub horizon: Option<u64>,
}

impl fmt::Display for MeasureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_rational(&self.value))
    }
}

pub fn tau_exact(schedule: &HaltingSchedule) -> ExactRational {
    schedule.entries.iter().filter(|e| e.halts()).map(|e| pow2_inv(e.index)).sum()
}

pub fn tau_i(schedule: &HaltingSchedule, i: u64) -> Result<ExactRational, MeasureError> {
    schedule.check_index_cover(i)?;
    Ok(schedule
        .entries
        .iter()
        .filter(|e| e.index <= i && e.halt_step.is_some_and(|s| s <= i))
        .map(|e| pow2_inv(e.index))
        .sum())
}

pub fn omega_exact(schedule: &HaltingSchedule) -> Result<ExactRational, MeasureError> {
    let kraft = schedule.kraft_sum();
    if kraft > BigRational::one() {
        return Err(MeasureError::KraftViolation(fmt_rational(&kraft)));
    }
    Ok(schedule.entries.iter().filter(|e| e.halts()).map(|e| pow2_inv(e.code_length)).sum())
}

pub fn omega_i(schedule: &HaltingSchedule, i: u64) -> Result<ExactRational, MeasureError> {
    schedule.check_length_cover(i)?;
    Ok(schedule
        .entries
        .iter()
        .filter(|e| e.code_length <= i && e.halt_step.is_some_and(|s| s <= i))
        .map(|e| pow2_inv(e.code_length))
        .sum())
}

fn check_unit(x: &ExactRational) -> Result<(), MeasureError> {
    if x.is_negative() || *x >= BigRational::one() {
        return Err(MeasureError::OutOfUnitInterval(fmt_rational(x)));
    }
    Ok(())
}

/// First `k` bits after the binary point, bit `j` being `floor(x * 2^j) mod 2`.
pub fn binary_expansion(x: &ExactRational, k: usize) -> Result<Vec<u8>, MeasureError> {
    base_b_expansion(x, 2, k)
}

/// First `k` base-`b` digits; never the expansion ending in repeated `b - 1`.
pub fn base_b_expansion(x: &ExactRational, b: u32, k: usize) -> Result<Vec<u8>, MeasureError> {
    if b < 2 {
        return Err(MeasureError::BadBase(b));
    }
    check_unit(x)?;
    let base = BigInt::from(b);
    let den = x.denom().clone();
    let mut rem = x.numer().clone();
    let mut digits = Vec::with_capacity(k);
    for _ in 0..k {
        rem *= &base;
        let (d, r) = rem.div_rem(&den);
        digits.push(u8::try_from(d).expect("digit below base"));
        rem = r;
    }
    Ok(digits)
}

/// `floor(x * b^k)`: the first `k` digits read as one integer.
pub fn scaled_floor(x: &ExactRational, b: u32, k: usize) -> BigUint {
    let scaled = x * BigRational::from_integer(BigInt::from(b).pow(k as u32));
    scaled.floor().to_integer().to_biguint().expect("nonnegative")
}
