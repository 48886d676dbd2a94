//! Guess and threshold programs over a halting measure.
//!
//! The guess program reports bit `k` of the `N`-th approximant; it is right
//! for all but finitely many `N`, but the count of `N` where it answers 1 may
//! be infinite. The threshold program halts on `(k, N)` exactly when the
//! measure exceeds `N / b^k`, so the number of halting `N` is finite and its
//! base-`b` spelling, padded to `k` digits, is the first `k` digits of the
//! measure.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::codes::{self, ProgramCode};
use crate::measures::{self, fmt_rational, ExactRational, HaltingSchedule, MeasureError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitsError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("ground truth {value} is a multiple of {base}^-{k}; strict thresholds are ambiguous there")]
    DyadicGroundTruth { value: String, base: u32, k: usize },
    #[error("threshold record is a lower bound, not exact")]
    NotExact,
    #[error("oracle answers are not downward closed: yes at N={yes}, no at N={no}")]
    InconsistentOracle { yes: u64, no: u64 },
    #[error("oracle could not decide N={0}")]
    OracleUndecided(u64),
    #[error("k must be between 1 and {max}, got {k}")]
    BadK { k: usize, max: usize },
    #[error("program index {index} outside 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },
}

/// Where the measure comes from.
#[derive(Debug, Clone)]
pub enum MeasureSource {
    /// A known value in `[0, 1)`; approximants are taken to be constant.
    ExactGroundTruth(ExactRational),
    /// Approximants of a schedule; `horizon` bounds the threshold program's
    /// semi-decision search.
    ApproximantStream { schedule: HaltingSchedule, horizon: u64 },
}

impl MeasureSource {
    pub fn ground_truth(value: ExactRational) -> Result<Self, BitsError> {
        if value < BigRational::zero() || value >= BigRational::one() {
            return Err(MeasureError::OutOfUnitInterval(fmt_rational(&value)).into());
        }
        Ok(Self::ExactGroundTruth(value))
    }

    /// The `i`-th approximant.
    pub fn approximant(&self, i: u64) -> Result<ExactRational, BitsError> {
        match self {
            MeasureSource::ExactGroundTruth(v) => Ok(v.clone()),
            MeasureSource::ApproximantStream { schedule, .. } => Ok(measures::omega_i(schedule, i)?),
        }
    }
}

fn threshold(n: u64, base: u32, k: usize) -> ExactRational {
    BigRational::new(BigInt::from(n), BigInt::from(base).pow(k as u32))
}

/// The `n`-th guess at bit `k`: bit `k` of the `n`-th approximant.
pub fn guess_p(k: usize, n: u64, src: &MeasureSource) -> Result<u8, BitsError> {
    if k == 0 {
        return Err(BitsError::BadK { k, max: usize::MAX });
    }
    let omega_n = src.approximant(n)?;
    Ok(measures::binary_expansion(&omega_n, k)?[k - 1])
}

/// Answer of the threshold program on one input pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QAnswer {
    /// Halts; for streams, `at` is the first approximant index that exceeded
    /// the threshold.
    Halts { at: Option<u64> },
    /// Decided only against an exact ground truth.
    DoesNotHalt,
    /// No approximant up to the budget exceeded the threshold.
    Unknown(u64),
}

pub fn q_threshold_halts(k: usize, n: u64, src: &MeasureSource) -> QAnswer {
    q_threshold_halts_base(k, n, 2, src)
}

pub fn q_threshold_halts_base(k: usize, n: u64, base: u32, src: &MeasureSource) -> QAnswer {
    let t = threshold(n, base, k);
    match src {
        MeasureSource::ExactGroundTruth(v) => {
            if *v > t {
                QAnswer::Halts { at: None }
            } else {
                QAnswer::DoesNotHalt
            }
        }
        MeasureSource::ApproximantStream { schedule, horizon } => {
            for i in 1..=*horizon {
                match measures::omega_i(schedule, i) {
                    Ok(w) if w > t => return QAnswer::Halts { at: Some(i) },
                    Ok(_) => {}
                    // the stream runs dry: nothing more can be inspected
                    Err(_) => return QAnswer::Unknown(i - 1),
                }
            }
            QAnswer::Unknown(*horizon)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Exact,
    LowerBound(u64),
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Exact => f.write_str("exact"),
            ThresholdMode::LowerBound(i) => write!(f, "lower_bound({i})"),
        }
    }
}

/// Number of `N >= 1` with `N / base^k` strictly below the measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdRecord {
    pub k: usize,
    pub base: u32,
    pub q: BigUint,
    pub mode: ThresholdMode,
}

pub const QK_CSV_HEADER: &str = "k,base,q,mode,digits";

impl ThresholdRecord {
    /// `q` in base `base`, zero-padded to `k` digits.
    pub fn padded_digits(&self) -> Vec<u8> {
        let mut digits = self.q.to_radix_be(self.base);
        if self.q.is_zero() {
            digits.clear();
        }
        let mut out = vec![0u8; self.k.saturating_sub(digits.len())];
        out.extend(digits);
        out
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.k, self.base, self.q, self.mode, render_digits(&self.padded_digits()))
    }
}

pub fn render_digits(digits: &[u8]) -> String {
    digits
        .iter()
        .map(|&d| char::from_digit(d as u32, 36).unwrap_or('?'))
        .collect()
}

pub fn q_k(k: usize, src: &MeasureSource, base: u32) -> Result<ThresholdRecord, BitsError> {
    if base < 2 {
        return Err(MeasureError::BadBase(base).into());
    }
    if k == 0 {
        return Err(BitsError::BadK { k, max: usize::MAX });
    }
    let scale = BigRational::from_integer(BigInt::from(base).pow(k as u32));
    match src {
        MeasureSource::ExactGroundTruth(v) => {
            let scaled = v * &scale;
            if scaled.is_integer() {
                return Err(BitsError::DyadicGroundTruth { value: fmt_rational(v), base, k });
            }
            let q = scaled.floor().to_integer().to_biguint().expect("ground truth is nonnegative");
            Ok(ThresholdRecord { k, base, q, mode: ThresholdMode::Exact })
        }
        MeasureSource::ApproximantStream { schedule, horizon } => {
            let w = measures::omega_i(schedule, *horizon)?;
            // N < w * b^k, strictly
            let scaled = w * &scale;
            let below = scaled.ceil().to_integer() - BigInt::one();
            let q = below.to_biguint().unwrap_or_default();
            Ok(ThresholdRecord { k, base, q, mode: ThresholdMode::LowerBound(*horizon) })
        }
    }
}

pub fn bits_from_qk(rec: &ThresholdRecord) -> Result<Vec<u8>, BitsError> {
    match rec.mode {
        ThresholdMode::Exact => Ok(rec.padded_digits()),
        ThresholdMode::LowerBound(_) => Err(BitsError::NotExact),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleAnswer {
    Yes,
    No,
    Unknown,
}

/// Answers "does the threshold program halt on `(k, N)`" for a fixed `k`.
pub trait SolvabilityOracle {
    fn query(&self, n: u64) -> OracleAnswer;
}

impl<F: Fn(u64) -> OracleAnswer> SolvabilityOracle for F {
    fn query(&self, n: u64) -> OracleAnswer {
        self(n)
    }
}

/// Oracle backed by a measure source at a fixed `k`.
pub struct ThresholdOracle<'a> {
    pub k: usize,
    pub base: u32,
    pub src: &'a MeasureSource,
}

impl SolvabilityOracle for ThresholdOracle<'_> {
    fn query(&self, n: u64) -> OracleAnswer {
        match q_threshold_halts_base(self.k, n, self.base, self.src) {
            QAnswer::Halts { .. } => OracleAnswer::Yes,
            QAnswer::DoesNotHalt => OracleAnswer::No,
            QAnswer::Unknown(_) => OracleAnswer::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchReport {
    pub digits: Vec<u8>,
    pub q: u64,
    pub queries: u64,
}

pub const MAX_SEARCH_K: usize = 62;

fn binary_digits(q: u64, k: usize) -> Vec<u8> {
    (0..k).rev().map(|s| ((q >> s) & 1) as u8).collect()
}

fn yes_no(oracle: &impl SolvabilityOracle, n: u64) -> Result<bool, BitsError> {
    match oracle.query(n) {
        OracleAnswer::Yes => Ok(true),
        OracleAnswer::No => Ok(false),
        OracleAnswer::Unknown => Err(BitsError::OracleUndecided(n)),
    }
}

/// Largest `N` in `[0, 2^k - 1]` with a yes answer (0 counts as yes), found
/// by halving the candidate range: exactly `k` queries.
pub fn bisection_bits(k: usize, oracle: &impl SolvabilityOracle) -> Result<SearchReport, BitsError> {
    if k == 0 || k > MAX_SEARCH_K {
        return Err(BitsError::BadK { k, max: MAX_SEARCH_K });
    }
    let (mut lo, mut hi) = (0u64, (1u64 << k) - 1);
    let mut queries = 0;
    let mut lowest_no: Option<u64> = None;
    let mut highest_yes: Option<u64> = None;
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        queries += 1;
        if yes_no(oracle, mid)? {
            highest_yes = Some(highest_yes.map_or(mid, |y| y.max(mid)));
            lo = mid;
        } else {
            lowest_no = Some(lowest_no.map_or(mid, |n| n.min(mid)));
            hi = mid - 1;
        }
        if let (Some(y), Some(n)) = (highest_yes, lowest_no) {
            if y > n {
                return Err(BitsError::InconsistentOracle { yes: y, no: n });
            }
        }
    }
    Ok(SearchReport { digits: binary_digits(lo, k), q: lo, queries })
}

/// Queries every `N` in `1..2^k` and counts the yes answers.
pub fn scan_bits(k: usize, oracle: &impl SolvabilityOracle) -> Result<SearchReport, BitsError> {
    if k == 0 || k > MAX_SEARCH_K {
        return Err(BitsError::BadK { k, max: MAX_SEARCH_K });
    }
    let mut q = 0u64;
    let mut first_no: Option<u64> = None;
    let mut queries = 0;
    for n in 1..(1u64 << k) {
        queries += 1;
        if yes_no(oracle, n)? {
            if let Some(no) = first_no {
                return Err(BitsError::InconsistentOracle { yes: n, no });
            }
            q += 1;
        } else if first_no.is_none() {
            first_no = Some(n);
        }
    }
    Ok(SearchReport { digits: binary_digits(q, k), q, queries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitCensus {
    pub k: usize,
    pub horizon: u64,
    pub ones: u64,
    pub zeros: u64,
}

/// Tallies the guess program's answers for `N = 1..=horizon`.
pub fn p_census(k: usize, horizon: u64, src: &MeasureSource) -> Result<BitCensus, BitsError> {
    let mut ones = 0;
    for n in 1..=horizon {
        ones += guess_p(k, n, src)? as u64;
    }
    Ok(BitCensus { k, horizon, ones, zeros: horizon - ones })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    NextBitOne,
    NextBitZero,
    NoPrediction,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prediction::NextBitOne => "one",
            Prediction::NextBitZero => "zero",
            Prediction::NoPrediction => "none",
        })
    }
}

/// Predicts the `n`-th bit of `tau`: loop-free programs certainly halt.
pub fn predict_tau_bit(n: usize, max_len: usize) -> Result<Prediction, BitsError> {
    predict_in(&codes::enumerate_programs(max_len), n)
}

/// As [`predict_tau_bit`], over an already enumerated program list.
pub fn predict_in(programs: &[ProgramCode], n: usize) -> Result<Prediction, BitsError> {
    let program = n
        .checked_sub(1)
        .and_then(|i| programs.get(i))
        .ok_or(BitsError::IndexOutOfRange { index: n, count: programs.len() })?;
    Ok(if codes::provably_halts_structurally(&program.machine) {
        Prediction::NextBitOne
    } else {
        Prediction::NoPrediction
    })
}

/// Parity of `q`, the last binary digit it encodes.
pub fn parity(q: &BigUint) -> u8 {
    (q % 2u32).to_u8().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ScheduleEntry;

    fn r(n: i64, d: i64) -> ExactRational {
        BigRational::new(n.into(), d.into())
    }

    fn truth(n: i64, d: i64) -> MeasureSource {
        MeasureSource::ground_truth(r(n, d)).unwrap()
    }

    fn late_half(horizon: u64) -> MeasureSource {
        MeasureSource::ApproximantStream {
            schedule: HaltingSchedule::synthetic(vec![ScheduleEntry::halting(1, 1, 3)]).unwrap(),
            horizon,
        }
    }

    #[test]
    fn guess_examples() {
        let src = late_half(10);
        assert_eq!(guess_p(1, 2, &src).unwrap(), 0);
        assert_eq!(guess_p(1, 3, &src).unwrap(), 1);
        let zero = truth(0, 1);
        assert!((1..8).all(|k| guess_p(k, 5, &zero).unwrap() == 0));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(q_threshold_halts(2, 1, &truth(1, 3)), QAnswer::Halts { at: None });
        assert_eq!(q_threshold_halts(2, 2, &truth(1, 3)), QAnswer::DoesNotHalt);
        // 1/2 is not strictly above 1/2
        assert_eq!(q_threshold_halts(1, 1, &late_half(3)), QAnswer::Unknown(3));
        assert_eq!(q_threshold_halts(2, 1, &late_half(5)), QAnswer::Halts { at: Some(3) });
    }

    #[test]
    fn qk_examples() {
        let third = truth(1, 3);
        let q = |k, b| q_k(k, &third, b).unwrap().q;
        assert_eq!(q(1, 2), 0u32.into());
        assert_eq!(q(2, 2), 1u32.into());
        assert_eq!(q(4, 2), 5u32.into());
        assert_eq!(q(1, 10), 3u32.into());
        assert_eq!(q_k(2, &truth(2, 3), 2).unwrap().q, 2u32.into());
        assert!(matches!(q_k(3, &truth(1, 2), 2), Err(BitsError::DyadicGroundTruth { .. })));
        assert!(matches!(q_k(1, &truth(0, 1), 2), Err(BitsError::DyadicGroundTruth { .. })));
        // 1/2 is fine in base 3
        assert_eq!(q_k(2, &truth(1, 2), 3).unwrap().q, 4u32.into());
    }

    #[test]
    fn stream_lower_bound() {
        let rec = q_k(2, &late_half(3), 2).unwrap();
        // N/4 < 1/2 for N = 1 only
        assert_eq!(rec.q, 1u32.into());
        assert_eq!(rec.mode, ThresholdMode::LowerBound(3));
        assert_eq!(q_k(2, &late_half(2), 2).unwrap().q, 0u32.into());
        assert_eq!(bits_from_qk(&rec), Err(BitsError::NotExact));
    }

    #[test]
    fn digits_from_q() {
        let rec = q_k(4, &truth(1, 3), 2).unwrap();
        assert_eq!(bits_from_qk(&rec).unwrap(), vec![0, 1, 0, 1]);
        assert_eq!(rec.csv_row(), "4,2,5,exact,0101");
        let dec = q_k(3, &truth(1, 3), 10).unwrap();
        assert_eq!(dec.q, 333u32.into());
        assert_eq!(bits_from_qk(&dec).unwrap(), vec![3, 3, 3]);
        let zero = ThresholdRecord { k: 1, base: 2, q: BigUint::zero(), mode: ThresholdMode::Exact };
        assert_eq!(bits_from_qk(&zero).unwrap(), vec![0]);
    }

    #[test]
    fn bisection_examples() {
        let third = truth(1, 3);
        let rep = bisection_bits(3, &ThresholdOracle { k: 3, base: 2, src: &third }).unwrap();
        assert_eq!((rep.digits.clone(), rep.q, rep.queries), (vec![0, 1, 0], 2, 3));
        let one = bisection_bits(1, &ThresholdOracle { k: 1, base: 2, src: &third }).unwrap();
        assert_eq!((one.digits, one.queries), (vec![0], 1));
        let scan = scan_bits(3, &ThresholdOracle { k: 3, base: 2, src: &third }).unwrap();
        assert_eq!((scan.q, scan.queries), (2, 7));
    }

    #[test]
    fn oracle_failures() {
        let undecided = |_n: u64| OracleAnswer::Unknown;
        assert_eq!(bisection_bits(4, &undecided), Err(BitsError::OracleUndecided(8)));
        // yes only at odd N: not downward closed
        let odd = |n: u64| if n % 2 == 1 { OracleAnswer::Yes } else { OracleAnswer::No };
        assert!(matches!(scan_bits(3, &odd), Err(BitsError::InconsistentOracle { .. })));
        assert!(bisection_bits(0, &odd).is_err());
    }

    #[test]
    fn census_examples() {
        let c = p_census(1, 5, &late_half(5)).unwrap();
        assert_eq!((c.ones, c.zeros), (3, 2));
        assert_eq!(p_census(3, 1, &late_half(1)).unwrap().ones, 0);
    }

    #[test]
    fn tau_predictions() {
        let progs = codes::enumerate_programs(13);
        assert_eq!(predict_in(&progs, 1).unwrap(), Prediction::NextBitOne);
        assert!(matches!(predict_in(&progs, 0), Err(BitsError::IndexOutOfRange { .. })));
        assert!(matches!(predict_in(&progs, 16), Err(BitsError::IndexOutOfRange { .. })));
        let looping = codes::encode(
            &codes::CounterMachine::from_instructions(vec![codes::Instruction::DecJz { reg: 1, target: 1 }]).unwrap(),
        )
        .unwrap();
        assert_eq!(predict_in(&[looping], 1).unwrap(), Prediction::NoPrediction);
    }
}
