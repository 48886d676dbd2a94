//! Register machine halting as an exponential Diophantine system.
//!
//! A halting run of `s` steps on input `a` is laid out as `s + 1` rows
//! (row 0 is the initial configuration, row `s` sits at the halt position).
//! Each trace column becomes one number in base `Q = 2^w`, row `t` being
//! digit `t`:
//!
//! * `pc{p}` - indicator digits for "row is at position `p`", for every
//!   instruction and the halt position `n + 1`;
//! * `nz{i}` - for each `DECJZ` at `i`, indicator digits for "took the
//!   decrement branch";
//! * `reg{j}` - the values of register `j`.
//!
//! Control flow and register updates then become linear identities between
//! these numbers and their images under multiplication by `Q` (a shift by
//! one row). Digit masking is not available through `2^x` terms alone, so
//! digit ranges are pinned only by whole-number bounds; see
//! [`CompiledSystem`] for the list. Quantities that may be zero are stored
//! in unknowns offset by one so every unknown is positive.
//!
//! Every halting run yields a solution, but without masking the equations do
//! not pin each digit to its row: a solution may, for instance, take the
//! zero branch of a `DECJZ` on a nonzero register when that still reaches
//! the halt position. [`decode_trace`] re-simulates the machine and is the
//! check that certifies a witness; [`search_witnesses`] applies it to every
//! box solution.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::codes::{CounterMachine, Instruction, MachineState};
use crate::dioph::{self, DiophError, EquationFamily, Polynomial, SearchBox, SolutionReport};

pub const MAX_REGISTERS: usize = 4;
pub const MAX_INSTRUCTIONS: usize = 32;
pub const INPUT: &str = "a";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DprmError {
    #[error("unsupported machine: {0}")]
    UnsupportedInstruction(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("witness fails equation {index} ({name})")]
    NonVerifyingWitness { index: usize, name: String },
    #[error("witness digits do not form a trace: {0}")]
    MalformedDigits(String),
    #[error("decoded row {row} does not follow from the previous row")]
    TraceMismatch { row: usize },
    #[error(transparent)]
    Dioph(#[from] DiophError),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One row of an execution trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub pc: usize,
    pub registers: Vec<BigUint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceTable {
    pub input: u64,
    /// Digit base exponent: `Q = 2^base_exp`.
    pub base_exp: u32,
    pub rows: Vec<TraceRow>,
}

impl TraceTable {
    pub fn steps(&self) -> u64 {
        self.rows.len() as u64 - 1
    }
}

/// Smallest `w` with `2^w > 2 (a + s)`; every register value stays below
/// `Q / 2`.
pub fn base_exponent_for(input: u64, steps: u64) -> u32 {
    let bound = BigUint::from(2u32) * (BigUint::from(input) + BigUint::from(steps));
    (bound.bits() as u32).max(1)
}

/// Simulates on input `a` (in `r1`); `None` if the budget runs out first.
pub fn trace(machine: &CounterMachine, input: u64, budget: u64) -> Option<TraceTable> {
    let mut state = MachineState::initial(machine, &[BigUint::from(input)]);
    let mut rows = vec![TraceRow { pc: state.pc, registers: state.registers.clone() }];
    let mut steps = 0;
    while !state.is_halted(machine) {
        if steps == budget {
            return None;
        }
        state.step(machine);
        steps += 1;
        rows.push(TraceRow { pc: state.pc, registers: state.registers.clone() });
    }
    Some(TraceTable { input, base_exp: base_exponent_for(input, steps), rows })
}

/// Role of an unknown, for manifests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    BaseExponent,
    StepCount,
    LastRowExponent,
    PastEndExponent,
    RowOnes,
    InstructionIndicator(usize),
    NonzeroBranch(usize),
    RegisterDigits(usize),
    FinalRegister(usize),
    Slack(String),
}

impl Role {
    /// Whether the unknown stores its quantity plus one.
    pub fn offset(&self) -> bool {
        matches!(
            self,
            Role::InstructionIndicator(_) | Role::NonzeroBranch(_) | Role::RegisterDigits(_) | Role::FinalRegister(_)
        ) || matches!(self, Role::Slack(s) if s.starts_with("nz_"))
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::BaseExponent => f.write_str("base_exponent"),
            Role::StepCount => f.write_str("step_count"),
            Role::LastRowExponent => f.write_str("last_row_exponent"),
            Role::PastEndExponent => f.write_str("past_end_exponent"),
            Role::RowOnes => f.write_str("row_ones"),
            Role::InstructionIndicator(p) => write!(f, "instruction_indicator L{p} (+1)"),
            Role::NonzeroBranch(i) => write!(f, "nonzero_branch L{i} (+1)"),
            Role::RegisterDigits(j) => write!(f, "register_digits r{j} (+1)"),
            Role::FinalRegister(j) => write!(f, "final_register r{j} (+1)"),
            Role::Slack(what) => write!(f, "slack {what}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedEquation {
    pub name: String,
    pub family: EquationFamily,
}

/// Conjunction of equations over the single parameter `a`.
///
/// Besides the flow and update identities the system demands:
/// `2^w > 2(a + s)`, final register values below `Q/2`, register digit-sums
/// below `(Q/2) * rows`, and each decrement-branch number bounded by its
/// instruction indicator and by the register it tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledSystem {
    pub machine: CounterMachine,
    pub equations: Vec<NamedEquation>,
    pub roles: Vec<(String, Role)>,
    pub combined: EquationFamily,
}

fn pc_name(p: usize) -> String {
    format!("pc{p}")
}
fn nz_name(i: usize) -> String {
    format!("nz{i}")
}
fn reg_name(j: usize) -> String {
    format!("reg{j}")
}
fn fin_name(j: usize) -> String {
    format!("fin{j}")
}

impl CompiledSystem {
    pub fn unknowns(&self) -> Vec<String> {
        self.roles.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn role_of(&self, name: &str) -> Option<&Role> {
        self.roles.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn families(&self) -> Vec<EquationFamily> {
        self.equations.iter().map(|e| e.family.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in self.machine.to_asm().lines() {
            out.push_str(&format!("asm: {line}\n"));
        }
        out.push_str(&format!("params: {INPUT}\n"));
        out.push_str(&format!("unknowns: {}\n", self.unknowns().join(" ")));
        for (name, role) in &self.roles {
            out.push_str(&format!("role: {name} {role}\n"));
        }
        for eq in &self.equations {
            out.push_str(&format!("eq {}: {}\n", eq.name, dioph::poly_to_sexpr(eq.family.poly())));
        }
        out
    }

    /// Reads [`CompiledSystem::to_text`] output; the equations must match
    /// what the embedded machine compiles to.
    pub fn from_text(text: &str) -> Result<Self, DprmError> {
        let mut asm = String::new();
        let mut eqs: Vec<(usize, String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(a) = line.strip_prefix("asm: ") {
                asm.push_str(a);
                asm.push('\n');
            } else if let Some(rest) = line.strip_prefix("eq ") {
                let (name, body) = rest
                    .split_once(':')
                    .ok_or_else(|| DprmError::Parse { line: i + 1, msg: "expected `eq <name>: <sexpr>`".into() })?;
                eqs.push((i + 1, name.trim().to_string(), body.trim().to_string()));
            }
        }
        let machine = CounterMachine::parse_asm(&asm).map_err(|e| DprmError::Parse { line: 0, msg: e.to_string() })?;
        let system = compile(&machine)?;
        if eqs.len() != system.equations.len() {
            return Err(DprmError::Parse { line: 0, msg: "equation count does not match the machine".into() });
        }
        for ((line, name, body), expected) in eqs.iter().zip(&system.equations) {
            let poly = dioph::parse_poly_sexpr(body)?;
            if *name != expected.name || poly != *expected.family.poly() {
                return Err(DprmError::Parse { line: *line, msg: format!("equation {name} does not match the machine") });
            }
        }
        Ok(system)
    }
}

pub fn compile(machine: &CounterMachine) -> Result<CompiledSystem, DprmError> {
    if machine.registers() > MAX_REGISTERS {
        return Err(DprmError::UnsupportedInstruction(format!(
            "{} registers, at most {MAX_REGISTERS}",
            machine.registers()
        )));
    }
    if machine.len() > MAX_INSTRUCTIONS {
        return Err(DprmError::UnsupportedInstruction(format!(
            "{} instructions, at most {MAX_INSTRUCTIONS}",
            machine.len()
        )));
    }
    let n = machine.len();
    let halt = n + 1;
    let decs: Vec<(usize, usize)> = machine
        .instructions()
        .iter()
        .enumerate()
        .filter_map(|(i, ins)| match *ins {
            Instruction::DecJz { reg, .. } => Some((i + 1, reg)),
            _ => None,
        })
        .collect();

    let mut roles: Vec<(String, Role)> = vec![
        ("w".into(), Role::BaseExponent),
        ("s".into(), Role::StepCount),
        ("e_last".into(), Role::LastRowExponent),
        ("e_top".into(), Role::PastEndExponent),
        ("rows".into(), Role::RowOnes),
        ("gap_base".into(), Role::Slack("base_bound".into())),
    ];
    // branch-choice unknowns first: the search enumerates in this order and
    // most other unknowns follow linearly from them
    roles.extend(decs.iter().map(|&(i, _)| (nz_name(i), Role::NonzeroBranch(i))));
    roles.extend((1..=halt).map(|p| (pc_name(p), Role::InstructionIndicator(p))));
    for j in 1..=machine.registers() {
        roles.push((fin_name(j), Role::FinalRegister(j)));
        roles.push((reg_name(j), Role::RegisterDigits(j)));
    }
    for j in 1..=machine.registers() {
        roles.push((format!("gap_fin{j}"), Role::Slack(format!("final_bound r{j}"))));
        roles.push((format!("gap_reg{j}"), Role::Slack(format!("register_bound r{j}"))));
    }
    for &(i, _) in &decs {
        roles.push((format!("gap_nz{i}"), Role::Slack(format!("nz_within_pc L{i} (+1)"))));
        roles.push((format!("gap_zt{i}"), Role::Slack(format!("nz_within_register L{i} (+1)"))));
    }

    let var = |name: &str| Polynomial::var(name);
    let nat = |name: &str| Polynomial::var(name) - Polynomial::constant(1);
    let q = Polynomial::exp2("w");
    let one = Polynomial::constant(1);
    let two = Polynomial::constant(2);

    let mut polys: Vec<(String, Polynomial)> = vec![
        ("exp_last".into(), var("e_last") - var("w") * var("s")),
        ("exp_top".into(), var("e_top") - var("e_last") - var("w")),
        ("row_ones".into(), var("rows") * &q - var("rows") - Polynomial::exp2("e_top") + &one),
        (
            "base_bound".into(),
            &q - &(&two * &var(INPUT)) - (&two * &var("s")) - var("gap_base"),
        ),
    ];
    let pc_sum = (1..=halt).fold(Polynomial::zero(), |acc, p| acc + nat(&pc_name(p)));
    polys.push(("pc_partition".into(), pc_sum - var("rows")));
    polys.push(("halt_last_row".into(), nat(&pc_name(halt)) - Polynomial::exp2("e_last")));

    let mut inflow: BTreeMap<usize, Polynomial> = BTreeMap::new();
    for (idx, ins) in machine.instructions().iter().enumerate() {
        let i = idx + 1;
        let mut add = |p: usize, term: Polynomial| {
            let slot = inflow.entry(p).or_default();
            *slot = &*slot + &term;
        };
        match *ins {
            Instruction::Inc { .. } => add(i + 1, nat(&pc_name(i))),
            Instruction::Halt => add(halt, nat(&pc_name(i))),
            Instruction::DecJz { target, .. } => {
                add(i + 1, nat(&nz_name(i)));
                add(target, nat(&pc_name(i)) - nat(&nz_name(i)));
            }
        }
    }
    for p in 1..=halt {
        let start = if p == 1 { one.clone() } else { Polynomial::zero() };
        let flow = inflow.remove(&p).unwrap_or_default();
        polys.push((format!("pc_flow L{p}"), nat(&pc_name(p)) - start - &q * &flow));
    }

    for j in 1..=machine.registers() {
        let mut delta = nat(&reg_name(j));
        for (idx, ins) in machine.instructions().iter().enumerate() {
            match *ins {
                Instruction::Inc { reg } if reg == j => delta = delta + nat(&pc_name(idx + 1)),
                Instruction::DecJz { reg, .. } if reg == j => delta = delta - nat(&nz_name(idx + 1)),
                _ => {}
            }
        }
        let init = if j == 1 { var(INPUT) } else { Polynomial::zero() };
        polys.push((
            format!("reg_update r{j}"),
            nat(&reg_name(j)) - init - &q * &delta + Polynomial::exp2("e_top") * nat(&fin_name(j)),
        ));
    }
    for j in 1..=machine.registers() {
        polys.push((format!("final_bound r{j}"), &q - &(&two * &nat(&fin_name(j))) - var(&format!("gap_fin{j}"))));
        polys.push((
            format!("register_bound r{j}"),
            &q * &var("rows") - (&two * &nat(&reg_name(j))) - var(&format!("gap_reg{j}")),
        ));
    }
    for &(i, reg) in &decs {
        polys.push((
            format!("nz_within_pc L{i}"),
            nat(&pc_name(i)) - nat(&nz_name(i)) - nat(&format!("gap_nz{i}")),
        ));
        polys.push((
            format!("nz_within_register L{i}"),
            nat(&reg_name(reg)) - nat(&nz_name(i)) - nat(&format!("gap_zt{i}")),
        ));
    }

    let params = vec![INPUT.to_string()];
    let unknowns: Vec<String> = roles.iter().map(|(n, _)| n.clone()).collect();
    let equations = polys
        .into_iter()
        .map(|(name, poly)| {
            EquationFamily::new(poly, params.clone(), unknowns.clone()).map(|family| NamedEquation { name, family })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let combined = combine(&equations.iter().map(|e| e.family.clone()).collect::<Vec<_>>())?;
    Ok(CompiledSystem { machine: machine.clone(), equations, roles, combined })
}

/// Sum of squares of the equations: zero exactly where all of them are.
pub fn combine(equations: &[EquationFamily]) -> Result<EquationFamily, DiophError> {
    let Some(first) = equations.first() else {
        return EquationFamily::new(Polynomial::zero(), vec![], vec![]);
    };
    let sum = equations.iter().fold(Polynomial::zero(), |acc, e| acc + e.poly().square());
    EquationFamily::new(sum, first.params().to_vec(), first.unknowns().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FromTrace,
    FromSearch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub input: u64,
    pub assignment: BTreeMap<String, BigInt>,
    pub provenance: Provenance,
}

impl Witness {
    fn values(&self) -> std::collections::HashMap<String, BigInt> {
        let mut m: std::collections::HashMap<String, BigInt> =
            self.assignment.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        m.insert(INPUT.to_string(), BigInt::from(self.input));
        m
    }

    /// `name = value` lines, input first.
    pub fn to_text(&self) -> String {
        let mut out = format!("{INPUT} = {}\n", self.input);
        for (k, v) in &self.assignment {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn from_text(text: &str, provenance: Provenance) -> Result<Self, DprmError> {
        let mut input = None;
        let mut assignment = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| DprmError::Parse { line: i + 1, msg: msg.to_string() };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `name = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k == INPUT {
                input = Some(v.parse::<u64>().map_err(|_| err("input must be a positive integer"))?);
            } else {
                let value: BigInt = v.parse().map_err(|_| err("value must be an integer"))?;
                assignment.insert(k.to_string(), value);
            }
        }
        let input = input.ok_or(DprmError::Parse { line: 0, msg: format!("missing `{INPUT} = ...` line") })?;
        Ok(Self { input, assignment, provenance })
    }
}

fn digits_to_number(digits: impl DoubleEndedIterator<Item = BigUint>, base_exp: u32) -> BigUint {
    digits.rev().fold(BigUint::zero(), |acc, d| (acc << base_exp as usize) + d)
}

fn check_trace(machine: &CounterMachine, t: &TraceTable) -> Result<(), DprmError> {
    let first = t.rows.first().ok_or_else(|| DprmError::InvalidTrace("no rows".into()))?;
    if t.input == 0 {
        return Err(DprmError::InvalidTrace("input must be positive".into()));
    }
    if *first != (TraceRow { pc: 1, registers: MachineState::initial(machine, &[BigUint::from(t.input)]).registers }) {
        return Err(DprmError::InvalidTrace("row 0 is not the initial configuration".into()));
    }
    for (r, w) in t.rows.windows(2).enumerate() {
        let mut st = MachineState { pc: w[0].pc, registers: w[0].registers.clone() };
        if !st.step(machine) || st.pc != w[1].pc || st.registers != w[1].registers {
            return Err(DprmError::InvalidTrace(format!("row {} does not follow from row {r}", r + 1)));
        }
    }
    if t.rows.last().map(|r| r.pc) != Some(machine.halt_position()) {
        return Err(DprmError::InvalidTrace("last row is not at the halt position".into()));
    }
    if t.rows.len() < 2 {
        return Err(DprmError::InvalidTrace("a halting run takes at least one step".into()));
    }
    let need = base_exponent_for(t.input, t.steps());
    if t.base_exp < need {
        return Err(DprmError::InvalidTrace(format!("base 2^{} too small, need 2^{need}", t.base_exp)));
    }
    Ok(())
}

/// Encodes a halting trace as an assignment to the system's unknowns.
pub fn witness_from_trace(system: &CompiledSystem, t: &TraceTable) -> Result<Witness, DprmError> {
    let machine = &system.machine;
    check_trace(machine, t)?;
    let w = t.base_exp;
    let s = t.steps();
    let q = BigUint::one() << w as usize;
    let rows_val = digits_to_number(t.rows.iter().map(|_| BigUint::one()), w);
    let indicator = |pred: &dyn Fn(usize, &TraceRow) -> bool| {
        digits_to_number(t.rows.iter().enumerate().map(|(r, row)| BigUint::from(pred(r, row) as u8)), w)
    };
    let big = |x: BigUint| BigInt::from(x);
    let mut a: BTreeMap<String, BigInt> = BTreeMap::new();
    a.insert("w".into(), BigInt::from(w));
    a.insert("s".into(), BigInt::from(s));
    a.insert("e_last".into(), BigInt::from(w as u64 * s));
    a.insert("e_top".into(), BigInt::from(w as u64 * (s + 1)));
    a.insert("rows".into(), big(rows_val.clone()));
    a.insert("gap_base".into(), big(&q - BigUint::from(2u32) * (BigUint::from(t.input) + BigUint::from(s))));
    let mut pcs = BTreeMap::new();
    for p in 1..=machine.halt_position() {
        let l = indicator(&|_, row| row.pc == p);
        a.insert(pc_name(p), big(&l + 1u32));
        pcs.insert(p, l);
    }
    let mut regs = BTreeMap::new();
    for j in 1..=machine.registers() {
        let r = digits_to_number(t.rows.iter().map(|row| row.registers[j - 1].clone()), w);
        let fin = t.rows.last().expect("nonempty").registers[j - 1].clone();
        a.insert(reg_name(j), big(&r + 1u32));
        a.insert(fin_name(j), big(&fin + 1u32));
        a.insert(format!("gap_fin{j}"), big(&q - BigUint::from(2u32) * &fin));
        a.insert(format!("gap_reg{j}"), big(&q * &rows_val - BigUint::from(2u32) * &r));
        regs.insert(j, r);
    }
    for (idx, ins) in machine.instructions().iter().enumerate() {
        let i = idx + 1;
        if let Instruction::DecJz { reg, .. } = *ins {
            let nz = indicator(&|r, row| r + 1 < t.rows.len() && row.pc == i && !row.registers[reg - 1].is_zero());
            a.insert(format!("gap_nz{i}"), big(&pcs[&i] - &nz + 1u32));
            a.insert(format!("gap_zt{i}"), big(&regs[&reg] - &nz + 1u32));
            a.insert(nz_name(i), big(nz + 1u32));
        }
    }
    Ok(Witness { input: t.input, assignment: a, provenance: Provenance::FromTrace })
}

/// Index of the first equation the witness does not satisfy.
pub fn first_failure(system: &CompiledSystem, w: &Witness) -> Result<Option<usize>, DprmError> {
    let values = w.values();
    for (i, eq) in system.equations.iter().enumerate() {
        if !eq.family.evaluate(&values)?.is_zero() {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

pub fn verify_witness(system: &CompiledSystem, w: &Witness) -> Result<bool, DprmError> {
    Ok(first_failure(system, w)?.is_none())
}

pub fn verify_combined(system: &CompiledSystem, w: &Witness) -> Result<bool, DprmError> {
    Ok(system.combined.evaluate(&w.values())?.is_zero())
}

fn natural(w: &Witness, name: &str) -> Result<BigUint, DprmError> {
    let v = w
        .assignment
        .get(name)
        .ok_or_else(|| DprmError::Dioph(DiophError::MissingVariable(name.to_string())))?;
    (v - BigInt::one()).to_biguint().ok_or_else(|| DprmError::MalformedDigits(format!("{name} is not positive")))
}

fn exact_u64(w: &Witness, name: &str) -> Result<u64, DprmError> {
    w.assignment
        .get(name)
        .and_then(|v| v.to_u64())
        .ok_or_else(|| DprmError::MalformedDigits(format!("{name} missing or out of range")))
}

fn split_digits(x: &BigUint, base_exp: u32, count: usize, what: &str) -> Result<Vec<BigUint>, DprmError> {
    let mask = (BigUint::one() << base_exp as usize) - 1u32;
    let digits: Vec<BigUint> = (0..count).map(|t| (x >> (t * base_exp as usize)) & &mask).collect();
    if x >> (count * base_exp as usize) != BigUint::zero() {
        return Err(DprmError::MalformedDigits(format!("{what} has digits past the last row")));
    }
    Ok(digits)
}

/// Reads the trace back out of a verifying witness and re-simulates
/// `machine` against it row by row.
pub fn decode_trace(system: &CompiledSystem, machine: &CounterMachine, w: &Witness) -> Result<TraceTable, DprmError> {
    if let Some(index) = first_failure(system, w)? {
        return Err(DprmError::NonVerifyingWitness { index, name: system.equations[index].name.clone() });
    }
    let base_exp = u32::try_from(exact_u64(w, "w")?).map_err(|_| DprmError::MalformedDigits("w too large".into()))?;
    let steps = exact_u64(w, "s")? as usize;
    let nrows = steps + 1;
    let layout = &system.machine;
    let mut pc_digits = Vec::new();
    for p in 1..=layout.halt_position() {
        pc_digits.push(split_digits(&natural(w, &pc_name(p))?, base_exp, nrows, &pc_name(p))?);
    }
    let mut reg_digits = Vec::new();
    for j in 1..=layout.registers() {
        reg_digits.push(split_digits(&natural(w, &reg_name(j))?, base_exp, nrows, &reg_name(j))?);
    }
    let mut rows = Vec::with_capacity(nrows);
    for t in 0..nrows {
        let mut at = None;
        for (p, digits) in pc_digits.iter().enumerate() {
            match digits[t].to_u8() {
                Some(0) => {}
                Some(1) if at.is_none() => at = Some(p + 1),
                _ => return Err(DprmError::MalformedDigits(format!("row {t} has no single position indicator"))),
            }
        }
        let pc = at.ok_or_else(|| DprmError::MalformedDigits(format!("row {t} has no position")))?;
        rows.push(TraceRow { pc, registers: reg_digits.iter().map(|d| d[t].clone()).collect() });
    }
    let table = TraceTable { input: w.input, base_exp, rows };

    if machine.registers() != layout.registers() || machine.halt_position() != layout.halt_position() {
        return Err(DprmError::TraceMismatch { row: 0 });
    }
    let init = MachineState::initial(machine, &[BigUint::from(w.input)]);
    if table.rows[0].pc != init.pc || table.rows[0].registers != init.registers {
        return Err(DprmError::TraceMismatch { row: 0 });
    }
    for r in 1..table.rows.len() {
        let prev = &table.rows[r - 1];
        let mut st = MachineState { pc: prev.pc, registers: prev.registers.clone() };
        if !st.step(machine) || st.pc != table.rows[r].pc || st.registers != table.rows[r].registers {
            return Err(DprmError::TraceMismatch { row: r });
        }
    }
    if table.rows.last().map(|r| r.pc) != Some(machine.halt_position()) {
        return Err(DprmError::TraceMismatch { row: table.rows.len() - 1 });
    }
    Ok(table)
}

/// Search bounds for a boxed witness search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WitnessBounds {
    pub max_w: u64,
    pub max_s: u64,
    /// Upper bound for every unknown that is not an exponent.
    pub max_value: u64,
}

impl WitnessBounds {
    pub fn search_box(&self, system: &CompiledSystem) -> SearchBox {
        SearchBox::new(
            system
                .roles
                .iter()
                .map(|(_, role)| match role {
                    Role::BaseExponent => 1..=self.max_w,
                    Role::StepCount => 1..=self.max_s,
                    Role::LastRowExponent => 1..=self.max_w * self.max_s,
                    Role::PastEndExponent => 1..=self.max_w * (self.max_s + 1),
                    _ => 1..=self.max_value,
                })
                .collect(),
        )
    }
}

/// Result of a boxed witness search. Every box solution is decoded;
/// `certified` holds those that decode to a run of the machine and
/// `rejected` the rest with the decoding error.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub report: SolutionReport,
    pub certified: Vec<Witness>,
    pub rejected: Vec<(Witness, DprmError)>,
}

/// Exhaustive witness search over the box given by `bounds`.
pub fn search_witnesses(
    system: &CompiledSystem,
    input: u64,
    bounds: WitnessBounds,
    node_limit: Option<u64>,
) -> Result<SearchOutcome, DprmError> {
    let bx = bounds.search_box(system);
    let report = dioph::solve_system_in_box(&system.families(), &[input], &bx, node_limit)?;
    let names = system.unknowns();
    let mut certified = Vec::new();
    let mut rejected = Vec::new();
    for sol in &report.solutions {
        let w = Witness {
            input,
            assignment: names.iter().cloned().zip(sol.iter().map(|&v| BigInt::from(v))).collect(),
            provenance: Provenance::FromSearch,
        };
        match decode_trace(system, &system.machine, &w) {
            Ok(_) => certified.push(w),
            Err(e) => rejected.push((w, e)),
        }
    }
    Ok(SearchOutcome { report, certified, rejected })
}

/// All `±1` single-component perturbations that stay positive.
pub fn perturbations(w: &Witness) -> Vec<(String, Witness)> {
    let mut out = Vec::new();
    for (k, v) in &w.assignment {
        for delta in [-1i32, 1] {
            let nv = v + delta;
            if !nv.is_positive() {
                continue;
            }
            let mut p = w.clone();
            p.assignment.insert(k.clone(), nv);
            out.push((format!("{k}{delta:+}"), p));
        }
    }
    out
}

/// Digit `t` of `x` in base `2^base_exp`.
pub fn digit_at(x: &BigUint, base_exp: u32, t: usize) -> BigUint {
    (x >> (t * base_exp as usize)) & ((BigUint::one() << base_exp as usize) - 1u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asm(text: &str) -> CounterMachine {
        CounterMachine::parse_asm(text).unwrap()
    }

    fn halt_only() -> CounterMachine {
        asm("HALT\n")
    }

    fn even() -> CounterMachine {
        asm("L1: DECJZ r1 L4\nDECJZ r1 L5\nDECJZ r2 L1\nL4: HALT\nL5: DECJZ r2 L5\n")
    }

    #[test]
    fn base_exponent() {
        // 2^w > 2(a+s)
        assert_eq!(base_exponent_for(1, 1), 3);
        assert_eq!(base_exponent_for(2, 5), 4);
        assert_eq!(base_exponent_for(3, 5), 5);
    }

    #[test]
    fn halt_only_witnesses() {
        let sys = compile(&halt_only()).unwrap();
        for a in 1..=5 {
            let t = trace(&sys.machine, a, 10).unwrap();
            assert_eq!(t.steps(), 1);
            let w = witness_from_trace(&sys, &t).unwrap();
            assert!(verify_witness(&sys, &w).unwrap());
            assert!(verify_combined(&sys, &w).unwrap());
            let q = 1u64 << t.base_exp;
            // register r1 holds a in both rows
            assert_eq!(w.assignment["reg1"], BigInt::from(a + a * q + 1));
            assert_eq!(decode_trace(&sys, &sys.machine, &w).unwrap(), t);
        }
    }

    #[test]
    fn even_machine() {
        let sys = compile(&even()).unwrap();
        for a in 1..=6u64 {
            match trace(&sys.machine, a, 1000) {
                Some(t) => {
                    assert_eq!(a % 2, 0);
                    let w = witness_from_trace(&sys, &t).unwrap();
                    assert!(verify_witness(&sys, &w).unwrap());
                    assert_eq!(decode_trace(&sys, &sys.machine, &w).unwrap(), t);
                }
                None => assert_eq!(a % 2, 1),
            }
        }
    }

    #[test]
    fn perturbation_breaks_verification() {
        let sys = compile(&even()).unwrap();
        let w = witness_from_trace(&sys, &trace(&sys.machine, 4, 1000).unwrap()).unwrap();
        for (label, p) in perturbations(&w) {
            assert!(!verify_witness(&sys, &p).unwrap(), "{label} still verifies");
        }
    }

    #[test]
    fn all_ones_fails() {
        let sys = compile(&even()).unwrap();
        let w = Witness {
            input: 2,
            assignment: sys.unknowns().into_iter().map(|n| (n, BigInt::one())).collect(),
            provenance: Provenance::FromSearch,
        };
        assert!(!verify_witness(&sys, &w).unwrap());
        assert!(!verify_combined(&sys, &w).unwrap());
    }

    #[test]
    fn wrong_machine_decode() {
        let sys = compile(&even()).unwrap();
        let w = witness_from_trace(&sys, &trace(&sys.machine, 2, 1000).unwrap()).unwrap();
        // same shape, different jump: first instruction now branches to L5
        let other = asm("L1: DECJZ r1 L5\nDECJZ r1 L5\nDECJZ r2 L1\nHALT\nL5: DECJZ r2 L5\n");
        assert!(matches!(decode_trace(&sys, &other, &w), Err(DprmError::TraceMismatch { .. })));
        let mut bad = w.clone();
        *bad.assignment.get_mut("s").unwrap() += 1;
        assert!(matches!(decode_trace(&sys, &sys.machine, &bad), Err(DprmError::NonVerifyingWitness { .. })));
    }

    #[test]
    fn invalid_traces_rejected() {
        let sys = compile(&even()).unwrap();
        let mut t = trace(&sys.machine, 2, 1000).unwrap();
        t.rows[2].registers[0] += 1u32;
        assert!(matches!(witness_from_trace(&sys, &t), Err(DprmError::InvalidTrace(_))));
        let mut small = trace(&sys.machine, 2, 1000).unwrap();
        small.base_exp = 2;
        assert!(witness_from_trace(&sys, &small).is_err());
    }

    #[test]
    fn limits() {
        let wide = CounterMachine::new(5, vec![Instruction::Halt]).unwrap();
        assert!(matches!(compile(&wide), Err(DprmError::UnsupportedInstruction(_))));
        let long = CounterMachine::from_instructions(vec![Instruction::Inc { reg: 1 }; 33]).unwrap();
        assert!(compile(&long).is_err());
    }

    #[test]
    fn only_parameter_is_input() {
        let sys = compile(&even()).unwrap();
        for eq in &sys.equations {
            assert_eq!(eq.family.params(), [INPUT]);
        }
        assert_eq!(sys.combined.params(), [INPUT]);
    }

    #[test]
    fn combine_edge_cases() {
        let empty = combine(&[]).unwrap();
        assert!(empty.poly().is_zero());
        let single = EquationFamily::with(Polynomial::var("x1") - Polynomial::constant(3), &[], &["x1"]).unwrap();
        let c = combine(std::slice::from_ref(&single)).unwrap();
        assert_eq!(c.degree(), 2 * single.degree());
        let bx = SearchBox::cube(1, 9);
        assert_eq!(dioph::solve_in_box(&c, &[], &bx).unwrap(), dioph::solve_in_box(&single, &[], &bx).unwrap());
    }

    #[test]
    fn system_text_round_trip() {
        let sys = compile(&even()).unwrap();
        let text = sys.to_text();
        assert!(text.contains("role: reg2 register_digits r2 (+1)"));
        assert_eq!(CompiledSystem::from_text(&text).unwrap(), sys);
        let tampered = text.replacen("(* -1 (^ rows 1))", "(* -2 (^ rows 1))", 1);
        assert!(CompiledSystem::from_text(&tampered).is_err());
        let w = witness_from_trace(&sys, &trace(&sys.machine, 2, 100).unwrap()).unwrap();
        assert_eq!(Witness::from_text(&w.to_text(), Provenance::FromTrace).unwrap(), w);
    }

    #[test]
    fn halt_only_search_finds_trace_witness() {
        let sys = compile(&halt_only()).unwrap();
        let bounds = WitnessBounds { max_w: 4, max_s: 3, max_value: 300 };
        let out = search_witnesses(&sys, 1, bounds, None).unwrap();
        assert!(out.report.exhausted);
        let from_trace = witness_from_trace(&sys, &trace(&sys.machine, 1, 10).unwrap()).unwrap();
        assert!(out.certified.iter().any(|w| w.assignment == from_trace.assignment));
        assert!(out.rejected.is_empty());
        // any larger base also works, so the representation is not singlefold
        let bases: Vec<&BigInt> = out.certified.iter().map(|w| &w.assignment["w"]).collect();
        assert_eq!(bases, [&BigInt::from(3), &BigInt::from(4)]);
    }

    #[test]
    fn zero_branch_taken_on_nonzero_register_verifies_but_does_not_decode() {
        // both branches of the DECJZ lead to the halt position
        let sys = compile(&asm("DECJZ r1 L2\nL2:\n")).unwrap();
        let q = 8;
        let vals: [(&str, i64); 15] = [
            ("w", 3),
            ("s", 1),
            ("e_last", 3),
            ("e_top", 6),
            ("rows", 1 + q),
            ("gap_base", 4),
            ("nz1", 1),
            ("pc1", 2),
            ("pc2", q + 1),
            ("fin1", 2),
            ("reg1", 1 + q + 1),
            ("gap_fin1", 6),
            ("gap_reg1", q * (1 + q) - 2 * (1 + q)),
            ("gap_nz1", 2),
            ("gap_zt1", q + 2),
        ];
        let w = Witness {
            input: 1,
            assignment: vals.iter().map(|(k, v)| (k.to_string(), BigInt::from(*v))).collect(),
            provenance: Provenance::FromSearch,
        };
        assert!(verify_witness(&sys, &w).unwrap());
        assert!(matches!(decode_trace(&sys, &sys.machine, &w), Err(DprmError::TraceMismatch { row: 1 })));
        let out = search_witnesses(&sys, 1, WitnessBounds { max_w: 3, max_s: 1, max_value: 80 }, None).unwrap();
        assert_eq!(out.certified.len(), 1);
        assert!(out.rejected.iter().any(|(r, _)| r.assignment == w.assignment));
    }
}
