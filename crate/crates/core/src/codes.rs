//! Self-delimiting program codes for a toy counter machine.
//!
//! A code word is a unary length header (`L` ones followed by a zero) and an
//! `L`-bit body. The body starts with a 4-bit arity nibble and is followed by
//! instructions, MSB first:
//!
//! | opcode | meaning | fields                                   |
//! |--------|---------|------------------------------------------|
//! | `00`   | `INC`   | register (`reg_width` bits)              |
//! | `01`   | `DECJZ` | register (`reg_width` bits), target (8)  |
//! | `10`   | `HALT`  | none                                     |
//!
//! `reg_width = ceil(log2(arity + 1))`. Registers are numbered from 1 and
//! targets are absolute 1-based instruction indices, where `len + 1` is the
//! halt position. Any body that does not parse exactly is not a program.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

pub const ARITY_BITS: usize = 4;
pub const OPCODE_BITS: usize = 2;
pub const TARGET_BITS: usize = 8;
pub const MAX_ARITY: usize = 15;
pub const MAX_TARGET: usize = (1 << TARGET_BITS) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("malformed program code: {0}")]
    MalformedCode(&'static str),
    #[error("machine does not fit the instruction table: {0}")]
    EncodingOverflow(String),
    #[error("ill-formed machine: {0}")]
    InvalidMachine(String),
    #[error("assembly error on line {line}: {msg}")]
    Assembly { line: usize, msg: String },
    #[error("invalid bitstring character {0:?}")]
    InvalidBit(char),
}

/// Finite bitstring, ordered shorter-first and then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Bitstring(Vec<bool>);

impl Bitstring {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    /// Appends the low `width` bits of `value`, MSB first.
    pub fn push_uint(&mut self, value: usize, width: usize) {
        for shift in (0..width).rev() {
            self.0.push((value >> shift) & 1 == 1);
        }
    }

    pub fn is_prefix_of(&self, other: &Bitstring) -> bool {
        self.len() <= other.len() && other.0[..self.len()] == self.0[..]
    }

    /// The `len`-bit string spelling `value` in binary.
    pub fn from_uint(value: u64, len: usize) -> Self {
        let mut b = Bitstring::new();
        b.0.reserve(len);
        for shift in (0..len).rev() {
            b.0.push((value >> shift) & 1 == 1);
        }
        b
    }

    pub fn to_biguint(&self) -> BigUint {
        let mut v = BigUint::zero();
        for &bit in &self.0 {
            v <<= 1u32;
            if bit {
                v += 1u32;
            }
        }
        v
    }

    /// Binary spelling without leading zeros; zero is the empty string.
    pub fn from_biguint(v: &BigUint) -> Self {
        if v.is_zero() {
            return Bitstring::new();
        }
        let bits = v.bits();
        Self((0..bits).rev().map(|i| v.bit(i)).collect())
    }
}

impl Ord for Bitstring {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len().cmp(&other.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Bitstring {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = CodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(CodeError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Bitstring)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Inc { reg: usize },
    DecJz { reg: usize, target: usize },
    Halt,
}

/// Counter machine over registers `r1..=r<registers>`; execution starts at
/// instruction 1 and stops at `HALT` or on reaching position `len + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CounterMachine {
    registers: usize,
    instructions: Vec<Instruction>,
}

impl CounterMachine {
    pub fn new(registers: usize, instructions: Vec<Instruction>) -> Result<Self, CodeError> {
        if registers == 0 {
            return Err(CodeError::InvalidMachine("register count must be at least 1".into()));
        }
        if instructions.is_empty() {
            return Err(CodeError::InvalidMachine("machine has no instructions".into()));
        }
        let halt_pos = instructions.len() + 1;
        for (i, ins) in instructions.iter().enumerate() {
            let reg = match *ins {
                Instruction::Inc { reg } => reg,
                Instruction::DecJz { reg, target } => {
                    if target == 0 || target > halt_pos {
                        return Err(CodeError::InvalidMachine(format!(
                            "instruction {} jumps to {target}, outside 1..={halt_pos}",
                            i + 1
                        )));
                    }
                    reg
                }
                Instruction::Halt => continue,
            };
            if reg == 0 || reg > registers {
                return Err(CodeError::InvalidMachine(format!(
                    "instruction {} uses r{reg}, outside r1..=r{registers}",
                    i + 1
                )));
            }
        }
        Ok(Self { registers, instructions })
    }

    /// Register count is the highest register mentioned (at least 1).
    pub fn from_instructions(instructions: Vec<Instruction>) -> Result<Self, CodeError> {
        let registers = instructions
            .iter()
            .filter_map(|i| match *i {
                Instruction::Inc { reg } | Instruction::DecJz { reg, .. } => Some(reg),
                Instruction::Halt => None,
            })
            .max()
            .unwrap_or(1)
            .max(1);
        Self::new(registers, instructions)
    }

    pub fn registers(&self) -> usize {
        self.registers
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn halt_position(&self) -> usize {
        self.instructions.len() + 1
    }

    /// Instruction at 1-based position `pc`, or `None` at the halt position.
    pub fn instruction(&self, pc: usize) -> Option<Instruction> {
        pc.checked_sub(1).and_then(|i| self.instructions.get(i)).copied()
    }

    /// Parses the line-oriented assembly format. An optional `.registers N`
    /// line declares more registers than the instructions mention.
    pub fn parse_asm(text: &str) -> Result<Self, CodeError> {
        let mut labels: BTreeMap<String, usize> = BTreeMap::new();
        let mut pending: Vec<(usize, Vec<String>)> = Vec::new();
        let mut declared = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split([';', '#']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(n) = line.strip_prefix(".registers") {
                let n = n.trim().parse::<usize>().map_err(|_| CodeError::Assembly {
                    line: lineno + 1,
                    msg: "expected `.registers <count>`".into(),
                })?;
                declared = Some(n);
                continue;
            }
            let mut rest = line;
            while let Some(colon) = rest.find(':') {
                let label = rest[..colon].trim();
                if !is_label(label) {
                    return Err(CodeError::Assembly { line: lineno + 1, msg: format!("bad label {label:?}") });
                }
                if labels.insert(label.to_string(), pending.len() + 1).is_some() {
                    return Err(CodeError::Assembly { line: lineno + 1, msg: format!("duplicate label {label}") });
                }
                rest = rest[colon + 1..].trim();
            }
            if rest.is_empty() {
                continue;
            }
            pending.push((lineno + 1, rest.split_whitespace().map(str::to_string).collect()));
        }
        let mut instructions = Vec::with_capacity(pending.len());
        for (line, words) in &pending {
            let err = |msg: String| CodeError::Assembly { line: *line, msg };
            let ins = match words.as_slice() {
                [op] if op.eq_ignore_ascii_case("HALT") => Instruction::Halt,
                [op, r] if op.eq_ignore_ascii_case("INC") => Instruction::Inc { reg: parse_reg(r).map_err(err)? },
                [op, r, l] if op.eq_ignore_ascii_case("DECJZ") => {
                    let reg = parse_reg(r).map_err(err)?;
                    let target = *labels.get(l.as_str()).ok_or_else(|| err(format!("undefined label {l}")))?;
                    Instruction::DecJz { reg, target }
                }
                _ => return Err(err(format!("cannot parse {:?}", words.join(" ")))),
            };
            instructions.push(ins);
        }
        match declared {
            Some(n) => Self::new(n, instructions),
            None => Self::from_instructions(instructions),
        }
    }

    /// Renders the machine as assembly; targeted positions get `L<index>:` labels.
    pub fn to_asm(&self) -> String {
        let targets: Vec<usize> = self
            .instructions
            .iter()
            .filter_map(|i| match *i {
                Instruction::DecJz { target, .. } => Some(target),
                _ => None,
            })
            .collect();
        let mut out = String::new();
        if Self::from_instructions(self.instructions.clone()).map_or(true, |m| m.registers != self.registers) {
            out.push_str(&format!(".registers {}\n", self.registers));
        }
        for (i, ins) in self.instructions.iter().enumerate() {
            let pos = i + 1;
            if targets.contains(&pos) {
                out.push_str(&format!("L{pos}: "));
            }
            match *ins {
                Instruction::Inc { reg } => out.push_str(&format!("INC r{reg}\n")),
                Instruction::DecJz { reg, target } => out.push_str(&format!("DECJZ r{reg} L{target}\n")),
                Instruction::Halt => out.push_str("HALT\n"),
            }
        }
        let end = self.halt_position();
        if targets.contains(&end) {
            out.push_str(&format!("L{end}:\n"));
        }
        out
    }
}

fn is_label(s: &str) -> bool {
    s.len() > 1 && s.starts_with('L') && s[1..].chars().all(|c| c.is_ascii_digit())
}

fn parse_reg(s: &str) -> Result<usize, String> {
    s.strip_prefix('r')
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&r| r >= 1)
        .ok_or_else(|| format!("bad register {s:?}"))
}

/// Bits needed for a register field under the given arity.
pub fn reg_width(arity: usize) -> usize {
    let mut w = 0;
    while (1usize << w) < arity + 1 {
        w += 1;
    }
    w
}

/// A valid code word paired with the machine it decodes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramCode {
    pub bits: Bitstring,
    pub machine: CounterMachine,
}

impl ProgramCode {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

pub fn encode(machine: &CounterMachine) -> Result<ProgramCode, CodeError> {
    let arity = machine.registers();
    if arity > MAX_ARITY {
        return Err(CodeError::EncodingOverflow(format!("{arity} registers, at most {MAX_ARITY}")));
    }
    let rw = reg_width(arity);
    let mut body = Bitstring::new();
    body.push_uint(arity, ARITY_BITS);
    for ins in machine.instructions() {
        match *ins {
            Instruction::Inc { reg } => {
                body.push_uint(0b00, OPCODE_BITS);
                body.push_uint(reg, rw);
            }
            Instruction::DecJz { reg, target } => {
                if target > MAX_TARGET {
                    return Err(CodeError::EncodingOverflow(format!("jump target {target} exceeds {MAX_TARGET}")));
                }
                body.push_uint(0b01, OPCODE_BITS);
                body.push_uint(reg, rw);
                body.push_uint(target, TARGET_BITS);
            }
            Instruction::Halt => body.push_uint(0b10, OPCODE_BITS),
        }
    }
    let mut bits = Bitstring::from_bits(vec![true; body.len()]);
    bits.push(false);
    bits.0.extend_from_slice(body.bits());
    Ok(ProgramCode { bits, machine: machine.clone() })
}

struct Reader<'a> {
    bits: &'a [bool],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, width: usize) -> Option<usize> {
        if self.pos + width > self.bits.len() {
            return None;
        }
        let v = self.bits[self.pos..self.pos + width]
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize);
        self.pos += width;
        Some(v)
    }

    fn done(&self) -> bool {
        self.pos == self.bits.len()
    }
}

pub fn decode(bits: &Bitstring) -> Result<CounterMachine, CodeError> {
    let raw = bits.bits();
    let body_len = raw.iter().take_while(|&&b| b).count();
    if body_len == raw.len() {
        return Err(CodeError::MalformedCode("header has no terminating zero"));
    }
    let body = &raw[body_len + 1..];
    match body.len().cmp(&body_len) {
        Ordering::Less => return Err(CodeError::MalformedCode("body shorter than declared length")),
        Ordering::Greater => return Err(CodeError::MalformedCode("trailing bits after body")),
        Ordering::Equal => {}
    }
    let mut rd = Reader { bits: body, pos: 0 };
    let arity = rd.take(ARITY_BITS).ok_or(CodeError::MalformedCode("body too short for arity"))?;
    if arity == 0 {
        return Err(CodeError::MalformedCode("arity zero"));
    }
    let rw = reg_width(arity);
    let mut instructions = Vec::new();
    while !rd.done() {
        let truncated = CodeError::MalformedCode("truncated instruction");
        let ins = match rd.take(OPCODE_BITS).ok_or(truncated.clone())? {
            0b00 => Instruction::Inc { reg: rd.take(rw).ok_or(truncated)? },
            0b01 => {
                let reg = rd.take(rw).ok_or(truncated.clone())?;
                let target = rd.take(TARGET_BITS).ok_or(truncated)?;
                Instruction::DecJz { reg, target }
            }
            0b10 => Instruction::Halt,
            _ => return Err(CodeError::MalformedCode("reserved opcode 11")),
        };
        instructions.push(ins);
    }
    CounterMachine::new(arity, instructions).map_err(|_| CodeError::MalformedCode("operand out of range"))
}

/// All valid codes of length at most `max_len`, shortest first and then
/// lexicographic.
///
/// Codes are built by composing instruction fields directly rather than by
/// filtering every candidate string.
pub fn enumerate_programs(max_len: usize) -> Vec<ProgramCode> {
    let mut out = Vec::new();
    if max_len < 2 {
        return out;
    }
    // total length is 2L + 1 for an L-bit body
    let max_body = (max_len - 1) / 2;
    for arity in 1..=MAX_ARITY {
        let rw = reg_width(arity);
        let mut prefix = Vec::new();
        compose(arity, rw, max_body.saturating_sub(ARITY_BITS), &mut prefix, &mut out);
    }
    out.sort_by(|a, b| a.bits.cmp(&b.bits));
    out
}

fn compose(arity: usize, rw: usize, budget: usize, prefix: &mut Vec<Instruction>, out: &mut Vec<ProgramCode>) {
    if !prefix.is_empty() {
        if let Ok(m) = CounterMachine::new(arity, prefix.clone()) {
            if let Ok(code) = encode(&m) {
                out.push(code);
            }
        }
    }
    if budget >= OPCODE_BITS {
        prefix.push(Instruction::Halt);
        compose(arity, rw, budget - OPCODE_BITS, prefix, out);
        prefix.pop();
    }
    let inc = OPCODE_BITS + rw;
    if budget >= inc {
        for reg in 1..=arity {
            prefix.push(Instruction::Inc { reg });
            compose(arity, rw, budget - inc, prefix, out);
            prefix.pop();
        }
    }
    let dec = OPCODE_BITS + rw + TARGET_BITS;
    if budget >= dec {
        for reg in 1..=arity {
            for target in 1..=MAX_TARGET {
                // targets beyond the final halt position can never validate
                if target > prefix.len() + 2 + (budget - dec) / OPCODE_BITS {
                    break;
                }
                prefix.push(Instruction::DecJz { reg, target });
                compose(arity, rw, budget - dec, prefix, out);
                prefix.pop();
            }
        }
    }
}

pub fn is_prefix_free<'a, I>(codes: I) -> bool
where
    I: IntoIterator<Item = &'a Bitstring>,
{
    let mut sorted: Vec<&Bitstring> = codes.into_iter().collect();
    // Under plain lexicographic order a prefix sorts immediately before some
    // extension of it, so neighbours suffice.
    sorted.sort_by(|a, b| a.bits().cmp(b.bits()));
    sorted.dedup();
    sorted.windows(2).all(|w| !w[0].is_prefix_of(w[1]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Halted { steps: u64, output: Bitstring },
    OutOfBudget(u64),
}

impl RunOutcome {
    pub fn halted(&self) -> bool {
        matches!(self, RunOutcome::Halted { .. })
    }

    pub fn steps(&self) -> Option<u64> {
        match self {
            RunOutcome::Halted { steps, .. } => Some(*steps),
            RunOutcome::OutOfBudget(_) => None,
        }
    }
}

/// Machine configuration between steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub pc: usize,
    pub registers: Vec<BigUint>,
}

impl MachineState {
    pub fn initial(machine: &CounterMachine, inputs: &[BigUint]) -> Self {
        let mut registers = vec![BigUint::zero(); machine.registers()];
        for (slot, v) in registers.iter_mut().zip(inputs) {
            *slot = v.clone();
        }
        Self { pc: 1, registers }
    }

    pub fn is_halted(&self, machine: &CounterMachine) -> bool {
        self.pc == machine.halt_position()
    }

    /// Executes one instruction. Returns `false` if already halted.
    pub fn step(&mut self, machine: &CounterMachine) -> bool {
        let Some(ins) = machine.instruction(self.pc) else {
            return false;
        };
        match ins {
            Instruction::Inc { reg } => {
                self.registers[reg - 1] += 1u32;
                self.pc += 1;
            }
            Instruction::DecJz { reg, target } => {
                let r = &mut self.registers[reg - 1];
                if r.is_zero() {
                    self.pc = target;
                } else {
                    *r -= 1u32;
                    self.pc += 1;
                }
            }
            Instruction::Halt => self.pc = machine.halt_position(),
        }
        true
    }
}

/// Runs on a bitstring input: empty input leaves every register at zero,
/// otherwise `r1` starts at the input read in binary plus one. The output is
/// `r1` in binary at halt.
pub fn run(machine: &CounterMachine, input: &Bitstring, budget: u64) -> RunOutcome {
    let inputs = if input.is_empty() {
        Vec::new()
    } else {
        vec![input.to_biguint() + BigUint::one()]
    };
    run_registers(machine, &inputs, budget)
}

pub fn run_registers(machine: &CounterMachine, inputs: &[BigUint], budget: u64) -> RunOutcome {
    let mut state = MachineState::initial(machine, inputs);
    let mut steps = 0u64;
    while !state.is_halted(machine) {
        if steps == budget {
            return RunOutcome::OutOfBudget(budget);
        }
        state.step(machine);
        steps += 1;
    }
    RunOutcome::Halted { steps, output: Bitstring::from_biguint(&state.registers[0]) }
}

/// True iff the control-flow graph over all instructions is acyclic.
pub fn provably_halts_structurally(machine: &CounterMachine) -> bool {
    let n = machine.len();
    let succ = |pc: usize| -> Vec<usize> {
        match machine.instruction(pc) {
            Some(Instruction::Inc { .. }) => vec![pc + 1],
            Some(Instruction::DecJz { target, .. }) => vec![pc + 1, target],
            Some(Instruction::Halt) | None => vec![],
        }
    };
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; n + 2];
    for start in 1..=n {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, succ(start), 0usize)];
        color[start] = 1;
        while let Some((node, next, idx)) = stack.last_mut() {
            if *idx < next.len() {
                let child = next[*idx];
                *idx += 1;
                if child > n {
                    continue;
                }
                match color[child] {
                    1 => return false,
                    0 => {
                        color[child] = 1;
                        let s = succ(child);
                        stack.push((child, s, 0));
                    }
                    _ => {}
                }
            } else {
                color[*node] = 2;
                stack.pop();
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(ins: Vec<Instruction>) -> CounterMachine {
        CounterMachine::from_instructions(ins).unwrap()
    }

    fn bs(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    #[test]
    fn halt_round_trip() {
        let halt = m(vec![Instruction::Halt]);
        let code = encode(&halt).unwrap();
        // body: arity 0001, HALT 10
        assert_eq!(code.bits.to_string(), "1111110000110");
        assert_eq!(decode(&code.bits).unwrap(), halt);
    }

    #[test]
    fn inc_halt_bits_by_hand() {
        let code = encode(&m(vec![Instruction::Inc { reg: 1 }, Instruction::Halt])).unwrap();
        // arity 0001, INC r1 = 00 1, HALT = 10; body 9 bits
        assert_eq!(code.bits.to_string(), "1111111110000100110");
        assert_eq!(code.len(), 10 + 9);
    }

    #[test]
    fn decjz_encoding() {
        let mach = m(vec![Instruction::Inc { reg: 1 }, Instruction::DecJz { reg: 2, target: 1 }]);
        let code = encode(&mach).unwrap();
        // arity 2 -> reg width 2: 0010 | 00 01 | 01 10 00000001
        let body = "0010" .to_string() + "0001" + "0110" + "00000001";
        assert_eq!(code.bits.to_string(), "1".repeat(body.len()) + "0" + &body);
        assert_eq!(decode(&code.bits).unwrap(), mach);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(&Bitstring::new()), Err(CodeError::MalformedCode(_))));
        assert!(matches!(decode(&bs("11110101")), Err(CodeError::MalformedCode(_))));
        assert!(matches!(decode(&bs("111111000011")), Err(CodeError::MalformedCode(_))));
        // arity 0
        assert!(decode(&bs("1111110000010")).is_err());
        // reserved opcode
        assert!(decode(&bs("1111110000111")).is_err());
    }

    #[test]
    fn distinct_codes_not_prefixes() {
        let a = encode(&m(vec![Instruction::Halt])).unwrap();
        let b = encode(&m(vec![Instruction::Halt, Instruction::Halt])).unwrap();
        assert!(!a.bits.is_prefix_of(&b.bits) && !b.bits.is_prefix_of(&a.bits));
    }

    #[test]
    fn prefix_free_examples() {
        assert!(is_prefix_free(&[bs("0"), bs("10"), bs("11")]));
        assert!(!is_prefix_free(&[bs("0"), bs("01")]));
        assert!(!is_prefix_free(&[bs("10"), bs("0"), bs("1011")]));
    }

    #[test]
    fn enumeration_small() {
        // shortest code: 6-bit body (arity nibble + HALT) behind a 7-bit header
        assert!(enumerate_programs(12).is_empty());
        let p13 = enumerate_programs(13);
        assert_eq!(p13.len(), 15, "HALT under each arity 1..=15");
        assert!(p13.iter().all(|p| p.len() == 13));
        let p21 = enumerate_programs(21);
        assert!(p21.windows(2).all(|w| w[0].bits < w[1].bits));
        assert!(is_prefix_free(p21.iter().map(|p| &p.bits)));
    }

    #[test]
    fn run_examples() {
        let halt = m(vec![Instruction::Halt]);
        assert_eq!(run(&halt, &Bitstring::new(), 10), RunOutcome::Halted { steps: 1, output: Bitstring::new() });

        let looping = m(vec![Instruction::Inc { reg: 1 }, Instruction::DecJz { reg: 2, target: 1 }]);
        assert_eq!(run(&looping, &Bitstring::new(), 100), RunOutcome::OutOfBudget(100));

        let two = m(vec![Instruction::Inc { reg: 1 }, Instruction::Inc { reg: 1 }, Instruction::Halt]);
        assert_eq!(run(&two, &Bitstring::new(), 2), RunOutcome::OutOfBudget(2));
        assert_eq!(run(&two, &Bitstring::new(), 3), RunOutcome::Halted { steps: 3, output: bs("10") });
    }

    #[test]
    fn input_preload() {
        // input "1" -> r1 = 1 + 1 = 2; drain r1 into nothing
        let drain = m(vec![Instruction::DecJz { reg: 1, target: 3 }, Instruction::DecJz { reg: 2, target: 1 }]);
        let out = run(&drain, &bs("1"), 100);
        // 2 decrements (2 steps each) + final zero test
        assert_eq!(out.steps(), Some(5));
    }

    #[test]
    fn falling_off_the_end_halts() {
        let inc = m(vec![Instruction::Inc { reg: 1 }]);
        assert_eq!(run(&inc, &Bitstring::new(), 5), RunOutcome::Halted { steps: 1, output: bs("1") });
    }

    #[test]
    fn structural_analysis() {
        assert!(provably_halts_structurally(&m(vec![Instruction::Halt])));
        assert!(!provably_halts_structurally(&m(vec![
            Instruction::Inc { reg: 1 },
            Instruction::DecJz { reg: 1, target: 1 }
        ])));
        assert!(provably_halts_structurally(&m(vec![
            Instruction::DecJz { reg: 1, target: 3 },
            Instruction::Inc { reg: 1 },
            Instruction::Halt
        ])));
        assert!(!provably_halts_structurally(&m(vec![Instruction::DecJz { reg: 1, target: 1 }])));
    }

    #[test]
    fn asm_round_trip() {
        let text = "L1: DECJZ r1 L4\nDECJZ r1 L5\nDECJZ r2 L1\nL4: HALT\nL5: DECJZ r2 L5\n";
        let mach = CounterMachine::parse_asm(text).unwrap();
        assert_eq!(mach.len(), 5);
        assert_eq!(mach.registers(), 2);
        assert_eq!(CounterMachine::parse_asm(&mach.to_asm()).unwrap(), mach);
        assert!(CounterMachine::parse_asm("DECJZ r1 L9\n").is_err());
        assert!(CounterMachine::parse_asm("JMP r1\n").is_err());
        let end = CounterMachine::parse_asm("DECJZ r1 L2\nL2:\n").unwrap();
        assert_eq!(end.instructions()[0], Instruction::DecJz { reg: 1, target: 2 });
        let wide = CounterMachine::new(3, vec![Instruction::Halt]).unwrap();
        assert_eq!(wide.to_asm(), ".registers 3\nHALT\n");
        assert_eq!(CounterMachine::parse_asm(&wide.to_asm()).unwrap(), wide);
        assert!(CounterMachine::parse_asm(".registers 1\nINC r2\n").is_err());
    }

    #[test]
    fn machine_validation() {
        assert!(CounterMachine::new(1, vec![Instruction::Inc { reg: 2 }]).is_err());
        assert!(CounterMachine::new(1, vec![Instruction::DecJz { reg: 1, target: 3 }]).is_err());
        assert!(CounterMachine::new(1, vec![]).is_err());
        let wide = CounterMachine::new(16, vec![Instruction::Halt]).unwrap();
        assert!(matches!(encode(&wide), Err(CodeError::EncodingOverflow(_))));
    }
}
