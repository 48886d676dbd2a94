//! Command-line front end. Every table command writes CSV or JSON (an array
//! of objects with the same fields as the CSV columns).

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use num_traits::Zero;
use serde_json::{Map, Value};

use crate::bits::{self, MeasureSource, ThresholdOracle};
use crate::codes::{self, Bitstring, CounterMachine, RunOutcome};
use crate::dioph::{self, Domain, EquationFamily, SearchBox};
use crate::dprm::{self, CompiledSystem, Provenance, Witness, WitnessBounds};
use crate::measures::{self, fmt_rational, HaltingSchedule};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Largest `k` accepted for the linear scan in `bisect --scan`.
pub const MAX_SCAN_K: usize = 24;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
    Io(PathBuf, io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Io(..) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
            CliError::Io(p, e) => write!(f, "i/o error on {}: {e}", p.display()),
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}
domain_from!(
    measures::MeasureError,
    bits::BitsError,
    dioph::DiophError,
    dprm::DprmError,
    codes::CodeError
);

#[derive(Parser)]
#[command(name = "omegaforge", version, about = "Exact experiments on halting-probability digits and Diophantine encodings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Output {
    /// Output file (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SourceArgs {
    /// Exact ground-truth value `num/den` in (0, 1)
    #[arg(long)]
    omega: Option<String>,
    /// Schedule file (`<index> <len> H <step>` / `<index> <len> D` lines)
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Build the schedule by running every program up to this code length
    #[arg(long)]
    max_len: Option<usize>,
    /// Step budget per program for `--max-len`
    #[arg(long, default_value_t = 1000)]
    budget: u64,
    /// Approximant horizon (defaults to the schedule's exhaustion horizon)
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// List all programs up to a code length
    Enumerate {
        #[arg(long)]
        max_len: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Table of the tau and Omega approximants
    Measures {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Threshold counts q_k with parity and digits
    Qk {
        #[command(flatten)]
        source: SourceArgs,
        /// `K` for 1..=K, or `A..B`
        #[arg(long)]
        k: String,
        #[arg(long, default_value_t = 2)]
        base: u32,
        #[command(flatten)]
        output: Output,
    },
    /// First k bits by bisection over a threshold oracle
    Bisect {
        #[arg(long)]
        omega: String,
        #[arg(long)]
        k: usize,
        /// Also run the linear scan for comparison
        #[arg(long)]
        scan: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Tally of the guess program's answers
    Census {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        k: String,
        /// Number of guesses N = 1..=n per k
        #[arg(long, default_value_t = 64)]
        n: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Structural predictions for the bits of tau, checked by simulation
    PredictTau {
        #[arg(long)]
        max_len: usize,
        #[arg(long, default_value_t = 1000)]
        budget: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Solutions of a family in a box
    Solve {
        /// Family file in s-expression form
        #[arg(long)]
        family: PathBuf,
        /// Comma-separated parameter values; with any `A..B` entry the
        /// output is one solvability row per parameter tuple
        #[arg(long, default_value = "")]
        params: String,
        /// `HI`, `LO..HI`, or one range per unknown separated by commas
        #[arg(long = "box")]
        bx: String,
        /// Let unknowns take the value 0
        #[arg(long)]
        natural: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Value-set polynomial of a two-parameter family, or its positive values
    Wpoly {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        k: Option<String>,
        #[arg(long = "box")]
        bx: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Compile a counter machine into an equation system
    Compile {
        /// Machine in assembly form
        #[arg(long)]
        machine: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Witness for a halting run, from its trace
    Witness {
        #[arg(long)]
        machine: PathBuf,
        #[arg(long)]
        input: u64,
        #[arg(long, default_value_t = 10_000)]
        budget: u64,
        /// Bounds `W,S,V` for a boxed search when the run does not halt
        #[arg(long = "box")]
        bx: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a witness against a compiled system
    Verify {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        witness: PathBuf,
    },
    /// Read the trace back out of a witness
    Decode {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        witness: PathBuf,
        /// Re-simulate this machine instead of the system's own
        #[arg(long)]
        machine: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

/// A header and string cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> =
                    self.header.iter().cloned().zip(r.iter().map(|c| Value::String(c.clone()))).collect();
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&Value::Array(rows)).expect("plain strings serialize");
        s.push('\n');
        s
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_out(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(p.to_path_buf(), e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io("<stdout>".into(), e)),
    }
}

fn emit(table: &Table, output: &Output) -> Result<(), CliError> {
    let text = match output.format {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    write_out(&text, output.out.as_deref())
}

/// `K` means `1..=K`; `A..B` is inclusive.
pub fn parse_range(s: &str) -> Result<RangeInclusive<u64>, CliError> {
    let bad = || CliError::Usage(format!("bad range {s:?}"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let r = match s.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.trim_start_matches('='))?,
        None => 1..=num(s)?,
    };
    if r.is_empty() {
        return Err(bad());
    }
    Ok(r)
}

/// One range for every unknown, or one range per unknown.
pub fn parse_box(s: &str, unknowns: usize) -> Result<Vec<RangeInclusive<u64>>, CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() == 1 {
        return Ok(vec![parse_range(parts[0])?; unknowns]);
    }
    if parts.len() != unknowns {
        return Err(CliError::Usage(format!("box has {} ranges for {unknowns} unknowns", parts.len())));
    }
    parts.iter().map(|p| parse_range(p)).collect()
}

fn load_schedule(src: &SourceArgs) -> Result<HaltingSchedule, CliError> {
    match (&src.schedule, src.max_len) {
        (Some(_), Some(_)) => Err(CliError::Usage("--schedule and --max-len are exclusive".into())),
        (Some(p), None) => Ok(read(p)?.parse()?),
        (None, Some(n)) => Ok(HaltingSchedule::from_vm(n, src.budget)),
        (None, None) => Err(CliError::Usage("need --schedule or --max-len".into())),
    }
}

fn measure_source(src: &SourceArgs) -> Result<MeasureSource, CliError> {
    match &src.omega {
        Some(v) => {
            if src.schedule.is_some() || src.max_len.is_some() {
                return Err(CliError::Usage("--omega excludes --schedule and --max-len".into()));
            }
            let value = measures::parse_rational(v).map_err(CliError::Usage)?;
            Ok(MeasureSource::ground_truth(value)?)
        }
        None => {
            let schedule = load_schedule(src)?;
            let horizon = src.horizon.unwrap_or_else(|| schedule.exhaustion_horizon());
            Ok(MeasureSource::ApproximantStream { schedule, horizon })
        }
    }
}

fn cmd_enumerate(max_len: usize) -> Table {
    let mut t = Table::new(&["index", "bits", "length", "kraft_term", "structural_halt"]);
    for (i, p) in codes::enumerate_programs(max_len).iter().enumerate() {
        t.push(vec![
            (i + 1).to_string(),
            p.bits.to_string(),
            p.len().to_string(),
            fmt_rational(&measures::pow2_inv(p.len() as u64)),
            codes::provably_halts_structurally(&p.machine).to_string(),
        ]);
    }
    t
}

fn cmd_measures(src: &SourceArgs) -> Result<Table, CliError> {
    if src.omega.is_some() {
        return Err(CliError::Usage("measures needs a schedule, not --omega".into()));
    }
    let schedule = load_schedule(src)?;
    let exhaustion = schedule.exhaustion_horizon();
    let horizon = src.horizon.unwrap_or(exhaustion);
    let mut t = Table::new(&["i", "tau_i", "omega_i", "exhausted"]);
    for i in 1..=horizon {
        t.push(vec![
            i.to_string(),
            fmt_rational(&measures::tau_i(&schedule, i)?),
            fmt_rational(&measures::omega_i(&schedule, i)?),
            (i >= exhaustion).to_string(),
        ]);
    }
    Ok(t)
}

fn unpadded_digits(q: &BigUint, base: u32) -> String {
    if q.is_zero() {
        "0".into()
    } else {
        bits::render_digits(&q.to_radix_be(base))
    }
}

fn cmd_qk(src: &SourceArgs, k: &str, base: u32) -> Result<Table, CliError> {
    let source = measure_source(src)?;
    let mut t = Table::new(&["k", "base", "q", "mode", "parity", "digits", "padded_digits"]);
    for k in parse_range(k)? {
        let rec = bits::q_k(k as usize, &source, base)?;
        t.push(vec![
            k.to_string(),
            base.to_string(),
            rec.q.to_string(),
            rec.mode.to_string(),
            bits::parity(&rec.q).to_string(),
            unpadded_digits(&rec.q, base),
            bits::render_digits(&rec.padded_digits()),
        ]);
    }
    Ok(t)
}

fn cmd_bisect(omega: &str, k: usize, scan: bool) -> Result<Table, CliError> {
    let value = measures::parse_rational(omega).map_err(CliError::Usage)?;
    let src = MeasureSource::ground_truth(value)?;
    if scan && k > MAX_SCAN_K {
        return Err(CliError::Usage(format!("--scan is limited to k <= {MAX_SCAN_K}")));
    }
    let oracle = ThresholdOracle { k, base: 2, src: &src };
    let mut t = Table::new(&["method", "k", "q", "digits", "queries"]);
    let mut add = |method: &str, r: bits::SearchReport| {
        t.push(vec![method.into(), k.to_string(), r.q.to_string(), bits::render_digits(&r.digits), r.queries.to_string()])
    };
    add("bisection", bits::bisection_bits(k, &oracle)?);
    if scan {
        add("scan", bits::scan_bits(k, &oracle)?);
    }
    Ok(t)
}

fn cmd_census(src: &SourceArgs, k: &str, n: u64) -> Result<Table, CliError> {
    let source = measure_source(src)?;
    let mut t = Table::new(&["k", "n", "ones", "zeros"]);
    for k in parse_range(k)? {
        let c = bits::p_census(k as usize, n, &source)?;
        t.push(vec![k.to_string(), n.to_string(), c.ones.to_string(), c.zeros.to_string()]);
    }
    Ok(t)
}

fn cmd_predict_tau(max_len: usize, budget: u64) -> Result<Table, CliError> {
    let programs = codes::enumerate_programs(max_len);
    let mut t = Table::new(&["n", "bits", "prediction", "halted_within_budget", "steps"]);
    for n in 1..=programs.len() {
        let p = &programs[n - 1];
        let pred = bits::predict_in(&programs, n)?;
        let (halted, steps) = match codes::run(&p.machine, &Bitstring::new(), budget) {
            RunOutcome::Halted { steps, .. } => (true, steps.to_string()),
            RunOutcome::OutOfBudget(_) => (false, String::new()),
        };
        t.push(vec![n.to_string(), p.bits.to_string(), pred.to_string(), halted.to_string(), steps]);
    }
    Ok(t)
}

fn parse_params(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| CliError::Usage(format!("bad parameter {p:?}"))))
        .collect()
}

fn cmd_solve(family: &Path, params: &str, bx: &str, natural: bool) -> Result<Table, CliError> {
    let fam = EquationFamily::parse_sexpr(&read(family)?)?;
    let domain = if natural { Domain::Natural } else { Domain::Positive };
    let sbox = SearchBox::new(parse_box(bx, fam.unknowns().len())?).with_domain(domain);
    if params.contains("..") {
        // one row per parameter tuple
        let ranges = params
            .split(',')
            .map(|r| if r.contains("..") { parse_range(r) } else { parse_range(&format!("{r}..{r}")) })
            .collect::<Result<Vec<_>, _>>()?;
        let mut header: Vec<&str> = fam.params().iter().map(String::as_str).collect();
        header.extend(["solvable", "count", "exhausted"]);
        let mut t = Table::new(&header);
        for row in dioph::solvable_table(&fam, &ranges, &sbox)? {
            t.push(row.csv_row().split(',').map(str::to_string).collect());
        }
        return Ok(t);
    }
    let report = dioph::solve_in_box(&fam, &parse_params(params)?, &sbox)?;
    let header: Vec<&str> = fam.unknowns().iter().map(String::as_str).collect();
    let mut t = Table::new(&header);
    for sol in report.solutions {
        t.push(sol.iter().map(u64::to_string).collect());
    }
    Ok(t)
}

fn cmd_wpoly(family: &Path, k: Option<&str>, bx: Option<&str>, output: &Output) -> Result<(), CliError> {
    let w = dioph::value_set_polynomial(&EquationFamily::parse_sexpr(&read(family)?)?)?;
    match (k, bx) {
        (None, None) => write_out(&format!("{}\n", w.to_sexpr()), output.out.as_deref()),
        (Some(k), Some(bx)) => {
            let sbox = SearchBox::new(parse_box(bx, w.unknowns().len())?);
            let mut t = Table::new(&["k", "value"]);
            for k in parse_range(k)? {
                for v in dioph::positive_values(&w, k, &sbox)? {
                    t.push(vec![k.to_string(), v.to_string()]);
                }
            }
            emit(&t, output)
        }
        _ => Err(CliError::Usage("--k and --box go together".into())),
    }
}

fn load_machine(path: &Path) -> Result<CounterMachine, CliError> {
    Ok(CounterMachine::parse_asm(&read(path)?)?)
}

fn cmd_witness(machine: &Path, input: u64, budget: u64, bx: Option<&str>, out: Option<&Path>) -> Result<(), CliError> {
    if input == 0 {
        return Err(CliError::Usage("--input must be positive".into()));
    }
    let system = dprm::compile(&load_machine(machine)?)?;
    if let Some(t) = dprm::trace(&system.machine, input, budget) {
        return write_out(&dprm::witness_from_trace(&system, &t)?.to_text(), out);
    }
    let Some(bx) = bx else {
        return Err(CliError::Domain(format!("no halt within {budget} steps")));
    };
    let b = parse_params(bx)?;
    let [max_w, max_s, max_value] = b[..] else {
        return Err(CliError::Usage("--box for witness search is W,S,V".into()));
    };
    let found = dprm::search_witnesses(&system, input, WitnessBounds { max_w, max_s, max_value }, None)?;
    match found.certified.first() {
        Some(w) => write_out(&w.to_text(), out),
        None => Err(CliError::Domain(format!(
            "no halt within {budget} steps; boxed search {} with no witness ({} box solutions failed decoding)",
            if found.report.exhausted { "exhausted" } else { "stopped" },
            found.rejected.len()
        ))),
    }
}

fn load_pair(system: &Path, witness: &Path) -> Result<(CompiledSystem, Witness), CliError> {
    let sys = CompiledSystem::from_text(&read(system)?)?;
    let w = Witness::from_text(&read(witness)?, Provenance::FromSearch)?;
    Ok((sys, w))
}

fn cmd_verify(system: &Path, witness: &Path) -> Result<(), CliError> {
    let (sys, w) = load_pair(system, witness)?;
    match dprm::first_failure(&sys, &w)? {
        None => write_out("ok\n", None),
        Some(i) => {
            write_out(&format!("fail {i} {}\n", sys.equations[i].name), None)?;
            Err(CliError::Domain(format!("witness fails equation {i} ({})", sys.equations[i].name)))
        }
    }
}

fn cmd_decode(system: &Path, witness: &Path, machine: Option<&Path>) -> Result<Table, CliError> {
    let (sys, w) = load_pair(system, witness)?;
    let m = match machine {
        Some(p) => load_machine(p)?,
        None => sys.machine.clone(),
    };
    let trace = dprm::decode_trace(&sys, &m, &w)?;
    let regs: Vec<String> = (1..=m.registers()).map(|j| format!("r{j}")).collect();
    let mut header = vec!["t", "pc"];
    header.extend(regs.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for (i, row) in trace.rows.iter().enumerate() {
        let mut cells = vec![i.to_string(), row.pc.to_string()];
        cells.extend(row.registers.iter().map(BigUint::to_string));
        t.push(cells);
    }
    Ok(t)
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Enumerate { max_len, output } => emit(&cmd_enumerate(max_len), &output),
        Command::Measures { source, output } => emit(&cmd_measures(&source)?, &output),
        Command::Qk { source, k, base, output } => emit(&cmd_qk(&source, &k, base)?, &output),
        Command::Bisect { omega, k, scan, output } => emit(&cmd_bisect(&omega, k, scan)?, &output),
        Command::Census { source, k, n, output } => emit(&cmd_census(&source, &k, n)?, &output),
        Command::PredictTau { max_len, budget, output } => emit(&cmd_predict_tau(max_len, budget)?, &output),
        Command::Solve { family, params, bx, natural, output } => {
            emit(&cmd_solve(&family, &params, &bx, natural)?, &output)
        }
        Command::Wpoly { family, k, bx, output } => cmd_wpoly(&family, k.as_deref(), bx.as_deref(), &output),
        Command::Compile { machine, out } => {
            let sys = dprm::compile(&load_machine(&machine)?)?;
            write_out(&sys.to_text(), out.as_deref())
        }
        Command::Witness { machine, input, budget, bx, out } => {
            cmd_witness(&machine, input, budget, bx.as_deref(), out.as_deref())
        }
        Command::Verify { system, witness } => cmd_verify(&system, &witness),
        Command::Decode { system, witness, machine, output } => {
            emit(&cmd_decode(&system, &witness, machine.as_deref())?, &output)
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
