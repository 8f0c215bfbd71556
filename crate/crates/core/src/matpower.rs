//! A subset of the MATPOWER case format.
//!
//! Only the columns the DC-OPF builder needs are kept:
//!
//! | section        | columns used (1-based)                           |
//! |----------------|--------------------------------------------------|
//! | `mpc.bus`      | 1 `BUS_I`, 2 `BUS_TYPE`, 3 `PD`                  |
//! | `mpc.gen`      | 1 `GEN_BUS`, 8 `GEN_STATUS`, 9 `PMAX`, 10 `PMIN` |
//! | `mpc.branch`   | 1 `F_BUS`, 2 `T_BUS`, 4 `BR_X`, 6 `RATE_A`, 11 `BR_STATUS` |
//! | `mpc.gencost`  | 1 `MODEL`, 4 `NCOST`, then the coefficients      |
//!
//! Out-of-service generators (with their cost rows) and branches are dropped.
//! Only polynomial costs of degree at most two are accepted.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::rng::seeded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("line {line}: malformed numeric token {token:?}")]
    Malformed { line: usize, token: String },
    #[error("line {line}: {section} row has {found} columns, expected at least {expected}")]
    ShortRow { section: &'static str, line: usize, expected: usize, found: usize },
    #[error("line {line}: unknown bus type {code}")]
    UnknownBusType { line: usize, code: f64 },
    #[error("line {line}: unsupported generator cost ({detail})")]
    UnsupportedCost { line: usize, detail: String },
    #[error("unterminated matrix {0}")]
    Unterminated(String),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("base MVA must be positive, got {0}")]
    BaseMva(f64),
    #[error("expected exactly one reference bus, found {0}")]
    ReferenceBus(usize),
    #[error("branch {branch} references missing bus {bus}")]
    DanglingBranch { branch: usize, bus: u32 },
    #[error("generator {gen} sits on missing bus {bus}")]
    DanglingGenerator { gen: usize, bus: u32 },
    #[error("{gens} generators but {costs} cost rows")]
    CostCount { gens: usize, costs: usize },
    #[error("branch {0} has zero or non-finite reactance")]
    ZeroReactance(usize),
    #[error("case has no in-service generators")]
    NoGenerators,
    #[error("network is disconnected ({0} islands)")]
    Disconnected(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusType {
    Pq,
    Pv,
    Ref,
}

impl BusType {
    fn code(self) -> u8 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Ref => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusType,
    /// Real demand in MW.
    pub pd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series reactance in p.u.
    pub x: f64,
    /// Long-term rating in MVA; 0 means unlimited.
    pub rate_a: f64,
}

impl Branch {
    pub fn susceptance(&self) -> f64 {
        1.0 / self.x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
}

/// `a p² + b p` with `p` in MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenCost {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
    pub gencosts: Vec<GenCost>,
}

impl PowerCase {
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn reference_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusType::Ref)
    }
}

type Rows = Vec<(usize, Vec<f64>)>;

/// Parses case-file text. Structural problems and duplicate bus ids are
/// reported here; network-level checks live in [`validate_case`].
pub fn parse_case(text: &str) -> Result<PowerCase, CaseError> {
    let mut base_mva = None;
    let mut matrices: HashMap<String, Rows> = HashMap::new();
    let mut open: Option<(String, Rows, Vec<f64>)> = None;
    let mut in_cell = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('%').next().unwrap_or("");

        if in_cell {
            if line.contains('}') {
                in_cell = false;
            }
            continue;
        }

        let mut rest = line;
        if open.is_none() {
            let trimmed = line.trim_start();
            let Some(after) = trimmed.strip_prefix("mpc.") else { continue };
            let Some((name, value)) = after.split_once('=') else { continue };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                open = Some((name, Vec::new(), Vec::new()));
                rest = body;
            } else if value.starts_with('{') {
                in_cell = !value.contains('}');
                continue;
            } else {
                if name == "baseMVA" {
                    let token = value.trim_end_matches(';').trim();
                    base_mva = Some(parse_number(token, line_no)?);
                }
                continue;
            }
        }

        let Some((_, rows, row)) = open.as_mut() else { continue };
        let (body, closed) = match rest.split_once(']') {
            Some((body, _)) => (body, true),
            None => (rest, false),
        };
        // rows end at ';' and at line breaks
        for segment in body.split(';') {
            for token in segment.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                row.push(parse_number(token, line_no)?);
            }
            if !row.is_empty() {
                rows.push((line_no, std::mem::take(row)));
            }
        }
        if closed {
            let (name, rows, _) = open.take().expect("matrix is open");
            matrices.insert(name, rows);
        }
    }
    if let Some((name, _, _)) = open {
        return Err(CaseError::Unterminated(name));
    }

    let base_mva = base_mva.ok_or(CaseError::MissingSection("baseMVA"))?;
    let take = |matrices: &mut HashMap<String, Rows>, key: &'static str| {
        matrices.remove(key).ok_or(CaseError::MissingSection(key))
    };
    let bus_rows = take(&mut matrices, "bus")?;
    let branch_rows = take(&mut matrices, "branch")?;
    let gen_rows = take(&mut matrices, "gen")?;
    let cost_rows = take(&mut matrices, "gencost")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut seen = HashSet::new();
    for (line, row) in &bus_rows {
        need(row, 3, "bus", *line)?;
        let id = row[0] as u32;
        let kind = match row[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Ref,
            _ => return Err(CaseError::UnknownBusType { line: *line, code: row[1] }),
        };
        if !seen.insert(id) {
            return Err(CaseError::DuplicateBus(id));
        }
        buses.push(Bus { id, kind, pd: row[2] });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, row) in &branch_rows {
        need(row, 6, "branch", *line)?;
        let in_service = row.get(10).is_none_or(|&s| s > 0.0);
        if in_service {
            branches.push(Branch { from: row[0] as u32, to: row[1] as u32, x: row[3], rate_a: row[5] });
        }
    }

    if cost_rows.len() < gen_rows.len() {
        return Err(CaseError::CostCount { gens: gen_rows.len(), costs: cost_rows.len() });
    }
    let mut gens = Vec::with_capacity(gen_rows.len());
    let mut gencosts = Vec::with_capacity(gen_rows.len());
    // MATPOWER may append reactive-power cost rows after the real-power ones
    for ((line, row), (cost_line, cost)) in gen_rows.iter().zip(&cost_rows) {
        need(row, 10, "gen", *line)?;
        let parsed_cost = parse_cost(cost, *cost_line)?;
        if row[7] > 0.0 {
            gens.push(Generator { bus: row[0] as u32, p_max: row[8], p_min: row[9] });
            gencosts.push(parsed_cost);
        }
    }

    Ok(PowerCase { base_mva, buses, branches, gens, gencosts })
}

fn parse_number(token: &str, line: usize) -> Result<f64, CaseError> {
    token
        .parse::<f64>()
        .map_err(|_| CaseError::Malformed { line, token: token.to_string() })
}

fn need(row: &[f64], expected: usize, section: &'static str, line: usize) -> Result<(), CaseError> {
    if row.len() < expected {
        return Err(CaseError::ShortRow { section, line, expected, found: row.len() });
    }
    Ok(())
}

fn parse_cost(row: &[f64], line: usize) -> Result<GenCost, CaseError> {
    need(row, 4, "gencost", line)?;
    if row[0] as i64 != 2 {
        return Err(CaseError::UnsupportedCost {
            line,
            detail: format!("model {} is not polynomial", row[0]),
        });
    }
    let ncost = row[3] as usize;
    if ncost > 3 {
        return Err(CaseError::UnsupportedCost {
            line,
            detail: format!("polynomial of degree {} exceeds 2", ncost.saturating_sub(1)),
        });
    }
    need(row, 4 + ncost, "gencost", line)?;
    let coeffs = &row[4..4 + ncost];
    // highest degree first; the constant term does not move the optimum
    let (a, b) = match ncost {
        3 => (coeffs[0], coeffs[1]),
        2 => (0.0, coeffs[0]),
        _ => (0.0, 0.0),
    };
    Ok(GenCost { a, b })
}

/// Checks every case invariant, including connectivity.
pub fn validate_case(case: &PowerCase) -> Result<(), CaseError> {
    if !(case.base_mva > 0.0 && case.base_mva.is_finite()) {
        return Err(CaseError::BaseMva(case.base_mva));
    }
    let mut seen = HashSet::new();
    for bus in &case.buses {
        if !seen.insert(bus.id) {
            return Err(CaseError::DuplicateBus(bus.id));
        }
    }
    let refs = case.buses.iter().filter(|b| b.kind == BusType::Ref).count();
    if refs != 1 {
        return Err(CaseError::ReferenceBus(refs));
    }
    let index = case.bus_index();
    for (i, br) in case.branches.iter().enumerate() {
        for bus in [br.from, br.to] {
            if !index.contains_key(&bus) {
                return Err(CaseError::DanglingBranch { branch: i, bus });
            }
        }
        if br.x == 0.0 || !br.susceptance().is_finite() {
            return Err(CaseError::ZeroReactance(i));
        }
    }
    for (i, g) in case.gens.iter().enumerate() {
        if !index.contains_key(&g.bus) {
            return Err(CaseError::DanglingGenerator { gen: i, bus: g.bus });
        }
    }
    if case.gens.is_empty() {
        return Err(CaseError::NoGenerators);
    }
    if case.gencosts.len() != case.gens.len() {
        return Err(CaseError::CostCount { gens: case.gens.len(), costs: case.gencosts.len() });
    }

    let mut uf = UnionFind::new(case.buses.len());
    for br in &case.branches {
        uf.union(index[&br.from], index[&br.to]);
    }
    let islands = uf.count();
    if islands != 1 {
        return Err(CaseError::Disconnected(islands));
    }
    Ok(())
}

/// Parse then validate.
pub fn load_case(text: &str) -> Result<PowerCase, CaseError> {
    let case = parse_case(text)?;
    validate_case(&case)?;
    Ok(case)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn count(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

/// Writes the retained fields back out as a minimal case file. Columns the
/// parser ignores are filled with neutral values.
pub fn write_case(case: &PowerCase, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_mva);
    let _ = writeln!(out, "\n%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &case.buses {
        let _ = writeln!(out, "\t{}\t{}\t{}\t0\t0\t0\t1\t1\t0\t345\t1\t1.1\t0.9;", b.id, b.kind.code(), b.pd);
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "\n%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.gens {
        let _ = writeln!(
            out,
            "\t{}\t0\t0\t300\t-300\t1\t{}\t1\t{}\t{};",
            g.bus, case.base_mva, g.p_max, g.p_min
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "\n%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t0\t{}\t0\t{}\t{}\t{}\t0\t0\t1\t-360\t360;",
            br.from, br.to, br.x, br.rate_a, br.rate_a, br.rate_a
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "\n%% 2 startup shutdown n c2 c1 c0");
    let _ = writeln!(out, "mpc.gencost = [");
    for c in &case.gencosts {
        let _ = writeln!(out, "\t2\t0\t0\t3\t{}\t{}\t0;", c.a, c.b);
    }
    let _ = writeln!(out, "];");
    out
}

/// A connected synthetic network: a ring with random chords, loads on every
/// non-generator bus, and quadratic costs. Bus 1 is the reference and hosts
/// the first generator.
pub fn synthetic_case(n_bus: usize, n_gen: usize, seed: u64) -> PowerCase {
    assert!(n_bus >= 2 && (1..=n_bus).contains(&n_gen), "need 2 <= buses and 1 <= gens <= buses");
    let mut rng = seeded(seed);
    let gen_stride = n_bus / n_gen;
    let gen_buses: Vec<u32> = (0..n_gen).map(|g| (g * gen_stride + 1) as u32).collect();
    let load = Uniform::new(20.0, 120.0).expect("valid range");
    let buses = (1..=n_bus as u32)
        .map(|id| Bus {
            id,
            kind: if id == 1 {
                BusType::Ref
            } else if gen_buses.contains(&id) {
                BusType::Pv
            } else {
                BusType::Pq
            },
            pd: if gen_buses.contains(&id) { 0.0 } else { (load.sample(&mut rng) * 10.0_f64).round() / 10.0 },
        })
        .collect::<Vec<_>>();

    let react = Uniform::new(0.04, 0.2).expect("valid range");
    let rate = [150.0, 250.0, 300.0];
    let mut branches = Vec::new();
    let mut add = |from: u32, to: u32, rng: &mut crate::rng::SimRng| {
        branches.push(Branch {
            from,
            to,
            x: (react.sample(rng) * 1e4_f64).round() / 1e4,
            rate_a: rate[rng.random_range(0..rate.len())],
        });
    };
    for id in 1..=n_bus as u32 {
        let next = if id == n_bus as u32 { 1 } else { id + 1 };
        if n_bus > 2 || id == 1 {
            add(id, next, &mut rng);
        }
    }
    for _ in 0..n_bus / 3 {
        let a = rng.random_range(1..=n_bus as u32);
        let b = rng.random_range(1..=n_bus as u32);
        if a != b {
            add(a.min(b), a.max(b), &mut rng);
        }
    }

    let total: f64 = buses.iter().map(|b| b.pd).sum();
    let cap = (2.0 * total / n_gen as f64 / 10.0).ceil() * 10.0;
    let gens = gen_buses.iter().map(|&bus| Generator { bus, p_min: 10.0, p_max: cap }).collect();
    let gencosts = (0..n_gen)
        .map(|_| GenCost {
            a: (rng.random_range(0.05..0.15) * 1e4_f64).round() / 1e4,
            b: (rng.random_range(1.0..6.0) * 10.0_f64).round() / 10.0,
        })
        .collect();

    PowerCase { base_mva: 100.0, buses, branches, gens, gencosts }
}
