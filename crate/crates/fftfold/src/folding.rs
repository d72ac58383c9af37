//! Folding sets, channel interleaving transforms and the folding of the DIF
//! dataflow graph into a per-unit schedule with edge delays.
//!
//! A folding set is an ordered list of slots for one hardware unit; each slot
//! holds one butterfly (possibly of an interleaved channel, written with
//! primes: `A'3`) or a null. Folding assigns every dataflow edge the number
//! of registers its value must survive, `D_F = N_f*w(e) - P_U + v - u`.
//! The schedules used here are periodic, so a consumer slot that precedes
//! its producer within the period is realized one period later; `fold`
//! normalizes such delays by adding `N_f` unless strict mode is requested.

use std::collections::HashMap;
use std::fmt;

use crate::dfg::{stage_letter, DataFlowGraph};

/// Reference to one butterfly instance: a dataflow op on a given channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpRef {
    pub stage: usize,
    pub index: usize,
    pub channel: u32,
}

impl fmt::Display for OpRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", stage_letter(self.stage))?;
        for _ in 0..self.channel {
            write!(f, "'")?;
        }
        write!(f, "{}", self.index)
    }
}

/// One schedule slot: an op instance or an idle cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Null,
    Op(OpRef),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Null => write!(f, "-"),
            Slot::Op(op) => write!(f, "{op}"),
        }
    }
}

/// Ordered slot list for one hardware unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldingSet {
    pub unit: String,
    pub slots: Vec<Slot>,
}

impl FoldingSet {
    pub fn folding_factor(&self) -> usize {
        self.slots.len()
    }

    pub fn ops(&self) -> impl Iterator<Item = (usize, OpRef)> + '_ {
        self.slots.iter().enumerate().filter_map(|(i, s)| match s {
            Slot::Op(op) => Some((i, *op)),
            Slot::Null => None,
        })
    }

    pub fn null_fraction(&self) -> f64 {
        let nulls = self.slots.iter().filter(|s| matches!(s, Slot::Null)).count();
        nulls as f64 / self.slots.len() as f64
    }
}

/// A complete collection of folding sets, one per pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldingSets {
    pub sets: Vec<FoldingSet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FoldingError {
    BadChannelCount(usize),
    /// The null layout of the input set does not match any known interleave
    /// pattern, so channel filling is ambiguous.
    PatternMismatch(String),
    /// An op is scheduled more than once, or a slot of a unit is fought over.
    Duplicate(OpRef),
    /// Ops missing from or alien to the dataflow graph being folded.
    Coverage { missing: Vec<OpRef>, extra: Vec<OpRef> },
    /// Strict folding found an edge whose consumer fires before its producer.
    NegativeDelay { edge: String, delay: i64 },
    MixedFoldingFactors,
}

impl fmt::Display for FoldingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldingError::BadChannelCount(m) => {
                write!(f, "channel count {m} must be a power of two >= 1")
            }
            FoldingError::PatternMismatch(msg) => write!(f, "null pattern mismatch: {msg}"),
            FoldingError::Duplicate(op) => write!(f, "op {op} scheduled more than once"),
            FoldingError::Coverage { missing, extra } => {
                write!(f, "schedule coverage error: {} missing, {} extra", missing.len(), extra.len())
            }
            FoldingError::NegativeDelay { edge, delay } => {
                write!(f, "edge {edge} folds to negative delay {delay}")
            }
            FoldingError::MixedFoldingFactors => write!(f, "units disagree on folding factor"),
        }
    }
}

impl std::error::Error for FoldingError {}

fn shuffle_evens_first(j: usize, half: usize) -> usize {
    j / 2 + (j & 1) * (half / 2)
}

/// Per-stage slot offsets of the 2-parallel feedforward schedule family.
fn parallel2_offsets(n: usize) -> Vec<usize> {
    let stages = n.trailing_zeros() as usize;
    let mut offs = vec![0usize];
    for s in 0..stages.saturating_sub(1) {
        let delta = if s + 2 == stages { n / 4 } else { n >> (s + 3) };
        offs.push((offs[s] + delta) % (n / 2));
    }
    offs
}

/// Base folding sets of the 2-parallel feedforward DIF FFT: even butterfly
/// indices first, odd indices second, with a fixed per-stage rotation.
pub fn base_folding_sets(n: usize) -> FoldingSets {
    assert!(n >= 4 && n.is_power_of_two());
    let half = n / 2;
    let offs = parallel2_offsets(n);
    let stages = n.trailing_zeros() as usize;
    let sets = (0..stages)
        .map(|s| {
            let mut slots = vec![Slot::Null; half];
            for j in 0..half {
                let pos = (shuffle_evens_first(j, half) + offs[s]) % half;
                slots[pos] = Slot::Op(OpRef { stage: s, index: j, channel: 0 });
            }
            FoldingSet { unit: stage_letter(s).to_string(), slots }
        })
        .collect();
    FoldingSets { sets }
}

/// The 16-point instance of [`base_folding_sets`], folding factor 8.
pub fn base_folding_sets_16() -> FoldingSets {
    base_folding_sets(16)
}

/// Per-stage start offsets of the in-order schedule family (also the R2MDC
/// stage offsets): stage s starts when half of the previous stage is done.
fn inorder_offsets(n: usize) -> Vec<usize> {
    let stages = n.trailing_zeros() as usize;
    (0..stages).map(|s| n / 2 - (n >> (s + 1))).collect()
}

/// Base folding sets with butterflies in natural index order per stage and
/// the stage rotation that keeps the pipeline causal. Folding factor `n/2`.
pub fn inorder_folding_sets(n: usize) -> FoldingSets {
    assert!(n >= 4 && n.is_power_of_two());
    let half = n / 2;
    let offs = inorder_offsets(n);
    let stages = n.trailing_zeros() as usize;
    let sets = (0..stages)
        .map(|s| {
            let mut slots = vec![Slot::Null; half];
            for j in 0..half {
                slots[(j + offs[s]) % half] = Slot::Op(OpRef { stage: s, index: j, channel: 0 });
            }
            FoldingSet { unit: stage_letter(s).to_string(), slots }
        })
        .collect();
    FoldingSets { sets }
}

/// Folding sets of the radix-2 multipath delay commutator: folding factor
/// `n`, each stage active for `n/2` consecutive slots, idle otherwise.
pub fn r2mdc_folding_sets(n: usize) -> FoldingSets {
    assert!(n >= 4 && n.is_power_of_two());
    let half = n / 2;
    let offs = inorder_offsets(n);
    let stages = n.trailing_zeros() as usize;
    let sets = (0..stages)
        .map(|s| {
            let mut slots = vec![Slot::Null; n];
            for j in 0..half {
                slots[j + offs[s]] = Slot::Op(OpRef { stage: s, index: j, channel: 0 });
            }
            FoldingSet { unit: stage_letter(s).to_string(), slots }
        })
        .collect();
    FoldingSets { sets }
}

/// The 16-point instance of [`r2mdc_folding_sets`], folding factor 16.
pub fn r2mdc_folding_sets_16() -> FoldingSets {
    r2mdc_folding_sets(16)
}

/// Multiplies the folding factor by `m`, moving the op in slot `i` to slot
/// `m * i` and leaving every new slot idle. `m = 1` is the identity.
pub fn interleave_nulls(fs: &FoldingSet, m: usize) -> Result<FoldingSet, FoldingError> {
    if m == 0 || !m.is_power_of_two() {
        return Err(FoldingError::BadChannelCount(m));
    }
    let mut slots = vec![Slot::Null; fs.slots.len() * m];
    for (i, slot) in fs.slots.iter().enumerate() {
        slots[m * i] = *slot;
    }
    Ok(FoldingSet { unit: fs.unit.clone(), slots })
}

pub fn interleave_nulls_all(sets: &FoldingSets, m: usize) -> Result<FoldingSets, FoldingError> {
    let sets = sets.sets.iter().map(|s| interleave_nulls(s, m)).collect::<Result<_, _>>()?;
    Ok(FoldingSets { sets })
}

/// Replaces every null slot with the corresponding op of channels `1..m`.
///
/// Two null layouts are recognized: the layout produced by
/// [`interleave_nulls`] (channel `c` lands `c` slots after channel 0) and the
/// contiguous idle half of an R2MDC-style set (channel 1 lands `N_f / 2`
/// slots after channel 0, wrapping around the period).
pub fn fill_channels(fs: &FoldingSet, m: usize) -> Result<FoldingSet, FoldingError> {
    if m == 0 || !m.is_power_of_two() {
        return Err(FoldingError::BadChannelCount(m));
    }
    if m == 1 {
        return Ok(fs.clone());
    }
    let nf = fs.slots.len();
    let ops: Vec<(usize, OpRef)> = fs.ops().collect();
    if ops.len() * m != nf {
        return Err(FoldingError::PatternMismatch(format!(
            "unit {}: {} ops cannot fill {} slots with {} channels",
            fs.unit,
            ops.len(),
            nf,
            m
        )));
    }

    let spaced = ops.iter().all(|(i, _)| i % m == ops[0].0 % m);
    let stride = if spaced {
        1
    } else if m == 2 && is_cyclic_run(&ops, nf) {
        nf / 2
    } else {
        return Err(FoldingError::PatternMismatch(format!(
            "unit {}: null layout matches neither interleave nor idle-half pattern",
            fs.unit
        )));
    };

    let mut slots = fs.slots.clone();
    for (i, op) in &ops {
        for c in 1..m as u32 {
            let pos = (i + stride * c as usize) % nf;
            if !matches!(slots[pos], Slot::Null) {
                return Err(FoldingError::PatternMismatch(format!(
                    "unit {}: slot {} already occupied",
                    fs.unit, pos
                )));
            }
            slots[pos] = Slot::Op(OpRef { channel: c, ..*op });
        }
    }
    Ok(FoldingSet { unit: fs.unit.clone(), slots })
}

fn is_cyclic_run(ops: &[(usize, OpRef)], nf: usize) -> bool {
    let start = ops[0].0;
    // Runs may wrap: accept both a straight run and one rotated to the front.
    let straight = ops.iter().enumerate().all(|(k, (i, _))| *i == start + k);
    let wrapped = {
        let occupied: Vec<usize> = ops.iter().map(|(i, _)| *i).collect();
        (0..nf).any(|base| (0..ops.len()).all(|k| occupied.contains(&((base + k) % nf))))
    };
    straight || wrapped
}

pub fn fill_channels_all(sets: &FoldingSets, m: usize) -> Result<FoldingSets, FoldingError> {
    let sets = sets.sets.iter().map(|s| fill_channels(s, m)).collect::<Result<_, _>>()?;
    Ok(FoldingSets { sets })
}

/// One folded dataflow edge: producer output port -> consumer input port on
/// one channel, with the register count the folded datapath needs for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldedEdge {
    pub from: (usize, usize, usize),
    pub to: (usize, usize, usize),
    pub channel: u32,
    pub delay: usize,
}

/// A folded schedule: per-unit firing tables plus per-edge delays.
#[derive(Debug, Clone)]
pub struct FoldedSchedule {
    pub nf: usize,
    pub channels: u32,
    /// `firing[stage][slot]` is the op instance the stage unit executes.
    pub firing: Vec<Vec<Option<OpRef>>>,
    pub edges: Vec<FoldedEdge>,
}

impl FoldedSchedule {
    pub fn slot_of(&self, op: &OpRef) -> Option<usize> {
        self.firing[op.stage].iter().position(|s| s.as_ref() == Some(op))
    }

    pub fn edge_delay(&self, to: (usize, usize, usize), channel: u32) -> Option<usize> {
        self.edges.iter().find(|e| e.to == to && e.channel == channel).map(|e| e.delay)
    }
}

/// Options for [`fold`]. `pipeline_depth` is the latency of every butterfly
/// unit (the architectures here use combinational butterflies, depth 0).
#[derive(Debug, Clone, Default)]
pub struct FoldOptions {
    pub pipeline_depth: usize,
    /// Reject edges whose consumer slot precedes the producer slot instead of
    /// realizing them across the period boundary.
    pub strict: bool,
}

/// Folds `g` under `sets`, assigning every edge instance its register count.
pub fn fold(
    g: &DataFlowGraph,
    sets: &FoldingSets,
    opts: &FoldOptions,
) -> Result<FoldedSchedule, FoldingError> {
    let nf = sets.sets.first().map(|s| s.folding_factor()).unwrap_or(0);
    if sets.sets.iter().any(|s| s.folding_factor() != nf) {
        return Err(FoldingError::MixedFoldingFactors);
    }

    let mut slot_of: HashMap<OpRef, usize> = HashMap::new();
    let mut channels = 1u32;
    for set in &sets.sets {
        for (i, op) in set.ops() {
            if slot_of.insert(op, i).is_some() {
                return Err(FoldingError::Duplicate(op));
            }
            channels = channels.max(op.channel + 1);
        }
    }

    // Every dataflow op must appear once per channel, and nothing else.
    let mut missing = Vec::new();
    for op in &g.ops {
        for c in 0..channels {
            let r = OpRef { stage: op.stage, index: op.index, channel: c };
            if !slot_of.contains_key(&r) {
                missing.push(r);
            }
        }
    }
    let extra: Vec<OpRef> = slot_of
        .keys()
        .filter(|r| {
            r.stage >= g.stages() || r.index >= g.n / 2 || r.channel >= channels
        })
        .copied()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(FoldingError::Coverage { missing, extra });
    }

    let mut firing = vec![vec![None; nf]; g.stages()];
    for (op, &slot) in &slot_of {
        firing[op.stage][slot] = Some(*op);
    }

    let mut edges = Vec::with_capacity(g.edges.len() * channels as usize);
    for e in &g.edges {
        for c in 0..channels {
            let u = slot_of[&OpRef { stage: e.from.0, index: e.from.1, channel: c }];
            let v = slot_of[&OpRef { stage: e.to.0, index: e.to.1, channel: c }];
            let mut d = (nf as i64) * (e.weight as i64) - (opts.pipeline_depth as i64)
                + (v as i64)
                - (u as i64);
            if d < 0 {
                if opts.strict {
                    let name = format!(
                        "{}{}->{}{}",
                        stage_letter(e.from.0),
                        e.from.1,
                        stage_letter(e.to.0),
                        e.to.1
                    );
                    return Err(FoldingError::NegativeDelay { edge: name, delay: d });
                }
                let periods = (-d + nf as i64 - 1) / nf as i64;
                d += periods * nf as i64;
            }
            edges.push(FoldedEdge { from: e.from, to: e.to, channel: c, delay: d as usize });
        }
    }

    Ok(FoldedSchedule { nf, channels, firing, edges })
}

/// Machine-readable result of schedule validation.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub duplicates: Vec<OpRef>,
    pub missing: Vec<OpRef>,
    pub extra: Vec<OpRef>,
    pub negative_edges: Vec<String>,
}

impl Diagnostics {
    pub fn ok(&self) -> bool {
        self.duplicates.is_empty()
            && self.missing.is_empty()
            && self.extra.is_empty()
            && self.negative_edges.is_empty()
    }
}

/// Checks completeness, uniqueness and one-op-per-slot without failing;
/// problems come back as diagnostics.
pub fn validate_schedule(g: &DataFlowGraph, sets: &FoldingSets) -> Diagnostics {
    let mut diag = Diagnostics::default();
    let mut slot_of: HashMap<OpRef, usize> = HashMap::new();
    let mut channels = 1u32;
    for set in &sets.sets {
        for (i, op) in set.ops() {
            if slot_of.insert(op, i).is_some() {
                diag.duplicates.push(op);
            }
            channels = channels.max(op.channel + 1);
        }
    }
    for op in &g.ops {
        for c in 0..channels {
            let r = OpRef { stage: op.stage, index: op.index, channel: c };
            if !slot_of.contains_key(&r) {
                diag.missing.push(r);
            }
        }
    }
    for r in slot_of.keys() {
        if r.stage >= g.stages() || r.index >= g.n / 2 {
            diag.extra.push(*r);
        }
    }
    diag.missing.sort();
    diag.extra.sort();
    diag
}

/// Lifetime analysis of a folded schedule over one steady-state period.
///
/// `peak_live` is the maximum number of simultaneously live values (the
/// register lower bound with full sharing); `unshared_sum` is what a naive
/// one-delay-line-per-edge build would spend. A value produced and consumed
/// in the same cycle occupies no register. Architecturally committed blocks
/// (DSDs, reorder files) are counted by the netlist census instead and sit
/// on top of this bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LifetimeAnalysis {
    pub peak_live: usize,
    pub unshared_sum: usize,
    pub per_cycle: Vec<usize>,
}

pub fn minimize_registers(schedule: &FoldedSchedule) -> LifetimeAnalysis {
    let nf = schedule.nf;
    let mut per_cycle = vec![0usize; nf];
    let mut unshared = 0usize;
    for e in &schedule.edges {
        let u = schedule
            .slot_of(&OpRef { stage: e.from.0, index: e.from.1, channel: e.channel })
            .expect("producer scheduled");
        unshared += e.delay;
        for j in 1..=e.delay {
            per_cycle[(u + j) % nf] += 1;
        }
    }
    LifetimeAnalysis {
        peak_live: per_cycle.iter().copied().max().unwrap_or(0),
        unshared_sum: unshared,
        per_cycle,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Serializes folding sets to the plain-text exchange format, one unit per
/// line: `UNIT: slot0 slot1 ...` with `-` for nulls and primes for channels.
pub fn format_sets(sets: &FoldingSets) -> String {
    let mut out = String::new();
    for set in &sets.sets {
        out.push_str(&set.unit);
        out.push(':');
        for slot in &set.slots {
            out.push(' ');
            out.push_str(&slot.to_string());
        }
        out.push('\n');
    }
    out
}

/// Parses the plain-text folding set format. Round-trips bit-exactly with
/// [`format_sets`]. Never panics on malformed input.
pub fn parse_sets(text: &str) -> Result<FoldingSets, ParseError> {
    let mut sets = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (unit, rest) = line.split_once(':').ok_or_else(|| ParseError {
            line: lineno + 1,
            message: "expected `UNIT: slots...`".into(),
        })?;
        let unit = unit.trim();
        if unit.len() != 1 || !unit.chars().all(|c| c.is_ascii_uppercase()) {
            return Err(ParseError {
                line: lineno + 1,
                message: format!("unit name `{unit}` must be a single capital letter"),
            });
        }
        let mut slots = Vec::new();
        for tok in rest.split_whitespace() {
            slots.push(parse_slot(tok).map_err(|message| ParseError { line: lineno + 1, message })?);
        }
        sets.push(FoldingSet { unit: unit.to_string(), slots });
    }
    Ok(FoldingSets { sets })
}

fn parse_slot(tok: &str) -> Result<Slot, String> {
    if tok == "-" {
        return Ok(Slot::Null);
    }
    let mut chars = tok.chars();
    let letter = chars.next().ok_or("empty slot token")?;
    if !letter.is_ascii_uppercase() {
        return Err(format!("slot `{tok}`: expected stage letter"));
    }
    let rest: String = chars.collect();
    let primes = rest.chars().take_while(|&c| c == '\'').count();
    if primes > 8 {
        return Err(format!("slot `{tok}`: too many primes"));
    }
    let digits = &rest[primes..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 6 {
        return Err(format!("slot `{tok}`: expected op index"));
    }
    let index: usize = digits.parse().map_err(|_| format!("slot `{tok}`: bad index"))?;
    Ok(Slot::Op(OpRef { stage: (letter as u8 - b'A') as usize, index, channel: primes as u32 }))
}
