//! Synthesis of stream reorder circuits from arrival and departure
//! schedules.
//!
//! Tokens arrive on input lanes at fixed periodic cycles and must leave on
//! output lanes at fixed periodic cycles. A register file with periodic
//! counter-based control realizes the permutation. Registers are assigned by
//! running a first-fit allocation forward in time until the assignment
//! becomes periodic; first-fit over intervals never exceeds the peak number
//! of simultaneously live tokens, so the file size equals the lifetime lower
//! bound. Same-cycle tokens bypass the file combinationally.

use std::collections::HashMap;
use std::fmt;

use crate::netlist::{
    Circuit, CircuitBuilder, FileControl, NetlistError, ReadSel, Section, Wire,
};

/// One token movement: identity, lane and absolute cycle (for frame 0; the
/// pattern repeats every period).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleItem {
    pub channel: u32,
    pub index: u32,
    pub lane: usize,
    pub cycle: usize,
}

/// A periodic lane schedule: which token appears where and when.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortSchedule {
    pub period: usize,
    pub lanes: usize,
    pub items: Vec<ScheduleItem>,
}

impl PortSchedule {
    pub fn new(period: usize, lanes: usize) -> Self {
        PortSchedule { period, lanes, items: Vec::new() }
    }

    pub fn push(&mut self, channel: u32, index: u32, lane: usize, cycle: usize) {
        self.items.push(ScheduleItem { channel, index, lane, cycle });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReorderError {
    /// A token departs before it arrives.
    Causality { channel: u32, index: u32, arrives: usize, departs: usize },
    /// Departures are not a permutation of arrivals.
    NotPermutation(String),
    PeriodMismatch,
    /// Two tokens fight over the same (cycle, lane) slot.
    SlotConflict { lane: usize, cycle: usize },
}

impl fmt::Display for ReorderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReorderError::Causality { channel, index, arrives, departs } => write!(
                f,
                "token ch{channel}#{index} departs at {departs} before arriving at {arrives}"
            ),
            ReorderError::NotPermutation(msg) => write!(f, "not a permutation: {msg}"),
            ReorderError::PeriodMismatch => write!(f, "arrival and departure periods differ"),
            ReorderError::SlotConflict { lane, cycle } => {
                write!(f, "two tokens scheduled on lane {lane} at cycle {cycle}")
            }
        }
    }
}

impl std::error::Error for ReorderError {}

#[derive(Debug, Clone)]
struct TokenPlan {
    arr_phase: usize,
    arr_lane: usize,
    lifetime: usize,
    dep_lane: usize,
}

/// Result of reorder synthesis: the register-file program and its size.
#[derive(Debug, Clone)]
pub struct ReorderPlan {
    pub registers: usize,
    /// Maximum simultaneously live tokens: the lifetime lower bound the
    /// register count achieves.
    pub peak_live: usize,
    pub lanes_in: usize,
    pub lanes_out: usize,
    pub control: FileControl,
}

impl ReorderPlan {
    /// Instantiates the plan inside a circuit under construction.
    pub fn add_to(
        &self,
        b: &mut CircuitBuilder,
        section: Section,
        label: &str,
        inputs: Vec<Wire>,
    ) -> Result<Vec<Wire>, NetlistError> {
        b.regfile(section, label, self.registers, self.control.clone(), inputs, self.lanes_out)
    }

    /// Builds the plan as a standalone circuit.
    pub fn into_circuit(&self, section: Section, label: &str) -> Result<Circuit, NetlistError> {
        let mut b = CircuitBuilder::new(self.lanes_in);
        let ins: Vec<Wire> = (0..self.lanes_in).map(|l| b.input(l)).collect();
        let outs = self.add_to(&mut b, section, label, ins)?;
        for o in outs {
            b.output(o);
        }
        b.build()
    }

    /// Pads the file with spare registers up to `n` without touching the
    /// control program.
    pub fn with_min_registers(mut self, n: usize) -> Self {
        self.registers = self.registers.max(n);
        self
    }
}

/// Synthesizes a register-allocation circuit moving tokens from `arrival` to
/// `departure`. The register count equals the peak number of simultaneously
/// live tokens.
pub fn synthesize_reorder(
    arrival: &PortSchedule,
    departure: &PortSchedule,
) -> Result<ReorderPlan, ReorderError> {
    if arrival.period != departure.period {
        return Err(ReorderError::PeriodMismatch);
    }
    let period = arrival.period;
    for sched in [arrival, departure] {
        let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
        for it in &sched.items {
            if seen.insert((it.lane, it.cycle % period), ()).is_some() {
                return Err(ReorderError::SlotConflict {
                    lane: it.lane,
                    cycle: it.cycle % period,
                });
            }
        }
    }

    let mut deps: HashMap<(u32, u32), ScheduleItem> = HashMap::new();
    for it in &departure.items {
        if deps.insert((it.channel, it.index), *it).is_some() {
            return Err(ReorderError::NotPermutation(format!(
                "token ch{}#{} departs twice",
                it.channel, it.index
            )));
        }
    }

    let mut bypasses: Vec<(usize, usize, usize)> = Vec::new(); // (phase, in lane, out lane)
    let mut tokens: Vec<TokenPlan> = Vec::new();
    for it in &arrival.items {
        let dep = deps.remove(&(it.channel, it.index)).ok_or_else(|| {
            ReorderError::NotPermutation(format!(
                "token ch{}#{} arrives but never departs",
                it.channel, it.index
            ))
        })?;
        if dep.cycle < it.cycle {
            return Err(ReorderError::Causality {
                channel: it.channel,
                index: it.index,
                arrives: it.cycle,
                departs: dep.cycle,
            });
        }
        let lifetime = dep.cycle - it.cycle;
        if lifetime == 0 {
            bypasses.push((it.cycle % period, it.lane, dep.lane));
        } else {
            tokens.push(TokenPlan {
                arr_phase: it.cycle % period,
                arr_lane: it.lane,
                lifetime,
                dep_lane: dep.lane,
            });
        }
    }
    if let Some(((ch, idx), _)) = deps.into_iter().next() {
        return Err(ReorderError::NotPermutation(format!(
            "token ch{ch}#{idx} departs but never arrives"
        )));
    }

    let (registers, peak_live, control) =
        allocate(&tokens, &bypasses, period, departure.lanes);
    Ok(ReorderPlan {
        registers,
        peak_live,
        lanes_in: arrival.lanes,
        lanes_out: departure.lanes,
        control,
    })
}

/// A live token instance during allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct LiveInst {
    token: usize,
    born: usize,
}

fn allocate(
    tokens: &[TokenPlan],
    bypasses: &[(usize, usize, usize)],
    period: usize,
    lanes_out: usize,
) -> (usize, usize, FileControl) {
    let max_life = tokens.iter().map(|t| t.lifetime).max().unwrap_or(0);
    // Simulate first-fit forward in time until the assignment state repeats
    // at a period boundary; the repeating window becomes the control.
    let mut regs: Vec<Option<LiveInst>> = Vec::new();
    let mut peak = 0usize;
    let mut sigs: HashMap<Vec<Option<(usize, usize)>>, usize> = HashMap::new();
    let mut history: Vec<(Vec<(usize, usize)>, Vec<(usize, usize)>)> = Vec::new(); // per cycle: reads (reg, token), writes (reg, token)
    let limit = period * (8 + 4 * (max_life / period.max(1) + 1));
    let mut loop_bounds: Option<(usize, usize)> = None;

    for t in 0..limit {
        if t % period == 0 {
            let sig: Vec<Option<(usize, usize)>> = regs
                .iter()
                .map(|r| r.map(|inst| (inst.token, t - inst.born)))
                .collect();
            if let Some(&start) = sigs.get(&sig) {
                loop_bounds = Some((start, t));
                break;
            }
            sigs.insert(sig, t);
        }
        let mut reads = Vec::new();
        let mut writes = Vec::new();
        // Deaths free registers before births claim them.
        for (ri, slot) in regs.iter_mut().enumerate() {
            if let Some(inst) = *slot {
                if inst.born + tokens[inst.token].lifetime == t {
                    reads.push((ri, inst.token));
                    *slot = None;
                }
            }
        }
        for (ti, tok) in tokens.iter().enumerate() {
            if t % period == tok.arr_phase {
                let free = regs.iter().position(|r| r.is_none()).unwrap_or_else(|| {
                    regs.push(None);
                    regs.len() - 1
                });
                regs[free] = Some(LiveInst { token: ti, born: t });
                writes.push((free, ti));
            }
        }
        peak = peak.max(regs.iter().filter(|r| r.is_some()).count());
        history.push((reads, writes));
    }

    let (loop_start, loop_end) =
        loop_bounds.expect("periodic reorder allocation must reach a steady state");
    let q = (loop_end - loop_start).max(period);

    let mut control = FileControl {
        period: q,
        writes: vec![Vec::new(); q],
        reads: vec![vec![ReadSel::Idle; lanes_out]; q],
    };
    for (offset, (reads, writes)) in history[loop_start..loop_end].iter().enumerate() {
        let phase = (loop_start + offset) % q;
        for &(reg, token) in writes {
            control.writes[phase].push((tokens[token].arr_lane, reg));
        }
        for &(reg, token) in reads {
            control.reads[phase][tokens[token].dep_lane] = ReadSel::Reg(reg);
        }
    }
    for &(phase, in_lane, out_lane) in bypasses {
        for p in (phase..q).step_by(period) {
            control.reads[p][out_lane] = ReadSel::Bypass(in_lane);
        }
    }

    (regs.len(), peak, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{simulate, Token};
    use num_complex::Complex64;

    fn run_plan(plan: &ReorderPlan, streams: &[Vec<Token>], cycles: usize) -> Vec<Vec<Token>> {
        let mut c = plan.into_circuit(Section::Reordering, "file").unwrap();
        let tr = simulate(&mut c, streams, cycles).unwrap();
        (0..cycles).map(|t| tr.outputs(t).to_vec()).collect()
    }

    fn tokens_of(ids: &[(u32, usize)]) -> Vec<Token> {
        // (index, cycle) pairs on one lane, bubbles elsewhere.
        let len = ids.iter().map(|&(_, c)| c).max().unwrap_or(0) + 1;
        let mut v = vec![Token::Bubble; len];
        for &(idx, cyc) in ids {
            v[cyc] = Token::sample(Complex64::new(idx as f64, 0.0), 0, 0, idx);
        }
        v
    }

    #[test]
    fn identity_with_zero_skew_needs_no_registers() {
        let mut arr = PortSchedule::new(4, 1);
        let mut dep = PortSchedule::new(4, 1);
        for i in 0..4 {
            arr.push(0, i as u32, 0, i);
            dep.push(0, i as u32, 0, i);
        }
        let plan = synthesize_reorder(&arr, &dep).unwrap();
        assert_eq!(plan.registers, 0);
        assert_eq!(plan.peak_live, 0);
        let out = run_plan(&plan, &[tokens_of(&[(0, 0), (1, 1), (2, 2), (3, 3)])], 4);
        for (t, row) in out.iter().enumerate() {
            assert_eq!(row[0].tag().unwrap().index as usize, t);
        }
    }

    #[test]
    fn reverse_of_four_block_needs_three_registers() {
        // Stream abcd leaves as dcba at the earliest causal cycles.
        let mut arr = PortSchedule::new(4, 1);
        let mut dep = PortSchedule::new(4, 1);
        for i in 0..4usize {
            arr.push(0, i as u32, 0, i);
            dep.push(0, i as u32, 0, 3 + (3 - i));
        }
        let plan = synthesize_reorder(&arr, &dep).unwrap();
        assert_eq!(plan.peak_live, 3);
        assert_eq!(plan.registers, 3);
        // Behavior: feed two frames and expect the reversed order with the
        // second frame right behind.
        let ids: Vec<(u32, usize)> = (0..8).map(|i| (i as u32 % 4, i)).collect();
        let out = run_plan(&plan, &[tokens_of(&ids)], 12);
        let seq: Vec<u32> =
            out.iter().filter_map(|row| row[0].tag().map(|t| t.index)).collect();
        assert_eq!(seq, vec![3, 2, 1, 0, 3, 2, 1, 0]);
    }

    #[test]
    fn causality_violation_is_an_error() {
        let mut arr = PortSchedule::new(4, 1);
        let mut dep = PortSchedule::new(4, 1);
        arr.push(0, 0, 0, 3);
        dep.push(0, 0, 0, 1);
        for i in 1..4u32 {
            arr.push(0, i, 0, i as usize - 1);
            dep.push(0, i, 0, 5 + i as usize);
        }
        assert!(matches!(
            synthesize_reorder(&arr, &dep),
            Err(ReorderError::Causality { .. })
        ));
    }

    #[test]
    fn non_permutation_is_an_error() {
        let mut arr = PortSchedule::new(2, 1);
        let mut dep = PortSchedule::new(2, 1);
        arr.push(0, 0, 0, 0);
        arr.push(0, 1, 0, 1);
        dep.push(0, 0, 0, 0);
        dep.push(0, 7, 0, 1);
        assert!(matches!(synthesize_reorder(&arr, &dep), Err(ReorderError::NotPermutation(_))));
    }

    #[test]
    fn serial_bit_reversal_of_16_needs_nine_registers() {
        // The classic streaming bit reversal: value rev(t) arrives at t,
        // value p departs at p + 9.
        let rev = crate::oracle::bit_reverse_perm(16);
        let mut arr = PortSchedule::new(16, 1);
        let mut dep = PortSchedule::new(16, 1);
        for t in 0..16usize {
            arr.push(0, rev[t] as u32, 0, t);
        }
        for p in 0..16usize {
            dep.push(0, p as u32, 0, p + 9);
        }
        let plan = synthesize_reorder(&arr, &dep).unwrap();
        assert_eq!(plan.peak_live, 9);
        assert_eq!(plan.registers, 9);
    }

    #[test]
    fn half_size_reversal_needs_three_registers_per_lane() {
        let perm = crate::oracle::half_size_bit_reverse_perm(16);
        // One lane carries the low half then the high half, each half in
        // half-size bit-reversed order; natural order leaves 3 cycles later.
        let mut arr = PortSchedule::new(16, 1);
        let mut dep = PortSchedule::new(16, 1);
        for s in 0..16usize {
            arr.push(0, perm[s] as u32, 0, s);
            dep.push(0, s as u32, 0, s + 3);
        }
        let plan = synthesize_reorder(&arr, &dep).unwrap();
        assert_eq!(plan.peak_live, 3);
        assert_eq!(plan.registers, 3);
    }

    #[test]
    fn spare_registers_can_be_committed() {
        let mut arr = PortSchedule::new(4, 1);
        let mut dep = PortSchedule::new(4, 1);
        for i in 0..4usize {
            arr.push(0, i as u32, 0, i);
            dep.push(0, i as u32, 0, i + 1);
        }
        let plan = synthesize_reorder(&arr, &dep).unwrap().with_min_registers(7);
        assert_eq!(plan.registers, 7);
    }

    #[test]
    fn two_lane_reorder_moves_tokens_across_lanes() {
        // Lane 0 and lane 1 swap with a one-cycle skew.
        let mut arr = PortSchedule::new(2, 2);
        let mut dep = PortSchedule::new(2, 2);
        arr.push(0, 0, 0, 0);
        arr.push(0, 1, 1, 0);
        arr.push(0, 2, 0, 1);
        arr.push(0, 3, 1, 1);
        dep.push(0, 0, 1, 1);
        dep.push(0, 1, 0, 1);
        dep.push(0, 2, 1, 2);
        dep.push(0, 3, 0, 2);
        let plan = synthesize_reorder(&arr, &dep).unwrap();
        assert_eq!(plan.registers, 2);
        let lane0 = tokens_of(&[(0, 0), (2, 1)]);
        let lane1 = tokens_of(&[(1, 0), (3, 1)]);
        let out = run_plan(&plan, &[lane0, lane1], 4);
        assert_eq!(out[1][0].tag().unwrap().index, 1);
        assert_eq!(out[1][1].tag().unwrap().index, 0);
        assert_eq!(out[2][0].tag().unwrap().index, 3);
        assert_eq!(out[2][1].tag().unwrap().index, 2);
    }
}
