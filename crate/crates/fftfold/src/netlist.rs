//! Cycle-accurate simulation of folded datapaths: delay lines, periodic
//! 2x2 switches, butterflies, twiddle multipliers, reorder register files
//! and the delay-switch-delay blocks built from them.
//!
//! Values travel as [`Token`]s: a complex sample plus a provenance tag, or a
//! bubble while a pipeline fills. Tags pass unchanged through storage and
//! routing, so stream permutations can be checked structurally, independent
//! of the arithmetic.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;

use crate::dfg::twiddle;

/// Provenance of a sample: which channel and frame it belongs to and which
/// in-place signal position it currently represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub channel: u32,
    pub frame: u64,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Bubble,
    Sample { value: Complex64, tag: Tag },
}

impl Token {
    pub fn sample(value: Complex64, channel: u32, frame: u64, index: u32) -> Self {
        Token::Sample { value, tag: Tag { channel, frame, index } }
    }

    pub fn is_bubble(&self) -> bool {
        matches!(self, Token::Bubble)
    }

    pub fn value(&self) -> Option<Complex64> {
        match self {
            Token::Bubble => None,
            Token::Sample { value, .. } => Some(*value),
        }
    }

    pub fn tag(&self) -> Option<Tag> {
        match self {
            Token::Bubble => None,
            Token::Sample { tag, .. } => Some(*tag),
        }
    }
}

/// Datapath section a component is accounted under, mirroring the four
/// register columns of the architecture comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    PreProcessing,
    Fft,
    PostProcessing,
    Reordering,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Section::PreProcessing => "pre-processing",
            Section::Fft => "fft",
            Section::PostProcessing => "post-processing",
            Section::Reordering => "reordering",
        };
        write!(f, "{name}")
    }
}

pub type Wire = usize;

/// Register file control: periodic write and read programs, one entry per
/// phase. Reads happen before writes within a cycle.
#[derive(Debug, Clone)]
pub struct FileControl {
    pub period: usize,
    /// Per phase: `(input lane, register)` stores.
    pub writes: Vec<Vec<(usize, usize)>>,
    /// Per phase, per output lane: where the lane's token comes from.
    pub reads: Vec<Vec<ReadSel>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadSel {
    Reg(usize),
    Bypass(usize),
    Idle,
}

#[derive(Debug, Clone)]
enum Kind {
    Delay {
        buf: Vec<Token>,
        head: usize,
    },
    /// 2x2 switch, crossed when `crossed[cycle % period]`.
    Switch {
        crossed: Vec<bool>,
    },
    /// Periodic 2-to-1 selector; `select[phase]` picks the input lane.
    Mux {
        select: Vec<usize>,
    },
    /// Radix-2 butterfly: outputs `a + b` and `a - b`.
    Butterfly,
    /// Multiplies by `W_n^{exponents[phase]}`.
    TwiddleMul {
        table: Vec<Complex64>,
        exponents: Vec<usize>,
    },
    /// Reorder register file with periodic control.
    RegFile {
        regs: Vec<Token>,
        control: FileControl,
    },
}

#[derive(Debug, Clone)]
struct Component {
    label: String,
    section: Section,
    kind: Kind,
    inputs: Vec<Wire>,
    outputs: Vec<Wire>,
}

impl Component {
    fn registers(&self) -> usize {
        match &self.kind {
            Kind::Delay { buf, .. } => buf.len(),
            Kind::RegFile { regs, .. } => regs.len(),
            _ => 0,
        }
    }

    fn combinational(&self) -> bool {
        !matches!(self.kind, Kind::Delay { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetlistError {
    CombinationalCycle(String),
    WireConflict(String),
    ArityMismatch { expected: usize, got: usize },
    BadControl(String),
}

impl fmt::Display for NetlistError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetlistError::CombinationalCycle(c) => write!(f, "combinational cycle through {c}"),
            NetlistError::WireConflict(w) => write!(f, "wire {w} has more than one driver"),
            NetlistError::ArityMismatch { expected, got } => {
                write!(f, "expected {expected} input tokens, got {got}")
            }
            NetlistError::BadControl(msg) => write!(f, "bad periodic control: {msg}"),
        }
    }
}

impl std::error::Error for NetlistError {}

/// Builder for [`Circuit`]s. Wires are single-driver by construction.
#[derive(Debug, Default)]
pub struct CircuitBuilder {
    components: Vec<Component>,
    num_inputs: usize,
    num_wires: usize,
    outputs: Vec<Wire>,
}

impl CircuitBuilder {
    pub fn new(num_inputs: usize) -> Self {
        CircuitBuilder { num_inputs, num_wires: num_inputs, ..Default::default() }
    }

    pub fn input(&self, lane: usize) -> Wire {
        assert!(lane < self.num_inputs);
        lane
    }

    fn fresh_wire(&mut self) -> Wire {
        let w = self.num_wires;
        self.num_wires += 1;
        w
    }

    pub fn delay(&mut self, section: Section, label: &str, k: usize, input: Wire) -> Wire {
        assert!(k >= 1, "zero-length delay is a wire");
        let out = self.fresh_wire();
        self.components.push(Component {
            label: label.to_string(),
            section,
            kind: Kind::Delay { buf: vec![Token::Bubble; k], head: 0 },
            inputs: vec![input],
            outputs: vec![out],
        });
        out
    }

    /// 2x2 switch: parallel routes `(a, b) -> (a, b)`, crossed routes
    /// `(a, b) -> (b, a)`.
    pub fn switch(
        &mut self,
        section: Section,
        label: &str,
        crossed: Vec<bool>,
        a: Wire,
        b: Wire,
    ) -> (Wire, Wire) {
        assert!(!crossed.is_empty());
        let o0 = self.fresh_wire();
        let o1 = self.fresh_wire();
        self.components.push(Component {
            label: label.to_string(),
            section,
            kind: Kind::Switch { crossed },
            inputs: vec![a, b],
            outputs: vec![o0, o1],
        });
        (o0, o1)
    }

    pub fn mux(
        &mut self,
        section: Section,
        label: &str,
        select: Vec<usize>,
        a: Wire,
        b: Wire,
    ) -> Wire {
        assert!(!select.is_empty() && select.iter().all(|&s| s < 2));
        let out = self.fresh_wire();
        self.components.push(Component {
            label: label.to_string(),
            section,
            kind: Kind::Mux { select },
            inputs: vec![a, b],
            outputs: vec![out],
        });
        out
    }

    pub fn butterfly(&mut self, section: Section, label: &str, a: Wire, b: Wire) -> (Wire, Wire) {
        let top = self.fresh_wire();
        let bot = self.fresh_wire();
        self.components.push(Component {
            label: label.to_string(),
            section,
            kind: Kind::Butterfly,
            inputs: vec![a, b],
            outputs: vec![top, bot],
        });
        (top, bot)
    }

    /// Twiddle multiplier with a periodic exponent program over roots of
    /// order `n`. The factor table is computed once at build time.
    pub fn twiddle_mul(
        &mut self,
        section: Section,
        label: &str,
        n: usize,
        exponents: Vec<usize>,
        input: Wire,
    ) -> Wire {
        let table: Vec<Complex64> = (0..n).map(|k| twiddle(n, k)).collect();
        let out = self.fresh_wire();
        self.components.push(Component {
            label: label.to_string(),
            section,
            kind: Kind::TwiddleMul { table, exponents },
            inputs: vec![input],
            outputs: vec![out],
        });
        out
    }

    pub fn regfile(
        &mut self,
        section: Section,
        label: &str,
        registers: usize,
        control: FileControl,
        inputs: Vec<Wire>,
        out_lanes: usize,
    ) -> Result<Vec<Wire>, NetlistError> {
        if control.writes.len() != control.period || control.reads.len() != control.period {
            return Err(NetlistError::BadControl(format!(
                "{label}: control tables must cover the whole period"
            )));
        }
        for (phase, reads) in control.reads.iter().enumerate() {
            if reads.len() != out_lanes {
                return Err(NetlistError::BadControl(format!(
                    "{label}: phase {phase} read program has wrong arity"
                )));
            }
            for sel in reads {
                match sel {
                    ReadSel::Reg(r) if *r >= registers => {
                        return Err(NetlistError::BadControl(format!(
                            "{label}: read of register {r} out of {registers}"
                        )))
                    }
                    ReadSel::Bypass(l) if *l >= inputs.len() => {
                        return Err(NetlistError::BadControl(format!(
                            "{label}: bypass of missing lane {l}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        for (phase, writes) in control.writes.iter().enumerate() {
            for (lane, reg) in writes {
                if *lane >= inputs.len() || *reg >= registers {
                    return Err(NetlistError::BadControl(format!(
                        "{label}: phase {phase} write ({lane}, {reg}) out of range"
                    )));
                }
            }
        }
        let outs: Vec<Wire> = (0..out_lanes).map(|_| self.fresh_wire()).collect();
        self.components.push(Component {
            label: label.to_string(),
            section,
            kind: Kind::RegFile { regs: vec![Token::Bubble; registers], control },
            inputs,
            outputs: outs.clone(),
        });
        Ok(outs)
    }

    pub fn output(&mut self, wire: Wire) {
        self.outputs.push(wire);
    }

    pub fn build(self) -> Result<Circuit, NetlistError> {
        let mut driver: Vec<Option<usize>> = vec![None; self.num_wires];
        for (ci, comp) in self.components.iter().enumerate() {
            for &w in &comp.outputs {
                if driver[w].replace(ci).is_some() {
                    return Err(NetlistError::WireConflict(comp.label.clone()));
                }
            }
        }

        // Topological order over combinational dependencies; delays break
        // the chains because their outputs come from state.
        let n = self.components.len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (ci, comp) in self.components.iter().enumerate() {
            if !comp.combinational() {
                continue;
            }
            for &w in &comp.inputs {
                if w < self.num_inputs {
                    continue;
                }
                if let Some(p) = driver[w] {
                    succ[p].push(ci);
                    indegree[ci] += 1;
                }
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop() {
            order.push(i);
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push(s);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n)
                .find(|&i| indegree[i] > 0)
                .map(|i| self.components[i].label.clone())
                .unwrap_or_default();
            return Err(NetlistError::CombinationalCycle(stuck));
        }

        Ok(Circuit {
            components: self.components,
            order,
            num_inputs: self.num_inputs,
            num_wires: self.num_wires,
            outputs: self.outputs,
            cycle: 0,
        })
    }
}

/// A built netlist with its evaluation order and cycle counter.
#[derive(Debug, Clone)]
pub struct Circuit {
    components: Vec<Component>,
    order: Vec<usize>,
    num_inputs: usize,
    num_wires: usize,
    outputs: Vec<Wire>,
    cycle: u64,
}

impl Circuit {
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Total register count, auditable by walking the component list.
    pub fn register_census(&self) -> usize {
        self.components.iter().map(|c| c.registers()).sum()
    }

    pub fn census_by_section(&self) -> HashMap<Section, usize> {
        let mut m = HashMap::new();
        for c in &self.components {
            *m.entry(c.section).or_insert(0) += c.registers();
        }
        m
    }

    /// Per-block register line items `(section, label, registers)`.
    pub fn census_items(&self) -> Vec<(Section, String, usize)> {
        let mut items: HashMap<(Section, String), usize> = HashMap::new();
        for c in &self.components {
            if c.registers() > 0 {
                *items.entry((c.section, c.label.clone())).or_insert(0) += c.registers();
            }
        }
        let mut v: Vec<_> =
            items.into_iter().map(|((s, l), n)| (s, l, n)).collect();
        v.sort_by(|a, b| (format!("{}", a.0), &a.1).cmp(&(format!("{}", b.0), &b.1)));
        v
    }

    /// Plain-text component listing with register counts.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            let kind = match &c.kind {
                Kind::Delay { buf, .. } => format!("delay({})", buf.len()),
                Kind::Switch { crossed } => format!("switch(period {})", crossed.len()),
                Kind::Mux { select } => format!("mux(period {})", select.len()),
                Kind::Butterfly => "butterfly".to_string(),
                Kind::TwiddleMul { exponents, .. } => {
                    format!("twiddle(period {})", exponents.len())
                }
                Kind::RegFile { regs, control } => {
                    format!("regfile({} regs, period {})", regs.len(), control.period)
                }
            };
            out.push_str(&format!(
                "{:<16} {:<24} {} regs [{}]\n",
                c.label,
                kind,
                c.registers(),
                c.section
            ));
        }
        out.push_str(&format!("total registers: {}\n", self.register_census()));
        out
    }

    pub fn reset(&mut self) {
        self.cycle = 0;
        for c in &mut self.components {
            match &mut c.kind {
                Kind::Delay { buf, head } => {
                    buf.fill(Token::Bubble);
                    *head = 0;
                }
                Kind::RegFile { regs, .. } => regs.fill(Token::Bubble),
                _ => {}
            }
        }
    }

    /// Advances one cycle: evaluates combinational logic in topological
    /// order, then commits register state. Returns the output-lane tokens.
    pub fn step(&mut self, inputs: &[Token]) -> Result<Vec<Token>, NetlistError> {
        let board = self.eval_cycle(inputs, None)?;
        Ok(self.outputs.iter().map(|&w| board[w]).collect())
    }

    fn eval_cycle(
        &mut self,
        inputs: &[Token],
        mut fires: Option<&mut HashMap<String, Vec<bool>>>,
    ) -> Result<Vec<Token>, NetlistError> {
        if inputs.len() != self.num_inputs {
            return Err(NetlistError::ArityMismatch {
                expected: self.num_inputs,
                got: inputs.len(),
            });
        }
        let mut board = vec![Token::Bubble; self.num_wires];
        board[..self.num_inputs].copy_from_slice(inputs);
        let phase_of = |len: usize, cycle: u64| (cycle % len as u64) as usize;

        // Registered outputs first: they depend only on state.
        for c in &self.components {
            if let Kind::Delay { buf, head } = &c.kind {
                board[c.outputs[0]] = buf[*head];
            }
        }

        for &ci in &self.order {
            let c = &self.components[ci];
            match &c.kind {
                Kind::Delay { .. } => {}
                Kind::Switch { crossed } => {
                    let x = crossed[phase_of(crossed.len(), self.cycle)];
                    let (a, b) = (board[c.inputs[0]], board[c.inputs[1]]);
                    board[c.outputs[0]] = if x { b } else { a };
                    board[c.outputs[1]] = if x { a } else { b };
                }
                Kind::Mux { select } => {
                    let s = select[phase_of(select.len(), self.cycle)];
                    board[c.outputs[0]] = board[c.inputs[s]];
                }
                Kind::Butterfly => {
                    let (a, b) = (board[c.inputs[0]], board[c.inputs[1]]);
                    if let Some(f) = fires.as_deref_mut() {
                        if let Some(v) = f.get_mut(&c.label) {
                            v.push(!a.is_bubble() && !b.is_bubble());
                        }
                    }
                    let (top, bot) = butterfly_tokens(a, b);
                    board[c.outputs[0]] = top;
                    board[c.outputs[1]] = bot;
                }
                Kind::TwiddleMul { table, exponents } => {
                    let e = exponents[phase_of(exponents.len(), self.cycle)];
                    board[c.outputs[0]] = match board[c.inputs[0]] {
                        Token::Bubble => Token::Bubble,
                        Token::Sample { value, tag } => {
                            Token::Sample { value: value * table[e % table.len()], tag }
                        }
                    };
                }
                Kind::RegFile { regs, control } => {
                    let phase = phase_of(control.period, self.cycle);
                    for (lane, sel) in control.reads[phase].iter().enumerate() {
                        board[c.outputs[lane]] = match sel {
                            ReadSel::Reg(r) => regs[*r],
                            ReadSel::Bypass(l) => board[c.inputs[*l]],
                            ReadSel::Idle => Token::Bubble,
                        };
                    }
                }
            }
        }

        // Commit state.
        let cycle = self.cycle;
        for c in &mut self.components {
            match &mut c.kind {
                Kind::Delay { buf, head } => {
                    buf[*head] = board[c.inputs[0]];
                    *head = (*head + 1) % buf.len();
                }
                Kind::RegFile { regs, control } => {
                    let phase = phase_of(control.period, cycle);
                    for (lane, reg) in &control.writes[phase] {
                        regs[*reg] = board[c.inputs[*lane]];
                    }
                }
                _ => {}
            }
        }
        self.cycle += 1;
        Ok(board)
    }

    fn port_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for lane in 0..self.num_inputs {
            names.push(format!("in{lane}"));
        }
        for lane in 0..self.outputs.len() {
            names.push(format!("out{lane}"));
        }
        for c in &self.components {
            for (p, _) in c.outputs.iter().enumerate() {
                names.push(format!("{}.{}", c.label, p));
            }
        }
        names
    }
}

fn butterfly_tokens(a: Token, b: Token) -> (Token, Token) {
    match (a, b) {
        (Token::Sample { value: va, tag: ta }, Token::Sample { value: vb, tag: tb }) => {
            let top_tag = Tag { index: ta.index.min(tb.index), ..ta };
            let bot_tag = Tag { index: ta.index.max(tb.index), ..ta };
            (
                Token::Sample { value: va + vb, tag: top_tag },
                Token::Sample { value: va - vb, tag: bot_tag },
            )
        }
        _ => (Token::Bubble, Token::Bubble),
    }
}

/// Full per-cycle record of every port of a circuit, replayable and
/// deterministic given identical input streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub port_names: Vec<String>,
    /// `rows[cycle][port]`.
    pub rows: Vec<Vec<Token>>,
    pub num_inputs: usize,
    pub num_outputs: usize,
    /// Butterfly fire flags per cycle, keyed by unit label.
    pub fires: HashMap<String, Vec<bool>>,
}

impl Trace {
    pub fn cycles(&self) -> usize {
        self.rows.len()
    }

    pub fn inputs(&self, cycle: usize) -> &[Token] {
        &self.rows[cycle][..self.num_inputs]
    }

    pub fn outputs(&self, cycle: usize) -> &[Token] {
        &self.rows[cycle][self.num_inputs..self.num_inputs + self.num_outputs]
    }

    pub fn output(&self, cycle: usize, lane: usize) -> Option<&Token> {
        self.rows.get(cycle).map(|r| &r[self.num_inputs + lane])
    }

    pub fn butterfly_units(&self) -> Vec<String> {
        let mut v: Vec<String> = self.fires.keys().cloned().collect();
        v.sort();
        v
    }

    pub fn unit_fired(&self, cycle: usize, unit: &str) -> bool {
        self.fires.get(unit).map(|f| f[cycle]).unwrap_or(false)
    }
}

/// Runs `circuit` for `cycles` steps against per-lane input streams; lanes
/// beyond the end of their stream read bubbles.
pub fn simulate(
    circuit: &mut Circuit,
    streams: &[Vec<Token>],
    cycles: usize,
) -> Result<Trace, NetlistError> {
    assert_eq!(streams.len(), circuit.num_inputs());
    let port_names = circuit.port_names();
    let mut rows = Vec::with_capacity(cycles);
    let mut fires: HashMap<String, Vec<bool>> = circuit
        .components
        .iter()
        .filter(|c| matches!(c.kind, Kind::Butterfly))
        .map(|c| (c.label.clone(), Vec::with_capacity(cycles)))
        .collect();

    for t in 0..cycles {
        let inputs: Vec<Token> = (0..circuit.num_inputs())
            .map(|lane| streams[lane].get(t).copied().unwrap_or(Token::Bubble))
            .collect();

        // step() consumes the board; rebuild the per-port row from a fresh
        // evaluation by recording the wires the ports map to.
        let row = circuit.step_recording(&inputs, &mut fires)?;
        rows.push(row);
    }

    Ok(Trace {
        port_names,
        rows,
        num_inputs: circuit.num_inputs(),
        num_outputs: circuit.num_outputs(),
        fires,
    })
}

impl Circuit {
    fn step_recording(
        &mut self,
        inputs: &[Token],
        fires: &mut HashMap<String, Vec<bool>>,
    ) -> Result<Vec<Token>, NetlistError> {
        let board = self.eval_cycle(inputs, Some(fires))?;
        let mut row = Vec::with_capacity(self.num_wires + self.outputs.len());
        row.extend_from_slice(&board[..self.num_inputs]);
        row.extend(self.outputs.iter().map(|&w| board[w]));
        for c in &self.components {
            row.extend(c.outputs.iter().map(|&w| board[w]));
        }
        Ok(row)
    }
}

/// Which lane carries the pre-switch delay of a delay-switch-delay block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsdOrientation {
    /// Delay on lane 0 before the switch, on lane 1 after it.
    Standard,
    /// Delay on lane 1 before the switch, on lane 0 after it.
    Mirrored,
}

/// Adds a k-delay-switch-k-delay block to a circuit under construction.
/// `crossed[phase]` is the switch program (period = crossed.len()).
pub fn dsd_into(
    b: &mut CircuitBuilder,
    section: Section,
    label: &str,
    k: usize,
    orientation: DsdOrientation,
    crossed: Vec<bool>,
    in0: Wire,
    in1: Wire,
) -> (Wire, Wire) {
    match orientation {
        DsdOrientation::Standard => {
            let d0 = b.delay(section, label, k, in0);
            let (o0, o1) = b.switch(section, label, crossed, d0, in1);
            let d1 = b.delay(section, label, k, o1);
            (o0, d1)
        }
        DsdOrientation::Mirrored => {
            let d1 = b.delay(section, label, k, in1);
            let (o0, o1) = b.switch(section, label, crossed, in0, d1);
            let d0 = b.delay(section, label, k, o0);
            (d0, o1)
        }
    }
}

/// Standalone delay-switch-delay circuit: exactly `2k` registers, exchanges
/// blocks of `k` samples between the two lanes.
pub fn build_dsd(k: usize) -> Result<Circuit, NetlistError> {
    build_dsd_with(k, DsdOrientation::Standard, 0)
}

pub fn build_dsd_with(
    k: usize,
    orientation: DsdOrientation,
    phase: usize,
) -> Result<Circuit, NetlistError> {
    assert!(k >= 1, "delay-switch-delay needs k >= 1");
    let period = 2 * k;
    let crossed: Vec<bool> = (0..period).map(|t| ((t + period - phase) % period) / k == 1).collect();
    let mut b = CircuitBuilder::new(2);
    let (i0, i1) = (b.input(0), b.input(1));
    let (o0, o1) = dsd_into(&mut b, Section::PreProcessing, "dsd", k, orientation, crossed, i0, i1);
    b.output(o0);
    b.output(o1);
    b.build()
}

/// Single-lane reorder element: `d` registers plus bypass multiplexing,
/// swapping stream entries that are `d` cycles apart.
///
/// The entry arriving at a phase in `swap_phases` is overtaken by the entry
/// arriving `d` cycles later, which bypasses the line and leaves at once;
/// the held entry leaves on the next regular slot. All other entries pass
/// through with `d` cycles of latency (plus any bypass stalls they straddle).
/// An empty phase set degenerates to a pure `Delay(d)`.
pub fn build_reoc(
    d: usize,
    period: usize,
    swap_phases: &[usize],
) -> Result<Circuit, NetlistError> {
    if d < 1 {
        return Err(NetlistError::BadControl("reorder distance must be >= 1".into()));
    }
    if period < 1 || swap_phases.iter().any(|&p| p >= period) {
        return Err(NetlistError::BadControl(format!(
            "swap phase out of range for period {period}"
        )));
    }
    // Realized as a rotating register file of d stages. On a bypass cycle
    // the input goes straight to the output, the line holds, and the
    // rotation pointer stalls; otherwise the pointer's register is read out
    // and overwritten by the current input.
    let bypass: Vec<bool> = {
        let mut v = vec![false; period];
        for &p in swap_phases {
            v[(p + d) % period] = true;
        }
        v
    };
    let normals = bypass.iter().filter(|&&b| !b).count();
    // The pointer advances `normals` steps per period; the control repeats
    // once the pointer realigns with phase 0.
    let reps = if normals == 0 { 1 } else { d / gcd(d, normals) };
    let q = period * reps;
    let mut writes = Vec::with_capacity(q);
    let mut reads = Vec::with_capacity(q);
    let mut ptr = 0usize;
    for t in 0..q {
        if bypass[t % period] {
            reads.push(vec![ReadSel::Bypass(0)]);
            writes.push(vec![]);
        } else {
            reads.push(vec![ReadSel::Reg(ptr)]);
            writes.push(vec![(0usize, ptr)]);
            ptr = (ptr + 1) % d;
        }
    }
    let control = FileControl { period: q, writes, reads };
    let mut b = CircuitBuilder::new(1);
    let i0 = b.input(0);
    let outs = b.regfile(Section::Reordering, "reoc", d, control, vec![i0], 1)?;
    b.output(outs[0]);
    b.build()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(i: u32) -> Token {
        Token::sample(Complex64::new(i as f64, 0.0), 0, 0, i)
    }

    fn stream(n: u32) -> Vec<Token> {
        (0..n).map(tok).collect()
    }

    fn tags(tr: &Trace, lane: usize) -> Vec<Option<u32>> {
        (0..tr.cycles()).map(|c| tr.output(c, lane).unwrap().tag().map(|t| t.index)).collect()
    }

    #[test]
    fn delay_line_shifts_by_k() {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0);
        let d = b.delay(Section::Fft, "d3", 3, i);
        b.output(d);
        let mut c = b.build().unwrap();
        let out0 = c.step(&[tok(0)]).unwrap();
        let out1 = c.step(&[tok(1)]).unwrap();
        let out2 = c.step(&[tok(2)]).unwrap();
        let out3 = c.step(&[tok(3)]).unwrap();
        assert!(out0[0].is_bubble() && out1[0].is_bubble() && out2[0].is_bubble());
        assert_eq!(out3[0].tag().unwrap().index, 0);
        assert_eq!(c.register_census(), 3);
    }

    #[test]
    fn switch_crosses_on_programmed_phases() {
        let mut b = CircuitBuilder::new(2);
        let (x, y) = (b.input(0), b.input(1));
        let (o0, o1) = b.switch(Section::Fft, "sw", vec![false, true], x, y);
        b.output(o0);
        b.output(o1);
        let mut c = b.build().unwrap();
        let r0 = c.step(&[tok(10), tok(20)]).unwrap();
        assert_eq!(r0[0].tag().unwrap().index, 10);
        assert_eq!(r0[1].tag().unwrap().index, 20);
        let r1 = c.step(&[tok(11), tok(21)]).unwrap();
        assert_eq!(r1[0].tag().unwrap().index, 21);
        assert_eq!(r1[1].tag().unwrap().index, 11);
    }

    #[test]
    fn butterfly_adds_and_subtracts() {
        let mut b = CircuitBuilder::new(2);
        let (x, y) = (b.input(0), b.input(1));
        let (t, bo) = b.butterfly(Section::Fft, "bf", x, y);
        b.output(t);
        b.output(bo);
        let mut c = b.build().unwrap();
        let one = Token::sample(Complex64::new(1.0, 0.0), 0, 0, 0);
        let r = c.step(&[one, one]).unwrap();
        assert_eq!(r[0].value().unwrap(), Complex64::new(2.0, 0.0));
        assert_eq!(r[1].value().unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn bubbles_poison_butterflies() {
        let mut b = CircuitBuilder::new(2);
        let (x, y) = (b.input(0), b.input(1));
        let (t, bo) = b.butterfly(Section::Fft, "bf", x, y);
        b.output(t);
        b.output(bo);
        let mut c = b.build().unwrap();
        let r = c.step(&[tok(1), Token::Bubble]).unwrap();
        assert!(r[0].is_bubble() && r[1].is_bubble());
    }

    #[test]
    fn arity_mismatch_is_detected() {
        let mut b = CircuitBuilder::new(2);
        let (x, y) = (b.input(0), b.input(1));
        let (t, _) = b.butterfly(Section::Fft, "bf", x, y);
        b.output(t);
        let mut c = b.build().unwrap();
        assert!(matches!(
            c.step(&[tok(0)]),
            Err(NetlistError::ArityMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn identity_circuit_replays_its_input() {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0);
        b.output(i);
        let mut c = b.build().unwrap();
        let s = stream(5);
        let tr = simulate(&mut c, &[s.clone()], 5).unwrap();
        for (t, tokin) in s.iter().enumerate() {
            assert_eq!(tr.output(t, 0).unwrap(), tokin);
        }
    }

    #[test]
    fn dsd_has_2k_registers() {
        for k in [1usize, 2, 4, 8] {
            let c = build_dsd(k).unwrap();
            assert_eq!(c.register_census(), 2 * k);
        }
    }

    #[test]
    fn dsd_exchanges_blocks_of_k() {
        // Feed lane 0 with channel 0 and lane 1 with channel 1; steady-state
        // output blocks of length k must alternate source lanes on both
        // output lanes.
        for k in [1usize, 2, 4, 8] {
            let mut c = build_dsd(k).unwrap();
            let n = 8 * k as u32;
            let a: Vec<Token> =
                (0..n).map(|i| Token::sample(Complex64::new(i as f64, 0.0), 0, 0, i)).collect();
            let bl: Vec<Token> =
                (0..n).map(|i| Token::sample(Complex64::new(i as f64, 1.0), 1, 0, i)).collect();
            let tr = simulate(&mut c, &[a, bl], 8 * k + 2 * k).unwrap();
            let mut runs: Vec<(u32, usize)> = Vec::new();
            for t in 0..tr.cycles() {
                if let Some(tag) = tr.output(t, 0).unwrap().tag() {
                    match runs.last_mut() {
                        Some((ch, len)) if *ch == tag.channel => *len += 1,
                        _ => runs.push((tag.channel, 1)),
                    }
                }
            }
            assert!(runs.len() >= 3, "k={k}: want several alternating runs, got {runs:?}");
            for (i, (ch, len)) in runs.iter().enumerate() {
                if i + 1 < runs.len() {
                    assert_eq!(*len, k, "k={k} run {i} of channel {ch}");
                }
                if i > 0 {
                    assert_ne!(runs[i - 1].0, *ch, "k={k}: runs must alternate channels");
                }
            }
        }
    }

    #[test]
    fn one_dsd_interleaves_two_serial_channels_into_pairs() {
        // The 2-channel input former: two serial streams become alternating
        // per-channel 2-parallel pairs.
        let mut c = build_dsd(1).unwrap();
        let a = stream(8);
        let bl: Vec<Token> =
            (0..8).map(|i| Token::sample(Complex64::new(i as f64, 1.0), 1, 0, i)).collect();
        let tr = simulate(&mut c, &[a, bl], 10).unwrap();
        // Steady state: each cycle both lanes carry the same channel, and
        // channels alternate cycle by cycle.
        for t in 2..9 {
            let t0 = tr.output(t, 0).unwrap().tag().unwrap();
            let t1 = tr.output(t, 1).unwrap().tag().unwrap();
            assert_eq!(t0.channel, t1.channel, "cycle {t}");
            let prev = tr.output(t - 1, 0).unwrap().tag().unwrap();
            assert_ne!(t0.channel, prev.channel, "cycle {t}");
            // The pair holds two consecutive samples of its channel.
            assert_eq!(t0.index.max(t1.index) - t0.index.min(t1.index), 1);
        }
    }

    #[test]
    fn chained_dsd_blocks_restore_the_lanes() {
        // A matching second block undoes the exchange up to latency.
        for k in [1usize, 2, 4] {
            let mut b = CircuitBuilder::new(2);
            let (i0, i1) = (b.input(0), b.input(1));
            let period = 2 * k;
            let cr1: Vec<bool> = (0..period).map(|t| t / k == 1).collect();
            let cr2: Vec<bool> = (0..period).map(|t| ((t + k) % period) / k == 1).collect();
            let (m0, m1) = dsd_into(
                &mut b,
                Section::PreProcessing,
                "dsd1",
                k,
                DsdOrientation::Standard,
                cr1,
                i0,
                i1,
            );
            let (o0, o1) = dsd_into(
                &mut b,
                Section::PreProcessing,
                "dsd2",
                k,
                DsdOrientation::Standard,
                cr2,
                m0,
                m1,
            );
            b.output(o0);
            b.output(o1);
            let mut c = b.build().unwrap();
            let n = 6 * k as u32;
            let a: Vec<Token> =
                (0..n).map(|i| Token::sample(Complex64::new(i as f64, 0.0), 0, 0, i)).collect();
            let bl: Vec<Token> =
                (0..n).map(|i| Token::sample(Complex64::new(i as f64, 1.0), 1, 0, i)).collect();
            let tr = simulate(&mut c, &[a, bl], 6 * k + 4 * k).unwrap();
            let lat = 2 * k;
            for t in lat..6 * k {
                let t0 = tr.output(t, 0).unwrap().tag().unwrap();
                let t1 = tr.output(t, 1).unwrap().tag().unwrap();
                assert_eq!((t0.channel, t0.index as usize), (0, t - lat), "k={k} cycle {t}");
                assert_eq!((t1.channel, t1.index as usize), (1, t - lat), "k={k} cycle {t}");
            }
        }
    }

    #[test]
    fn reoc_without_swaps_is_a_pure_delay() {
        let mut c = build_reoc(3, 4, &[]).unwrap();
        assert_eq!(c.register_census(), 3);
        let tr = simulate(&mut c, &[stream(8)], 10).unwrap();
        assert_eq!(
            tags(&tr, 0)[3..8],
            vec![Some(0), Some(1), Some(2), Some(3), Some(4)][..]
        );
    }

    #[test]
    fn reoc_swaps_adjacent_pair_each_period() {
        let mut c = build_reoc(1, 2, &[1]).unwrap();
        let tr = simulate(&mut c, &[stream(4)], 8).unwrap();
        let seen: Vec<u32> = (0..tr.cycles())
            .filter_map(|t| tr.output(t, 0).unwrap().tag().map(|tag| tag.index))
            .collect();
        assert_eq!(seen, vec![0, 2, 1, 3]);
    }

    #[test]
    fn reoc_rejects_bad_phases() {
        assert!(build_reoc(1, 2, &[2]).is_err());
        assert!(build_reoc(0, 2, &[]).is_err());
    }

    #[test]
    fn latency_of_series_delays_adds() {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0);
        let d1 = b.delay(Section::Fft, "a", 2, i);
        let d2 = b.delay(Section::Fft, "b", 3, d1);
        b.output(d2);
        let mut c = b.build().unwrap();
        let tr = simulate(&mut c, &[stream(8)], 10).unwrap();
        assert_eq!(tags(&tr, 0)[5], Some(0));
        assert_eq!(tags(&tr, 0)[9], Some(4));
    }

    #[test]
    fn census_breaks_down_by_section() {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0);
        let d1 = b.delay(Section::PreProcessing, "stage", 4, i);
        let d2 = b.delay(Section::Fft, "core", 2, d1);
        b.output(d2);
        let c = b.build().unwrap();
        let m = c.census_by_section();
        assert_eq!(m[&Section::PreProcessing], 4);
        assert_eq!(m[&Section::Fft], 2);
        assert_eq!(c.register_census(), 6);
    }

    #[test]
    fn conservation_through_lossless_blocks() {
        // Multiset of non-bubble tags out of a DSD equals the multiset in,
        // over a window that the latency fully covers.
        let mut c = build_dsd(2).unwrap();
        let a = stream(12);
        let bl: Vec<Token> =
            (0..12).map(|i| Token::sample(Complex64::new(0.0, i as f64), 1, 0, i)).collect();
        let tr = simulate(&mut c, &[a.clone(), bl.clone()], 20).unwrap();
        let mut fed: Vec<(u32, u32)> = a
            .iter()
            .chain(&bl)
            .filter_map(|t| t.tag().map(|tag| (tag.channel, tag.index)))
            .collect();
        let mut got: Vec<(u32, u32)> = (0..tr.cycles())
            .flat_map(|t| tr.outputs(t).iter().filter_map(|x| x.tag()).collect::<Vec<_>>())
            .map(|tag| (tag.channel, tag.index))
            .collect();
        fed.sort();
        got.sort();
        assert_eq!(fed, got);
    }
}
