//! Independent ground-truth machinery: direct DFT summation, bit-reversal
//! permutations, tag-trace permutation checking and trace measurements.
//!
//! Nothing in this module is allowed to call into the dataflow-graph
//! evaluator or the cycle-accurate simulator; the tests rely on that
//! independence.

use num_complex::Complex64;

use crate::netlist::{Tag, Token, Trace};

/// Direct O(N^2) DFT: `X[k] = sum_n x[n] * exp(-2*pi*i*n*k/N)`.
pub fn naive_dft(frame: &[Complex64]) -> Vec<Complex64> {
    let n = frame.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (idx, x) in frame.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (idx as f64) * (k as f64) / (n as f64);
            acc += x * Complex64::new(angle.cos(), angle.sin());
        }
        out.push(acc);
    }
    out
}

/// Bit-reversal permutation over `n` indices: index `i` maps to the reversal
/// of its `log2(n)`-bit representation.
pub fn bit_reverse_perm(n: usize) -> Vec<usize> {
    assert!(n.is_power_of_two(), "bit reversal needs a power of two");
    let bits = n.trailing_zeros();
    (0..n)
        .map(|i| {
            if bits == 0 {
                i
            } else {
                i.reverse_bits() >> (usize::BITS - bits)
            }
        })
        .collect()
}

/// Per-lane permutation used to restore natural order at the output of the
/// commutator-based interleaved datapath: each half of the index range is
/// bit-reversed over `n/2` entries while the halves keep their place.
pub fn half_size_bit_reverse_perm(n: usize) -> Vec<usize> {
    assert!(n >= 4 && n.is_power_of_two());
    let half = n / 2;
    let rev = bit_reverse_perm(half);
    let mut out = Vec::with_capacity(n);
    out.extend(rev.iter().copied());
    out.extend(rev.iter().map(|&r| r + half));
    out
}

/// Expected steady-state tag pattern at the output lanes of a circuit.
///
/// `map[slot][lane]` gives the expected `(channel, sample index)` for every
/// output lane at periodic slot `slot`; frames must advance by one each time
/// a (channel, slot) pair repeats.
#[derive(Debug, Clone)]
pub struct PermutationSpec {
    pub period: usize,
    pub map: Vec<Vec<Option<(u32, u32)>>>,
}

impl PermutationSpec {
    pub fn new(period: usize, map: Vec<Vec<Option<(u32, u32)>>>) -> Self {
        assert_eq!(map.len(), period);
        Self { period, map }
    }

    fn lanes(&self) -> usize {
        self.map.first().map(|m| m.len()).unwrap_or(0)
    }
}

/// Outcome of a permutation check: either the trace matches the spec in
/// steady state, or the first mismatch is reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PermutationCheck {
    Ok { aligned_at: usize, periods: usize },
    Mismatch { cycle: usize, lane: usize, expected: Option<(u32, u32)>, got: Option<(u32, u32)> },
    NoAlignment,
}

impl PermutationCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, PermutationCheck::Ok { .. })
    }
}

/// Verifies that the output-lane tags of `trace` follow `spec` once the
/// pipeline has filled. Leading bubble-only cycles are skipped; alignment is
/// discovered by matching the first non-bubble tag against the spec.
pub fn check_permutation(trace: &Trace, spec: &PermutationSpec) -> PermutationCheck {
    let lanes = spec.lanes();
    let first = match (0..trace.cycles()).find(|&c| {
        (0..lanes).any(|l| trace.output(c, l).map(|t| !t.is_bubble()).unwrap_or(false))
    }) {
        Some(c) => c,
        None => return PermutationCheck::NoAlignment,
    };

    // Find the spec slot that matches the first non-bubble cycle.
    let align = (0..spec.period).find(|&s| {
        (0..lanes).all(|l| {
            let expect = spec.map[s][l];
            let got = trace.output(first, l).and_then(token_key);
            match (expect, got) {
                (Some((ch, idx)), Some((gch, gidx, _))) => ch == gch && idx == gidx,
                (None, None) => true,
                _ => false,
            }
        })
    });
    let align = match align {
        Some(a) => a,
        None => return PermutationCheck::NoAlignment,
    };

    let mut periods = 0usize;
    for c in first..trace.cycles() {
        let slot = (align + (c - first)) % spec.period;
        if slot == 0 {
            periods += 1;
        }
        for l in 0..lanes {
            let expect = spec.map[slot][l];
            let got = trace.output(c, l).and_then(token_key);
            let ok = match (expect, got) {
                (Some((ch, idx)), Some((gch, gidx, _))) => ch == gch && idx == gidx,
                (None, None) => true,
                (None, Some(_)) | (Some(_), None) => false,
            };
            if !ok {
                return PermutationCheck::Mismatch {
                    cycle: c,
                    lane: l,
                    expected: expect,
                    got: got.map(|(ch, idx, _)| (ch, idx)),
                };
            }
        }
    }
    PermutationCheck::Ok { aligned_at: first, periods }
}

fn token_key(token: &Token) -> Option<(u32, u32, u64)> {
    match token {
        Token::Bubble => None,
        Token::Sample { tag: Tag { channel, frame, index }, .. } => {
            Some((*channel, *index, *frame))
        }
    }
}

/// Steady-state measurements extracted from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    /// Fraction of steady-state cycles in which each butterfly unit consumed
    /// two live operands, keyed by unit name.
    pub utilization: Vec<(String, f64)>,
    /// First cycle with a non-bubble token on any output lane minus the first
    /// cycle with a non-bubble token on any input lane.
    pub latency: usize,
    /// Non-bubble output tokens per steady-state cycle, summed over lanes.
    pub throughput: f64,
}

/// Measures utilization, latency and throughput over the steady-state region
/// of `trace`. Steady state starts at twice the measured fill latency.
pub fn measure(trace: &Trace) -> Measurements {
    let first_in = (0..trace.cycles())
        .find(|&c| trace.inputs(c).iter().any(|t| !t.is_bubble()))
        .unwrap_or(0);
    let first_out = (0..trace.cycles())
        .find(|&c| trace.outputs(c).iter().any(|t| !t.is_bubble()))
        .unwrap_or(first_in);
    let latency = first_out - first_in;

    let steady = first_in + 2 * latency.max(1);
    let end = trace.cycles();
    let window = end.saturating_sub(steady).max(1);

    let mut utilization = Vec::new();
    for unit in trace.butterfly_units() {
        let fired = (steady..end).filter(|&c| trace.unit_fired(c, &unit)).count();
        utilization.push((unit, fired as f64 / window as f64));
    }
    utilization.sort_by(|a, b| a.0.cmp(&b.0));

    let tokens: usize = (steady..end)
        .map(|c| trace.outputs(c).iter().filter(|t| !t.is_bubble()).count())
        .sum();

    Measurements { utilization, latency, throughput: tokens as f64 / window as f64 }
}
