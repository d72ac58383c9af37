//! Radix-2 decimation-in-frequency FFT dataflow graph.
//!
//! The graph is the combinational reference for everything the folded
//! datapaths compute: butterflies grouped in `log2(N)` stages, natural-order
//! inputs, bit-reversed outputs. Stage units are named with letters in stage
//! order (`A`, `B`, `C`, `D` for N = 16) and butterflies are numbered top to
//! bottom within a stage.

use std::fmt;

use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DfgError {
    /// N was not a power of two >= 2.
    BadSize(usize),
    /// A frame handed to `evaluate` had the wrong length.
    FrameLength { expected: usize, got: usize },
}

impl fmt::Display for DfgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DfgError::BadSize(n) => write!(f, "FFT size {n} is not a power of two >= 2"),
            DfgError::FrameLength { expected, got } => {
                write!(f, "frame length {got} does not match FFT size {expected}")
            }
        }
    }
}

impl std::error::Error for DfgError {}

/// One radix-2 DIF butterfly: computes `a + b` on the top output and
/// `(a - b) * W_N^k` on the bottom output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ButterflyOp {
    pub stage: usize,
    pub index: usize,
    /// Exponent k of `W_N^k` applied to the subtract output.
    pub twiddle_exponent: usize,
    /// Signal positions consumed, `(top, bottom)`.
    pub input_ids: (usize, usize),
    /// Signal positions produced, `(top, bottom)`; in-place SFG numbering.
    pub output_ids: (usize, usize),
}

/// Directed edge between two butterflies. All weights are zero in the plain
/// DIF graph; delays only appear after folding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfgEdge {
    /// `(stage, index, out_port)` of the producer; port 0 is the top output.
    pub from: (usize, usize, usize),
    /// `(stage, index, in_port)` of the consumer.
    pub to: (usize, usize, usize),
    pub weight: usize,
}

#[derive(Debug, Clone)]
pub struct DataFlowGraph {
    pub n: usize,
    pub ops: Vec<ButterflyOp>,
    pub edges: Vec<DfgEdge>,
}

/// Letter naming for stage `s`: `A`, `B`, `C`, ...
pub fn stage_letter(stage: usize) -> char {
    (b'A' + stage as u8) as char
}

/// Builds the radix-2 DIF FFT dataflow graph for a power-of-two size.
pub fn build_dif_dfg(n: usize) -> Result<DataFlowGraph, DfgError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(DfgError::BadSize(n));
    }
    let stages = n.trailing_zeros() as usize;
    let half = n / 2;

    let mut ops = Vec::with_capacity(half * stages);
    for s in 0..stages {
        let span = n >> (s + 1);
        for j in 0..half {
            let block = j / span;
            let offset = j % span;
            let top = block * 2 * span + offset;
            ops.push(ButterflyOp {
                stage: s,
                index: j,
                twiddle_exponent: offset << s,
                input_ids: (top, top + span),
                output_ids: (top, top + span),
            });
        }
    }

    let mut edges = Vec::new();
    for s in 0..stages.saturating_sub(1) {
        for j in 0..half {
            let op = &ops[s * half + j];
            for (port, pos) in [(0usize, op.output_ids.0), (1, op.output_ids.1)] {
                let (cons, in_port) = consumer_at(n, s + 1, pos);
                edges.push(DfgEdge { from: (s, j, port), to: (s + 1, cons, in_port), weight: 0 });
            }
        }
    }

    Ok(DataFlowGraph { n, ops, edges })
}

/// Which butterfly of `stage` consumes signal position `pos`, and on which
/// input port.
pub fn consumer_at(n: usize, stage: usize, pos: usize) -> (usize, usize) {
    let span = n >> (stage + 1);
    let block = pos / (2 * span);
    let within = pos % (2 * span);
    let index = block * span + within % span;
    let in_port = usize::from(within >= span);
    (index, in_port)
}

impl DataFlowGraph {
    pub fn stages(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    pub fn op(&self, stage: usize, index: usize) -> &ButterflyOp {
        &self.ops[stage * self.n / 2 + index]
    }

    pub fn op_name(&self, stage: usize, index: usize) -> String {
        format!("{}{}", stage_letter(stage), index)
    }

    /// Evaluates the graph combinationally. The result is in the raw output
    /// order of the graph, i.e. bit-reversed relative to natural bin order.
    pub fn evaluate(&self, frame: &[Complex64]) -> Result<Vec<Complex64>, DfgError> {
        if frame.len() != self.n {
            return Err(DfgError::FrameLength { expected: self.n, got: frame.len() });
        }
        let mut values = frame.to_vec();
        let half = self.n / 2;
        for s in 0..self.stages() {
            let mut next = values.clone();
            for j in 0..half {
                let op = self.op(s, j);
                let a = values[op.input_ids.0];
                let b = values[op.input_ids.1];
                let w = twiddle(self.n, op.twiddle_exponent);
                next[op.output_ids.0] = a + b;
                next[op.output_ids.1] = (a - b) * w;
            }
            values = next;
        }
        Ok(values)
    }

    /// Plain-text adjacency listing, one op per line:
    /// `name w=<twiddle> -> <successor names>`.
    pub fn adjacency_dump(&self) -> String {
        let mut out = String::new();
        let half = self.n / 2;
        let last = self.stages() - 1;
        for s in 0..self.stages() {
            for j in 0..half {
                let op = self.op(s, j);
                let succ: Vec<String> = if s == last {
                    vec![format!("out{}", op.output_ids.0), format!("out{}", op.output_ids.1)]
                } else {
                    [op.output_ids.0, op.output_ids.1]
                        .iter()
                        .map(|&p| {
                            let (idx, _) = consumer_at(self.n, s + 1, p);
                            self.op_name(s + 1, idx)
                        })
                        .collect()
                };
                out.push_str(&format!(
                    "{} w={} -> {}\n",
                    self.op_name(s, j),
                    op.twiddle_exponent,
                    succ.join(" ")
                ));
            }
        }
        out
    }
}

/// Twiddle factor `W_N^k = exp(-2*pi*i*k/N)`, computed once per lookup in
/// double precision.
pub fn twiddle(n: usize, k: usize) -> Complex64 {
    let angle = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
    Complex64::new(angle.cos(), -angle.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{bit_reverse_perm, naive_dft};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unscramble(raw: &[Complex64]) -> Vec<Complex64> {
        let perm = bit_reverse_perm(raw.len());
        (0..raw.len()).map(|k| raw[perm[k]]).collect()
    }

    #[test]
    fn op_count_for_16_is_32() {
        let g = build_dif_dfg(16).unwrap();
        assert_eq!(g.ops.len(), 32);
        assert_eq!(g.stages(), 4);
    }

    #[test]
    fn two_point_graph_is_one_twiddle_free_butterfly() {
        let g = build_dif_dfg(2).unwrap();
        assert_eq!(g.ops.len(), 1);
        assert_eq!(g.ops[0].twiddle_exponent, 0);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        assert!(matches!(build_dif_dfg(12), Err(DfgError::BadSize(12))));
        assert!(matches!(build_dif_dfg(0), Err(DfgError::BadSize(0))));
        assert!(matches!(build_dif_dfg(1), Err(DfgError::BadSize(1))));
    }

    #[test]
    fn last_stage_butterflies_have_zero_twiddle() {
        let g = build_dif_dfg(32).unwrap();
        let last = g.stages() - 1;
        for j in 0..16 {
            assert_eq!(g.op(last, j).twiddle_exponent, 0);
        }
    }

    #[test]
    fn stage_pairing_spans_match() {
        let g = build_dif_dfg(64).unwrap();
        for op in &g.ops {
            let span = 64 >> (op.stage + 1);
            assert_eq!(op.input_ids.1 - op.input_ids.0, span);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let g = build_dif_dfg(8).unwrap();
        let mut frame = vec![Complex64::new(0.0, 0.0); 8];
        frame[0] = Complex64::new(1.0, 0.0);
        let raw = g.evaluate(&frame).unwrap();
        for x in raw {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_input_concentrates_in_bin_zero() {
        let g = build_dif_dfg(16).unwrap();
        let frame = vec![Complex64::new(1.0, 0.0); 16];
        let spec = unscramble(&g.evaluate(&frame).unwrap());
        assert!((spec[0] - Complex64::new(16.0, 0.0)).norm() < 1e-9);
        assert!(spec[1..].iter().all(|x| x.norm() < 1e-9));
    }

    #[test]
    fn single_tone_lands_in_bin_one() {
        let g = build_dif_dfg(16).unwrap();
        let frame: Vec<Complex64> = (0..16)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * (i as f64) / 16.0;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let spec = unscramble(&g.evaluate(&frame).unwrap());
        assert!((spec[1] - Complex64::new(16.0, 0.0)).norm() < 1e-9);
        for (k, x) in spec.iter().enumerate() {
            if k != 1 {
                assert!(x.norm() < 1e-9, "bin {k} leaked {x}");
            }
        }
    }

    #[test]
    fn random_frames_match_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [2usize, 4, 8, 16, 32, 64] {
            let g = build_dif_dfg(n).unwrap();
            for _ in 0..if n == 16 { 100 } else { 10 } {
                let frame: Vec<Complex64> = (0..n)
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                let got = unscramble(&g.evaluate(&frame).unwrap());
                let want = naive_dft(&frame);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn wrong_frame_length_is_an_error() {
        let g = build_dif_dfg(8).unwrap();
        let frame = vec![Complex64::new(0.0, 0.0); 7];
        assert!(matches!(g.evaluate(&frame), Err(DfgError::FrameLength { expected: 8, got: 7 })));
    }

    #[test]
    fn stage_inputs_trace_back_to_offset_pairs() {
        // Every stage-s butterfly pairs signals whose natural input indices
        // differ by n / 2^(s+1); walking producers back to stage 0 confirms
        // the in-place position bookkeeping.
        let n = 16;
        let g = build_dif_dfg(n).unwrap();
        for op in &g.ops {
            let span = n >> (op.stage + 1);
            assert_eq!(op.input_ids.1, op.input_ids.0 + span);
        }
    }

    #[test]
    fn adjacency_dump_mentions_every_op_once() {
        let g = build_dif_dfg(16).unwrap();
        let dump = g.adjacency_dump();
        assert_eq!(dump.lines().count(), 32);
        assert!(dump.contains("A0 w=0 -> B0 B4"));
        assert!(dump.contains("D0 w=0 -> out0 out1"));
    }
}
