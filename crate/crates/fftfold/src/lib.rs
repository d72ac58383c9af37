//! Synthesis and cycle-accurate simulation of multi-channel pipelined FFT
//! datapaths derived by folding and channel interleaving.
//!
//! The crate builds the radix-2 DIF FFT dataflow graph, folds it under
//! schedule sets into time-multiplexed hardware, assembles three complete
//! stream architectures (pre-processing, folded core, post-processing,
//! output reordering), and simulates them cycle by cycle on tagged complex
//! tokens so that both values and stream permutations can be checked against
//! independent references.

pub mod dfg;
pub mod folding;
pub mod arch;
pub mod netlist;
pub mod oracle;
pub mod reorder;
