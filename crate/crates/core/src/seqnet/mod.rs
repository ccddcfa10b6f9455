//! Recurrent backbone: stacked long short-term memory cells with exact
//! backpropagation through time, Adam, and dropout.

mod adam;
mod lstm;

pub use adam::{clip_global_norm, AdamState};
pub use lstm::{
    bptt_gradients, cell_forward, input_dropout, sparse_input_dropout, stack_forward, CellInput,
    CellParams, CellState, Projection, SparseInput, StackParams, StepScratch,
};

#[cfg(test)]
mod tests;
