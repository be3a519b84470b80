//! Gated recurrent cells, the stacked bidirectional network and its exact
//! gradients.
//!
//! Layer 1 reads the per-second inputs; layer 2 reads layer 1's concatenated
//! forward/backward states. A head maps each `2H`-wide top-layer state to two
//! logits, applies relu, then softmax over (W, S).

mod cell;
mod checkpoint;
mod layer;
mod model;
mod params;

pub use cell::{gru_cell_step, gru_cell_step_full, lstm_cell_step, GruStep};
pub use checkpoint::{
    checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use model::{
    backward, backward_accumulate, forward, masked_nll, sequence_loss, BackwardOptions, ForwardTrace, Probs,
};
pub use params::{
    init_params, BiLayerParams, CellKind, CellParams, GruCellParams, HeadParams, LstmCellParams, ModelParams,
};
