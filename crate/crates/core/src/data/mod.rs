//! Synthetic long-tailed data with planted concepts, and CSV interchange.

mod csv_io;
mod synth;

pub use csv_io::{
    read_dataset_csv, read_dataset_csv_in_space, read_labels_csv, read_prediction_log_csv,
    write_dataset_csv, write_labels_csv, write_prediction_log_csv, DataError,
};
pub use synth::{generate_synthetic, SynthData, SynthSpec};
