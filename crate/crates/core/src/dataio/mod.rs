//! Procedural datasets, normalization, padding and JSONL storage.

pub mod cloud;
pub mod generator;
pub mod io;
mod record;

pub use cloud::{sample_cloud, CLOUD_POINTS};
pub use generator::{generate, parse_kinds, Kind};
pub use io::{read_records, record_from_line, record_to_line, write_records, SCHEMA_VERSION};
pub use record::{
    generate_dataset, generate_record, normalize_and_pad, normalize_record, pad_indices, DatasetRecord, Normalization,
    PaddedSample,
};

/// Deterministic 90/5/5 split into train, test and validation.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n = items.len();
    let test = n * 5 / 100;
    let val = n * 5 / 100;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    (
        pick(&idx[test + val..]),
        pick(&idx[..test]),
        pick(&idx[test..test + val]),
    )
}
