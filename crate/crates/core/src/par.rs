//! Data-parallel helpers.
//!
//! Every parallel loop in the crate goes through [`Exec::map`], which keeps
//! output order equal to input order. Results are therefore identical under
//! either execution mode, so callers can fold them without caring about
//! scheduling. Without the `parallel` feature both modes run sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the batch loops (Monte-Carlo runs, tree fitting,
/// dataset cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Order-preserving map over `0..n`.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }
}

/// Derives an independent 64-bit seed from a master seed and a path of
/// indices (splitmix64 finalizer over each component).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
