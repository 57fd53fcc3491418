//! Order-preserving map that runs on a bounded rayon pool when the
//! `parallel` feature is enabled and sequentially otherwise.

/// Applies `f` to every item, returning results in input order.
/// `threads <= 1` always runs on the calling thread.
pub fn map_ordered<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads > 1 && items.len() > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => {
                return pool
                    .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
            }
            Err(e) => log::warn!("thread pool unavailable ({e}); running sequentially"),
        }
    }
    let _ = threads;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Mixes a tag into a seed, giving independent streams per tree, domain or
/// run from one user-facing seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Worker count when the caller has no preference.
pub fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
