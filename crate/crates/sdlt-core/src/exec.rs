//! Data-parallel trial execution. Results come back in index order and are
//! folded sequentially, so aggregates never depend on thread count or
//! schedule. With the `parallel` feature disabled everything runs on the
//! calling thread.

/// Worker width: 0 picks the rayon default, 1 forces the sequential path.
pub type ThreadWidth = usize;

/// Reads the `SDLT_THREADS` cap; absent, empty or unparseable means auto.
pub fn width_from_env() -> ThreadWidth {
    std::env::var("SDLT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: u64, width: ThreadWidth, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Send + Sync,
{
    use rayon::prelude::*;
    if width == 1 {
        return map_sequential(n, f);
    }
    if width == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(width)
        .build()
        .expect("thread pool construction");
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: u64, _width: ThreadWidth, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Send + Sync,
{
    map_sequential(n, f)
}

/// Sequential reference path, also used by the benches for comparison.
pub fn map_sequential<T, F>(n: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n).map(f).collect()
}

/// Fixed seed-mixing function (splitmix64). Per-trial seeds derive from
/// (master seed, trial index) alone, never from scheduling.
pub fn derive_seed(master_seed: u64, trial_index: u64) -> u64 {
    let mut z = master_seed ^ splitmix64(trial_index.wrapping_add(0x9e3779b97f4a7c15));
    z = splitmix64(z);
    z
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
