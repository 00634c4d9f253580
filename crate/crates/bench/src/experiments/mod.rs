pub mod bestterm;
pub mod eval;
pub mod learn;

use std::time::Instant;

use crate::Result;

/// Run `f` on a pool of `threads` workers (all cores for `None`).
pub(crate) fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<(T, usize)> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build()?;
    let n = pool.current_num_threads();
    Ok((pool.install(f), n))
}

pub(crate) fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}
