//! Execution strategy for the data-parallel loops.
//!
//! Every parallel loop in the crate goes through [`Exec`], so the same call
//! site can run on the rayon pool or on the calling thread. Results are
//! always collected in index order, which keeps outputs identical between
//! the two strategies and across thread counts. Without the `parallel`
//! feature, [`Exec::Parallel`] silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this strategy will really fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Map `f` over `0..len`, returning results in index order.
    pub fn map<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Run `f` on each `chunk`-sized piece of `data` together with its index.
    pub fn for_chunks_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

thread_local! {
    static KERNEL_EXEC: std::cell::Cell<Exec> = const { std::cell::Cell::new(Exec::Parallel) };
}

/// Strategy used by the tensor kernels called from this thread.
pub fn kernel_exec() -> Exec {
    KERNEL_EXEC.with(|e| e.get())
}

/// Run `f` with the tensor kernels on this thread forced to `exec`.
pub fn with_kernel_exec<R>(exec: Exec, f: impl FnOnce() -> R) -> R {
    let prev = KERNEL_EXEC.with(|e| e.replace(exec));
    let out = f();
    KERNEL_EXEC.with(|e| e.set(prev));
    out
}
