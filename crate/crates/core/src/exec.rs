//! Execution backends applying per-particle kernels, sequentially or on a
//! worker pool, with identical results.

use std::any::Any;
use std::fmt;
use std::marker::PhantomData;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Result, SmcError};
use crate::particle::{ConstSingleParticle, Particle, SingleParticle};
use crate::rng::Stream;
use crate::sampler::{InitOp, MonitorEval, MoveOp, PathEval};
use crate::state::{RowsMut, SmpValue};
use crate::weights::WeightSet;

pub type KernelError = Box<dyn std::error::Error + Send + Sync>;
pub type KernelResult = std::result::Result<usize, KernelError>;

/// A fixed set of worker threads, created once and reused.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(SmcError::InvalidParameter(
                "worker count must be at least 1".into(),
            ));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("smc-worker-{i}"))
            .build()
            .map_err(SmcError::user)?;
        Ok(WorkerPool { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

#[derive(Clone, Default)]
pub enum Backend {
    #[default]
    Sequential,
    ThreadPool(Arc<WorkerPool>),
}

impl Backend {
    pub fn thread_pool(workers: usize) -> Result<Self> {
        Ok(Backend::ThreadPool(Arc::new(WorkerPool::new(workers)?)))
    }

    pub fn workers(&self) -> usize {
        match self {
            Backend::Sequential => 1,
            Backend::ThreadPool(pool) => pool.workers,
        }
    }

    fn block_size(&self, n: usize) -> usize {
        n.div_ceil(self.workers()).max(1)
    }
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Sequential => write!(f, "seq"),
            Backend::ThreadPool(pool) => write!(f, "pool:{}", pool.workers),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

type BlockOutcome<R> = std::result::Result<R, (usize, String)>;

fn panic_message(payload: Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

fn guarded<R>(f: impl FnOnce() -> std::result::Result<R, KernelError>) -> std::result::Result<R, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(payload) => Err(panic_message(payload)),
    }
}

fn kernel_error((particle, message): (usize, String)) -> SmcError {
    SmcError::Kernel { particle, message }
}

// Blocks are contiguous and ascending, and a block stops only at its own
// failure or when a lower index has already failed, so the first error in
// block order is the lowest failing index.
fn combine(outcomes: Vec<BlockOutcome<usize>>) -> Result<usize> {
    let mut total = 0usize;
    for o in outcomes {
        total += o.map_err(kernel_error)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn mut_block<T, Slot, F>(
    rows: RowsMut<'_, T::Scalar>,
    streams: &mut [Stream],
    slots: &mut [Slot],
    shared: &T::Shared,
    weights: &WeightSet,
    failed: &AtomicUsize,
    f: &F,
) -> BlockOutcome<usize>
where
    T: SmpValue,
    F: Fn(SingleParticle<'_, T>, &mut Slot) -> KernelResult,
{
    let start = rows.start();
    let mut total = 0usize;
    for (k, ((row, rng), slot)) in rows.zip(streams.iter_mut()).zip(slots.iter_mut()).enumerate() {
        let id = start + k;
        if failed.load(Ordering::Relaxed) < id {
            break;
        }
        let sp = SingleParticle {
            id,
            row,
            rng,
            shared,
            weights,
        };
        match guarded(|| f(sp, slot)) {
            Ok(c) => total += c,
            Err(msg) => {
                failed.fetch_min(id, Ordering::Relaxed);
                return Err((id, msg));
            }
        }
    }
    Ok(total)
}

/// Runs `f` once per particle with exclusive access to its state, stream and
/// slot. Returns the sum of the kernel returns.
fn run_mut<T, Slot, F>(backend: &Backend, particle: &mut Particle<T>, slots: &mut [Slot], f: F) -> Result<usize>
where
    T: SmpValue,
    Slot: Send,
    F: Fn(SingleParticle<'_, T>, &mut Slot) -> KernelResult + Sync,
{
    let n = particle.size();
    let parts = particle.kernel_parts();
    let (shared, weights) = (parts.shared, parts.weights);
    let failed = AtomicUsize::new(usize::MAX);
    match backend {
        Backend::Sequential => {
            mut_block::<T, _, _>(parts.rows, parts.streams, slots, shared, weights, &failed, &f)
                .map_err(kernel_error)
        }
        Backend::ThreadPool(pool) => {
            let bs = backend.block_size(n);
            let mut outcomes: Vec<BlockOutcome<usize>> = vec![Ok(0); n.div_ceil(bs)];
            let (f, failed) = (&f, &failed);
            pool.pool.scope(|s| {
                let mut rows = parts.rows;
                let mut streams = parts.streams;
                let mut slots = slots;
                for out in outcomes.iter_mut() {
                    let take = bs.min(rows.len());
                    let (r, rest) = rows.split_at(take);
                    rows = rest;
                    let (st, rest) = std::mem::take(&mut streams).split_at_mut(take);
                    streams = rest;
                    let (sl, rest) = std::mem::take(&mut slots).split_at_mut(take);
                    slots = rest;
                    s.spawn(move |_| {
                        *out = mut_block::<T, _, _>(r, st, sl, shared, weights, failed, f);
                    });
                }
            });
            combine(outcomes)
        }
    }
}

fn const_block<T, F>(
    particle: &Particle<T>,
    start: usize,
    out: &mut [f64],
    dim: usize,
    failed: &AtomicUsize,
    f: &F,
) -> BlockOutcome<()>
where
    T: SmpValue,
    F: Fn(ConstSingleParticle<'_, T>, &mut [f64]),
{
    for (k, res) in out.chunks_exact_mut(dim).enumerate() {
        let id = start + k;
        if failed.load(Ordering::Relaxed) < id {
            break;
        }
        let csp = ConstSingleParticle::new(id, particle);
        if let Err(msg) = guarded(|| {
            f(csp, res);
            Ok(())
        }) {
            failed.fetch_min(id, Ordering::Relaxed);
            return Err((id, msg));
        }
    }
    Ok(())
}

/// Runs `f` once per particle, filling row `i` (length `dim`) of `out`.
fn run_const<T, F>(backend: &Backend, particle: &Particle<T>, out: &mut [f64], dim: usize, f: F) -> Result<()>
where
    T: SmpValue + Sync,
    F: Fn(ConstSingleParticle<'_, T>, &mut [f64]) + Sync,
{
    let n = particle.size();
    if dim == 0 {
        return Err(SmcError::InvalidParameter("dimension must be positive".into()));
    }
    if out.len() != n * dim {
        return Err(SmcError::LengthMismatch {
            expected: n * dim,
            actual: out.len(),
        });
    }
    let failed = AtomicUsize::new(usize::MAX);
    match backend {
        Backend::Sequential => const_block(particle, 0, out, dim, &failed, &f).map_err(kernel_error),
        Backend::ThreadPool(pool) => {
            let bs = backend.block_size(n);
            let mut outcomes: Vec<BlockOutcome<()>> = vec![Ok(()); n.div_ceil(bs)];
            let (f, failed) = (&f, &failed);
            pool.pool.scope(|s| {
                for (b, (o, chunk)) in outcomes.iter_mut().zip(out.chunks_mut(bs * dim)).enumerate() {
                    s.spawn(move |_| *o = const_block(particle, b * bs, chunk, dim, failed, f));
                }
            });
            for o in outcomes {
                o.map_err(kernel_error)?;
            }
            Ok(())
        }
    }
}

/// Initialization split into a collective part and a per-particle part.
pub trait InitKernel<T: SmpValue>: Send + Sync {
    /// Per-particle scratch, sized once and reused.
    type Slot: Clone + Default + Send;

    fn initialize_param(&mut self, _particle: &mut Particle<T>, _param: Option<&dyn Any>) -> Result<()> {
        Ok(())
    }

    fn pre_processor(&mut self, _particle: &mut Particle<T>) -> Result<()> {
        Ok(())
    }

    fn initialize_state(&self, sp: SingleParticle<'_, T>, slot: &mut Self::Slot) -> KernelResult;

    fn post_processor(&mut self, _particle: &mut Particle<T>, _slots: &[Self::Slot]) -> Result<()> {
        Ok(())
    }
}

/// A move split into collective pre and post steps around a per-particle
/// kernel. Weights may only be changed collectively, in pre or post.
pub trait MoveKernel<T: SmpValue>: Send + Sync {
    type Slot: Clone + Default + Send;

    fn pre_processor(&mut self, _iter: usize, _particle: &mut Particle<T>) -> Result<()> {
        Ok(())
    }

    fn move_state(&self, iter: usize, sp: SingleParticle<'_, T>, slot: &mut Self::Slot) -> KernelResult;

    fn post_processor(&mut self, _iter: usize, _particle: &mut Particle<T>, _slots: &[Self::Slot]) -> Result<()> {
        Ok(())
    }
}

pub trait MonitorKernel<T: SmpValue>: Send + Sync {
    fn pre_processor(&mut self, _iter: usize, _particle: &Particle<T>) {}

    /// Writes `h_j(X_i)` into `res[j]`.
    fn monitor_state(&self, iter: usize, dim: usize, csp: ConstSingleParticle<'_, T>, res: &mut [f64]);

    fn post_processor(&mut self, _iter: usize, _particle: &Particle<T>) {}
}

pub trait PathKernel<T: SmpValue>: Send + Sync {
    fn pre_processor(&mut self, _iter: usize, _particle: &Particle<T>) {}

    /// Path sampling integrand of one particle.
    fn path_state(&self, iter: usize, csp: ConstSingleParticle<'_, T>) -> f64;

    /// Current grid point `alpha_t`.
    fn path_grid(&self, iter: usize, particle: &Particle<T>) -> f64;

    fn post_processor(&mut self, _iter: usize, _particle: &Particle<T>) {}
}

fn size_slots<S: Clone + Default>(slots: &mut Vec<S>, n: usize) {
    if slots.len() != n {
        slots.resize(n, S::default());
    }
}

pub fn apply_init<T, K>(
    kernel: &mut K,
    slots: &mut Vec<K::Slot>,
    particle: &mut Particle<T>,
    param: Option<&dyn Any>,
    backend: &Backend,
) -> Result<usize>
where
    T: SmpValue,
    K: InitKernel<T>,
{
    size_slots(slots, particle.size());
    kernel.initialize_param(particle, param)?;
    kernel.pre_processor(particle)?;
    let k: &K = kernel;
    let accept = run_mut(backend, particle, slots, |sp, slot| k.initialize_state(sp, slot))?;
    kernel.post_processor(particle, slots)?;
    Ok(accept)
}

/// Pre, then the kernel over every particle, then post. Returns the sum of
/// the kernel returns.
pub fn apply_move<T, K>(
    kernel: &mut K,
    slots: &mut Vec<K::Slot>,
    particle: &mut Particle<T>,
    iter: usize,
    backend: &Backend,
) -> Result<usize>
where
    T: SmpValue,
    K: MoveKernel<T>,
{
    size_slots(slots, particle.size());
    kernel.pre_processor(iter, particle)?;
    let k: &K = kernel;
    let accept = run_mut(backend, particle, slots, |sp, slot| k.move_state(iter, sp, slot))?;
    kernel.post_processor(iter, particle, slots)?;
    Ok(accept)
}

/// Fills the row-major `N x dim` buffer `out`.
pub fn apply_monitor_eval<T, K>(
    kernel: &mut K,
    particle: &Particle<T>,
    iter: usize,
    dim: usize,
    out: &mut [f64],
    backend: &Backend,
) -> Result<()>
where
    T: SmpValue + Sync,
    K: MonitorKernel<T>,
{
    kernel.pre_processor(iter, particle);
    let k: &K = kernel;
    run_const(backend, particle, out, dim, |csp, res| k.monitor_state(iter, dim, csp, res))?;
    kernel.post_processor(iter, particle);
    Ok(())
}

/// Fills `out` with the per-particle integrands and returns the grid point.
pub fn apply_path_eval<T, K>(
    kernel: &mut K,
    particle: &Particle<T>,
    iter: usize,
    out: &mut [f64],
    backend: &Backend,
) -> Result<f64>
where
    T: SmpValue + Sync,
    K: PathKernel<T>,
{
    kernel.pre_processor(iter, particle);
    let k: &K = kernel;
    run_const(backend, particle, out, 1, |csp, res| res[0] = k.path_state(iter, csp))?;
    let grid = kernel.path_grid(iter, particle);
    kernel.post_processor(iter, particle);
    Ok(grid)
}

/// An [`InitKernel`] bound to a backend, usable as the sampler's init op.
pub struct KernelInit<T: SmpValue, K: InitKernel<T>> {
    kernel: K,
    slots: Vec<K::Slot>,
    backend: Backend,
    _value: PhantomData<fn() -> T>,
}

impl<T: SmpValue, K: InitKernel<T>> KernelInit<T, K> {
    pub fn new(kernel: K, backend: Backend) -> Self {
        KernelInit {
            kernel,
            slots: Vec::new(),
            backend,
            _value: PhantomData,
        }
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut K {
        &mut self.kernel
    }
}

impl<T: SmpValue, K: InitKernel<T>> InitOp<T> for KernelInit<T, K> {
    fn initialize(&mut self, particle: &mut Particle<T>, param: Option<&dyn Any>) -> Result<usize> {
        apply_init(&mut self.kernel, &mut self.slots, particle, param, &self.backend)
    }
}

/// A [`MoveKernel`] bound to a backend, usable as a move or mcmc op.
pub struct KernelMove<T: SmpValue, K: MoveKernel<T>> {
    kernel: K,
    slots: Vec<K::Slot>,
    backend: Backend,
    _value: PhantomData<fn() -> T>,
}

impl<T: SmpValue, K: MoveKernel<T>> KernelMove<T, K> {
    pub fn new(kernel: K, backend: Backend) -> Self {
        KernelMove {
            kernel,
            slots: Vec::new(),
            backend,
            _value: PhantomData,
        }
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut K {
        &mut self.kernel
    }
}

impl<T: SmpValue, K: MoveKernel<T>> MoveOp<T> for KernelMove<T, K> {
    fn apply(&mut self, iter: usize, particle: &mut Particle<T>) -> Result<usize> {
        apply_move(&mut self.kernel, &mut self.slots, particle, iter, &self.backend)
    }
}

pub struct KernelMonitor<T: SmpValue, K: MonitorKernel<T>> {
    kernel: K,
    backend: Backend,
    _value: PhantomData<fn() -> T>,
}

impl<T: SmpValue, K: MonitorKernel<T>> KernelMonitor<T, K> {
    pub fn new(kernel: K, backend: Backend) -> Self {
        KernelMonitor {
            kernel,
            backend,
            _value: PhantomData,
        }
    }
}

impl<T: SmpValue + Sync, K: MonitorKernel<T>> MonitorEval<T> for KernelMonitor<T, K> {
    fn eval(&mut self, iter: usize, dim: usize, particle: &Particle<T>, res: &mut [f64]) -> Result<()> {
        apply_monitor_eval(&mut self.kernel, particle, iter, dim, res, &self.backend)
    }
}

pub struct KernelPath<T: SmpValue, K: PathKernel<T>> {
    kernel: K,
    backend: Backend,
    _value: PhantomData<fn() -> T>,
}

impl<T: SmpValue, K: PathKernel<T>> KernelPath<T, K> {
    pub fn new(kernel: K, backend: Backend) -> Self {
        KernelPath {
            kernel,
            backend,
            _value: PhantomData,
        }
    }
}

impl<T: SmpValue + Sync, K: PathKernel<T>> PathEval<T> for KernelPath<T, K> {
    fn eval(&mut self, iter: usize, particle: &Particle<T>, res: &mut [f64]) -> Result<f64> {
        apply_path_eval(&mut self.kernel, particle, iter, res, &self.backend)
    }
}

type CollectiveMut<T> = Box<dyn FnMut(usize, &mut Particle<T>) -> Result<()> + Send + Sync>;
type CollectiveRef<T> = Box<dyn FnMut(usize, &Particle<T>) + Send + Sync>;

/// Builds a [`MoveKernel`] from a plain per-particle function and optional
/// pre and post steps.
pub struct MoveAdapter<T, F> {
    kernel: F,
    pre: Option<CollectiveMut<T>>,
    post: Option<CollectiveMut<T>>,
}

impl<T, F> MoveAdapter<T, F> {
    pub fn new(kernel: F) -> Self {
        MoveAdapter {
            kernel,
            pre: None,
            post: None,
        }
    }

    pub fn with_pre(mut self, pre: impl FnMut(usize, &mut Particle<T>) -> Result<()> + Send + Sync + 'static) -> Self {
        self.pre = Some(Box::new(pre));
        self
    }

    pub fn with_post(mut self, post: impl FnMut(usize, &mut Particle<T>) -> Result<()> + Send + Sync + 'static) -> Self {
        self.post = Some(Box::new(post));
        self
    }
}

impl<T, F> MoveKernel<T> for MoveAdapter<T, F>
where
    T: SmpValue,
    F: Fn(usize, SingleParticle<'_, T>) -> usize + Send + Sync,
{
    type Slot = ();

    fn pre_processor(&mut self, iter: usize, particle: &mut Particle<T>) -> Result<()> {
        match self.pre.as_mut() {
            Some(pre) => pre(iter, particle),
            None => Ok(()),
        }
    }

    fn move_state(&self, iter: usize, sp: SingleParticle<'_, T>, _: &mut ()) -> KernelResult {
        Ok((self.kernel)(iter, sp))
    }

    fn post_processor(&mut self, iter: usize, particle: &mut Particle<T>, _: &[()]) -> Result<()> {
        match self.post.as_mut() {
            Some(post) => post(iter, particle),
            None => Ok(()),
        }
    }
}

/// Wraps a per-particle move function into a ready-to-queue op.
pub fn make_move<T, F>(kernel: F, backend: Backend) -> KernelMove<T, MoveAdapter<T, F>>
where
    T: SmpValue,
    F: Fn(usize, SingleParticle<'_, T>) -> usize + Send + Sync,
{
    KernelMove::new(MoveAdapter::new(kernel), backend)
}

/// Builds a [`MonitorKernel`] from a plain per-particle function.
pub struct MonitorAdapter<T, F> {
    kernel: F,
    pre: Option<CollectiveRef<T>>,
    post: Option<CollectiveRef<T>>,
}

impl<T, F> MonitorAdapter<T, F> {
    pub fn new(kernel: F) -> Self {
        MonitorAdapter {
            kernel,
            pre: None,
            post: None,
        }
    }

    pub fn with_pre(mut self, pre: impl FnMut(usize, &Particle<T>) + Send + Sync + 'static) -> Self {
        self.pre = Some(Box::new(pre));
        self
    }

    pub fn with_post(mut self, post: impl FnMut(usize, &Particle<T>) + Send + Sync + 'static) -> Self {
        self.post = Some(Box::new(post));
        self
    }
}

impl<T, F> MonitorKernel<T> for MonitorAdapter<T, F>
where
    T: SmpValue,
    F: Fn(usize, usize, ConstSingleParticle<'_, T>, &mut [f64]) + Send + Sync,
{
    fn pre_processor(&mut self, iter: usize, particle: &Particle<T>) {
        if let Some(pre) = self.pre.as_mut() {
            pre(iter, particle);
        }
    }

    fn monitor_state(&self, iter: usize, dim: usize, csp: ConstSingleParticle<'_, T>, res: &mut [f64]) {
        (self.kernel)(iter, dim, csp, res)
    }

    fn post_processor(&mut self, iter: usize, particle: &Particle<T>) {
        if let Some(post) = self.post.as_mut() {
            post(iter, particle);
        }
    }
}

/// Wraps a per-particle monitor function into a ready-to-register evaluator.
pub fn make_monitor<T, F>(kernel: F, backend: Backend) -> KernelMonitor<T, MonitorAdapter<T, F>>
where
    T: SmpValue,
    F: Fn(usize, usize, ConstSingleParticle<'_, T>, &mut [f64]) + Send + Sync,
{
    KernelMonitor::new(MonitorAdapter::new(kernel), backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::ResampleScheme;
    use crate::state::State;

    type Pair = State<f64, f64, 2>;

    fn system(n: usize) -> Particle<Pair> {
        let mut p = Particle::<Pair>::new(n, ResampleScheme::Stratified, 9).unwrap();
        *p.value_mut().shared_mut() = 0.5;
        p
    }

    fn backends() -> Vec<Backend> {
        let mut v = vec![Backend::Sequential];
        for k in [1, 2, 4, 8] {
            v.push(Backend::thread_pool(k).unwrap());
        }
        v
    }

    struct Walk;

    impl MoveKernel<Pair> for Walk {
        type Slot = f64;

        fn move_state(&self, _iter: usize, mut sp: SingleParticle<'_, Pair>, slot: &mut f64) -> KernelResult {
            let step = *sp.shared() * sp.rng().std_normal();
            *sp.state_mut(0) += step;
            *sp.state_mut(1) = sp.id() as f64;
            *slot = step;
            Ok(usize::from(step > 0.0))
        }

        fn post_processor(&mut self, _iter: usize, p: &mut Particle<Pair>, slots: &[f64]) -> Result<()> {
            p.weight_set_mut().add_log_weight(slots)
        }
    }

    #[test]
    fn backends_agree() {
        let mut reference: Option<(Vec<f64>, Vec<f64>, usize)> = None;
        for backend in backends() {
            for n in [1usize, 7, 64] {
                let mut p = system(n);
                let mut slots = Vec::new();
                let mut total = 0;
                for iter in 1..=3 {
                    total += apply_move(&mut Walk, &mut slots, &mut p, iter, &backend).unwrap();
                }
                let out = (
                    p.value().matrix().data().to_vec(),
                    p.weight_set().weight().to_vec(),
                    total,
                );
                if n == 64 {
                    match &reference {
                        None => reference = Some(out),
                        Some(r) => assert_eq!(r, &out, "backend {backend}"),
                    }
                }
            }
        }
    }

    #[test]
    fn always_accept_counts_n() {
        for backend in backends() {
            let mut p = system(13);
            let mut op = make_move(|_: usize, _: SingleParticle<'_, Pair>| 1usize, backend);
            assert_eq!(op.apply(1, &mut p).unwrap(), 13);
        }
    }

    #[test]
    fn pre_and_post_run_once() {
        let calls = Arc::new(AtomicUsize::new(0));
        let (c1, c2) = (calls.clone(), calls.clone());
        let kernel = MoveAdapter::new(|_: usize, _: SingleParticle<'_, Pair>| 1usize)
            .with_pre(move |_, _| {
                c1.fetch_add(1, Ordering::SeqCst);
                Ok(())
            })
            .with_post(move |_, _| {
                c2.fetch_add(100, Ordering::SeqCst);
                Ok(())
            });
        let mut op = KernelMove::new(kernel, Backend::thread_pool(4).unwrap());
        let mut p = system(1);
        assert_eq!(op.apply(1, &mut p).unwrap(), 1);
        assert_eq!(calls.load(Ordering::SeqCst), 101);
    }

    #[test]
    fn lowest_failing_index_reported() {
        struct Fails;
        impl MoveKernel<Pair> for Fails {
            type Slot = ();
            fn move_state(&self, _: usize, sp: SingleParticle<'_, Pair>, _: &mut ()) -> KernelResult {
                match sp.id() {
                    17 => Err("bad particle".into()),
                    40 => panic!("worse particle"),
                    _ => Ok(1),
                }
            }
        }
        for backend in backends() {
            let mut p = system(64);
            let err = apply_move(&mut Fails, &mut Vec::new(), &mut p, 1, &backend).unwrap_err();
            match err {
                SmcError::Kernel { particle, message } => {
                    assert_eq!(particle, 17);
                    assert_eq!(message, "bad particle");
                }
                e => panic!("unexpected {e}"),
            }
        }
        let mut p = system(64);
        let mut panicking = make_move(
            |_: usize, sp: SingleParticle<'_, Pair>| {
                assert!(sp.id() != 40, "particle forty");
                1usize
            },
            Backend::thread_pool(8).unwrap(),
        );
        match panicking.apply(1, &mut p).unwrap_err() {
            SmcError::Kernel { particle, message } => {
                assert_eq!(particle, 40);
                assert!(message.contains("particle forty"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn monitor_columns() {
        for backend in backends() {
            let p = system(10);
            let mut m = make_monitor(
                |_: usize, dim: usize, _: ConstSingleParticle<'_, Pair>, res: &mut [f64]| {
                    for (j, r) in res.iter_mut().enumerate().take(dim) {
                        *r = j as f64;
                    }
                },
                backend,
            );
            let mut out = vec![f64::NAN; 30];
            m.eval(0, 3, &p, &mut out).unwrap();
            for row in out.chunks(3) {
                assert_eq!(row, &[0.0, 1.0, 2.0]);
            }
            assert!(m.eval(0, 0, &p, &mut []).is_err());
            assert!(m.eval(0, 3, &p, &mut out[..29]).is_err());
        }
    }

    #[test]
    fn path_eval_backends_agree() {
        struct Sq;
        impl PathKernel<Pair> for Sq {
            fn path_state(&self, _: usize, csp: ConstSingleParticle<'_, Pair>) -> f64 {
                csp.state(0) * csp.state(0) + *csp.shared()
            }
            fn path_grid(&self, iter: usize, _: &Particle<Pair>) -> f64 {
                iter as f64 / 10.0
            }
        }
        let mut reference = None;
        for backend in backends() {
            let mut p = system(33);
            apply_move(&mut Walk, &mut Vec::new(), &mut p, 1, &Backend::Sequential).unwrap();
            let mut path = KernelPath::new(Sq, backend);
            let mut out = vec![0.0; 33];
            let grid = path.eval(4, &p, &mut out).unwrap();
            assert_eq!(grid, 0.4);
            match &reference {
                None => reference = Some(out),
                Some(r) => assert_eq!(r, &out),
            }
        }
    }

    #[test]
    fn init_kernel_sees_param() {
        struct Init;
        impl InitKernel<Pair> for Init {
            type Slot = ();
            fn initialize_param(&mut self, p: &mut Particle<Pair>, param: Option<&dyn Any>) -> Result<()> {
                if let Some(v) = param.and_then(|v| v.downcast_ref::<f64>()) {
                    *p.value_mut().shared_mut() = *v;
                }
                Ok(())
            }
            fn initialize_state(&self, mut sp: SingleParticle<'_, Pair>, _: &mut ()) -> KernelResult {
                *sp.state_mut(0) = *sp.shared();
                Ok(0)
            }
        }
        let mut p = system(5);
        let mut op = KernelInit::new(Init, Backend::thread_pool(2).unwrap());
        op.initialize(&mut p, Some(&3.0f64)).unwrap();
        assert!((0..5).all(|i| *p.value().state(i, 0) == 3.0));
        op.initialize(&mut p, None).unwrap();
        assert!((0..5).all(|i| *p.value().state(i, 0) == 3.0));
    }
}
