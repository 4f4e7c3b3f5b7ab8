//! Cartesian-product iteration spaces and the strategies that traverse them.
//!
//! An [`IndexSpace`] is the product of half-open ranges. [`for_each`] invokes a
//! body once per tuple, either in declared order or split into chunks that run
//! on the rayon pool. The pool honours `RAYON_NUM_THREADS`.

use std::cell::UnsafeCell;
use std::marker::PhantomData;
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Real;

/// Largest supported number of ranges in one space.
pub const MAX_RANK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ItSpaceError {
    #[error("range {axis} is reversed: {lo} > {hi}")]
    Reversed { axis: usize, lo: usize, hi: usize },
    #[error("iteration spaces support at most {MAX_RANK} ranges, got {0}")]
    Rank(usize),
    #[error("order {0:?} is not a permutation of the range indices")]
    Order(Vec<usize>),
    #[error("reduction over an empty iteration space")]
    EmptyReduction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Sequential,
    ParallelUnordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExecutionStrategy {
    pub kind: StrategyKind,
    /// Number of chunks to split a parallel traversal into. Defaults to the
    /// size of the rayon pool.
    pub worker_hint: Option<usize>,
}

impl ExecutionStrategy {
    pub const SEQUENTIAL: Self = Self { kind: StrategyKind::Sequential, worker_hint: None };
    pub const PARALLEL: Self = Self { kind: StrategyKind::ParallelUnordered, worker_hint: None };

    pub fn label(&self) -> &'static str {
        match self.kind {
            StrategyKind::Sequential => "seq",
            StrategyKind::ParallelUnordered => "par",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "seq" | "sequential" => Some(Self::SEQUENTIAL),
            "par" | "parallel" => Some(Self::PARALLEL),
            _ => None,
        }
    }

    fn chunk_len(&self, cardinality: usize) -> usize {
        let workers = self.worker_hint.unwrap_or_else(rayon::current_num_threads).max(1);
        cardinality.div_ceil(workers).max(1)
    }
}

/// Product of half-open ranges. `order[0]` names the fastest varying range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSpace {
    lo: Vec<usize>,
    len: Vec<usize>,
    order: Vec<usize>,
}

/// Builds the product of `ranges`; the first range varies fastest.
pub fn cartesian(ranges: &[Range<usize>]) -> Result<IndexSpace, ItSpaceError> {
    if ranges.len() > MAX_RANK {
        return Err(ItSpaceError::Rank(ranges.len()));
    }
    for (axis, r) in ranges.iter().enumerate() {
        if r.start > r.end {
            return Err(ItSpaceError::Reversed { axis, lo: r.start, hi: r.end });
        }
    }
    Ok(IndexSpace {
        lo: ranges.iter().map(|r| r.start).collect(),
        len: ranges.iter().map(|r| r.end - r.start).collect(),
        order: (0..ranges.len()).collect(),
    })
}

impl IndexSpace {
    /// Replaces the visit order. `order[0]` becomes the fastest varying range.
    pub fn with_order(mut self, order: &[usize]) -> Result<Self, ItSpaceError> {
        let mut seen = vec![false; self.rank()];
        let valid = order.len() == self.rank()
            && order.iter().all(|&a| a < seen.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(ItSpaceError::Order(order.to_vec()));
        }
        self.order = order.to_vec();
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.lo.len()
    }

    pub fn cardinality(&self) -> usize {
        if self.rank() == 0 {
            return 0;
        }
        self.len.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality() == 0
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Writes the `n`-th tuple of the visit sequence into `out`.
    pub fn tuple_at(&self, mut n: usize, out: &mut [usize]) {
        for &a in &self.order {
            out[a] = self.lo[a] + n % self.len[a];
            n /= self.len[a];
        }
    }

    /// Steps `t` to the next tuple of the visit sequence, wrapping at the end.
    #[inline]
    fn advance(&self, t: &mut [usize]) {
        for &a in &self.order {
            t[a] += 1;
            if t[a] < self.lo[a] + self.len[a] {
                return;
            }
            t[a] = self.lo[a];
        }
    }

    /// Tuples in declared order.
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.cardinality()).map(move |n| {
            let mut t = vec![0; self.rank()];
            self.tuple_at(n, &mut t);
            t
        })
    }

    fn run_range<E>(&self, range: Range<usize>, body: &(impl Fn(&[usize]) -> Result<(), E> + ?Sized)) -> Result<(), E> {
        let mut t = [0usize; MAX_RANK];
        let t = &mut t[..self.rank()];
        self.tuple_at(range.start, t);
        for _ in range {
            body(t)?;
            self.advance(t);
        }
        Ok(())
    }
}

/// Invokes `body` exactly once per tuple and returns after all invocations
/// finished. The first error stops the traversal; with a parallel strategy
/// other chunks may still have run partially.
pub fn for_each<E, F>(space: &IndexSpace, strategy: ExecutionStrategy, body: F) -> Result<(), E>
where
    E: Send,
    F: Fn(&[usize]) -> Result<(), E> + Sync,
{
    let n = space.cardinality();
    if n == 0 {
        return Ok(());
    }
    match strategy.kind {
        StrategyKind::Sequential => space.run_range(0..n, &body),
        StrategyKind::ParallelUnordered => {
            let chunk = strategy.chunk_len(n);
            (0..n.div_ceil(chunk))
                .into_par_iter()
                .try_for_each(|c| space.run_range(c * chunk..((c + 1) * chunk).min(n), &body))
        }
    }
}

/// Maximum of `value` over the space.
pub fn reduce_max<T, F>(space: &IndexSpace, strategy: ExecutionStrategy, value: F) -> Result<T, ItSpaceError>
where
    T: Real,
    F: Fn(&[usize]) -> T + Sync,
{
    let n = space.cardinality();
    if n == 0 {
        return Err(ItSpaceError::EmptyReduction);
    }
    let fold = |range: Range<usize>| {
        let mut t = [0usize; MAX_RANK];
        let t = &mut t[..space.rank()];
        space.tuple_at(range.start, t);
        let mut m = T::neg_infinity();
        for _ in range {
            m = m.max(value(t));
            space.advance(t);
        }
        m
    };
    Ok(match strategy.kind {
        StrategyKind::Sequential => fold(0..n),
        StrategyKind::ParallelUnordered => {
            let chunk = strategy.chunk_len(n);
            (0..n.div_ceil(chunk))
                .into_par_iter()
                .map(|c| fold(c * chunk..((c + 1) * chunk).min(n)))
                .reduce(T::neg_infinity, |a, b| a.max(b))
        }
    })
}

/// Shared view of a mutable slice for loop bodies that write disjoint
/// elements from different tuples.
///
/// Reads and writes are `unsafe`: the caller guarantees that no element is
/// written by one invocation while another invocation accesses it.
pub struct DisjointSlice<'a, T> {
    cells: &'a [UnsafeCell<T>],
    _marker: PhantomData<&'a mut [T]>,
}

unsafe impl<T: Send> Send for DisjointSlice<'_, T> {}
unsafe impl<T: Send> Sync for DisjointSlice<'_, T> {}

impl<'a, T: Copy> DisjointSlice<'a, T> {
    pub fn new(slice: &'a mut [T]) -> Self {
        let len = slice.len();
        let ptr = slice.as_mut_ptr() as *const UnsafeCell<T>;
        // SAFETY: UnsafeCell<T> has the same layout as T and we hold the unique borrow.
        let cells = unsafe { std::slice::from_raw_parts(ptr, len) };
        Self { cells, _marker: PhantomData }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// # Safety
    /// No concurrent write to element `i`.
    #[inline(always)]
    pub unsafe fn get(&self, i: usize) -> T {
        *self.cells[i].get()
    }

    /// # Safety
    /// No concurrent access to element `i`.
    #[inline(always)]
    pub unsafe fn set(&self, i: usize, v: T) {
        *self.cells[i].get() = v;
    }
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use std::convert::Infallible;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const BOTH: [ExecutionStrategy; 3] = [
        ExecutionStrategy::SEQUENTIAL,
        ExecutionStrategy::PARALLEL,
        ExecutionStrategy { kind: StrategyKind::ParallelUnordered, worker_hint: Some(3) },
    ];

    #[test]
    fn enumerates_product() {
        let s = cartesian(&[0..2, 0..3]).unwrap();
        assert_eq!(s.cardinality(), 6);
        let v: Vec<_> = s.iter().collect();
        assert_eq!(v[0], vec![0, 0]);
        assert_eq!(v[1], vec![1, 0]);
        assert_eq!(v[2], vec![0, 1]);
        let mut sorted = v.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }

    #[test]
    fn singleton_and_empty() {
        let s = cartesian(&[0..1]).unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![vec![0]]);
        let e = cartesian(&[0..0, 0..5]).unwrap();
        assert!(e.is_empty());
        for st in BOTH {
            for_each(&e, st, |_| -> Result<(), Infallible> { panic!("body called") }).unwrap();
        }
        assert_eq!(cartesian(&[]).unwrap().cardinality(), 0);
    }

    #[test]
    #[allow(clippy::reversed_empty_ranges)]
    fn rejects_bad_input() {
        assert_eq!(cartesian(&[0..2, 3..1]), Err(ItSpaceError::Reversed { axis: 1, lo: 3, hi: 1 }));
        assert!(cartesian(&vec![0..1; 9]).is_err());
        let s = cartesian(&[0..2, 0..2]).unwrap();
        assert!(s.clone().with_order(&[0, 0]).is_err());
        assert!(s.clone().with_order(&[0]).is_err());
        assert!(s.with_order(&[1, 2]).is_err());
    }

    #[test]
    fn order_permutes_sequence_not_set() {
        let s = cartesian(&[1..3, 0..3, 5..7]).unwrap();
        let r = s.clone().with_order(&[2, 0, 1]).unwrap();
        let a: Vec<_> = s.iter().collect();
        let b: Vec<_> = r.iter().collect();
        assert_eq!(b[1], vec![1, 0, 6]);
        assert_ne!(a, b);
        let (mut a, mut b) = (a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn exactly_once() {
        let s = cartesian(&[0..7, 2..5, 0..11]).unwrap().with_order(&[1, 2, 0]).unwrap();
        for st in BOTH {
            let hits: Vec<AtomicUsize> = (0..7 * 3 * 11).map(|_| AtomicUsize::new(0)).collect();
            let total = AtomicUsize::new(0);
            for_each(&s, st, |t| -> Result<(), Infallible> {
                hits[t[0] + 7 * ((t[1] - 2) + 3 * t[2])].fetch_add(1, Ordering::Relaxed);
                total.fetch_add(1, Ordering::Relaxed);
                Ok(())
            })
            .unwrap();
            assert_eq!(total.load(Ordering::Relaxed), 231);
            assert!(hits.iter().all(|h| h.load(Ordering::Relaxed) == 1));
        }
    }

    #[test]
    fn strategies_produce_same_memory() {
        let s = cartesian(&[0..13, 0..17]).unwrap();
        let run = |st| {
            let mut out = vec![0u64; 13 * 17];
            let view = DisjointSlice::new(&mut out);
            for_each(&s, st, |t| -> Result<(), Infallible> {
                let h = (t[0] as u64).wrapping_mul(0x9e37_79b9) ^ (t[1] as u64) << 7;
                unsafe { view.set(t[0] + 13 * t[1], h) };
                Ok(())
            })
            .unwrap();
            out
        };
        let seq = run(ExecutionStrategy::SEQUENTIAL);
        for st in BOTH {
            assert_eq!(run(st), seq);
        }
    }

    #[test]
    fn errors_propagate() {
        let s = cartesian(&[0..100]).unwrap();
        for st in BOTH {
            let r = for_each(&s, st, |t| if t[0] == 42 { Err(t[0]) } else { Ok(()) });
            assert_eq!(r, Err(42));
        }
    }

    #[test]
    fn reduce_max_examples() {
        let vals = [1.0, 3.0, 2.0];
        let s = cartesian(&[0..3]).unwrap();
        for st in BOTH {
            assert_eq!(reduce_max(&s, st, |t| vals[t[0]]).unwrap(), 3.0);
            assert_eq!(reduce_max(&s, st, |_| 5.0).unwrap(), 5.0);
        }
        let e = cartesian(&[0..0]).unwrap();
        assert_eq!(reduce_max(&e, ExecutionStrategy::SEQUENTIAL, |_| 1.0f64), Err(ItSpaceError::EmptyReduction));
    }

    #[test]
    fn reduce_max_strategy_independent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let s = cartesian(&[0..100, 0..100]).unwrap();
        let f = |t: &[usize]| vals[t[0] + 100 * t[1]];
        let seq = reduce_max(&s, ExecutionStrategy::SEQUENTIAL, f).unwrap();
        let brute = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(seq, brute);
        for st in BOTH {
            assert_eq!(reduce_max(&s, st, f).unwrap(), seq);
        }
    }
}
