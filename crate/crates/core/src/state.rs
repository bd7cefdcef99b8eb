//! Value collections: the per-particle states a sampler moves around.

use std::marker::PhantomData;

use crate::error::{Result, SmcError};

/// What a particle system needs from its value collection: construction for
/// a given size, and copying particles according to a parent map.
pub trait Value: Send {
    fn new(n: usize) -> Self
    where
        Self: Sized;

    fn size(&self) -> usize;

    /// After the call, particle `i` holds what particle `copy_from[i]` held
    /// before it. Must behave as a simultaneous copy.
    fn copy(&mut self, copy_from: &[usize]) -> Result<()>;
}

/// A value collection whose states form an `N x dim` matrix plus data shared
/// (read-only during kernels) by all particles. This is what the execution
/// backends operate on.
pub trait SmpValue: Value {
    type Scalar: Send + Sync;
    type Shared: Sync;

    fn matrix(&self) -> &StateMatrix<Self::Scalar>;
    fn shared(&self) -> &Self::Shared;
    fn split_mut(&mut self) -> (&mut StateMatrix<Self::Scalar>, &Self::Shared);
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MatrixOrder {
    #[default]
    RowMajor,
    ColMajor,
}

/// `N` particles by `dim` variables, stored in either order.
#[derive(Clone, Debug)]
pub struct StateMatrix<S> {
    size: usize,
    dim: usize,
    order: MatrixOrder,
    data: Vec<S>,
    scratch: Vec<S>,
}

impl<S: Clone + Default> StateMatrix<S> {
    pub fn new(size: usize, dim: usize, order: MatrixOrder) -> Self {
        StateMatrix {
            size,
            dim,
            order,
            data: vec![S::default(); size * dim],
            scratch: Vec::new(),
        }
    }

    /// Copies rows according to `copy_from`. When every parent is its own
    /// parent the copy is done in place, otherwise from a snapshot.
    pub fn copy_particles(&mut self, copy_from: &[usize]) -> Result<()> {
        if copy_from.len() != self.size {
            return Err(SmcError::LengthMismatch {
                expected: self.size,
                actual: copy_from.len(),
            });
        }
        if let Some(&bad) = copy_from.iter().find(|&&j| j >= self.size) {
            return Err(SmcError::OutOfRange {
                index: bad,
                size: self.size,
            });
        }
        let in_place = copy_from.iter().all(|&j| copy_from[j] == j);
        if !in_place {
            self.scratch.clone_from(&self.data);
        }
        for (to, &from) in copy_from.iter().enumerate() {
            if to == from {
                continue;
            }
            for pos in 0..self.dim {
                let src = self.offset(from, pos);
                let dst = self.offset(to, pos);
                if in_place {
                    let (src, dst) = pair_mut(&mut self.data, src, dst);
                    dst.clone_from(src);
                } else {
                    self.data[dst].clone_from(&self.scratch[src]);
                }
            }
        }
        Ok(())
    }
}

// Shared access to `v[a]` and exclusive access to `v[b]`, `a != b`.
fn pair_mut<S>(v: &mut [S], a: usize, b: usize) -> (&S, &mut S) {
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&hi[0], &mut lo[b])
    }
}

impl<S> StateMatrix<S> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> MatrixOrder {
        self.order
    }

    #[inline]
    fn offset(&self, id: usize, pos: usize) -> usize {
        match self.order {
            MatrixOrder::RowMajor => id * self.dim + pos,
            MatrixOrder::ColMajor => pos * self.size + id,
        }
    }

    fn check(&self, id: usize, pos: usize) -> Result<()> {
        if id >= self.size {
            return Err(SmcError::OutOfRange {
                index: id,
                size: self.size,
            });
        }
        if pos >= self.dim {
            return Err(SmcError::OutOfRange {
                index: pos,
                size: self.dim,
            });
        }
        Ok(())
    }

    pub fn get(&self, id: usize, pos: usize) -> Result<&S> {
        self.check(id, pos)?;
        Ok(&self.data[self.offset(id, pos)])
    }

    pub fn get_mut(&mut self, id: usize, pos: usize) -> Result<&mut S> {
        self.check(id, pos)?;
        let k = self.offset(id, pos);
        Ok(&mut self.data[k])
    }

    /// Unchecked-by-`Result` accessor; panics when out of range.
    #[inline]
    pub fn state(&self, id: usize, pos: usize) -> &S {
        assert!(id < self.size && pos < self.dim, "state index out of range");
        &self.data[self.offset(id, pos)]
    }

    #[inline]
    pub fn state_mut(&mut self, id: usize, pos: usize) -> &mut S {
        assert!(id < self.size && pos < self.dim, "state index out of range");
        let k = self.offset(id, pos);
        &mut self.data[k]
    }

    /// Raw storage in this matrix's own order.
    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Exclusive row views over all particles, splittable for parallel use.
    pub fn rows_mut(&mut self) -> RowsMut<'_, S> {
        RowsMut {
            base: self.data.as_mut_ptr(),
            start: 0,
            end: self.size,
            size: self.size,
            dim: self.dim,
            order: self.order,
            _marker: PhantomData,
        }
    }
}

impl<S: Clone> StateMatrix<S> {
    /// Column `pos` across all particles.
    pub fn read_state(&self, pos: usize) -> Result<Vec<S>> {
        if pos >= self.dim {
            return Err(SmcError::OutOfRange {
                index: pos,
                size: self.dim,
            });
        }
        Ok((0..self.size)
            .map(|i| self.data[self.offset(i, pos)].clone())
            .collect())
    }

    /// The whole matrix flattened in the requested order.
    pub fn read_state_matrix(&self, order: MatrixOrder) -> Vec<S> {
        let mut out = Vec::with_capacity(self.size * self.dim);
        match order {
            MatrixOrder::RowMajor => {
                for i in 0..self.size {
                    for pos in 0..self.dim {
                        out.push(self.data[self.offset(i, pos)].clone());
                    }
                }
            }
            MatrixOrder::ColMajor => {
                for pos in 0..self.dim {
                    for i in 0..self.size {
                        out.push(self.data[self.offset(i, pos)].clone());
                    }
                }
            }
        }
        out
    }
}

/// Exclusive access to the rows `start..end` of a [`StateMatrix`].
pub struct RowsMut<'a, S> {
    base: *mut S,
    start: usize,
    end: usize,
    size: usize,
    dim: usize,
    order: MatrixOrder,
    _marker: PhantomData<&'a mut [S]>,
}

// SAFETY: a `RowsMut` hands out access only to the cells of its own disjoint
// row range, so sending it to another thread is like sending `&mut [S]`.
unsafe impl<S: Send> Send for RowsMut<'_, S> {}
unsafe impl<S: Sync> Sync for RowsMut<'_, S> {}

impl<'a, S> RowsMut<'a, S> {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Splits into rows `start..start + mid` and the rest.
    pub fn split_at(self, mid: usize) -> (RowsMut<'a, S>, RowsMut<'a, S>) {
        assert!(mid <= self.len(), "split point out of range");
        let at = self.start + mid;
        let left = RowsMut {
            end: at,
            ..self.shallow()
        };
        let right = RowsMut {
            start: at,
            ..self.shallow()
        };
        (left, right)
    }

    fn shallow(&self) -> RowsMut<'a, S> {
        RowsMut {
            base: self.base,
            start: self.start,
            end: self.end,
            size: self.size,
            dim: self.dim,
            order: self.order,
            _marker: PhantomData,
        }
    }
}

impl<'a, S> Iterator for RowsMut<'a, S> {
    type Item = RowMut<'a, S>;

    fn next(&mut self) -> Option<RowMut<'a, S>> {
        if self.start == self.end {
            return None;
        }
        let id = self.start;
        self.start += 1;
        let (offset, stride) = match self.order {
            MatrixOrder::RowMajor => (id * self.dim, 1),
            MatrixOrder::ColMajor => (id, self.size),
        };
        // SAFETY: `id` is yielded once; its cells `offset + k * stride`,
        // k < dim, lie inside the allocation and are disjoint from every
        // other row's cells.
        let ptr = unsafe { self.base.add(offset) };
        Some(RowMut {
            ptr,
            stride,
            dim: self.dim,
            _marker: PhantomData,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.len(), Some(self.len()))
    }
}

impl<S> ExactSizeIterator for RowsMut<'_, S> {}

/// Mutable access to one particle's `dim` state values.
pub struct RowMut<'a, S> {
    ptr: *mut S,
    stride: usize,
    dim: usize,
    _marker: PhantomData<&'a mut S>,
}

unsafe impl<S: Send> Send for RowMut<'_, S> {}
unsafe impl<S: Sync> Sync for RowMut<'_, S> {}

impl<S> RowMut<'_, S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, pos: usize) -> &S {
        assert!(pos < self.dim, "state position out of range");
        // SAFETY: in-bounds cell of a row this view borrows exclusively.
        unsafe { &*self.ptr.add(pos * self.stride) }
    }

    #[inline]
    pub fn get_mut(&mut self, pos: usize) -> &mut S {
        assert!(pos < self.dim, "state position out of range");
        // SAFETY: as above, and `&mut self` prevents aliasing through this view.
        unsafe { &mut *self.ptr.add(pos * self.stride) }
    }
}

impl<S> std::ops::Index<usize> for RowMut<'_, S> {
    type Output = S;
    fn index(&self, pos: usize) -> &S {
        self.get(pos)
    }
}

impl<S> std::ops::IndexMut<usize> for RowMut<'_, S> {
    fn index_mut(&mut self, pos: usize) -> &mut S {
        self.get_mut(pos)
    }
}

/// A `DIM`-column state matrix bundled with shared data `D`.
#[derive(Clone, Debug)]
pub struct State<S, D, const DIM: usize> {
    matrix: StateMatrix<S>,
    shared: D,
}

impl<S: Clone + Default, D: Default, const DIM: usize> State<S, D, DIM> {
    pub fn with_order(n: usize, order: MatrixOrder) -> Self {
        State {
            matrix: StateMatrix::new(n, DIM, order),
            shared: D::default(),
        }
    }
}

impl<S, D, const DIM: usize> State<S, D, DIM> {
    pub fn state(&self, id: usize, pos: usize) -> &S {
        self.matrix.state(id, pos)
    }

    pub fn state_mut(&mut self, id: usize, pos: usize) -> &mut S {
        self.matrix.state_mut(id, pos)
    }

    pub fn matrix(&self) -> &StateMatrix<S> {
        &self.matrix
    }

    pub fn shared(&self) -> &D {
        &self.shared
    }

    pub fn matrix_mut(&mut self) -> &mut StateMatrix<S> {
        &mut self.matrix
    }

    pub fn shared_mut(&mut self) -> &mut D {
        &mut self.shared
    }
}

impl<S, D, const DIM: usize> Value for State<S, D, DIM>
where
    S: Clone + Default + Send,
    D: Default + Send,
{
    fn new(n: usize) -> Self {
        Self::with_order(n, MatrixOrder::RowMajor)
    }

    fn size(&self) -> usize {
        self.matrix.size()
    }

    fn copy(&mut self, copy_from: &[usize]) -> Result<()> {
        self.matrix.copy_particles(copy_from)
    }
}

impl<S, D, const DIM: usize> SmpValue for State<S, D, DIM>
where
    S: Clone + Default + Send + Sync,
    D: Default + Send + Sync,
{
    type Scalar = S;
    type Shared = D;

    fn matrix(&self) -> &StateMatrix<S> {
        &self.matrix
    }

    fn shared(&self) -> &D {
        &self.shared
    }

    fn split_mut(&mut self) -> (&mut StateMatrix<S>, &D) {
        (&mut self.matrix, &self.shared)
    }
}
