use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::Scalar;

/// A time-dependent velocity field `v(x, t)` on `ℝᴰ`, evaluated row-wise.
///
/// Rows of `x` are independent states and `t[i]` is the time of row `i`, so a
/// batched solver can advance rows with different step sizes.
pub trait VectorField<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array2<T>;

    /// Trace of the velocity Jacobian per row, by central differences with
    /// step `1e-4 (1 + |xᵢ|)` along each coordinate.
    fn divergence(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array1<T> {
        fd_divergence(self, x, t)
    }
}

pub(crate) fn fd_divergence<T: Scalar, F: VectorField<T> + ?Sized>(
    field: &F,
    x: ArrayView2<'_, T>,
    t: ArrayView1<'_, T>,
) -> Array1<T> {
    let (n, d) = x.dim();
    let mut div = Array1::zeros(n);
    if n == 0 {
        return div;
    }
    let step = T::of(1e-4);
    // Stack +h and -h perturbations into one 2n-row evaluation per coordinate.
    let mut probe = Array2::zeros((2 * n, d));
    let mut times = Array1::zeros(2 * n);
    times.slice_mut(ndarray::s![..n]).assign(&t);
    times.slice_mut(ndarray::s![n..]).assign(&t);
    for j in 0..d {
        probe.slice_mut(ndarray::s![..n, ..]).assign(&x);
        probe.slice_mut(ndarray::s![n.., ..]).assign(&x);
        let h: Array1<T> = x.column(j).mapv(|v| step * (T::one() + v.abs()));
        for i in 0..n {
            probe[[i, j]] += h[i];
            probe[[n + i, j]] -= h[i];
        }
        let v = field.velocity(probe.view(), times.view());
        for i in 0..n {
            div[i] += (v[[i, j]] - v[[n + i, j]]) / (h[i] + h[i]);
        }
    }
    div
}

/// `v ≡ 0`. Its flow is the identity.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    dim: usize,
}

impl ZeroField {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl<T: Scalar> VectorField<T> for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: ArrayView2<'_, T>, _t: ArrayView1<'_, T>) -> Array2<T> {
        Array2::zeros(x.raw_dim())
    }

    fn divergence(&self, x: ArrayView2<'_, T>, _t: ArrayView1<'_, T>) -> Array1<T> {
        Array1::zeros(x.nrows())
    }
}

/// Time-independent linear field `v(x) = A x`.
#[derive(Clone, Debug)]
pub struct LinearField<T> {
    matrix: Array2<T>,
}

impl<T: Scalar> LinearField<T> {
    pub fn new(matrix: Array2<T>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "linear field needs a non-empty square matrix, got {:?}",
                matrix.dim()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn diagonal(diag: &[T]) -> Result<Self> {
        Self::new(Array2::from_diag(&Array1::from(diag.to_vec())))
    }

    /// `v(x) = c x` in `dim` dimensions.
    pub fn scaled_identity(dim: usize, c: T) -> Result<Self> {
        Self::diagonal(&vec![c; dim])
    }

    pub fn trace(&self) -> T {
        self.matrix.diag().sum()
    }
}

impl<T: Scalar> VectorField<T> for LinearField<T> {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn velocity(&self, x: ArrayView2<'_, T>, _t: ArrayView1<'_, T>) -> Array2<T> {
        x.dot(&self.matrix.t())
    }
}

/// Applies a `b`-dimensional field independently to each consecutive block of
/// `b` coordinates of a `D = b·P` dimensional state.
///
/// The resulting flow is the product of `P` copies of the inner flow, so a
/// model trained on low-dimensional data yields a `D`-dimensional flow whose
/// target is the product of i.i.d. blocks.
#[derive(Clone, Debug)]
pub struct BlockwiseField<F> {
    inner: F,
    blocks: usize,
}

impl<F> BlockwiseField<F> {
    pub fn new<T: Scalar>(inner: F, blocks: usize) -> Result<Self>
    where
        F: VectorField<T>,
    {
        if blocks == 0 {
            return Err(Error::InvalidInput("blockwise field needs at least one block".into()));
        }
        Ok(Self { inner, blocks })
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    fn split<T: Scalar>(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>, b: usize) -> (Array2<T>, Array1<T>) {
        let n = x.nrows();
        let flat: Vec<T> = x.iter().copied().collect();
        let rows = Array2::from_shape_vec((n * self.blocks, b), flat).expect("block shape");
        let times = Array1::from_iter(t.iter().flat_map(|&ti| std::iter::repeat_n(ti, self.blocks)));
        (rows, times)
    }
}

impl<T: Scalar, F: VectorField<T>> VectorField<T> for BlockwiseField<F> {
    fn dim(&self) -> usize {
        self.inner.dim() * self.blocks
    }

    fn velocity(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array2<T> {
        let b = self.inner.dim();
        let (rows, times) = self.split(x, t, b);
        let v = self.inner.velocity(rows.view(), times.view());
        let flat: Vec<T> = v.iter().copied().collect();
        Array2::from_shape_vec((x.nrows(), b * self.blocks), flat).expect("block shape")
    }

    fn divergence(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array1<T> {
        let b = self.inner.dim();
        let (rows, times) = self.split(x, t, b);
        let div = self.inner.divergence(rows.view(), times.view());
        div.into_shape_with_order((x.nrows(), self.blocks))
            .expect("block shape")
            .sum_axis(Axis(1))
    }
}

impl<T: Scalar, F: VectorField<T> + ?Sized> VectorField<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array2<T> {
        (**self).velocity(x, t)
    }

    fn divergence(&self, x: ArrayView2<'_, T>, t: ArrayView1<'_, T>) -> Array1<T> {
        (**self).divergence(x, t)
    }
}
