use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Real scalar the tensor engine and models are generic over.
///
/// Training and gradient checks run at `f64`; checkpoints are stored at
/// `f32`, so both widths implement this.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for constants and initializers.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// `c += a · b` with `a` m×k, `b` k×n and `c` m×n, each addressed by a
    /// (row stride, column stride) pair. Summation order is fixed, so
    /// results are reproducible run to run.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], Strides),
        b: (&[Self], Strides),
        c: (&mut [Self], Strides),
    );
}

/// Row and column stride of a matrix view, in elements.
pub type Strides = (usize, usize);

fn check_view(len: usize, rows: usize, cols: usize, (rs, cs): Strides) {
    if rows > 0 && cols > 0 {
        assert!(
            (rows - 1) * rs + (cols - 1) * cs < len,
            "matrix view out of bounds"
        );
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: (&[Self], Strides),
                b: (&[Self], Strides),
                c: (&mut [Self], Strides),
            ) {
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                check_view(a.0.len(), m, k, a.1);
                check_view(b.0.len(), k, n, b.1);
                check_view(c.0.len(), m, n, c.1);
                let s = |x: usize| x as isize;
                // SAFETY: every view was bounds-checked above and `c` is a
                // unique borrow, so the kernel reads and writes in range.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.0.as_ptr(),
                        s(a.1 .0),
                        s(a.1 .1),
                        b.0.as_ptr(),
                        s(b.1 .0),
                        s(b.1 .1),
                        1.0,
                        c.0.as_mut_ptr(),
                        s(c.1 .0),
                        s(c.1 .1),
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
