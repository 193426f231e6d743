//! Scalar abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the image and statistics kernels are generic over.
///
/// Implemented for `f32` and `f64`. Probability computations (Student-t,
/// normal tails) are always carried out in `f64` and converted back.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count is representable in every Real")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering;
}

impl Real for f32 {
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering {
        self.total_cmp(other)
    }
}

impl Real for f64 {
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering {
        self.total_cmp(other)
    }
}

/// Sorts a copy of `values` ascending using a total order.
pub(crate) fn sorted<T: Real>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp_real(b));
    v
}

pub(crate) fn mean<T: Real>(values: &[T]) -> T {
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    sum / T::of_usize(values.len())
}
