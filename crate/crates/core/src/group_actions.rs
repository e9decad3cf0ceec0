//! Cyclic 2D pixel translations: the group `G = Z_H x Z_W` acting on images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::sensing::ComplexImage;

/// Toroidal shift by `(dr, dc)` on an `height x width` grid.
///
/// Offsets are always stored reduced modulo the grid size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftTransform {
    dr: usize,
    dc: usize,
    height: usize,
    width: usize,
}

impl ShiftTransform {
    pub fn new(dr: i64, dc: i64, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("grid {height}x{width} must be positive")));
        }
        Ok(Self {
            dr: dr.rem_euclid(height as i64) as usize,
            dc: dc.rem_euclid(width as i64) as usize,
            height,
            width,
        })
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        Self::new(0, 0, height, width)
    }

    pub fn offsets(&self) -> (usize, usize) {
        (self.dr, self.dc)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_identity(&self) -> bool {
        self.dr == 0 && self.dc == 0
    }

    /// Group inverse: `(-dr, -dc)` modulo the grid.
    pub fn inverse(&self) -> Self {
        Self {
            dr: (self.height - self.dr) % self.height,
            dc: (self.width - self.dc) % self.width,
            ..*self
        }
    }

    /// `self ∘ other` (apply `other` first). The group is abelian, so order only
    /// matters for the grid check.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.grid() != other.grid() {
            return Err(shape_err(format!("{:?}", self.grid()), format!("{:?}", other.grid())));
        }
        Ok(Self {
            dr: (self.dr + other.dr) % self.height,
            dc: (self.dc + other.dc) % self.width,
            ..*self
        })
    }

    /// Permutes a row-major pixel buffer: `out[r][c] = in[r - dr][c - dc]`.
    pub fn apply_slice<P: Copy>(&self, values: &[P]) -> Vec<P> {
        assert_eq!(values.len(), self.height * self.width, "buffer does not match shift grid");
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(values.len());
        for r in 0..h {
            let src_row = (r + h - self.dr) % h;
            let row = &values[src_row * w..(src_row + 1) * w];
            // columns c < dc come from the tail of the source row
            out.extend_from_slice(&row[w - self.dc..]);
            out.extend_from_slice(&row[..w - self.dc]);
        }
        out
    }

    pub fn apply<T: Scalar>(&self, x: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        if (x.height(), x.width()) != self.grid() {
            return Err(shape_err(
                format!("{}x{} image", self.height, self.width),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        Ok(ComplexImage::from_raw(self.apply_slice(x.values()), self.height, self.width))
    }
}

/// Draws `count` distinct non-identity shifts uniformly from the group.
pub fn sample_shifts<R: Rng + ?Sized>(
    count: usize,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Result<Vec<ShiftTransform>> {
    if count == 0 {
        return Err(invalid("shift count must be positive"));
    }
    let order = height * width;
    if order == 0 || count > order - 1 {
        return Err(invalid(format!(
            "cannot draw {count} non-identity shifts from a group of order {order}"
        )));
    }
    rand::seq::index::sample(rng, order - 1, count)
        .into_iter()
        .map(|k| {
            let k = k + 1;
            ShiftTransform::new((k / width) as i64, (k % width) as i64, height, width)
        })
        .collect()
}
