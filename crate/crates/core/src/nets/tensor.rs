//! Minimal dense containers: row-major matrices for fully connected layers
//! and channel-major feature maps for the convolution stacks.

use super::scalar::Scalar;

/// Row-major `rows × cols` matrix; one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn hcat(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
        assert_eq!(a.rows, b.rows, "hcat row mismatch");
        let mut out = Mat::zeros(a.rows, a.cols + b.cols);
        for i in 0..a.rows {
            let r = out.row_mut(i);
            r[..a.cols].copy_from_slice(a.row(i));
            r[a.cols..].copy_from_slice(b.row(i));
        }
        out
    }

    /// Splits columns at `at`, inverse of [`Mat::hcat`].
    pub fn hsplit(&self, at: usize) -> (Mat<T>, Mat<T>) {
        let mut a = Mat::zeros(self.rows, at);
        let mut b = Mat::zeros(self.rows, self.cols - at);
        for i in 0..self.rows {
            a.row_mut(i).copy_from_slice(&self.row(i)[..at]);
            b.row_mut(i).copy_from_slice(&self.row(i)[at..]);
        }
        (a, b)
    }

    /// Gathers rows by index.
    pub fn select_rows(&self, idx: &[usize]) -> Mat<T> {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    /// Adjoint of [`Mat::select_rows`]: scatter-adds rows into `n_rows`.
    pub fn scatter_add_rows(&self, idx: &[usize], n_rows: usize) -> Mat<T> {
        let mut out = Mat::zeros(n_rows, self.cols);
        for (o, &i) in idx.iter().enumerate() {
            for (d, s) in out.row_mut(i).iter_mut().zip(self.row(o)) {
                *d += *s;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&mut self, other: &Mat<T>) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "matrix add"
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }
}

/// Feature maps stored channel-major, `[c, n, h, w]`, so a convolution over
/// the whole batch is a single matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Fmap<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Fmap<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    /// Flattens to `[n, c·h·w]` with `(c, y, x)` ordering per row.
    pub fn to_rows(&self) -> Mat<T> {
        let hw = self.h * self.w;
        let mut out = Mat::zeros(self.n, self.c * hw);
        for c in 0..self.c {
            for n in 0..self.n {
                let src = &self.data[(c * self.n + n) * hw..(c * self.n + n + 1) * hw];
                out.row_mut(n)[c * hw..(c + 1) * hw].copy_from_slice(src);
            }
        }
        out
    }

    /// Inverse of [`Fmap::to_rows`].
    pub fn from_rows(m: &Mat<T>, c: usize, h: usize, w: usize) -> Self {
        let hw = h * w;
        assert_eq!(m.cols, c * hw, "feature map reshape");
        let mut out = Fmap::zeros(c, m.rows, h, w);
        for ch in 0..c {
            for n in 0..m.rows {
                out.data[(ch * m.rows + n) * hw..(ch * m.rows + n + 1) * hw]
                    .copy_from_slice(&m.row(n)[ch * hw..(ch + 1) * hw]);
            }
        }
        out
    }

    /// Image `n` in planar `[c, h, w]` layout.
    pub fn item(&self, n: usize) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(self.c * hw);
        for c in 0..self.c {
            let start = (c * self.n + n) * hw;
            out.extend_from_slice(&self.data[start..start + hw]);
        }
        out
    }

    /// Stacks planar `[c, h, w]` items into a batch.
    pub fn stack(items: &[&[T]], c: usize, h: usize, w: usize) -> Self {
        let hw = h * w;
        let mut out = Fmap::zeros(c, items.len(), h, w);
        for (n, item) in items.iter().enumerate() {
            assert_eq!(item.len(), c * hw, "stacked item size");
            for ch in 0..c {
                let dst = (ch * items.len() + n) * hw;
                out.data[dst..dst + hw].copy_from_slice(&item[ch * hw..(ch + 1) * hw]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let mut f = Fmap::<f64>::zeros(2, 3, 2, 2);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let rows = f.to_rows();
        assert_eq!(Fmap::from_rows(&rows, 2, 2, 2), f);
        let items: Vec<Vec<f64>> = (0..3).map(|n| f.item(n)).collect();
        let refs: Vec<&[f64]> = items.iter().map(|v| v.as_slice()).collect();
        assert_eq!(Fmap::stack(&refs, 2, 2, 2), f);
        assert_eq!(rows.row(1), items[1].as_slice());
    }

    #[test]
    fn scatter_is_adjoint_of_select() {
        let m = Mat::<f64>::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        let idx = [2, 0, 2];
        let sel = m.select_rows(&idx);
        let back = sel.scatter_add_rows(&idx, 3);
        assert_eq!(back.data, vec![1., 2., 0., 0., 10., 12.]);
    }
}
