//! Convolution kernels lowered to matrix products. A 1-D convolution is the
//! 2-D case with unit height.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Geometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    /// Visits every (column-matrix row, input offset, output offset) triple
    /// that lies inside the unpadded input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh_n, ow_n) = (self.out_h(), self.out_w());
        for c in 0..self.ci {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    for oh in 0..oh_n {
                        let ih = (oh * self.sh + i) as isize - self.ph as isize;
                        if ih < 0 || ih as usize >= self.h {
                            continue;
                        }
                        let base = (c * self.h + ih as usize) * self.w;
                        for ow in 0..ow_n {
                            let iw = (ow * self.sw + j) as isize - self.pw as isize;
                            if iw >= 0 && (iw as usize) < self.w {
                                f(row, base + iw as usize, oh * ow_n + ow);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Array2<f64> {
        let n = self.out_h() * self.out_w();
        let mut col = Array2::zeros((self.patch(), n));
        let cs = col.as_slice_mut().expect("standard layout");
        self.for_each_tap(|row, xi, o| cs[row * n + o] = x[xi]);
        col
    }

    /// `y = W * im2col(x) + b`, laid out `[co, out_h * out_w]`.
    pub fn forward(&self, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.out_h() * self.out_w();
        let col = self.im2col(x);
        let wm = ArrayView2::from_shape((self.co, self.patch()), w).expect("weight layout");
        let mut out: Vec<f64> = b.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        let mut om = ArrayViewMut2::from_shape((self.co, n), &mut out).expect("output layout");
        general_mat_mul(1.0, &wm, &col, 1.0, &mut om);
        out
    }

    /// Accumulates input, weight and bias gradients for upstream gradient `g`.
    pub fn backward(
        &self,
        x: &[f64],
        w: &[f64],
        g: &[f64],
        dx: &mut [f64],
        dw: &mut [f64],
        db: &mut [f64],
    ) {
        let n = self.out_h() * self.out_w();
        let gm = ArrayView2::from_shape((self.co, n), g).expect("gradient layout");
        for (d, row) in db.iter_mut().zip(gm.rows()) {
            *d += row.sum();
        }
        let col = self.im2col(x);
        let mut dwm = ArrayViewMut2::from_shape((self.co, self.patch()), dw).expect("weight layout");
        general_mat_mul(1.0, &gm, &col.t(), 1.0, &mut dwm);

        let wm = ArrayView2::from_shape((self.co, self.patch()), w).expect("weight layout");
        let mut dcol = Array2::zeros((self.patch(), n));
        general_mat_mul(1.0, &wm.t(), &gm, 0.0, &mut dcol);
        let dc = dcol.as_slice().expect("standard layout");
        self.for_each_tap(|row, xi, o| dx[xi] += dc[row * n + o]);
    }
}
