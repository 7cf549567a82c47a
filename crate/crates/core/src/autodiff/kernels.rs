//! Raw loops shared by forward and backward passes.

/// `out += a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// Geometry of a same-padded 3-tap (1D) or 3×3 (2D) convolution. 1D is the
/// special case `height = 1` with a single kernel row.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_rows: usize,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.kernel_rows * 3
    }

    fn row_offset(&self, kr: usize) -> isize {
        if self.kernel_rows == 1 {
            0
        } else {
            kr as isize - 1
        }
    }

    /// Calls `f(out_index, in_index, weight_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w) = (self.height as isize, self.width as isize);
        let taps = self.taps();
        for o in 0..self.c_out {
            for i in 0..self.c_in {
                for kr in 0..self.kernel_rows {
                    let dr = self.row_offset(kr);
                    for kc in 0..3 {
                        let dc = kc as isize - 1;
                        let wi = (o * self.c_in + i) * taps + kr * 3 + kc;
                        for r in 0..h {
                            let rr = r + dr;
                            if rr < 0 || rr >= h {
                                continue;
                            }
                            for c in 0..w {
                                let cc = c + dc;
                                if cc < 0 || cc >= w {
                                    continue;
                                }
                                let oi = (o as isize * h + r) * w + c;
                                let ii = (i as isize * h + rr) * w + cc;
                                f(oi as usize, ii as usize, wi);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.c_out * plane];
        for o in 0..self.c_out {
            out[o * plane..(o + 1) * plane].fill(bias[o]);
        }
        self.for_each_tap(|oi, ii, wi| out[oi] += weights[wi] * x[ii]);
        out
    }

    /// Returns `(dx, dw, db)`.
    pub fn backward(&self, x: &[f64], weights: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let plane = self.height * self.width;
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; weights.len()];
        let mut db = vec![0.0; self.c_out];
        for o in 0..self.c_out {
            db[o] = dy[o * plane..(o + 1) * plane].iter().sum();
        }
        self.for_each_tap(|oi, ii, wi| {
            dx[ii] += weights[wi] * dy[oi];
            dw[wi] += x[ii] * dy[oi];
        });
        (dx, dw, db)
    }
}
