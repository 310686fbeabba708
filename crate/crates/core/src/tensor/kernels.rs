//! Dense kernels shared by the forward and backward passes.

/// Row-major matrix view: `rows x cols` with explicit strides so transposes
/// are free.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = beta * c + a * b` where `c` is row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches: `a`
    // and `b` were constructed from slices of exactly rows*cols elements
    // with matching strides, and `c` is m*n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        self.len - self.k + 1
    }
}

pub(crate) fn conv1d_forward(d: &ConvDims, x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let lo = d.out_len();
    for n in 0..d.batch {
        for o in 0..d.c_out {
            let yrow = &mut y[(n * d.c_out + o) * lo..][..lo];
            yrow.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..d.c_in {
                let xrow = &x[(n * d.c_in + c) * d.len..][..d.len];
                for kk in 0..d.k {
                    let wv = w[(o * d.c_in + c) * d.k + kk];
                    for (yv, xv) in yrow.iter_mut().zip(&xrow[kk..kk + lo]) {
                        *yv += wv * xv;
                    }
                }
            }
        }
    }
}

/// Accumulates gradients of a valid cross-correlation into whichever of
/// `dx`, `dw`, `db` are requested.
pub(crate) fn conv1d_backward(
    d: &ConvDims,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let lo = d.out_len();
    for n in 0..d.batch {
        for o in 0..d.c_out {
            let dyrow = &dy[(n * d.c_out + o) * lo..][..lo];
            if let Some(db) = db.as_deref_mut() {
                db[o] += dyrow.iter().sum::<f64>();
            }
            for c in 0..d.c_in {
                let xoff = (n * d.c_in + c) * d.len;
                for kk in 0..d.k {
                    let widx = (o * d.c_in + c) * d.k + kk;
                    if let Some(dw) = dw.as_deref_mut() {
                        let xs = &x[xoff + kk..xoff + kk + lo];
                        dw[widx] += dyrow.iter().zip(xs).map(|(g, xv)| g * xv).sum::<f64>();
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[widx];
                        for (dxv, g) in dx[xoff + kk..xoff + kk + lo].iter_mut().zip(dyrow) {
                            *dxv += wv * g;
                        }
                    }
                }
            }
        }
    }
}
