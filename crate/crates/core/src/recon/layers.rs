//! Convolution layers with hand-written backward passes.
//!
//! Feature maps are single-sample, channel-major `[c][h][w]` slices.
//! Convolutions lower to im2col + gemm; the column buffer is rebuilt in the
//! backward pass instead of being cached.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Scalar type the network runs in: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c`, row-major; `op(a)` is `m x k`, `op(b)` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]);

    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite")
    }
}

// Row/column strides for a row-major matrix, optionally read transposed.
fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // `rows x cols` is the logical (post-op) shape
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[$t], ta: bool, b: &[$t], tb: bool, beta: $t, c: &mut [$t]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = strides(m, k, ta);
                let (rsb, csb) = strides(k, n, tb);
                // SAFETY: bounds asserted above; strides describe dense row-major storage.
                unsafe {
                    $f(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

fn he_init<T: Real>(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| T::from_f64(normal.sample(rng))).collect()
}

/// Square-kernel convolution with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `cout x (cin * kernel * kernel)`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2d {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: he_init(cout * fan_in, fan_in, rng),
            bias: vec![T::zero(); cout],
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn im2col(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let mut col = vec![T::zero(); self.cin * k * k * oh * ow];
        for c in 0..self.cin {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * oh * ow..][..oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..][..w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let mut x = vec![T::zero(); self.cin * h * w];
        for c in 0..self.cin {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * oh * ow..][..oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                let p = &mut plane[iy as usize * w + ix as usize];
                                *p = *p + row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let mut y = vec![T::zero(); self.cout * n];
        for (co, b) in self.bias.iter().enumerate() {
            y[co * n..(co + 1) * n].fill(*b);
        }
        let kk = self.cin * self.kernel * self.kernel;
        if self.kernel == 1 && self.stride == 1 && self.pad == 0 {
            T::gemm(self.cout, kk, n, &self.weight, false, x, false, T::one(), &mut y);
        } else {
            let col = self.im2col(x, h, w);
            T::gemm(self.cout, kk, n, &self.weight, false, &col, false, T::one(), &mut y);
        }
        (y, oh, ow)
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input
    /// gradient when `need_dx`.
    pub fn backward(&self, x: &[T], h: usize, w: usize, dy: &[T], grad: &mut Conv2d<T>, need_dx: bool) -> Option<Vec<T>> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let kk = self.cin * self.kernel * self.kernel;
        for (co, gb) in grad.bias.iter_mut().enumerate() {
            *gb = *gb + dy[co * n..(co + 1) * n].iter().copied().sum();
        }
        let pointwise = self.kernel == 1 && self.stride == 1 && self.pad == 0;
        let col_owned;
        let col: &[T] = if pointwise {
            x
        } else {
            col_owned = self.im2col(x, h, w);
            &col_owned
        };
        T::gemm(self.cout, n, kk, dy, false, col, true, T::one(), &mut grad.weight);
        if !need_dx {
            return None;
        }
        let mut dcol = vec![T::zero(); kk * n];
        T::gemm(kk, self.cout, n, &self.weight, true, dy, false, T::zero(), &mut dcol);
        Some(if pointwise { dcol } else { self.col2im(&dcol, h, w) })
    }

    pub fn zeroed(&self) -> Self {
        Conv2d {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }
}

/// 2x2 transposed convolution with stride 2 (exact 2x upsampling).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub cin: usize,
    pub cout: usize,
    /// `(cout * 4) x cin`; row `co * 4 + dy * 2 + dx`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ConvTranspose2d {
            cin,
            cout,
            weight: he_init(cout * 4 * cin, cin, rng),
            bias: vec![T::zero(); cout],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let n = h * w;
        let mut tmp = vec![T::zero(); self.cout * 4 * n];
        T::gemm(self.cout * 4, self.cin, n, &self.weight, false, x, false, T::zero(), &mut tmp);
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = vec![T::zero(); self.cout * oh * ow];
        for co in 0..self.cout {
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let src = &tmp[(co * 4 + d) * n..][..n];
                for iy in 0..h {
                    let row = &mut y[co * oh * ow + (2 * iy + dy) * ow..][..ow];
                    for ix in 0..w {
                        row[2 * ix + dx] = src[iy * w + ix] + self.bias[co];
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &[T], h: usize, w: usize, dy: &[T], grad: &mut ConvTranspose2d<T>) -> Vec<T> {
        let n = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let mut dtmp = vec![T::zero(); self.cout * 4 * n];
        for co in 0..self.cout {
            let plane = &dy[co * oh * ow..][..oh * ow];
            grad.bias[co] = grad.bias[co] + plane.iter().copied().sum();
            for d in 0..4 {
                let (ddy, ddx) = (d / 2, d % 2);
                let dst = &mut dtmp[(co * 4 + d) * n..][..n];
                for iy in 0..h {
                    for ix in 0..w {
                        dst[iy * w + ix] = plane[(2 * iy + ddy) * ow + 2 * ix + ddx];
                    }
                }
            }
        }
        T::gemm(self.cout * 4, n, self.cin, &dtmp, false, x, true, T::one(), &mut grad.weight);
        let mut dx = vec![T::zero(); self.cin * n];
        T::gemm(self.cin, self.cout * 4, n, &self.weight, true, &dtmp, false, T::zero(), &mut dx);
        dx
    }

    pub fn zeroed(&self) -> Self {
        ConvTranspose2d {
            cin: self.cin,
            cout: self.cout,
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

pub fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

/// Zeroes `grad` wherever the post-activation value is not positive.
pub fn relu_backward<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
