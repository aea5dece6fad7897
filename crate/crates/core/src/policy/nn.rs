//! Minimal dense and convolutional layers with hand-written gradients.
//!
//! Generic over the float type so the same code trains in `f32` and is
//! finite-difference checked in `f64`. Parameters live in one flat store;
//! layers hold offsets into it.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Named parameter tensors laid out back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub offsets: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            offsets: Vec::new(),
            data: Vec::new(),
        }
    }
}

impl<T: Float> ParamStore<T> {
    /// Appends a tensor and returns its offset.
    pub fn add(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = T>) -> usize {
        let off = self.data.len();
        self.data.extend(values);
        assert_eq!(self.data.len() - off, shape.iter().product::<usize>(), "tensor {name}");
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.offsets.push(off);
        off
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            data: self.data.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

pub fn silu<T: Float>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn silu_grad<T: Float>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

fn he_normal<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<T: Float, R: Rng + ?Sized>(p: &mut ParamStore<T>, name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let w = p.add(
            &format!("{name}.weight"),
            &[n_out, n_in],
            he_normal(rng, n_in, n_in * n_out).into_iter().map(|v| T::from(v).unwrap()),
        );
        let b = p.add(&format!("{name}.bias"), &[n_out], vec![T::zero(); n_out]);
        Self { n_in, n_out, w, b }
    }

    pub fn forward<T: Float>(&self, p: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|o| {
                let row = &p[self.w + o * self.n_in..][..self.n_in];
                row.iter().zip(x).fold(p[self.b + o], |acc, (w, v)| acc + *w * *v)
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and returns dL/dx.
    pub fn backward<T: Float>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.n_in];
        for o in 0..self.n_out {
            let d = dy[o];
            if d == T::zero() {
                continue;
            }
            g[self.b + o] = g[self.b + o] + d;
            let row = &p[self.w + o * self.n_in..][..self.n_in];
            let grow = &mut g[self.w + o * self.n_in..][..self.n_in];
            for i in 0..self.n_in {
                grow[i] = grow[i] + d * x[i];
                dx[i] = dx[i] + d * row[i];
            }
        }
        dx
    }
}

/// 3x3 convolution with zero padding 1, channel-major tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3 {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub h_in: usize,
    pub w_in: usize,
    w: usize,
    b: usize,
}

impl Conv3 {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        p: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        h_in: usize,
        w_in: usize,
        rng: &mut R,
    ) -> Self {
        let fan = c_in * 9;
        let w = p.add(
            &format!("{name}.weight"),
            &[c_out, c_in, 3, 3],
            he_normal(rng, fan, fan * c_out).into_iter().map(|v| T::from(v).unwrap()),
        );
        let b = p.add(&format!("{name}.bias"), &[c_out], vec![T::zero(); c_out]);
        Self {
            c_in,
            c_out,
            stride,
            h_in,
            w_in,
            w,
            b,
        }
    }

    pub fn h_out(&self) -> usize {
        (self.h_in - 1) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w_in - 1) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out() * self.w_out()
    }

    /// Calls `f(out_index, in_index, weight_index)` for every valid tap.
    #[inline]
    fn for_taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = (self.h_out(), self.w_out());
        for co in 0..self.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let oi = (co * ho + oy) * wo + ox;
                    for ci in 0..self.c_in {
                        for ky in 0..3 {
                            let iy = (oy * self.stride + ky) as isize - 1;
                            if iy < 0 || iy >= self.h_in as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * self.stride + kx) as isize - 1;
                                if ix < 0 || ix >= self.w_in as isize {
                                    continue;
                                }
                                let ii = (ci * self.h_in + iy as usize) * self.w_in + ix as usize;
                                let wi = ((co * self.c_in + ci) * 3 + ky) * 3 + kx;
                                f(oi, ii, wi);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Float>(&self, p: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.c_in * self.h_in * self.w_in);
        let per = self.h_out() * self.w_out();
        let mut y: Vec<T> = (0..self.out_len()).map(|i| p[self.b + i / per]).collect();
        let w = &p[self.w..];
        self.for_taps(|oi, ii, wi| y[oi] = y[oi] + w[wi] * x[ii]);
        y
    }

    pub fn backward<T: Float>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T]) -> Vec<T> {
        let per = self.h_out() * self.w_out();
        for (i, d) in dy.iter().enumerate() {
            g[self.b + i / per] = g[self.b + i / per] + *d;
        }
        let mut dx = vec![T::zero(); x.len()];
        let w = &p[self.w..];
        let (gw_base, gw) = (self.w, g);
        self.for_taps(|oi, ii, wi| {
            let d = dy[oi];
            gw[gw_base + wi] = gw[gw_base + wi] + d * x[ii];
            dx[ii] = dx[ii] + d * w[wi];
        });
        dx
    }
}

/// Pre-activation values and activations of a layer stack, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub inputs: Vec<Vec<T>>,
    pub pre: Vec<Vec<T>>,
}

impl<T> Default for Trace<T> {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            pre: Vec::new(),
        }
    }
}

/// Convolutions with SiLU, then a dense projection with SiLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub convs: Vec<Conv3>,
    pub head: Linear,
}

impl ConvEncoder {
    pub fn forward<T: Float>(&self, p: &[T], x: &[T], trace: Option<&mut Trace<T>>) -> Vec<T> {
        let mut local = Trace::default();
        let tr = trace.unwrap_or(&mut local);
        let mut h = x.to_vec();
        for c in &self.convs {
            let z = c.forward(p, &h);
            tr.inputs.push(std::mem::replace(&mut h, z.iter().map(|v| silu(*v)).collect()));
            tr.pre.push(z);
        }
        let z = self.head.forward(p, &h);
        tr.inputs.push(h);
        let out = z.iter().map(|v| silu(*v)).collect();
        tr.pre.push(z);
        out
    }

    pub fn backward<T: Float>(&self, p: &[T], g: &mut [T], tr: &Trace<T>, dy: &[T]) {
        let n = self.convs.len();
        let mut d: Vec<T> = dy.iter().zip(&tr.pre[n]).map(|(d, z)| *d * silu_grad(*z)).collect();
        d = self.head.backward(p, g, &tr.inputs[n], &d);
        for k in (0..n).rev() {
            let dz: Vec<T> = d.iter().zip(&tr.pre[k]).map(|(d, z)| *d * silu_grad(*z)).collect();
            if k == 0 {
                // Input gradients are not needed for the raw observation.
                self.convs[k].backward(p, g, &tr.inputs[k], &dz);
                return;
            }
            d = self.convs[k].backward(p, g, &tr.inputs[k], &dz);
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<T: Float>(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i].to_f64().unwrap();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let upd = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] = params[i] - T::from(upd).unwrap();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut a = x.to_vec();
        a[i] += h;
        let mut b = x.to_vec();
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn linear_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::<f64>::default();
        let l = Linear::new(&mut p, "l", 4, 3, &mut rng);
        let x = [0.3, -1.0, 2.0, 0.5];
        let loss = |q: &[f64]| l.forward(q, &x).iter().map(|v| v * 0.5).sum::<f64>();
        let mut g = vec![0.0; p.len()];
        l.backward(&p.data, &mut g, &x, &[0.5; 3]);
        for i in 0..p.len() {
            assert!((g[i] - finite_diff(loss, &p.data, i)).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamStore::<f64>::default();
        let c = Conv3::new(&mut p, "c", 2, 3, 2, 5, 4, &mut rng);
        assert_eq!((c.h_out(), c.w_out()), (3, 2));
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let wts: Vec<f64> = (0..c.out_len()).map(|i| i as f64 * 0.1 - 0.4).collect();
        let loss = |q: &[f64]| c.forward(q, &x).iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>();
        let mut g = vec![0.0; p.len()];
        let dx = c.backward(&p.data, &mut g, &x, &wts);
        for i in 0..p.len() {
            assert!((g[i] - finite_diff(loss, &p.data, i)).abs() < 1e-6);
        }
        let loss_x = |xx: &[f64]| c.forward(&p.data, xx).iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..x.len() {
            assert!((dx[i] - finite_diff(loss_x, &x, i)).abs() < 1e-6);
        }
    }

    #[test]
    fn silu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((silu_grad(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut x = vec![3.0f64, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }
}
