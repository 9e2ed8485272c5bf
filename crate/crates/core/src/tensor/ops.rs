use std::rc::Rc;

use super::linalg::{col2im, gemm, im2col, MatRef};
use super::{Tape, Tensor, Var};
use crate::error::{invalid, shape_err, Result};

/// Geometry of a shape-preserving convolution: stride 1 and symmetric zero
/// padding of `(kernel - 1) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(invalid("ConvSpec", "channel counts must be positive"));
        }
        if kernel != 1 && kernel != 3 {
            return Err(invalid("ConvSpec", format!("kernel must be 1 or 3, got {kernel}")));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// `(fan_in, fan_out)` for weight initialization.
    pub fn fans(&self) -> (usize, usize) {
        let k2 = self.kernel * self.kernel;
        (self.in_channels * k2, self.out_channels * k2)
    }

    pub fn param_count(&self, bias: bool) -> usize {
        self.weight_shape().iter().product::<usize>() + if bias { self.out_channels } else { 0 }
    }

    fn from_weight(w: &Tensor) -> Result<Self> {
        match w.shape()[..] {
            [o, i, k, k2] if k == k2 => Self::new(i, o, k),
            _ => Err(shape_err("conv2d", "weight [out, in, k, k]", format!("{:?}", w.shape()))),
        }
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let (batch, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        return Err(shape_err("conv2d", format!("{} input channels", spec.in_channels), c));
    }
    if let Some(b) = b {
        if b.shape() != [spec.out_channels] {
            return Err(shape_err("conv2d", format!("bias [{}]", spec.out_channels), format!("{:?}", b.shape())));
        }
    }
    let k = spec.kernel;
    let plane = h * wd;
    let kk = c * k * k;
    let mut out = vec![0.0; batch * spec.out_channels * plane];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * plane] };
    let wm = MatRef::new(w.data(), spec.out_channels, kk);
    for bi in 0..batch {
        let xs = &x.data()[bi * c * plane..(bi + 1) * c * plane];
        let rhs = if k == 1 {
            xs
        } else {
            im2col(xs, c, h, wd, k, &mut cols);
            &cols[..]
        };
        let ob = &mut out[bi * spec.out_channels * plane..(bi + 1) * spec.out_channels * plane];
        gemm(wm, MatRef::new(rhs, kk, plane), 0.0, ob);
        if let Some(b) = b {
            for (o, &bv) in ob.chunks_mut(plane).zip(b.data()) {
                o.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new(&[batch, spec.out_channels, h, wd], out)
}

fn conv_backward(x: &Tensor, w: &Tensor, spec: ConvSpec, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, c, h, wd) = x.dims4().expect("conv input is rank 4");
    let k = spec.kernel;
    let plane = h * wd;
    let kk = c * k * k;
    let oc = spec.out_channels;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; oc];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * plane] };
    let mut dcols = if k == 1 { Vec::new() } else { vec![0.0; kk * plane] };
    let wm = MatRef::new(w.data(), oc, kk);
    for bi in 0..batch {
        let xs = &x.data()[bi * c * plane..(bi + 1) * c * plane];
        let gs = &g.data()[bi * oc * plane..(bi + 1) * oc * plane];
        for (d, row) in db.iter_mut().zip(gs.chunks(plane)) {
            *d += row.iter().sum::<f64>();
        }
        let gm = MatRef::new(gs, oc, plane);
        let dxs = &mut dx[bi * c * plane..(bi + 1) * c * plane];
        if k == 1 {
            gemm(gm, MatRef::new(xs, kk, plane).t(), 1.0, &mut dw);
            gemm(wm.t(), gm, 0.0, dxs);
        } else {
            im2col(xs, c, h, wd, k, &mut cols);
            gemm(gm, MatRef::new(&cols, kk, plane).t(), 1.0, &mut dw);
            gemm(wm.t(), gm, 0.0, &mut dcols);
            col2im(&dcols, c, h, wd, k, dxs);
        }
    }
    (
        Tensor::new(x.shape(), dx).unwrap(),
        Tensor::new(w.shape(), dw).unwrap(),
        Tensor::new(&[oc], db).unwrap(),
    )
}

fn softmax_rows_value(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn unary(
        self,
        value: Tensor,
        backward: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        self.tape.record(value, &[self], move |g| vec![backward(g)])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add(&other.value())?;
        Ok(self.tape.record(v, &[self, other], |g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.tape.record(v, &[self, other], |g| vec![g.clone(), g.scale(-1.0)]))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let v = a.zip_map(&b, "mul", |x, y| x * y)?;
        Ok(self.tape.record(v, &[self, other], move |g| {
            vec![
                g.zip_map(&b, "mul", |x, y| x * y).unwrap(),
                g.zip_map(&a, "mul", |x, y| x * y).unwrap(),
            ]
        }))
    }

    pub fn mul_scalar(self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.unary(v, move |g| g.scale(s))
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum()), move |g| Tensor::full(&shape, g.data()[0]))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let n = x.len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// `sum(self * weights)` for a constant `weights`; a convenient scalar
    /// projection for gradient checks.
    pub fn dot_const(self, weights: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        x.expect_same_shape(weights, "dot_const")?;
        let s: f64 = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let w = weights.clone();
        Ok(self.unary(Tensor::scalar(s), move |g| w.scale(g.data()[0])))
    }

    /// Mean absolute value, as a single-element tensor.
    pub fn abs_mean(self) -> Var<'t> {
        let x = self.value();
        self.tape.note_kinks(x.data());
        let n = x.len() as f64;
        let v = x.data().iter().map(|v| v.abs()).sum::<f64>() / n;
        self.unary(Tensor::scalar(v), move |g| {
            let s = g.data()[0] / n;
            x.map(|v| if v > 0.0 { s } else if v < 0.0 { -s } else { 0.0 })
        })
    }

    /// Root mean square, as a single-element tensor. The gradient at zero is
    /// taken to be zero.
    pub fn rms(self) -> Var<'t> {
        let x = self.value();
        let n = x.len() as f64;
        let r = (x.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        self.unary(Tensor::scalar(r), move |g| {
            if r == 0.0 {
                Tensor::zeros(x.shape())
            } else {
                x.scale(g.data()[0] / (n * r))
            }
        })
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        self.tape.note_kinks(x.data());
        let v = x.map(|v| v.max(0.0));
        self.unary(v, move |g| g.zip_map(&x, "relu", |g, x| if x > 0.0 { g } else { 0.0 }).unwrap())
    }

    /// Parametric ReLU with one slope per channel (axis 1).
    pub fn prelu(self, slopes: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let a = slopes.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 || a.shape() != [shape[1]] {
            return Err(shape_err(
                "prelu",
                format!("{} slopes", shape.get(1).copied().unwrap_or(0)),
                format!("{:?}", a.shape()),
            ));
        }
        self.tape.note_kinks(x.data());
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut v = x.as_ref().clone();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            if *val <= 0.0 {
                *val *= a.data()[(i / inner) % c];
            }
        }
        Ok(self.tape.record(v, &[self, slopes], move |g| {
            let mut dx = g.clone();
            let mut da = vec![0.0; c];
            for (i, (d, &xv)) in dx.data_mut().iter_mut().zip(x.data()).enumerate() {
                if xv <= 0.0 {
                    let ch = (i / inner) % c;
                    da[ch] += *d * xv;
                    *d *= a.data()[ch];
                }
            }
            vec![dx, Tensor::new(&[c], da).unwrap()]
        }))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let y = Rc::new(self.value().map(sigmoid_scalar));
        let yc = Rc::clone(&y);
        self.unary(y.as_ref().clone(), move |g| {
            g.zip_map(&yc, "sigmoid", |g, y| g * y * (1.0 - y)).unwrap()
        })
    }

    /// Shape-preserving 2-D cross-correlation. `weight` is
    /// `[out, in, k, k]` with `k` in {1, 3}; `bias` is `[out]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        let spec = ConvSpec::from_weight(&w)?;
        let bv = bias.map(|b| b.value());
        let out = conv_forward(&x, &w, bv.as_deref(), spec)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape.record(out, &parents, move |g| {
            let (dx, dw, db) = conv_backward(&x, &w, spec, g);
            if has_bias {
                vec![dx, dw, db]
            } else {
                vec![dx, dw]
            }
        }))
    }

    pub fn concat_channels(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_channels", "at least one input", 0))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_channels(&refs)?;
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        Ok(first.tape.record(out, parts, move |g| {
            let mut start = 0;
            widths
                .iter()
                .map(|&w| {
                    let s = g.slice_channels(start, w).unwrap();
                    start += w;
                    s
                })
                .collect()
        }))
    }

    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.slice_channels(start, len)?;
        let shape = x.shape().to_vec();
        Ok(self.unary(out, move |g| {
            let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let plane = h * w;
            let mut dx = Tensor::zeros(&shape);
            for bi in 0..b {
                let dst = (bi * c + start) * plane;
                let src = bi * len * plane;
                dx.data_mut()[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
            }
            dx
        }))
    }

    /// Spatial mean of each channel: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let plane = h * w;
        let data = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        let out = Tensor::new(&[b, c], data)?;
        let shape = x.shape().to_vec();
        Ok(self.unary(out, move |g| {
            let mut dx = Tensor::zeros(&shape);
            for (chunk, &gv) in dx.data_mut().chunks_mut(plane).zip(g.data()) {
                chunk.fill(gv / plane as f64);
            }
            dx
        }))
    }

    /// Multiplies every channel of `[B, C, H, W]` by the matching entry of
    /// `scales: [B, C]`.
    pub fn scale_channels(self, scales: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let s = scales.value();
        let (b, c, h, w) = x.dims4()?;
        if s.shape() != [b, c] {
            return Err(shape_err("scale_channels", format!("[{b}, {c}]"), format!("{:?}", s.shape())));
        }
        let plane = h * w;
        let mut out = x.as_ref().clone();
        for (chunk, &sv) in out.data_mut().chunks_mut(plane).zip(s.data()) {
            chunk.iter_mut().for_each(|v| *v *= sv);
        }
        Ok(self.tape.record(out, &[self, scales], move |g| {
            let mut dx = g.clone();
            let mut ds = vec![0.0; b * c];
            for (i, (gc, xc)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
                ds[i] = gc.iter().zip(xc).map(|(a, b)| a * b).sum();
                gc.iter_mut().for_each(|v| *v *= s.data()[i]);
            }
            vec![dx, Tensor::new(&[b, c], ds).unwrap()]
        }))
    }

    /// 2-D matrix product `[m, k] x [k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (m, k, n) = match (a.shape(), b.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(shape_err("matmul", "[m, k] x [k, n]", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), 0.0, &mut out);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.tape.record(out, &[self, other], move |g| {
            let gm = MatRef::new(g.data(), m, n);
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; k * n];
            gemm(gm, MatRef::new(b.data(), k, n).t(), 0.0, &mut da);
            gemm(MatRef::new(a.data(), m, k).t(), gm, 0.0, &mut db);
            vec![Tensor::new(&[m, k], da).unwrap(), Tensor::new(&[k, n], db).unwrap()]
        }))
    }

    /// Adds `bias: [n]` to every row of `[m, n]`.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let b = bias.value();
        let n = match x.shape() {
            &[_, n] if b.shape() == [n] => n,
            sx => return Err(shape_err("add_row_bias", format!("[m, {:?}]", b.shape()), format!("{sx:?}"))),
        };
        let mut out = x.as_ref().clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
        }
        Ok(self.tape.record(out, &[self, bias], move |g| {
            let mut db = vec![0.0; n];
            for row in g.data().chunks(n) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            vec![g.clone(), Tensor::new(&[n], db).unwrap()]
        }))
    }

    /// Batched product of `[N, m, k]` with `[N, k, n]`, or with `[N, n, k]`
    /// transposed when `transpose_rhs` is set.
    pub fn bmm(self, other: Var<'t>, transpose_rhs: bool) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (nb, m, k, n) = match (a.shape(), b.shape()) {
            (&[nb, m, k], &[nb2, k2, n]) if nb == nb2 && k == k2 && !transpose_rhs => (nb, m, k, n),
            (&[nb, m, k], &[nb2, n, k2]) if nb == nb2 && k == k2 && transpose_rhs => (nb, m, k, n),
            (sa, sb) => return Err(shape_err("bmm", "matching batched operands", format!("{sa:?} x {sb:?}"))),
        };
        fn view(data: &[f64], k: usize, n: usize, transpose: bool) -> MatRef<'_> {
            if transpose {
                MatRef::new(data, n, k).t()
            } else {
                MatRef::new(data, k, n)
            }
        }
        let mut out = vec![0.0; nb * m * n];
        for i in 0..nb {
            gemm(
                MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k),
                view(&b.data()[i * k * n..(i + 1) * k * n], k, n, transpose_rhs),
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::new(&[nb, m, n], out)?;
        Ok(self.tape.record(out, &[self, other], move |g| {
            let mut da = vec![0.0; nb * m * k];
            let mut db = vec![0.0; nb * k * n];
            for i in 0..nb {
                let gm = MatRef::new(&g.data()[i * m * n..(i + 1) * m * n], m, n);
                let am = MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
                let bs = &b.data()[i * k * n..(i + 1) * k * n];
                gemm(gm, view(bs, k, n, transpose_rhs).t(), 0.0, &mut da[i * m * k..(i + 1) * m * k]);
                let dbs = &mut db[i * k * n..(i + 1) * k * n];
                if transpose_rhs {
                    // d(B^T) = A^T G, so dB = G^T A.
                    gemm(gm.t(), am, 0.0, dbs);
                } else {
                    gemm(am.t(), gm, 0.0, dbs);
                }
            }
            vec![
                Tensor::new(a.shape(), da).unwrap(),
                Tensor::new(b.shape(), db).unwrap(),
            ]
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(self) -> Var<'t> {
        let y = Rc::new(softmax_rows_value(&self.value()));
        let yc = Rc::clone(&y);
        self.unary(y.as_ref().clone(), move |g| {
            let n = *yc.shape().last().unwrap();
            let mut dx = g.clone();
            for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(yc.data().chunks(n)) {
                let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                for (d, y) in drow.iter_mut().zip(yrow) {
                    *d = y * (*d - dot);
                }
            }
            dx
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.unary(out, move |g| g.reshape(&orig).unwrap()))
    }

    /// Index gather `out[i] = x[index[i]]` into a tensor of `shape`. The
    /// gradient scatters back and sums repeated indices.
    pub fn gather(self, shape: &[usize], index: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if index.len() != n {
            return Err(shape_err("gather", format!("{n} indices"), index.len().to_string()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= x.len()) {
            return Err(invalid("gather", format!("index {bad} out of range for {} elements", x.len())));
        }
        let out = Tensor::new(shape, index.iter().map(|&i| x.data()[i]).collect())?;
        let src_shape = x.shape().to_vec();
        Ok(self.unary(out, move |g| {
            let mut dx = Tensor::zeros(&src_shape);
            let d = dx.data_mut();
            for (gv, &i) in g.data().iter().zip(index.iter()) {
                d[i] += gv;
            }
            dx
        }))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let x = self.value();
        let &[m, n] = x.shape() else {
            return Err(shape_err("transpose", "rank 2", format!("{:?}", x.shape())));
        };
        let t = |src: &Tensor, r: usize, c: usize| {
            Tensor::from_fn(&[c, r], |i| src.data()[(i % r) * c + i / r])
        };
        Ok(self.unary(t(&x, m, n), move |g| t(g, n, m)))
    }
}

impl Tape {
    /// A recorded constant tensor filled with `value`.
    pub fn constant(&self, shape: &[usize], value: f64) -> Var<'_> {
        self.leaf(Tensor::full(shape, value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{check_gradients, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// Direct four-loop cross-correlation with zero padding.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
        let (bs, c, h, wd) = x.dims4().unwrap();
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[bs, o, h, wd]);
        for bi in 0..bs {
            for oc in 0..o {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = b[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    s += x.at4(bi, ic, sy as usize, sx as usize) * w.at4(oc, ic, ky, kx);
                                }
                            }
                        }
                        *out.at4_mut(bi, oc, y, xx) = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_1x1() {
        let tape = Tape::new();
        let x = Tensor::uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng());
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = tape
            .leaf(x.clone())
            .conv2d(tape.leaf(w), Some(tape.leaf(Tensor::zeros(&[3]))))
            .unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let tape = Tape::new();
        let w = Tensor::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng());
        let y = tape
            .leaf(Tensor::zeros(&[1, 3, 4, 4]))
            .conv2d(tape.leaf(w), Some(tape.leaf(Tensor::new(&[2], vec![0.5, -2.0]).unwrap())))
            .unwrap();
        let y = y.value();
        for y0 in 0..4 {
            for x0 in 0..4 {
                assert_eq!(y.at4(0, 0, y0, x0), 0.5);
                assert_eq!(y.at4(0, 1, y0, x0), -2.0);
            }
        }
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut r = rng();
        let x = Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut r);
        let w = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
        let b = vec![0.1, -0.2, 0.3];
        let tape = Tape::new();
        let y = tape
            .leaf(x.clone())
            .conv2d(tape.leaf(w.clone()), Some(tape.leaf(Tensor::new(&[3], b.clone()).unwrap())))
            .unwrap();
        assert!(y.value().max_abs_diff(&conv_oracle(&x, &w, &b)) < 1e-13);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let tape = Tape::new();
        let err = tape
            .leaf(Tensor::zeros(&[1, 2, 4, 4]))
            .conv2d(tape.leaf(Tensor::zeros(&[1, 3, 3, 3])), None)
            .unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        assert!(ConvSpec::new(2, 2, 5).is_err());
    }

    #[test]
    fn prelu_definition_and_special_slopes() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[1, 1, 1, 2], vec![2.0, -2.0]).unwrap());
        let y = x.prelu(tape.leaf(Tensor::new(&[1], vec![0.25]).unwrap())).unwrap();
        assert_eq!(y.value().data(), &[2.0, -0.5]);

        let data = Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng());
        let id = tape.leaf(data.clone()).prelu(tape.constant(&[3], 1.0)).unwrap();
        assert_eq!(*id.value(), data);
        let relu = tape.leaf(data.clone()).prelu(tape.constant(&[3], 0.0)).unwrap();
        assert_eq!(*relu.value(), data.map(|v| v.max(0.0)));
        assert!(tape.leaf(data).prelu(tape.constant(&[2], 0.0)).is_err());
    }

    #[test]
    fn sigmoid_softmax_basics() {
        let tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(0.0)).sigmoid();
        assert_eq!(s.value().data()[0], 0.5);
        let sm = tape.leaf(Tensor::new(&[1, 1], vec![3.7]).unwrap()).softmax_rows();
        assert_eq!(sm.value().data(), &[1.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = rng();
        let a = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut r);
        let b = Tensor::uniform(&[3, 2], -1.0, 1.0, &mut r);
        let tape = Tape::new();
        let c = tape.leaf(a.clone()).matmul(tape.leaf(b.clone())).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|p| a.data()[i * 3 + p] * b.data()[p * 2 + j]).sum();
                assert!((c.value().data()[i * 2 + j] - want).abs() < 1e-15);
            }
        }
        assert!(tape.leaf(a.clone()).matmul(tape.leaf(a)).is_err());
    }

    #[test]
    fn backward_of_sum_and_square() {
        let tape = Tape::new();
        let xt = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let x = tape.leaf(xt.clone());
        let g = tape.backward_scalar(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let x = tape.leaf(xt.clone());
        let y = x.mul(x).unwrap().sum();
        let g = tape.backward_scalar(y).unwrap();
        assert_eq!(*g.get(x).unwrap(), xt.scale(2.0));
    }

    #[test]
    fn backward_rejects_foreign_var() {
        let a = Tape::new();
        let b = Tape::new();
        let x = b.leaf(Tensor::scalar(1.0));
        let _ = a.leaf(Tensor::scalar(1.0));
        assert!(a.backward_scalar(x).is_err());
        let seed = Tensor::zeros(&[2]);
        assert!(b.backward(x, seed).is_err());
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut r = rng();
        // Values bounded away from zero keep PReLU/ReLU/abs off their kinks.
        let away = |t: Tensor| t.map(|v| if v.abs() < 0.1 { v + 0.2f64.copysign(v) } else { v });
        let x4 = away(Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut r));
        let opts = GradCheckOptions::default();

        let w3 = Tensor::uniform(&[2, 3, 3, 3], -0.5, 0.5, &mut r);
        let b = Tensor::uniform(&[2], -0.5, 0.5, &mut r);
        let rep = check_gradients(
            |_, v| v[0].conv2d(v[1], Some(v[2]))?.dot_const(&Tensor::from_fn(&[2, 2, 4, 4], |i| (i as f64).sin())),
            &[x4.clone(), w3, b],
            &opts,
        )
        .unwrap();
        assert!(rep.passed, "conv {rep:?}");

        let slopes = Tensor::new(&[3], vec![0.25, 0.1, -0.3]).unwrap();
        let rep = check_gradients(|_, v| Ok(v[0].prelu(v[1])?.sum()), &[x4.clone(), slopes], &opts).unwrap();
        assert!(rep.passed, "prelu {rep:?}");

        let wts = Tensor::from_fn(&[2, 3, 4, 4], |i| (i as f64 * 0.3).cos());
        let rep = check_gradients(|_, v| v[0].sigmoid().relu().dot_const(&wts), &[x4.clone()], &opts).unwrap();
        assert!(rep.passed, "sigmoid {rep:?}");

        let s = Tensor::uniform(&[2, 3], 0.5, 1.5, &mut r);
        let rep = check_gradients(
            |_, v| v[0].scale_channels(v[1])?.global_avg_pool()?.rms().add(v[0].abs_mean()),
            &[x4.clone(), s],
            &opts,
        )
        .unwrap();
        assert!(rep.passed, "scale/pool/rms {rep:?}");

        let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut r);
        let m = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut r);
        let bias = Tensor::uniform(&[2], -1.0, 1.0, &mut r);
        let wts = Tensor::from_fn(&[2, 3], |i| 1.0 + i as f64);
        let rep = check_gradients(
            |_, v| v[0].matmul(v[1])?.add_row_bias(v[2])?.transpose()?.dot_const(&wts),
            &[a, m, bias],
            &opts,
        )
        .unwrap();
        assert!(rep.passed, "matmul {rep:?}");

        let q = Tensor::uniform(&[2, 3, 2], -1.0, 1.0, &mut r);
        let k = Tensor::uniform(&[2, 4, 2], -1.0, 1.0, &mut r);
        let vv = Tensor::uniform(&[2, 4, 3], -1.0, 1.0, &mut r);
        let wts = Tensor::from_fn(&[2, 3, 3], |i| (i as f64).sin());
        let rep = check_gradients(
            |_, v| v[0].bmm(v[1], true)?.softmax_rows().bmm(v[2], false)?.dot_const(&wts),
            &[q, k, vv],
            &opts,
        )
        .unwrap();
        assert!(rep.passed, "attention {rep:?}");

        let y4 = Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut r);
        let wts = Tensor::from_fn(&[2, 3, 4, 4], |i| (i as f64 * 0.7).sin());
        let rep = check_gradients(
            |_, v| {
                let cat = Var::concat_channels(&[v[0], v[1]])?;
                cat.slice_channels(1, 3)?.mul(v[0].mul_scalar(2.0))?.sub(v[0])?.dot_const(&wts)
            },
            &[x4, y4],
            &opts,
        )
        .unwrap();
        assert!(rep.passed, "concat/slice {rep:?}");
    }

    #[test]
    fn concat_backward_splits_gradient_exactly() {
        let mut r = rng();
        let a = Tensor::uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut r);
        let b = Tensor::uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut r);
        let seed = Tensor::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
        let tape = Tape::new();
        let (va, vb) = (tape.leaf(a), tape.leaf(b));
        let cat = Var::concat_channels(&[va, vb]).unwrap();
        let g = tape.backward(cat, seed.clone()).unwrap();
        let joined = Tensor::concat_channels(&[g.get(va).unwrap(), g.get(vb).unwrap()]).unwrap();
        assert_eq!(joined, seed);
    }

    #[test]
    fn gather_scatters_repeated_indices() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = x.gather(&[4], Rc::new(vec![2, 0, 2, 1])).unwrap();
        assert_eq!(y.value().data(), &[3.0, 1.0, 3.0, 2.0]);
        let g = tape.backward_scalar(y.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 2.0]);
        assert!(x.gather(&[1], Rc::new(vec![3])).is_err());
        assert!(x.gather(&[2], Rc::new(vec![0])).is_err());
    }
}
