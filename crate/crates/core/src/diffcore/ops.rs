//! Differentiable operations recorded on a [`Tape`].

use super::real::{matmul, Real};
use super::tape::{GradRule, Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;
use crate::par;

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geometry(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<ConvGeom, AutodiffError> {
    if x.len() != 4 || w.len() != 4 || w[2] != w[3] {
        return Err(mismatch("conv2d", x, w));
    }
    if x[1] != w[1] {
        return Err(mismatch("conv2d", x, w));
    }
    if b != [w[0]] {
        return Err(mismatch("conv2d", w, b));
    }
    if stride == 0 {
        return Err(AutodiffError::BadGeometry {
            op: "conv2d",
            detail: "stride must be positive".into(),
        });
    }
    let k = w[2];
    let (h, wd) = (x[2], x[3]);
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(AutodiffError::BadGeometry {
            op: "conv2d",
            detail: format!("input {x:?} with padding {pad} is smaller than kernel {w:?}"),
        });
    }
    Ok(ConvGeom {
        n: x[0],
        c: x[1],
        h,
        w: wd,
        o: w[0],
        k,
        stride,
        pad,
        ho: (h + 2 * pad - k) / stride + 1,
        wo: (wd + 2 * pad - k) / stride + 1,
    })
}

fn im2col<F: Real>(g: &ConvGeom, x: &[F], col: &mut [F]) {
    let cols = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<F: Real>(g: &ConvGeom, col: &[F], dx: &mut [F]) {
    let cols = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW input with OIKK weights, plus bias.
pub fn conv2d_forward<F: Real>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>, AutodiffError> {
    let g = conv_geometry(x.shape(), weight.shape(), bias.shape(), stride, pad)?;
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * g.cols();
    let mut out = vec![F::zero(); g.n * out_len];
    par::map_chunks_mut(&mut out, out_len, |s, dst| {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        if g.is_pointwise() {
            matmul(g.o, g.rows(), g.cols(), weight.data(), false, xs, false, F::zero(), dst);
        } else {
            let mut col = vec![F::zero(); g.rows() * g.cols()];
            im2col(&g, xs, &mut col);
            matmul(g.o, g.rows(), g.cols(), weight.data(), false, &col, false, F::zero(), dst);
        }
        for (o, row) in dst.chunks_mut(g.cols()).enumerate() {
            let b = bias.data()[o];
            row.iter_mut().for_each(|v| *v += b);
        }
    });
    Tensor::new(vec![g.n, g.o, g.ho, g.wo], out)
}

struct Conv2dRule {
    stride: usize,
    pad: usize,
}

impl<F: Real> GradRule<F> for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let g = conv_geometry(x.shape(), w.shape(), b.shape(), self.stride, self.pad)
            .expect("geometry validated in forward");
        let in_len = g.c * g.h * g.w;
        let out_len = g.o * g.cols();
        let wlen = w.numel();
        let mut dx = vec![F::zero(); g.n * in_len];
        // Per-sample weight gradients, reduced below in sample order.
        let partials = par::map_chunks_mut(&mut dx, in_len, |s, dxs| {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let gs = &grad.data()[s * out_len..(s + 1) * out_len];
            let mut dw = vec![F::zero(); wlen];
            if g.is_pointwise() {
                matmul(g.o, g.cols(), g.rows(), gs, false, xs, true, F::zero(), &mut dw);
                matmul(g.rows(), g.o, g.cols(), w.data(), true, gs, false, F::zero(), dxs);
            } else {
                let mut col = vec![F::zero(); g.rows() * g.cols()];
                im2col(&g, xs, &mut col);
                matmul(g.o, g.cols(), g.rows(), gs, false, &col, true, F::zero(), &mut dw);
                matmul(g.rows(), g.o, g.cols(), w.data(), true, gs, false, F::zero(), &mut col);
                col2im(&g, &col, dxs);
            }
            dw
        });
        let mut dw = vec![F::zero(); wlen];
        for p in &partials {
            for (a, &v) in dw.iter_mut().zip(p) {
                *a += v;
            }
        }
        let mut db = vec![F::zero(); g.o];
        for s in 0..g.n {
            for (o, acc) in db.iter_mut().enumerate() {
                let start = s * out_len + o * g.cols();
                *acc += grad.data()[start..start + g.cols()].iter().copied().sum::<F>();
            }
        }
        vec![
            Some(Tensor::new(x.shape().to_vec(), dx).expect("shape")),
            Some(Tensor::new(w.shape().to_vec(), dw).expect("shape")),
            Some(Tensor::new(b.shape().to_vec(), db).expect("shape")),
        ]
    }
}

struct ReluRule;

impl<F: Real> GradRule<F> for ReluRule {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > F::zero() { g } else { F::zero() })
            .collect();
        vec![Some(Tensor::new(grad.shape().to_vec(), data).expect("shape"))]
    }
}

struct AddRule;

impl<F: Real> GradRule<F> for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct SubtractRule;

impl<F: Real> GradRule<F> for SubtractRule {
    fn name(&self) -> &'static str {
        "subtract"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        vec![Some(grad.clone()), Some(grad.map(|g| -g))]
    }
}

struct ConcatRule {
    split: usize,
}

impl<F: Real> GradRule<F> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let c = grad.shape()[1];
        vec![
            Some(grad.slice_channels(0, self.split).expect("shape")),
            Some(grad.slice_channels(self.split, c).expect("shape")),
        ]
    }
}

struct GapRule;

impl<F: Real> GradRule<F> for GapRule {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let shape = inputs[0].shape();
        let hw = shape[2] * shape[3];
        let inv = F::one() / F::from_f64_lossy(hw as f64);
        let mut data = Vec::with_capacity(inputs[0].numel());
        for &g in grad.data() {
            data.extend(std::iter::repeat_n(g * inv, hw));
        }
        vec![Some(Tensor::new(shape.to_vec(), data).expect("shape"))]
    }
}

struct LinearRule;

impl<F: Real> GradRule<F> for LinearRule {
    fn name(&self) -> &'static str {
        "fully_connected"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, d, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
        let mut dx = vec![F::zero(); n * d];
        matmul(n, m, d, grad.data(), false, w.data(), true, F::zero(), &mut dx);
        let mut dw = vec![F::zero(); d * m];
        matmul(d, n, m, x.data(), true, grad.data(), false, F::zero(), &mut dw);
        let mut db = vec![F::zero(); m];
        for row in grad.data().chunks(m) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        vec![
            Some(Tensor::new(x.shape().to_vec(), dx).expect("shape")),
            Some(Tensor::new(w.shape().to_vec(), dw).expect("shape")),
            Some(Tensor::new(vec![m], db).expect("shape")),
        ]
    }
}

struct SumRule;

impl<F: Real> GradRule<F> for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.item()))]
    }
}

struct ScaleRule<F> {
    factor: F,
}

impl<F: Real> GradRule<F> for ScaleRule<F> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        vec![Some(grad.map(|g| g * self.factor))]
    }
}

struct ReshapeRule;

impl<F: Real> GradRule<F> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        vec![Some(grad.reshape(inputs[0].shape()).expect("same numel"))]
    }
}

impl<F: Real> Tape<F> {
    /// NCHW input, OIKK weight, O bias → N·O·H'·W'.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var, AutodiffError> {
        for v in [x, weight, bias] {
            self.check(v)?;
        }
        let out = conv2d_forward(self.value(x), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.record(&[x, weight, bias], out, Conv2dRule { stride, pad: padding }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let value = self.value(x);
        let kink = value
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(F::infinity(), |a, b| if b < a { b } else { a });
        let out = value.map(|v| if v > F::zero() { v } else { F::zero() });
        self.note_kink(kink);
        Ok(self.record(&[x], out, ReluRule))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same_shape("add", a, b, |x, y| x + y)?;
        Ok(self.record(&[a, b], out, AddRule))
    }

    pub fn subtract(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same_shape("subtract", a, b, |x, y| x - y)?;
        Ok(self.record(&[a, b], out, SubtractRule))
    }

    fn zip_same_shape(&self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Channel-axis concatenation of two NCHW tensors, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(mismatch("concat_channels", sa, sb));
        }
        let hw = sa[2] * sa[3];
        let (ca, cb) = (sa[1], sb[1]);
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for s in 0..sa[0] {
            data.extend_from_slice(&ta.data()[s * ca * hw..(s + 1) * ca * hw]);
            data.extend_from_slice(&tb.data()[s * cb * hw..(s + 1) * cb * hw]);
        }
        let out = Tensor::new(vec![sa[0], ca + cb, sa[2], sa[3]], data)?;
        Ok(self.record(&[a, b], out, ConcatRule { split: ca }))
    }

    /// Spatial mean per (sample, channel): NCHW → NC.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 4 {
            return Err(AutodiffError::InvalidShape { shape: s.to_vec() });
        }
        let hw = s[2] * s[3];
        let inv = F::one() / F::from_f64_lossy(hw as f64);
        let data = t
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<F>() * inv)
            .collect();
        let out = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.record(&[x], out, GapRule))
    }

    /// Affine map `x·weight + bias` for x: N×D, weight: D×M, bias: M.
    pub fn fully_connected(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, AutodiffError> {
        for v in [x, weight, bias] {
            self.check(v)?;
        }
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.shape()[1] != tw.shape()[0] {
            return Err(mismatch("fully_connected", tx.shape(), tw.shape()));
        }
        let (n, d, m) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
        if tb.shape() != [m] {
            return Err(mismatch("fully_connected", tw.shape(), tb.shape()));
        }
        let mut out = vec![F::zero(); n * m];
        matmul(n, d, m, tx.data(), false, tw.data(), false, F::zero(), &mut out);
        for row in out.chunks_mut(m) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        Ok(self.record(&[x, weight, bias], out, LinearRule))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let total = self.value(x).data().iter().copied().sum::<F>();
        Ok(self.record(&[x], Tensor::scalar(total), SumRule))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let out = self.value(x).map(|v| v * factor);
        Ok(self.record(&[x], out, ScaleRule { factor }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let out = self.value(x).reshape(shape)?;
        Ok(self.record(&[x], out, ReshapeRule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Direct six-loop cross-correlation.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * o * ho * wo];
        for s in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((oc * c + ic) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out[((s * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, o, ho, wo], out).unwrap()
    }

    #[test]
    fn conv_ones_gives_nine() {
        let y = conv2d_forward(&Tensor::<f64>::ones(&[1, 1, 3, 3]), &Tensor::ones(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn conv_zero_kernel_outputs_bias() {
        let x = Tensor::<f64>::new(vec![2, 2, 5, 5], (0..100).map(|v| v as f64).collect()).unwrap();
        let y = conv2d_forward(&x, &Tensor::zeros(&[3, 2, 3, 3]), &t(&[3], &[0.5, -1.0, 2.0]), 2, 1).unwrap();
        for s in 0..2 {
            for (o, b) in [0.5, -1.0, 2.0].iter().enumerate() {
                let plane = &y.data()[(s * 3 + o) * 9..(s * 3 + o + 1) * 9];
                assert!(plane.iter().all(|v| v == b));
            }
        }
    }

    #[test]
    fn conv_same_padding_keeps_size() {
        let y = conv2d_forward(&Tensor::<f32>::ones(&[1, 1, 4, 4]), &Tensor::ones(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let x = Tensor::new(vec![2, 3, 7, 6], (0..252).map(|v| ((v * 37 % 17) as f64 - 8.0) / 5.0).collect()).unwrap();
        let w = Tensor::new(vec![4, 3, 3, 3], (0..108).map(|v| ((v * 13 % 11) as f64 - 5.0) / 7.0).collect()).unwrap();
        let b = t(&[4], &[0.1, -0.2, 0.3, 0.0]);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let want = conv_naive(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = tape.param(Tensor::zeros(&[2, 6, 3, 3]));
        let b = tape.param(Tensor::zeros(&[2]));
        let err = tape.conv2d(x, w, b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 4, 4]") && err.contains("[2, 6, 3, 3]"), "{err}");
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tape.kink_distance(), Some(0.0));

        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(x).data(), &[0.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(vec![-3.0, -0.5]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn add_subtract_values_and_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.param(Tensor::from_vec(vec![3.0, 4.0]));
        let z = tape.constant(Tensor::zeros(&[2]));
        let az = tape.add(a, z).unwrap();
        assert_eq!(tape.value(az).data(), &[1.0, 2.0]);
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        let total = tape.sum(s).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(a).data(), &[1.0, 1.0]);
        assert_eq!(g.get(b).data(), &[1.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(vec![5.0, 1.0]));
        let b = tape.param(Tensor::from_vec(vec![2.0, 3.0]));
        let d = tape.subtract(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[3.0, -2.0]);
        let aa = tape.subtract(a, a).unwrap();
        assert_eq!(tape.value(aa).data(), &[0.0, 0.0]);
        let total = tape.sum(d).unwrap();
        assert_eq!(tape.backward(total).unwrap().get(b).data(), &[-1.0, -1.0]);

        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::zeros(&[2]));
        let b = tape.param(Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(tape.subtract(a, b), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn concat_layout_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(vec![1, 3, 2, 2], (1..=12).map(f64::from).collect()).unwrap());
        let b = tape.param(Tensor::zeros(&[1, 3, 2, 2]));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[1, 6, 2, 2]);
        assert_eq!(&tape.value(c).data()[..12], tape.value(a).data());
        assert!(tape.value(c).data()[12..].iter().all(|&v| v == 0.0));
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(a).data().iter().chain(g.get(b).data()).all(|&v| v == 1.0));

        let bad = tape.param(Tensor::zeros(&[1, 3, 2, 3]));
        assert!(tape.concat_channels(a, bad).is_err());
    }

    #[test]
    fn gap_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 1]);
        assert_eq!(tape.value(y).item(), 4.0);

        let x = tape.constant(Tensor::full(&[2, 3, 4, 5], 2.5));
        let y = tape.global_avg_pool(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 2.5));

        let x = tape.constant(t(&[1, 3, 1, 1], &[1.0, -2.0, 3.0]));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn fully_connected_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.param(t(&[1], &[0.5]));
        let y = tape.fully_connected(x, w, b).unwrap();
        assert_eq!(tape.value(y).item(), 3.5);

        let x = tape.constant(t(&[2, 2], &[1.0, -2.0, 3.0, 4.0]));
        let eye = tape.param(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = tape.param(Tensor::zeros(&[2]));
        let y = tape.fully_connected(x, eye, zb).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let zw = tape.param(Tensor::zeros(&[2, 3]));
        let bias = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.fully_connected(x, zw, bias).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);

        let bad = tape.param(Tensor::zeros(&[3, 1]));
        assert!(tape.fully_connected(x, bad, b).is_err());
    }

    #[test]
    fn backward_rules() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::full(&[2, 3], 0.3));
        let unused = tape.param(Tensor::full(&[4], 1.0));
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(p).data().iter().all(|&v| v == 1.0));
        assert_eq!(g.get(unused).data(), &[0.0; 4]);

        let v = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(v), Err(AutodiffError::NonScalarOutput { .. })));
    }
}
