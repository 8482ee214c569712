//! Small building blocks shared by the network modules.

use candle_core::{Module, Tensor, Var, D};
use candle_nn::{Init, Linear, VarBuilder};

use crate::error::Result;

pub(crate) fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    (x.neg()?.exp()? + 1.0)?.recip()
}

pub(crate) fn linear(in_dim: usize, out_dim: usize, vb: VarBuilder) -> Result<Linear> {
    Ok(candle_nn::linear(in_dim, out_dim, vb)?)
}

/// 2x2 max pooling over a `B x H x W x C` tensor (odd trailing rows/columns
/// dropped), built from a reshape and reductions. Candle's fused max-pool
/// backward scales the gradient by 1/k^2, so it is avoided.
pub(crate) fn max_pool2(x: &Tensor) -> candle_core::Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let (h2, w2) = (h / 2, w / 2);
    x.narrow(1, 0, 2 * h2)?
        .narrow(2, 0, 2 * w2)?
        .contiguous()?
        .reshape((b, h2, 2, w2, 2, c))?
        .max(4)?
        .max(2)
}

/// Convolution over a `B x H x W x C` tensor with an `O x C x k x k` kernel,
/// zero "same" padding and an optional anisotropic stride. Patches are
/// gathered row-wise and multiplied in a single GEMM; the fused candle op
/// back-propagates through transposed convolutions, which are several times
/// slower on the CPU.
pub(crate) fn conv2d(x: &Tensor, weight: &Tensor, stride: (usize, usize)) -> candle_core::Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let (o, _, k, _) = weight.dims4()?;
    let wm = weight.permute((2, 3, 1, 0))?.reshape((k * k * c, o))?;
    if k == 1 && stride == (1, 1) {
        return x.reshape((b * h * w, c))?.matmul(&wm)?.reshape((b, h, w, o));
    }
    let p = k / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let ho = (hp - k) / stride.0 + 1;
    let wo = (wp - k) / stride.1 + 1;
    let xp = if p > 0 {
        x.pad_with_zeros(1, p, p)?.pad_with_zeros(2, p, p)?
    } else {
        x.clone()
    };
    let rows = xp.reshape((b * hp * wp, c))?;
    let mut idx = Vec::with_capacity(b * ho * wo * k * k);
    for bi in 0..b {
        for i in 0..ho {
            for j in 0..wo {
                for dy in 0..k {
                    let base = bi * hp * wp + (i * stride.0 + dy) * wp + j * stride.1;
                    idx.extend((0..k).map(|dx| (base + dx) as u32));
                }
            }
        }
    }
    let n = idx.len();
    let idx = Tensor::from_vec(idx, n, x.device())?;
    rows.index_select(&idx, 0)?
        .reshape((b * ho * wo, k * k * c))?
        .matmul(&wm)?
        .reshape((b, ho, wo, o))
}

/// Batch normalization over the trailing (channel) axis. Per-channel
/// statistics and broadcasts go through matmuls with a ones vector: candle
/// reduces over leading axes with a slow strided loop, and broadcast
/// backward passes are exactly such reductions.
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub fn new(channels: usize, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints(channels, "weight", Init::Const(1.0))?;
        let bias = vb.get_with_hints(channels, "bias", Init::Const(0.0))?;
        let running_mean = vb.get_with_hints(channels, "running_mean", Init::Const(0.0))?;
        let running_var = vb.get_with_hints(channels, "running_var", Init::Const(1.0))?;
        Ok(Self {
            weight,
            bias,
            running_mean: Var::from_tensor(&running_mean)?,
            running_var: Var::from_tensor(&running_var)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let c = *dims.last().expect("batch norm on a scalar");
        let n = x.elem_count() / c;
        let x2 = x.reshape((n, c))?;
        let ones_row = Tensor::ones((1, n), x.dtype(), x.device())?;
        let ones_col = ones_row.t()?;
        let (mean, var) = if train {
            let mean = (ones_row.matmul(&x2)? / n as f64)?;
            let centered = (&x2 - ones_col.matmul(&mean)?)?;
            let var = (ones_row.matmul(&centered.sqr()?)? / n as f64)?;
            let m = self.momentum;
            let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let rm = ((self.running_mean.as_tensor().detach() * (1.0 - m))?
                + (mean.detach().squeeze(0)? * m)?)?;
            let rv = ((self.running_var.as_tensor().detach() * (1.0 - m))?
                + (var.detach().squeeze(0)? * (m * unbiased))?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().detach().unsqueeze(0)?,
                self.running_var.as_tensor().detach().unsqueeze(0)?,
            )
        };
        let scale = (self.weight.unsqueeze(0)? / (var + self.eps)?.sqrt()?)?;
        let shift = (self.bias.unsqueeze(0)? - (&mean * &scale)?)?;
        let y = ((x2 * ones_col.matmul(&scale)?)? + ones_col.matmul(&shift)?)?;
        y.reshape(dims)
    }
}

/// 3x3 (or 1x1) convolution with an optional anisotropic stride, followed by
/// batch normalization. Works on `B x H x W x C` tensors.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    weight: Tensor,
    bn: BatchNorm,
    stride: (usize, usize),
}

impl ConvBn {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: (usize, usize),
        vb: VarBuilder,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = vb.pp("conv").get_with_hints(
            (c_out, c_in, kernel, kernel),
            "weight",
            Init::Randn {
                mean: 0.0,
                stdev: (2.0 / fan_in).sqrt(),
            },
        )?;
        let bn = BatchNorm::new(c_out, vb.pp("bn"))?;
        Ok(Self { weight, bn, stride })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride)?;
        self.bn.forward(&y, train)
    }
}

/// Unidirectional LSTM over a `B x T x in` sequence. Gate order in the
/// packed weights is input, forget, output, cell.
#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    input_proj: Linear,
    hidden_proj: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(in_dim: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let init = Init::Uniform {
            lo: -bound,
            up: bound,
        };
        let w = vb.get_with_hints((4 * hidden, in_dim), "w_ih", init)?;
        let bias = vb.get_with_hints(4 * hidden, "b_ih", Init::Const(0.0))?;
        let hidden_proj = vb.get_with_hints((hidden, 4 * hidden), "w_hh", init)?;
        Ok(Self {
            input_proj: Linear::new(w, Some(bias)),
            hidden_proj,
            hidden,
        })
    }

    pub fn forward(&self, xs: &Tensor, reverse: bool) -> candle_core::Result<Tensor> {
        let (b, t, _) = xs.dims3()?;
        let gates_x = self.input_proj.forward(xs)?;
        let h_dim = self.hidden;
        let mut h = Tensor::zeros((b, h_dim), xs.dtype(), xs.device())?;
        let mut c = h.clone();
        let mut outs: Vec<Tensor> = Vec::with_capacity(t);
        let order: Vec<usize> = if reverse {
            (0..t).rev().collect()
        } else {
            (0..t).collect()
        };
        for step in order {
            let g = (gates_x.narrow(1, step, 1)?.squeeze(1)? + h.matmul(&self.hidden_proj)?)?;
            let sig = sigmoid(&g.narrow(1, 0, 3 * h_dim)?)?;
            let cand = g.narrow(1, 3 * h_dim, h_dim)?.tanh()?;
            let i = sig.narrow(1, 0, h_dim)?;
            let f = sig.narrow(1, h_dim, h_dim)?;
            let o = sig.narrow(1, 2 * h_dim, h_dim)?;
            c = ((f * &c)? + (i * cand)?)?;
            h = (o * c.tanh()?)?;
            outs.push(h.clone());
        }
        if reverse {
            outs.reverse();
        }
        Tensor::stack(&outs, 1)
    }
}

/// Bidirectional LSTM; forward and backward outputs are concatenated.
#[derive(Debug, Clone)]
pub(crate) struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(in_dim: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(in_dim, hidden, vb.pp("fwd"))?,
            bwd: Lstm::new(in_dim, hidden, vb.pp("bwd"))?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let f = self.fwd.forward(xs, false)?;
        let b = self.bwd.forward(xs, true)?;
        Tensor::cat(&[f, b], D::Minus1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    #[test]
    fn max_pool_gradient_reaches_the_maximum_unscaled() {
        let x = Var::new(
            &[[[1f32, 5., 2., 0.], [3., 4., 9., 1.], [0., 0., 0., 7.]]],
            &Device::Cpu,
        )
        .unwrap();
        let xt = x.as_tensor().unsqueeze(3).unwrap();
        let y = max_pool2(&xt).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 1]);
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![5., 9.]);
        let g = y.sum_all().unwrap().backward().unwrap();
        let gx = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(gx, vec![0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0.]);
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7919 % 23) as f64 - 11.0) * scale).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn conv_matches_the_fused_op() {
        let x = ramp(&[2, 3, 7, 10], 0.1);
        let x_nhwc = x.permute((0, 2, 3, 1)).unwrap().contiguous().unwrap();
        for (k, s) in [(3, 1), (3, 2), (1, 1), (1, 2)] {
            let w = ramp(&[4, 3, k, k], 0.05);
            let ours = conv2d(&x_nhwc, &w, (s, s)).unwrap().permute((0, 3, 1, 2)).unwrap();
            let cfg = candle_nn::Conv2dConfig { padding: k / 2, stride: s, ..Default::default() };
            let theirs = candle_nn::Conv2d::new(w.clone(), None, cfg).forward(&x).unwrap();
            assert_eq!(ours.dims(), theirs.dims());
            let d = max_diff(&ours, &theirs);
            assert!(d < 1e-12, "k {k} s {s}: {d}");
        }
    }

    #[test]
    fn anisotropic_stride_keeps_every_other_row() {
        let x = ramp(&[1, 8, 6, 2], 0.1);
        let w = ramp(&[3, 2, 3, 3], 0.05);
        let full = conv2d(&x, &w, (1, 1)).unwrap();
        let rows = conv2d(&x, &w, (2, 1)).unwrap();
        assert_eq!(rows.dims(), &[1, 4, 6, 3]);
        let idx = Tensor::new(&[0u32, 2, 4, 6], &Device::Cpu).unwrap();
        assert!(max_diff(&rows, &full.index_select(&idx, 1).unwrap()) < 1e-12);
    }

    #[test]
    fn batch_norm_normalizes_and_tracks_running_stats() {
        let map = VarMap::new();
        let vb = VarBuilder::from_varmap(&map, DType::F64, &Device::Cpu);
        let bn = BatchNorm::new(3, vb).unwrap();
        let x = (ramp(&[4, 2, 5, 3], 0.3) + 2.0).unwrap();
        let y = bn.forward(&x, true).unwrap().reshape((40, 3)).unwrap();
        let mean = y.mean(0).unwrap().to_vec1::<f64>().unwrap();
        let var = y.sqr().unwrap().mean(0).unwrap().to_vec1::<f64>().unwrap();
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-9);
            assert!((var[c] - 1.0).abs() < 1e-3);
        }
        let x2 = x.reshape((40, 3)).unwrap();
        let batch_mean = x2.mean(0).unwrap();
        let rm = bn.running_mean.as_tensor();
        let expected = (batch_mean * 0.1).unwrap();
        assert!(max_diff(rm, &expected) < 1e-12);
        // eval uses the running statistics, not the batch
        let e = bn.forward(&x, false).unwrap().reshape((40, 3)).unwrap();
        let rv = bn.running_var.as_tensor();
        let manual = x2
            .broadcast_sub(rm).unwrap()
            .broadcast_div(&(rv + 1e-5).unwrap().sqrt().unwrap()).unwrap();
        assert!(max_diff(&e, &manual) < 1e-12);
    }

    #[test]
    fn batch_norm_gradient_matches_finite_differences() {
        let map = VarMap::new();
        let vb = VarBuilder::from_varmap(&map, DType::F64, &Device::Cpu);
        let bn = BatchNorm::new(2, vb).unwrap();
        let target = ramp(&[3, 2, 2, 2], 0.7);
        let x0 = ramp(&[3, 2, 2, 2], 0.2).flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let loss = |v: &[f64]| -> f64 {
            let x = Tensor::from_vec(v.to_vec(), (3, 2, 2, 2), &Device::Cpu).unwrap();
            let y = bn.forward(&x, true).unwrap();
            (y * &target).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let xv = Var::from_tensor(&Tensor::from_vec(x0.clone(), (3, 2, 2, 2), &Device::Cpu).unwrap()).unwrap();
        let y = bn.forward(xv.as_tensor(), true).unwrap();
        let g = (y * &target).unwrap().sum_all().unwrap().backward().unwrap();
        let ga = g.get(xv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in 0..x0.len() {
            let (mut p, mut m) = (x0.clone(), x0.clone());
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let num = (loss(&p) - loss(&m)) / 2e-6;
            assert!((num - ga[i]).abs() < 1e-5, "{i}: {num} vs {}", ga[i]);
        }
    }
}
