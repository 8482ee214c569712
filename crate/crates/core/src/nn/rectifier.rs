//! Learnable rectification: localization network, spline grid and sampler.

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Init, Linear, VarBuilder};

use crate::error::{Error, Result};
use crate::geometry::{ControlPoints, TpsSystem};
use crate::nn::config::RectifierConfig;
use crate::nn::layers::{linear, max_pool2, ConvBn};

#[derive(Debug, Clone)]
pub struct Rectifier {
    convs: Vec<ConvBn>,
    fc1: Linear,
    fc2: Linear,
    pool: usize,
    control_points: usize,
    /// `(out_h * out_w) x K` operator mapping predicted points to the grid.
    grid_op: Tensor,
    out_h: usize,
    out_w: usize,
}

impl Rectifier {
    pub fn new(
        cfg: &RectifierConfig,
        out_h: usize,
        out_w: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let k = cfg.control_points;
        let fiducial = ControlPoints::fiducial(k)?;
        let pool = if out_h > cfg.loc_height {
            if out_h % cfg.loc_height != 0 || out_w % (out_h / cfg.loc_height) != 0 {
                return Err(Error::Config(format!(
                    "input {out_h}x{out_w} cannot be pooled to localization height {}",
                    cfg.loc_height
                )));
            }
            out_h / cfg.loc_height
        } else {
            1
        };
        let mut convs = Vec::with_capacity(cfg.loc_channels.len());
        let mut c_in = 1;
        for (i, &c) in cfg.loc_channels.iter().enumerate() {
            convs.push(ConvBn::new(c_in, c, 3, (1, 1), vb.pp(format!("conv{i}")))?);
            c_in = c;
        }
        let fc1 = linear(c_in, cfg.loc_hidden, vb.pp("fc1"))?;
        // Zero weights and atanh(fiducial) bias: the first prediction is the
        // fiducial layout itself.
        let w2 = vb
            .pp("fc2")
            .get_with_hints((2 * k, cfg.loc_hidden), "weight", Init::Const(0.0))?;
        let bias: Vec<f64> = fiducial
            .points()
            .iter()
            .flat_map(|p| [p[0].atanh(), p[1].atanh()])
            .collect();
        let b2 = vb
            .pp("fc2")
            .get_with_hints(2 * k, "bias", Init::Const(0.0))?;
        if b2.is_variable() && is_all_zero(&b2)? {
            candle_core::Var::from_tensor(&b2)?
                .set(&Tensor::new(bias.as_slice(), vb.device())?.to_dtype(vb.dtype())?)?;
        }
        let fc2 = Linear::new(w2, Some(b2));

        let op = TpsSystem::new(&fiducial)?.grid_operator(out_h, out_w);
        let grid_op = Tensor::from_vec(op, (out_h * out_w, k), vb.device())?.to_dtype(vb.dtype())?;
        Ok(Self {
            convs,
            fc1,
            fc2,
            pool,
            control_points: k,
            grid_op,
            out_h,
            out_w,
        })
    }

    /// Control points `B x K x 2` (x, y) in [-1, 1].
    pub fn predict_control_points(&self, images: &Tensor, train: bool) -> Result<Tensor> {
        check_finite(images)?;
        let x = if self.pool > 1 {
            images.avg_pool2d(self.pool)?
        } else {
            images.clone()
        };
        let (b, _, h, w) = x.dims4()?;
        let mut x = x.reshape((b, h, w, 1))?;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x, train)?.relu()?;
            if i < last {
                x = max_pool2(&x)?;
            }
        }
        let (b, h, w, c) = x.dims4()?;
        let feat = x.reshape((b, h * w, c))?.mean(1)?;
        let hidden = self.fc1.forward(&feat)?.relu()?;
        let raw = self.fc2.forward(&hidden)?.tanh()?;
        let b = raw.dim(0)?;
        Ok(raw.reshape((b, self.control_points, 2))?)
    }

    /// Sampling grid `B x (out_h * out_w) x 2` for the given control points.
    pub fn grid(&self, points: &Tensor) -> Result<Tensor> {
        Ok(self.grid_op.broadcast_matmul(points)?)
    }

    /// Rectified images `B x 1 x out_h x out_w`.
    pub fn forward(&self, images: &Tensor, train: bool) -> Result<Tensor> {
        let points = self.predict_control_points(images, train)?;
        let grid = self.grid(&points)?;
        let out = sample_bilinear(images, &grid)?;
        let b = out.dim(0)?;
        Ok(out.reshape((b, 1, self.out_h, self.out_w))?)
    }
}

fn is_all_zero(t: &Tensor) -> candle_core::Result<bool> {
    Ok(t.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()? == 0.0)
}

pub(crate) fn check_finite(t: &Tensor) -> Result<()> {
    let s = t.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::InvalidInput("image contains non-finite values".into()));
    }
    Ok(())
}

/// Differentiable bilinear sampling with border clamping.
///
/// `images` is `B x 1 x H x W`, `grid` is `B x N x 2` holding normalized
/// (x, y); the result is `B x N`.
pub fn sample_bilinear(images: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let (b, _, h, w) = images.dims4()?;
    let flat = images.reshape((b, h * w))?;
    let gx = grid.narrow(2, 0, 1)?.squeeze(2)?;
    let gy = grid.narrow(2, 1, 1)?.squeeze(2)?;
    let (x0, fx) = axis_coords(&gx, w)?;
    let (y0, fy) = axis_coords(&gy, h)?;
    let dx = if w > 1 { 1.0 } else { 0.0 };
    let dy = if h > 1 { w as f64 } else { 0.0 };
    let base = ((y0 * w as f64)? + x0)?;
    let gather = |offset: f64| -> candle_core::Result<Tensor> {
        let idx = (&base + offset)?.to_dtype(DType::U32)?;
        flat.gather(&idx, 1)
    };
    let v00 = gather(0.0)?;
    let v01 = gather(dx)?;
    let v10 = gather(dy)?;
    let v11 = gather(dx + dy)?;
    let one_fx = fx.affine(-1.0, 1.0)?;
    let one_fy = fy.affine(-1.0, 1.0)?;
    let top = ((v00 * &one_fx)? + (v01 * &fx)?)?;
    let bottom = ((v10 * &one_fx)? + (v11 * &fx)?)?;
    Ok(((top * one_fy)? + (bottom * fy)?)?)
}

/// Lower corner index (detached, as float) and fractional offset along one
/// axis of length `n`.
fn axis_coords(v: &Tensor, n: usize) -> candle_core::Result<(Tensor, Tensor)> {
    if n == 1 {
        let z = v.zeros_like()?;
        return Ok((z.clone(), z));
    }
    let max = (n - 1) as f64;
    let p = v.affine(0.5 * max, 0.5 * max)?.clamp(0.0, max)?;
    let i0 = p.detach().floor()?.clamp(0.0, max - 1.0)?;
    let frac = (p - &i0)?;
    Ok((i0, frac))
}

/// Builds a batch tensor `B x 1 x H x W` from equally sized images.
pub fn images_to_tensor(
    images: &[&crate::imaging::Image],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::shape(
                "image batch",
                format!("{h}x{w}"),
                format!("{}x{}", img.height, img.width),
            ));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?.to_dtype(dtype)?)
}
