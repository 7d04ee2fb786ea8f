//! Minimal layer toolkit on top of `candle-core` autodiff.
//!
//! Trainable parameters live in a [`ParamStore`] keyed by dotted names, so
//! initialization, optimizer state and checkpoints all walk the same ordered
//! map. Frozen layers hold plain tensors and never enter a store.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var, D};

use crate::error::{Error, Result};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

thread_local! {
    static NO_GRAD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Runs `f` with layers reading detached parameters, so no graph is recorded
/// and intermediates are freed as soon as they go out of use.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            NO_GRAD.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(NO_GRAD.with(|g| g.replace(true)));
    f()
}

fn param(var: &Var) -> Tensor {
    if NO_GRAD.with(|g| g.get()) {
        var.as_tensor().detach()
    } else {
        var.as_tensor().clone()
    }
}

/// Ordered collection of the trainable tensors of one network.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Registers a zero-filled parameter.
    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Var> {
        let name = name.into();
        assert!(!self.vars.contains_key(&name), "duplicate parameter {name}");
        let var = Var::zeros(shape, self.dtype, &self.device)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Snapshot of every parameter in freshly allocated storage.
    pub fn tensors(&self) -> Result<HashMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    /// Overwrites every parameter from `tensors`; names and shapes must match exactly.
    pub fn load(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.vars.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                self.vars.len(),
                tensors.len()
            )));
        }
        for (name, var) in &self.vars {
            let src = tensors
                .get(name)
                .ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))?;
            if src.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: expected {:?}, found {:?}",
                    var.dims(),
                    src.dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Deep copy with freshly allocated storage.
    pub fn deep_clone(&self) -> Result<ParamStore> {
        let mut vars = BTreeMap::new();
        for (name, var) in &self.vars {
            vars.insert(name.clone(), Var::from_tensor(&var.as_tensor().copy()?)?);
        }
        Ok(ParamStore {
            vars,
            dtype: self.dtype,
            device: self.device.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// `padding` is zero padding applied by the convolution itself.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = store.zeros(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
        )?;
        let bias = store.zeros(format!("{name}.bias"), &[out_channels])?;
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &param(&self.weight), self.stride, self.padding)?;
        let bias = param(&self.bias).reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

/// Transposed convolution; weight layout is `(in, out, k, k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let weight = store.zeros(
            format!("{name}.weight"),
            &[in_channels, out_channels, kernel, kernel],
        )?;
        let bias = store.zeros(format!("{name}.bias"), &[out_channels])?;
        Ok(ConvTranspose2d {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv_transpose2d(
            x,
            &param(&self.weight),
            self.stride,
            self.padding,
            self.output_padding,
        )?;
        let bias = param(&self.bias).reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

/// Zero-padded cross-correlation, lowered to im2col matrix products.
///
/// Same result as `Tensor::conv2d` but with a much cheaper gradient on CPU.
/// The graph keeps only `x` and `weight`; patch matrices are built in
/// bounded row blocks and rebuilt during backward.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let (_, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::Shape(format!("conv weight expects {wc} channels, input has {c}")));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "input {h}x{w} with padding {padding} is smaller than kernel {kh}x{kw}"
        )));
    }
    if !matches!(x.dtype(), DType::F32 | DType::F64) || weight.dtype() != x.dtype() {
        return Err(Error::Shape(format!(
            "conv needs matching f32 or f64 operands, got {:?} and {:?}",
            x.dtype(),
            weight.dtype()
        )));
    }
    Ok(x.contiguous()?.apply_op2(&weight.contiguous()?, LoweredConv { stride, padding })?)
}

struct LoweredConv {
    stride: usize,
    padding: usize,
}

impl candle_core::CustomOp2 for LoweredConv {
    fn name(&self) -> &'static str {
        "lowered-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &candle_core::CpuStorage,
        l1: &candle_core::Layout,
        s2: &candle_core::CpuStorage,
        l2: &candle_core::Layout,
    ) -> candle_core::Result<(candle_core::CpuStorage, candle_core::Shape)> {
        let x = storage_tensor(s1, l1)?;
        let w = storage_tensor(s2, l2)?;
        let y = conv2d_blocked(&x, &w, self.stride, self.padding, PATCH_BUDGET).map_err(candle_core::Error::wrap)?;
        Ok((tensor_storage(&y)?, y.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        // Frozen weights and raw inputs need no gradient.
        let run = || -> Result<(Option<Tensor>, Option<Tensor>)> {
            let (_, _, h, wd) = x.dims4()?;
            let (_, _, kh, kw) = w.dims4()?;
            let gx = match x.track_op() {
                true => Some(input_grad(grad, w, (h, wd), self.stride, self.padding, PATCH_BUDGET)?),
                false => None,
            };
            let gw = match w.track_op() {
                true => Some(weight_grad(x, grad, (kh, kw), self.stride, self.padding, PATCH_BUDGET)?),
                false => None,
            };
            Ok((gx, gw))
        };
        run().map_err(candle_core::Error::wrap)
    }
}

fn storage_tensor(s: &candle_core::CpuStorage, l: &candle_core::Layout) -> candle_core::Result<Tensor> {
    use candle_core::CpuStorage;
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("lowered conv needs contiguous operands".into()))?;
    match s {
        CpuStorage::F32(v) => Tensor::from_slice(&v[start..end], l.shape(), &Device::Cpu),
        CpuStorage::F64(v) => Tensor::from_slice(&v[start..end], l.shape(), &Device::Cpu),
        _ => Err(candle_core::Error::Msg("lowered conv supports f32 and f64 only".into())),
    }
}

fn tensor_storage(t: &Tensor) -> candle_core::Result<candle_core::CpuStorage> {
    use candle_core::CpuStorage;
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => Ok(CpuStorage::F32(flat.to_vec1()?)),
        DType::F64 => Ok(CpuStorage::F64(flat.to_vec1()?)),
        _ => Err(candle_core::Error::Msg("lowered conv supports f32 and f64 only".into())),
    }
}

/// Output rows per block so that one patch matrix of `per_row * rows`
/// elements stays within `budget`.
fn rows_per_block(per_row: usize, rows: usize, budget: usize) -> usize {
    (budget / per_row.max(1)).clamp(1, rows)
}

/// Forward kernel on untracked tensors; `x` is unpadded.
fn conv2d_blocked(x: &Tensor, weight: &Tensor, stride: usize, padding: usize, budget: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (o, _, kh, kw) = weight.dims4()?;
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let step = rows_per_block(b * c * kh * kw * ow, oh, budget);
    let x = x.pad_with_zeros(2, padding, padding)?.pad_with_zeros(3, padding, padding)?;
    let wm = weight.reshape((o, c * kh * kw))?;
    let mut blocks = Vec::with_capacity(oh.div_ceil(step));
    for r0 in (0..oh).step_by(step) {
        let rows = step.min(oh - r0);
        let xs = x.narrow(2, r0 * stride, (rows - 1) * stride + kh)?;
        let patches = im2col(&xs, (kh, kw), (rows, ow), stride)?;
        blocks.push(wm.broadcast_matmul(&patches)?.reshape((b, o, rows, ow))?);
    }
    if blocks.len() == 1 {
        return Ok(blocks.pop().expect("one block"));
    }
    Ok(Tensor::cat(&blocks, 2)?)
}

/// `dL/dW` of a conv from input `x` and output gradient `grad`.
fn weight_grad(
    x: &Tensor,
    grad: &Tensor,
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    budget: usize,
) -> Result<Tensor> {
    let (x, grad) = (x.detach(), grad.detach());
    let (b, c, _, _) = x.dims4()?;
    let (_, o, oh, ow) = grad.dims4()?;
    let step = rows_per_block(b * c * kh * kw * ow, oh, budget);
    let xp = x.pad_with_zeros(2, padding, padding)?.pad_with_zeros(3, padding, padding)?;
    let mut gw = Tensor::zeros((o, c * kh * kw), x.dtype(), x.device())?;
    for r0 in (0..oh).step_by(step) {
        let rows = step.min(oh - r0);
        let xs = xp.narrow(2, r0 * stride, (rows - 1) * stride + kh)?;
        let patches = im2col(&xs, (kh, kw), (rows, ow), stride)?;
        let g = grad.narrow(2, r0, rows)?.reshape((b, o, rows * ow))?;
        gw = (gw + g.matmul(&patches.transpose(1, 2)?)?.sum(0)?)?;
    }
    Ok(gw.reshape((o, c, kh, kw))?)
}

/// `dL/dx` of a conv with an `(h, w)` input: the adjoint map, as `Wᵀ·grad`
/// scattered back onto the padded input.
fn input_grad(
    grad: &Tensor,
    weight: &Tensor,
    (h, w): (usize, usize),
    stride: usize,
    padding: usize,
    budget: usize,
) -> Result<Tensor> {
    let (grad, weight) = (grad.detach(), weight.detach());
    let (b, o, oh, ow) = grad.dims4()?;
    let (_, c, kh, kw) = weight.dims4()?;
    let step = rows_per_block(b * c * kh * kw * ow, oh, budget);
    let wt = weight.reshape((o, c * kh * kw))?.t()?.contiguous()?;
    let mut gx = Col2im::new(grad.dtype(), (b, c, h + 2 * padding, w + 2 * padding), (kh, kw), stride)?;
    for r0 in (0..oh).step_by(step) {
        let rows = step.min(oh - r0);
        let g = grad.narrow(2, r0, rows)?.reshape((b, o, rows * ow))?.contiguous()?;
        gx.add(&wt.broadcast_matmul(&g)?, r0, (rows, ow))?;
    }
    Ok(gx.finish()?.narrow(2, padding, h)?.narrow(3, padding, w)?.contiguous()?)
}

/// Scatter-add accumulator for patch-matrix gradients over a padded input.
enum Col2im {
    F32(Col2imBuf<f32>),
    F64(Col2imBuf<f64>),
}

struct Col2imBuf<T> {
    data: Vec<T>,
    dims: (usize, usize, usize, usize),
    kernel: (usize, usize),
    stride: usize,
}

impl Col2im {
    fn new(
        dtype: DType,
        dims: (usize, usize, usize, usize),
        kernel: (usize, usize),
        stride: usize,
    ) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2 * dims.3;
        match dtype {
            DType::F32 => Ok(Col2im::F32(Col2imBuf { data: vec![0.0; n], dims, kernel, stride })),
            DType::F64 => Ok(Col2im::F64(Col2imBuf { data: vec![0.0; n], dims, kernel, stride })),
            other => Err(Error::Shape(format!("conv gradient supports f32 and f64, got {other:?}"))),
        }
    }

    /// Adds a `(b, c*kh*kw, rows*ow)` block whose first output row is `r0`.
    fn add(&mut self, cols: &Tensor, r0: usize, block: (usize, usize)) -> Result<()> {
        let cols = cols.flatten_all()?;
        match self {
            Col2im::F32(buf) => buf.add(&cols.to_vec1::<f32>()?, r0, block),
            Col2im::F64(buf) => buf.add(&cols.to_vec1::<f64>()?, r0, block),
        }
        Ok(())
    }

    fn finish(self) -> Result<Tensor> {
        Ok(match self {
            Col2im::F32(buf) => Tensor::from_vec(buf.data, buf.dims, &Device::Cpu)?,
            Col2im::F64(buf) => Tensor::from_vec(buf.data, buf.dims, &Device::Cpu)?,
        })
    }
}

impl<T: Copy + std::ops::AddAssign> Col2imBuf<T> {
    fn add(&mut self, cols: &[T], r0: usize, (rows, ow): (usize, usize)) {
        let (b, c, hp, wp) = self.dims;
        let (kh, kw) = self.kernel;
        let s = self.stride;
        let n = rows * ow;
        for bi in 0..b {
            for ci in 0..c {
                let plane = &mut self.data[(bi * c + ci) * hp * wp..][..hp * wp];
                for i in 0..kh {
                    for j in 0..kw {
                        let src = &cols[((bi * c + ci) * kh * kw + i * kw + j) * n..][..n];
                        for r in 0..rows {
                            let dst = &mut plane[((r0 + r) * s + i) * wp + j..];
                            for (q, v) in src[r * ow..(r + 1) * ow].iter().enumerate() {
                                dst[q * s] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Patch matrix elements materialized at once by [`conv2d`].
const PATCH_BUDGET: usize = 8 << 20;

/// `(b, c*kh*kw, oh*ow)` patch matrix of an already padded input.
fn im2col(x: &Tensor, (kh, kw): (usize, usize), (oh, ow): (usize, usize), stride: usize) -> Result<Tensor> {
    let (b, c, _, _) = x.dims4()?;
    if kh == 1 && kw == 1 {
        return Ok(strided(&strided(x, 2, 0, oh, stride)?, 3, 0, ow, stride)?.reshape((b, c, oh * ow))?);
    }
    let mut cols = Vec::with_capacity(kh * kw);
    for i in 0..kh {
        let rows = strided(x, 2, i, oh, stride)?;
        for j in 0..kw {
            cols.push(strided(&rows, 3, j, ow, stride)?);
        }
    }
    Ok(Tensor::stack(&cols, 2)?.reshape((b, c * kh * kw, oh * ow))?)
}

/// Transposed convolution with weight layout `(in, out, k, k)`: the adjoint
/// of [`conv2d`], so it shares that op's kernels and never touches the zeros
/// a dilated input would carry.
pub fn conv_transpose2d(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let (wc, _, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::Shape(format!("transposed conv weight expects {wc} channels, input has {c}")));
    }
    if (output_padding > 0 && output_padding >= stride) || padding * 2 >= (h.min(w) - 1) * stride + kh.min(kw) {
        return Err(Error::Shape(format!(
            "transposed conv with kernel {kh}x{kw}, padding {padding}, output padding {output_padding} is unsupported"
        )));
    }
    if !matches!(x.dtype(), DType::F32 | DType::F64) || weight.dtype() != x.dtype() {
        return Err(Error::Shape(format!(
            "transposed conv needs matching f32 or f64 operands, got {:?} and {:?}",
            x.dtype(),
            weight.dtype()
        )));
    }
    let out = (
        (h - 1) * stride + kh + output_padding - 2 * padding,
        (w - 1) * stride + kw + output_padding - 2 * padding,
    );
    let op = LoweredConvTranspose { stride, padding, out };
    Ok(x.contiguous()?.apply_op2(&weight.contiguous()?, op)?)
}

struct LoweredConvTranspose {
    stride: usize,
    padding: usize,
    out: (usize, usize),
}

impl candle_core::CustomOp2 for LoweredConvTranspose {
    fn name(&self) -> &'static str {
        "lowered-conv-transpose2d"
    }

    fn cpu_fwd(
        &self,
        s1: &candle_core::CpuStorage,
        l1: &candle_core::Layout,
        s2: &candle_core::CpuStorage,
        l2: &candle_core::Layout,
    ) -> candle_core::Result<(candle_core::CpuStorage, candle_core::Shape)> {
        let x = storage_tensor(s1, l1)?;
        let w = storage_tensor(s2, l2)?;
        let y = input_grad(&x, &w, self.out, self.stride, self.padding, PATCH_BUDGET)
            .map_err(candle_core::Error::wrap)?;
        Ok((tensor_storage(&y)?, y.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (_, _, kh, kw) = w.dims4()?;
        let run = || -> Result<(Option<Tensor>, Option<Tensor>)> {
            let gx = match x.track_op() {
                true => Some(conv2d_blocked(&grad.detach(), &w.detach(), self.stride, self.padding, PATCH_BUDGET)?),
                false => None,
            };
            let gw = match w.track_op() {
                true => Some(weight_grad(grad, x, (kh, kw), self.stride, self.padding, PATCH_BUDGET)?),
                false => None,
            };
            Ok((gx, gw))
        };
        run().map_err(candle_core::Error::wrap)
    }
}


/// Per-sample, per-channel normalization without affine parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + INSTANCE_NORM_EPS)?.sqrt()?)?;
    Ok(normed.reshape((b, c, h, w))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    // slope * x + (1 - slope) * relu(x)
    let pos = x.relu()?.affine(1.0 - slope, 0.0)?;
    Ok((x.affine(slope, 0.0)? + pos)?)
}

/// Mirror padding of the two spatial dims, excluding the edge pixel.
pub fn reflection_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if h <= pad || w <= pad {
        return Err(Error::Shape(format!(
            "reflection padding {pad} needs spatial size > {pad}, got {h}x{w}"
        )));
    }
    let x = x.index_select(&reflect_indices(w, pad, x.device())?, 3)?;
    Ok(x.index_select(&reflect_indices(h, pad, x.device())?, 2)?)
}

fn reflect_indices(len: usize, pad: usize, device: &Device) -> Result<Tensor> {
    let mut idx: Vec<u32> = (1..=pad).rev().map(|i| i as u32).collect();
    idx.extend(0..len as u32);
    idx.extend((len - 1 - pad..len - 1).rev().map(|i| i as u32));
    Ok(Tensor::new(idx, device)?)
}

/// Every `stride`-th element of `dim` starting at `offset`, `count` elements.
fn strided(x: &Tensor, dim: usize, offset: usize, count: usize, stride: usize) -> Result<Tensor> {
    let mut t = x.narrow(dim, offset, (count - 1) * stride + 1)?;
    let len = t.dim(dim)?;
    let padded = count * stride;
    if padded > len {
        t = t.pad_with_zeros(dim, 0, padded - len)?;
    }
    let mut shape = t.dims().to_vec();
    shape[dim] = count;
    shape.insert(dim + 1, stride);
    let t = t.reshape(shape)?;
    Ok(t.narrow(dim + 1, 0, 1)?.squeeze(dim + 1)?)
}

/// 3x3 max pooling, stride 2, padding 1, with gradients.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let oh = (h + 2 - 3) / 2 + 1;
    let ow = (w + 2 - 3) / 2 + 1;
    let neg = |shape: (usize, usize, usize, usize)| -> Result<Tensor> {
        Ok(Tensor::full(f32::MIN, shape, x.device())?.to_dtype(x.dtype())?)
    };
    let x = Tensor::cat(&[&neg((b, c, h, 1))?, x, &neg((b, c, h, 1))?], 3)?;
    let x = Tensor::cat(&[&neg((b, c, 1, w + 2))?, &x, &neg((b, c, 1, w + 2))?], 2)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = strided(&x, 2, dy, oh, 2)?;
        for dx in 0..3 {
            let win = strided(&rows, 3, dx, ow, 2)?;
            out = Some(match out {
                None => win,
                Some(acc) => acc.maximum(&win)?,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

/// Convolution with fixed weights and an optional per-channel affine after it.
#[derive(Debug, Clone)]
pub struct FrozenConv {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl FrozenConv {
    pub fn new(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        FrozenConv {
            weight: weight.detach(),
            bias: bias.map(|b| b.detach().reshape((1, (), 1, 1)).expect("1-d bias")),
            stride,
            padding,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Eval-mode batch normalization folded into a per-channel scale and shift.
#[derive(Debug, Clone)]
pub struct FrozenBatchNorm {
    scale: Tensor,
    shift: Tensor,
}

impl FrozenBatchNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(gamma: &Tensor, beta: &Tensor, mean: &Tensor, var: &Tensor) -> Result<Self> {
        let scale = gamma.broadcast_div(&(var + Self::EPS)?.sqrt()?)?;
        let shift = (beta - mean.broadcast_mul(&scale)?)?;
        Ok(FrozenBatchNorm {
            scale: scale.reshape((1, (), 1, 1))?.detach(),
            shift: shift.reshape((1, (), 1, 1))?.detach(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)?)
    }
}
