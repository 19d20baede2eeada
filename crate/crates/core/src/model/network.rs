use super::ModelParams;
use crate::error::{AsiError, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, BnMode, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the batch-norm mode and the batch statistics gathered
/// in training mode.
#[derive(Debug)]
pub struct ForwardCtx<T> {
    pub mode: Mode,
    pub stats: Vec<(String, BatchStats<T>)>,
}

impl<T> ForwardCtx<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            stats: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }
}

/// Encoder/decoder pair recorded on a graph.
pub trait Autoencoder<T: Scalar> {
    fn encode(&self, g: &mut Graph<T>, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var>;
    fn decode(&self, g: &mut Graph<T>, z: Var, ctx: &mut ForwardCtx<T>) -> Result<Var>;
}

impl<T: Scalar> ModelParams<T> {
    fn conv(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let w = g.param(
            &format!("{name}.weight"),
            self.param(&format!("{name}.weight"))?,
        );
        let b = g.param(
            &format!("{name}.bias"),
            self.param(&format!("{name}.bias"))?,
        );
        g.conv2d(x, w, Some(b))
    }

    fn conv_leaky(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let y = self.conv(g, name, x)?;
        Ok(g.leaky_relu(y, T::c(self.config.leaky_slope)))
    }

    fn bn(&self, g: &mut Graph<T>, name: &str, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let gamma = g.param(
            &format!("{name}.gamma"),
            self.param(&format!("{name}.gamma"))?,
        );
        let beta = g.param(
            &format!("{name}.beta"),
            self.param(&format!("{name}.beta"))?,
        );
        let eps = T::c(self.config.bn_eps);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm(x, gamma, beta, BnMode::Train { eps })?;
                if let Some(s) = stats {
                    ctx.stats.push((name.to_owned(), s));
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.buffer(&format!("{name}.running_mean"))?.data();
                let var = self.buffer(&format!("{name}.running_var"))?.data();
                Ok(
                    g.batch_norm(x, gamma, beta, BnMode::Eval { mean, var, eps })?
                        .0,
                )
            }
        }
    }

    fn check_input(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.value(x).shape();
        if s[1] != self.config.input_channels {
            return Err(AsiError::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels, s[1]
            )));
        }
        self.config.latent_shape(s[2], s[3]).map(|_| ())
    }
}

impl<T: Scalar> Autoencoder<T> for ModelParams<T> {
    fn encode(&self, g: &mut Graph<T>, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        self.check_input(g, x)?;
        let h = self.conv_leaky(g, "enc.block1.conv0", x)?;
        let h = self.conv_leaky(g, "enc.block1.conv1", h)?;
        let h = self.bn(g, "enc.block1.bn", h, ctx)?;
        let h = g.avg_pool2(h)?;
        let h = self.conv_leaky(g, "enc.block2.conv0", h)?;
        let h = self.conv_leaky(g, "enc.block2.conv1", h)?;
        let h = self.bn(g, "enc.block2.bn", h, ctx)?;
        let h = g.avg_pool2(h)?;
        let h = self.conv_leaky(g, "enc.head.conv0", h)?;
        // latent layer: no nonlinearity, no batch norm
        self.conv(g, "enc.latent", h)
    }

    fn decode(&self, g: &mut Graph<T>, z: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let h = self.conv_leaky(g, "dec.block1.conv0", z)?;
        let h = self.conv_leaky(g, "dec.block1.conv1", h)?;
        let h = self.bn(g, "dec.block1.bn", h, ctx)?;
        let h = g.upsample_nearest2(h);
        let h = self.conv_leaky(g, "dec.block2.conv0", h)?;
        let h = self.conv_leaky(g, "dec.block2.conv1", h)?;
        let h = self.bn(g, "dec.block2.bn", h, ctx)?;
        let h = g.upsample_nearest2(h);
        let h = self.conv_leaky(g, "dec.head.conv0", h)?;
        let h = self.conv(g, "dec.out", h)?;
        Ok(g.sigmoid(h))
    }
}

/// Latent tensor of one slice, `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(AsiError::Shape(format!(
                "latent shape {shape:?} vs {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: [usize; 3], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        let [c, h, w] = self.shape;
        Tensor::from_vec([1, c, h, w], self.data.clone()).expect("consistent shape")
    }

    /// Splits a batched `(N, C, H, W)` tensor into one code per item.
    pub fn split_batch(t: &Tensor<T>) -> Vec<Self> {
        let [n, c, h, w] = t.shape();
        (0..n)
            .map(|i| Self {
                shape: [c, h, w],
                data: t.item_slice(i).to_vec(),
            })
            .collect()
    }

    pub fn stack(codes: &[Self]) -> Result<Tensor<T>> {
        let tensors: Vec<Tensor<T>> = codes.iter().map(Self::to_tensor).collect();
        Tensor::concat_batch(&tensors.iter().collect::<Vec<_>>())
    }
}

fn finite<T: Scalar>(t: Tensor<T>, what: &str) -> Result<Tensor<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(AsiError::NonFinite(format!("{what} produced NaN/inf")))
    }
}

/// Eval-mode encoding of every item in an `(N, 1, H, W)` batch.
pub fn encode<T: Scalar, M: Autoencoder<T>>(
    model: &M,
    x: &Tensor<T>,
) -> Result<Vec<LatentCode<T>>> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let z = model.encode(&mut g, xv, &mut ForwardCtx::eval())?;
    let z = finite(g.value(z).clone(), "encoder")?;
    Ok(LatentCode::split_batch(&z))
}

/// Eval-mode decoding of a list of codes into an `(N, 1, H, W)` batch.
pub fn decode<T: Scalar, M: Autoencoder<T>>(
    model: &M,
    codes: &[LatentCode<T>],
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let zv = g.input(LatentCode::stack(codes)?);
    let y = model.decode(&mut g, zv, &mut ForwardCtx::eval())?;
    finite(g.value(y).clone(), "decoder")
}

/// Eval-mode `decode(encode(x))`.
pub fn reconstruct<T: Scalar, M: Autoencoder<T>>(model: &M, x: &Tensor<T>) -> Result<Tensor<T>> {
    decode(model, &encode(model, x)?)
}
