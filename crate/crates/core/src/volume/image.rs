use crate::error::{AsiError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major single-channel 2-D image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height * width != data.len() {
            return Err(AsiError::Shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    /// Counter-clockwise rotation by 90°.
    pub fn rot90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(w, h, |y, x| self.get(x, w - 1 - y))
    }

    /// Sub-image with top-left corner `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(AsiError::Shape(format!(
                "crop {height}x{width}+{y0}+{x0} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |y, x| {
            self.get(y0 + y, x0 + x)
        }))
    }

    /// Zero padding: `top`/`left` rows and columns before, the rest after.
    pub fn pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        let mut out = Self::filled(
            self.height + top + bottom,
            self.width + left + right,
            T::zero(),
        );
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y + top, x + left, self.get(y, x));
            }
        }
        out
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.f64() - b.f64()).powi(2))
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(AsiError::Shape(format!(
                "images differ in size: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Packs images of one size into an `(N, 1, H, W)` tensor.
    pub fn stack(images: &[&Image<T>]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| AsiError::Shape("cannot stack zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            first.check_same(im)?;
            data.extend_from_slice(&im.data);
        }
        Tensor::from_vec([images.len(), 1, first.height, first.width], data)
    }

    /// Splits an `(N, 1, H, W)` tensor into images.
    pub fn unstack(t: &Tensor<T>) -> Vec<Image<T>> {
        let [n, _, h, w] = t.shape();
        (0..n)
            .map(|i| Image {
                height: h,
                width: w,
                data: t.item_slice(i)[..h * w].to_vec(),
            })
            .collect()
    }
}
