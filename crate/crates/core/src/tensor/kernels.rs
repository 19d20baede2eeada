//! Dense loops behind the differentiable ops.

use super::Tensor;
use crate::scalar::Scalar;

const TAPS: usize = 9;

/// Unfolds one `(C, H, W)` item into a `(C·9, H·W)` matrix for a 3×3,
/// stride 1, zero-pad 1 cross-correlation.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * TAPS + ky * 3 + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    // ix = ox + kx - 1
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back into an item.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * TAPS + ky * 3 + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[oy * w..(oy + 1) * w];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn conv3x3_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let [n, c_in, h, w] = x.shape();
    let c_out = weight.shape()[0];
    let hw = h * w;
    let k = c_in * TAPS;
    let mut out = Tensor::zeros([n, c_out, h, w]);
    let mut col = vec![T::zero(); k * hw];
    for item in 0..n {
        im2col(x.item_slice(item), c_in, h, w, &mut col);
        let dst = &mut out.data_mut()[item * c_out * hw..(item + 1) * c_out * hw];
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        T::gemm(
            c_out,
            k,
            hw,
            T::one(),
            weight.data(),
            (k as isize, 1),
            &col,
            (hw as isize, 1),
            T::one(),
            dst,
            (hw as isize, 1),
        );
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `want_dx` is false.
pub(super) fn conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    want_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, c_in, h, w] = x.shape();
    let c_out = weight.shape()[0];
    let hw = h * w;
    let k = c_in * TAPS;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([1, c_out, 1, 1]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = vec![T::zero(); k * hw];
    let mut dcol = vec![T::zero(); k * hw];
    for item in 0..n {
        let g = dout.item_slice(item);
        for (co, chunk) in g.chunks(hw).enumerate() {
            let s: T = chunk.iter().copied().sum();
            db.data_mut()[co] = db.data()[co] + s;
        }
        im2col(x.item_slice(item), c_in, h, w, &mut col);
        // dW += dOut (c_out × hw) · colᵀ (hw × k)
        T::gemm(
            c_out,
            hw,
            k,
            T::one(),
            g,
            (hw as isize, 1),
            &col,
            (1, hw as isize),
            T::one(),
            dw.data_mut(),
            (k as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ (k × c_out) · dOut (c_out × hw)
            T::gemm(
                k,
                c_out,
                hw,
                T::one(),
                weight.data(),
                (1, k as isize),
                g,
                (hw as isize, 1),
                T::zero(),
                &mut dcol,
                (hw as isize, 1),
            );
            let per = c_in * hw;
            col2im(
                &dcol,
                c_in,
                h,
                w,
                &mut dx.data_mut()[item * per..(item + 1) * per],
            );
        }
    }
    (dx, dw, db)
}

pub(super) fn avg_pool2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::c(0.25);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = base + 2 * oy * w + 2 * ox;
                dst[oy * ow + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(super) fn avg_pool2_backward<T: Scalar>(dout: &Tensor<T>, in_shape: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = in_shape;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::c(0.25);
    let mut dx = Tensor::zeros(in_shape);
    let g = dout.data();
    for (plane, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = g[plane * oh * ow + (y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    dx
}

pub(super) fn upsample2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[plane * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub(super) fn upsample2_backward<T: Scalar>(dout: &Tensor<T>, in_shape: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = in_shape;
    let ow = 2 * w;
    let mut dx = Tensor::zeros(in_shape);
    let g = dout.data();
    for (plane, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let base = plane * 4 * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + 2 * y * ow + 2 * x;
                dst[y * w + x] = g[i] + g[i + 1] + g[i + ow] + g[i + ow + 1];
            }
        }
    }
    dx
}

/// Separable "valid" correlation of every plane with `kernel ⊗ kernel`.
pub(super) fn sep_filter_valid<T: Scalar>(x: &Tensor<T>, kernel: &[T]) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut tmp = vec![T::zero(); h * ow];
    for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for ox in 0..ow {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc = acc + kv * src[y * w + ox + t];
                }
                tmp[y * ow + ox] = acc;
            }
        }
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc = acc + kv * tmp[(oy + t) * ow + ox];
                }
                dst[oy * ow + ox] = acc;
            }
        }
    }
    out
}

pub(super) fn sep_filter_valid_backward<T: Scalar>(
    dout: &Tensor<T>,
    kernel: &[T],
    in_shape: [usize; 4],
) -> Tensor<T> {
    let [_, _, h, w] = in_shape;
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut dx = Tensor::zeros(in_shape);
    let mut tmp = vec![T::zero(); h * ow];
    for (plane, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let g = &dout.data()[plane * oh * ow..(plane + 1) * oh * ow];
        tmp.fill(T::zero());
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[oy * ow + ox];
                for (t, &kv) in kernel.iter().enumerate() {
                    tmp[(oy + t) * ow + ox] = tmp[(oy + t) * ow + ox] + kv * gv;
                }
            }
        }
        for y in 0..h {
            for ox in 0..ow {
                let gv = tmp[y * ow + ox];
                for (t, &kv) in kernel.iter().enumerate() {
                    dst[y * w + ox + t] = dst[y * w + ox + t] + kv * gv;
                }
            }
        }
    }
    dx
}
