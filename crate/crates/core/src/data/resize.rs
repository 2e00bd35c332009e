use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source coordinate and interpolation weight for one output index
/// (half-pixel centres, "align corners = false").
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize of a `[C,H,W]` image to `[C,height,width]`.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {height}x{width}"
        )));
    }
    let (c, h, w) = img.chw()?;
    let rows: Vec<_> = (0..height).map(|y| source_coord(y, h, height)).collect();
    let cols: Vec<_> = (0..width).map(|x| source_coord(x, w, width)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, ly) in &rows {
            let ly = T::from_f64_lossy(ly);
            for &(x0, x1, lx) in &cols {
                let lx = T::from_f64_lossy(lx);
                let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                let (cc, d) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                // Lerp form keeps constant regions exactly constant.
                let top = a + lx * (b - a);
                let bottom = cc + lx * (d - cc);
                out.push(top + ly * (bottom - top));
            }
        }
    }
    Tensor::new(vec![c, height, width], out)
}
