use super::{ImageError, RasterImage, Tensor3};

/// Source coordinate for output index `dst` under half-pixel-centre alignment,
/// clamped to the valid sample range.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear resize with half-pixel-centre sampling and edge clamping.
///
/// Weights along each axis sum to one, so a constant image stays constant and a
/// same-size resize copies the input unchanged.
pub fn resize_bilinear(img: &RasterImage, width: usize, height: usize) -> RasterImage {
    assert!(width > 0 && height > 0, "target dimensions must be positive");
    if width == img.width() && height == img.height() {
        return img.clone();
    }
    let xs: Vec<_> = (0..width).map(|x| source_coord(x, img.width(), width)).collect();
    let ys: Vec<_> = (0..height).map(|y| source_coord(y, img.height(), height)).collect();
    let src = img.data();
    let row = img.width() * 3;
    let mut out = Vec::with_capacity(width * height * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |y: usize, x: usize| src[y * row + x * 3 + c] as f32;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::new(width, height, out).expect("resize produces consistent buffer")
}

/// Byte image to CHW float tensor with every sample divided by 255.
pub fn to_unit_tensor(img: &RasterImage) -> Tensor3 {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor3::new(3, h, w, data).expect("unit tensor has consistent shape")
}

/// Per-channel `(x - mean) / std`.
pub fn normalize_channels(t: &Tensor3, mean: [f32; 3], std: [f32; 3]) -> Result<Tensor3, ImageError> {
    if let Some(c) = std.iter().position(|&s| s == 0.0) {
        return Err(ImageError::ZeroStd(c));
    }
    assert_eq!(t.channels(), 3, "channel normalisation expects 3 channels");
    let n = t.height() * t.width();
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / n;
            (v - mean[c]) / std[c]
        })
        .collect();
    Tensor3::new(3, t.height(), t.width(), data)
}

/// Mirrors every channel left to right.
pub fn horizontal_flip(t: &Tensor3) -> Tensor3 {
    let w = t.width();
    let mut data = t.data().to_vec();
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
    Tensor3::new(t.channels(), t.height(), w, data).expect("flip keeps shape")
}

/// Rotates about the image centre by `angle_deg` (positive is counter-clockwise
/// as displayed, y pointing down). Inverse-mapped bilinear sampling; samples
/// falling outside the source read as 0.
pub fn rotate(t: &Tensor3, angle_deg: f64) -> Tensor3 {
    assert!(angle_deg.abs() <= 45.0, "rotation limited to +/-45 degrees");
    if angle_deg == 0.0 {
        return t.clone();
    }
    let (h, w) = (t.height(), t.width());
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Tensor3::zeros(t.channels(), h, w);
    let n = h * w;
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for c in 0..t.channels() {
                let plane = t.plane(c);
                let mut acc = 0.0f32;
                for &(tx, ty, wt) in &taps {
                    if wt != 0.0 && tx >= 0.0 && ty >= 0.0 && (tx as usize) < w && (ty as usize) < h {
                        acc += wt * plane[ty as usize * w + tx as usize];
                    }
                }
                out.data_mut()[c * n + y * w + x] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{IMAGENET_MEAN, IMAGENET_STD};
    use super::*;

    /// Direct bilinear formula, written independently of the implementation
    /// (per-pixel interpolation on a 1-row image).
    fn bilinear_row_oracle(src: &[f64], dst_len: usize) -> Vec<f64> {
        let n = src.len() as f64;
        (0..dst_len)
            .map(|j| {
                let pos = ((j as f64 + 0.5) * n / dst_len as f64 - 0.5).max(0.0).min(n - 1.0);
                let lo = pos.floor();
                let hi = (lo + 1.0).min(n - 1.0);
                let t = pos - lo;
                src[lo as usize] * (1.0 - t) + src[hi as usize] * t
            })
            .collect()
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = RasterImage::from_fn(7, 5, |x, y| [(x * 30) as u8, (y * 40) as u8, (x * y) as u8]);
        assert_eq!(resize_bilinear(&img, 7, 5), img);
    }

    #[test]
    fn resize_preserves_constant() {
        let img = RasterImage::filled(4, 4, [128, 128, 128]);
        let out = resize_bilinear(&img, 224, 224);
        assert_eq!((out.width(), out.height()), (224, 224));
        assert!(out.data().iter().all(|&v| v == 128));
    }

    #[test]
    fn resize_matches_bilinear_oracle() {
        let img = RasterImage::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let out = resize_bilinear(&img, 4, 1);
        let oracle = bilinear_row_oracle(&[0.0, 255.0], 4);
        for (x, expect) in oracle.iter().enumerate() {
            let got = out.pixel(x, 0)[0] as f64;
            assert!((got - expect).abs() <= 1.0, "x={x}: {got} vs {expect}");
        }
    }

    #[test]
    fn unit_tensor_values() {
        let img = RasterImage::new(3, 1, vec![255, 0, 128, 0, 0, 0, 0, 0, 0]).unwrap();
        let t = to_unit_tensor(&img);
        assert_eq!(t.at(0, 0, 0), 1.0);
        assert_eq!(t.at(1, 0, 0), 0.0);
        assert!((t.at(2, 0, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn normalize_with_imagenet_constants() {
        let t = Tensor3::new(3, 1, 1, vec![0.485, 0.5, 1.0]).unwrap();
        let out = normalize_channels(&t, IMAGENET_MEAN, IMAGENET_STD).unwrap();
        assert!(out.at(0, 0, 0).abs() < 1e-7);
        assert!((out.at(2, 0, 0) - 2.64).abs() < 1e-6);
    }

    #[test]
    fn normalize_identity_and_zero_std() {
        let t = Tensor3::new(3, 1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(normalize_channels(&t, [0.0; 3], [1.0; 3]).unwrap(), t);
        assert!(matches!(
            normalize_channels(&t, [0.0; 3], [1.0, 0.0, 1.0]),
            Err(ImageError::ZeroStd(1))
        ));
    }

    #[test]
    fn normalized_unit_range_bounds() {
        for c in 0..3 {
            let lo = (0.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            let hi = (1.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            assert!(lo >= -2.2 && hi <= 2.7, "channel {c}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn flip_two_columns() {
        let t = Tensor3::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(horizontal_flip(&t).data(), &[2.0, 1.0]);
    }

    #[test]
    fn flip_symmetric_image_unchanged() {
        let t = Tensor3::new(1, 2, 3, vec![1.0, 5.0, 1.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(horizontal_flip(&t), t);
    }

    #[test]
    fn rotate_zero_is_identity() {
        let t = Tensor3::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(rotate(&t, 0.0), t);
    }

    #[test]
    fn rotate_constant_interior_unchanged() {
        let t = Tensor3::new(1, 21, 21, vec![0.7; 441]).unwrap();
        let out = rotate(&t, 10.0);
        for y in 4..17 {
            for x in 4..17 {
                assert!((out.at(0, y, x) - 0.7).abs() < 1e-6);
            }
        }
        // corners fall outside the source and take the fill value
        assert!(out.at(0, 0, 0) < 0.7);
    }

    #[test]
    fn rotate_moves_bright_pixel_to_rotated_coordinate() {
        let (h, w) = (31, 41);
        let (r, c) = (8usize, 30usize);
        let mut data = vec![0.0; h * w];
        data[r * w + c] = 1.0;
        let t = Tensor3::new(1, h, w, data).unwrap();
        let angle: f64 = 10.0;
        let out = rotate(&t, angle);
        let (best, _) = out
            .data()
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let (by, bx) = ((best / w) as f64, (best % w) as f64);
        // forward rotation of the point, counter-clockwise with y down
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let th = angle.to_radians();
        let (dx, dy) = (c as f64 - cx, r as f64 - cy);
        let ex = cx + th.cos() * dx + th.sin() * dy;
        let ey = cy - th.sin() * dx + th.cos() * dy;
        assert!((bx - ex).abs() <= 1.0 && (by - ey).abs() <= 1.0, "({bx},{by}) vs ({ex},{ey})");
    }
}
