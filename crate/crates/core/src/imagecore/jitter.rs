use super::RasterImage;

/// ITU-R BT.601 luma of an RGB triple.
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    if s == 0.0 {
        return [v, v, v];
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Colour jitter applied as brightness, contrast, saturation, then hue.
///
/// `brightness`, `contrast` and `saturation` are blend factors (1 is identity):
/// brightness scales every sample, contrast blends toward the mean luma of the
/// whole image, saturation blends toward each pixel's luma. `hue` is a rotation
/// in turns. Each stage clamps to `[0, 255]`; the final write rounds half away
/// from zero. Identity factors skip their stage.
pub fn color_jitter(img: &RasterImage, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> RasterImage {
    assert!(
        brightness > 0.0 && contrast > 0.0 && saturation > 0.0,
        "jitter factors must be positive"
    );
    assert!(hue.abs() <= 0.5, "hue shift limited to half a turn");
    let mut px: Vec<[f32; 3]> = img
        .data()
        .chunks_exact(3)
        .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
        .collect();
    let clamp = |v: f32| v.clamp(0.0, 255.0);

    if brightness != 1.0 {
        let b = brightness as f32;
        for p in &mut px {
            *p = p.map(|v| clamp(v * b));
        }
    }
    if contrast != 1.0 {
        let c = contrast as f32;
        let mean = (px.iter().map(|p| luma(p[0], p[1], p[2]) as f64).sum::<f64>() / px.len() as f64) as f32;
        for p in &mut px {
            *p = p.map(|v| clamp(mean + c * (v - mean)));
        }
    }
    if saturation != 1.0 {
        let s = saturation as f32;
        for p in &mut px {
            let gray = luma(p[0], p[1], p[2]);
            *p = p.map(|v| clamp(gray + s * (v - gray)));
        }
    }
    if hue != 0.0 {
        let shift = hue as f32;
        for p in &mut px {
            let [h, s, v] = rgb_to_hsv(p.map(|x| x / 255.0));
            if s > 0.0 {
                *p = hsv_to_rgb([h + shift, s, v]).map(|x| clamp(x * 255.0));
            }
        }
    }

    let data = px
        .iter()
        .flat_map(|p| p.map(|v| v.round() as u8))
        .collect();
    RasterImage::new(img.width(), img.height(), data).expect("jitter keeps shape")
}
