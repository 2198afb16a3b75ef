use image::{Rgb, RgbImage};

/// Bilinear resize with half-pixel centres and edge clamping.
///
/// Resizing to the current size returns an identical image.
pub fn resize_bilinear(image: &RgbImage, height: u32, width: u32) -> RgbImage {
    let (w, h) = image.dimensions();
    if (w, h) == (width, height) {
        return image.clone();
    }
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let taps = |dst: u32, scale: f64, n: u32| -> (u32, u32, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as u32;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<(u32, u32, f64)> = (0..width).map(|x| taps(x, sx, w)).collect();
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, h);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let p00 = image.get_pixel(x0, y0).0;
            let p01 = image.get_pixel(x1, y0).0;
            let p10 = image.get_pixel(x0, y1).0;
            let p11 = image.get_pixel(x1, y1).0;
            let px: [u8; 3] = std::array::from_fn(|c| {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
            });
            out.put_pixel(x as u32, y, Rgb(px));
        }
    }
    out
}
