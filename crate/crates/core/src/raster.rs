//! Deterministic raster helpers: aspect-preserving fitting, area-averaging
//! resampling and letterboxing onto a white canvas.

use image::{Rgb, RgbImage};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

/// Largest size with the aspect ratio of `width`x`height` that fits inside
/// `max_w`x`max_h`. Never upsamples; each returned side is at least 1.
pub fn fit_within(width: u32, height: u32, max_w: u32, max_h: u32) -> (u32, u32) {
    let (w, h) = (u64::from(width.max(1)), u64::from(height.max(1)));
    let (mw, mh) = (u64::from(max_w.max(1)), u64::from(max_h.max(1)));
    if w <= mw && h <= mh {
        return (w as u32, h as u32);
    }
    // Compare w/mw against h/mh without floating point.
    if w * mh >= h * mw {
        let nh = (h * mw + w / 2) / w;
        (mw as u32, nh.clamp(1, mh) as u32)
    } else {
        let nw = (w * mh + h / 2) / h;
        (nw.clamp(1, mw) as u32, mh as u32)
    }
}

/// Per output coordinate: first source index and the coverage weights of
/// the source pixels it overlaps (weights sum to 1).
fn area_weights(src: u32, dst: u32) -> Vec<(usize, Vec<f64>)> {
    let ratio = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|o| {
            let start = f64::from(o) * ratio;
            let end = (f64::from(o) + 1.0) * ratio;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src as usize).max(first + 1);
            let weights: Vec<f64> = (first..last)
                .map(|s| {
                    let lo = start.max(s as f64);
                    let hi = end.min(s as f64 + 1.0);
                    (hi - lo).max(0.0) / ratio
                })
                .collect();
            (first, weights)
        })
        .collect()
}

/// Resamples by exact area averaging (a separable box filter).
pub fn resize_area(src: &RgbImage, dst_w: u32, dst_h: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (dst_w, dst_h) {
        return src.clone();
    }
    let xw = area_weights(sw, dst_w);
    let yw = area_weights(sh, dst_h);

    // Horizontal pass into a float buffer of dst_w x sh.
    let mut tmp = vec![[0f64; 3]; (dst_w * sh) as usize];
    for y in 0..sh {
        for (ox, (first, weights)) in xw.iter().enumerate() {
            let mut acc = [0f64; 3];
            for (i, wgt) in weights.iter().enumerate() {
                let p = src.get_pixel((first + i) as u32, y).0;
                for c in 0..3 {
                    acc[c] += f64::from(p[c]) * wgt;
                }
            }
            tmp[(y * dst_w) as usize + ox] = acc;
        }
    }

    let mut out = RgbImage::new(dst_w, dst_h);
    for (oy, (first, weights)) in yw.iter().enumerate() {
        for ox in 0..dst_w as usize {
            let mut acc = [0f64; 3];
            for (i, wgt) in weights.iter().enumerate() {
                let p = tmp[(first + i) * dst_w as usize + ox];
                for c in 0..3 {
                    acc[c] += p[c] * wgt;
                }
            }
            let px = acc.map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8);
            out.put_pixel(ox as u32, oy as u32, Rgb(px));
        }
    }
    out
}

/// Scales `src` down (never up) to fit `canvas_w`x`canvas_h` and centres it
/// on a white canvas of exactly that size.
pub fn letterbox(src: &RgbImage, canvas_w: u32, canvas_h: u32) -> RgbImage {
    let (fw, fh) = fit_within(src.width(), src.height(), canvas_w, canvas_h);
    let scaled = resize_area(src, fw, fh);
    let mut canvas = RgbImage::from_pixel(canvas_w, canvas_h, WHITE);
    let ox = (canvas_w - fw) / 2;
    let oy = (canvas_h - fh) / 2;
    image::imageops::replace(&mut canvas, &scaled, i64::from(ox), i64::from(oy));
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_examples() {
        assert_eq!(fit_within(2000, 1500, 1024, 768), (1024, 768));
        assert_eq!(fit_within(800, 600, 1024, 768), (800, 600));
        assert_eq!(fit_within(1024, 768, 256, 256), (256, 192));
        assert_eq!(fit_within(768, 1024, 1024, 768), (576, 768));
    }

    #[test]
    fn uniform_image_stays_uniform() {
        let img = RgbImage::from_pixel(97, 61, Rgb([10, 200, 33]));
        let out = resize_area(&img, 13, 7);
        assert!(out.pixels().all(|p| p.0 == [10, 200, 33]));
    }

    #[test]
    fn two_to_one_averages_pairs() {
        let mut img = RgbImage::new(4, 1);
        for (x, v) in [0u8, 100, 200, 250].iter().enumerate() {
            img.put_pixel(x as u32, 0, Rgb([*v; 3]));
        }
        let out = resize_area(&img, 2, 1);
        assert_eq!(out.get_pixel(0, 0).0, [50; 3]);
        assert_eq!(out.get_pixel(1, 0).0, [225; 3]);
    }

    #[test]
    fn letterbox_centres() {
        let img = RgbImage::from_pixel(1024, 768, BLACK);
        let out = letterbox(&img, 256, 256);
        assert_eq!(out.dimensions(), (256, 256));
        assert_eq!(out.get_pixel(128, 10).0, [255; 3]);
        assert_eq!(out.get_pixel(128, 128).0, [0; 3]);
        assert_eq!(out.get_pixel(128, 32).0, [0; 3]);
        assert_eq!(out.get_pixel(128, 31).0, [255; 3]);
    }

    proptest! {
        #[test]
        fn fit_never_upsamples(w in 1u32..5000, h in 1u32..5000, mw in 1u32..2000, mh in 1u32..2000) {
            let (fw, fh) = fit_within(w, h, mw, mh);
            prop_assert!(fw <= w && fh <= h);
            prop_assert!(fw <= mw && fh <= mh);
            prop_assert!(fw >= 1 && fh >= 1);
        }
    }
}
