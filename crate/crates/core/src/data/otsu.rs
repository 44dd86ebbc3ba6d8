use crate::data::image::Image;

pub type Histogram = [u64; 256];

/// Histogram of `round(255 * gray)` over the channel-mean image.
pub fn gray_histogram(image: &Image) -> Histogram {
    let mut hist = [0u64; 256];
    for v in image.to_gray() {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    hist
}

/// Threshold `t` maximizing the between-class variance of `{bin <= t}` versus
/// `{bin > t}`; the lowest such `t` on ties. `None` when no split separates
/// two non-empty classes (fewer than two occupied bins).
///
/// Scores are compared exactly: with `n0`, `n1` the class sizes, `N` the
/// total, `s0` the low-class intensity sum and `s` the overall sum, the
/// between-class variance is proportional to `(N s0 - n0 s)^2 / (n0 n1)`.
pub fn otsu_threshold(hist: &Histogram) -> Option<u8> {
    let n: i128 = hist.iter().map(|&c| c as i128).sum();
    let s: i128 = hist.iter().enumerate().map(|(i, &c)| i as i128 * c as i128).sum();
    let (mut n0, mut s0) = (0i128, 0i128);
    // best score as a fraction num / den
    let mut best: Option<(u8, i128, i128)> = None;
    for (t, &c) in hist.iter().enumerate().take(255) {
        n0 += c as i128;
        s0 += t as i128 * c as i128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = n * s0 - n0 * s;
        let (num, den) = (d * d, n0 * n1);
        if num == 0 {
            continue;
        }
        match best {
            Some((_, bn, bd)) if num * bd <= bn * den => {}
            _ => best = Some((t as u8, num, den)),
        }
    }
    best.map(|(t, _, _)| t)
}

/// One-channel `{0, 1}` mask that is 1 where the gray level exceeds the Otsu
/// threshold. Images with a single gray level give an all-zero mask.
pub fn otsu_binarize(image: &Image) -> Image {
    let hist = gray_histogram(image);
    let t = otsu_threshold(&hist);
    let data = image
        .to_gray()
        .into_iter()
        .map(|v| match t {
            Some(t) if (v.clamp(0.0, 1.0) * 255.0).round() as u8 > t => 1.0,
            _ => 0.0,
        })
        .collect();
    Image::new(1, image.height(), image.width(), data).expect("dims preserved")
}
