use super::Vec3;

/// Hexcone RGB → HSV with all three channels in `[0, 1]`; hue in `[0, 1)`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let h6 = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = h6 / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, s, v]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Signed circular hue difference `a - b` wrapped into `[-0.5, 0.5)`.
pub fn wrap_hue_difference(a: f64, b: f64) -> f64 {
    (a - b + 0.5).rem_euclid(1.0) - 0.5
}

/// Circular mean of hues weighted by `weights`; `None` when the resultant vanishes.
pub fn circular_hue_mean(hues: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let mut acc = Vec3::zeros();
    for (h, w) in hues {
        let a = h * std::f64::consts::TAU;
        acc.x += w * a.cos();
        acc.y += w * a.sin();
    }
    if acc.x.hypot(acc.y) < 1e-12 {
        return None;
    }
    let mut h = acc.y.atan2(acc.x) / std::f64::consts::TAU;
    h = h.rem_euclid(1.0);
    if h >= 1.0 {
        h = 0.0;
    }
    Some(h)
}
