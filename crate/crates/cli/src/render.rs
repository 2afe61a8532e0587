use std::path::Path;

use anyhow::{Context, Result};

const BASE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// Class colours: 0 is black, classes beyond the fixed table get evenly
/// stepped hues at alternating brightness.
pub fn color(class: usize) -> [u8; 3] {
    if class == 0 {
        return [0, 0, 0];
    }
    if class <= BASE.len() {
        return BASE[class - 1];
    }
    let i = class - BASE.len() - 1;
    let hue = (i as f64 * 137.507_764) % 360.0;
    let value = [0.9, 0.65, 0.45][i % 3];
    hsv(hue, 0.8, value)
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Binary PPM of row-major class ids.
pub fn ppm(classes: &[usize], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(classes.len() * 3);
    for &c in classes {
        out.extend_from_slice(&color(c));
    }
    out
}

/// Two maps of equal size placed left and right.
pub fn side_by_side(left: &[usize], right: &[usize], height: usize, width: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * left.len());
    for r in 0..height {
        out.extend_from_slice(&left[r * width..(r + 1) * width]);
        out.extend_from_slice(&right[r * width..(r + 1) * width]);
    }
    out
}

pub fn write_ppm(path: &Path, classes: &[usize], height: usize, width: usize) -> Result<()> {
    std::fs::write(path, ppm(classes, height, width))
        .with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn palette_distinct_and_black_background() {
        assert_eq!(color(0), [0, 0, 0]);
        let colors: HashSet<[u8; 3]> = (0..=64).map(color).collect();
        assert_eq!(colors.len(), 65);
    }

    #[test]
    fn ppm_layout() {
        let img = ppm(&[1, 0, 2, 0, 0, 1], 2, 3);
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 18);
        assert_eq!(&img[header.len()..header.len() + 3], &color(1));
        assert_eq!(side_by_side(&[1, 2], &[3, 4], 1, 2), vec![1, 2, 3, 4]);
    }
}
