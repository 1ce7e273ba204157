//! Minimal grayscale raster plots written as binary PGM.

use skanet::metrics::ConfusionMatrix;

/// Row-normalized confusion heat map, `cell` pixels per entry. Darker is
/// more frequent.
pub fn confusion_pgm(cm: &ConfusionMatrix, cell: usize) -> Vec<u8> {
    let k = cm.classes();
    let side = k * cell;
    let mut pixels = vec![255u8; side * side];
    for t in 0..k {
        let row: u64 = (0..k).map(|p| cm.get(t, p)).sum();
        for p in 0..k {
            let frac = if row == 0 { 0.0 } else { cm.get(t, p) as f64 / row as f64 };
            let v = (255.0 * (1.0 - frac)).round() as u8;
            for y in t * cell..(t + 1) * cell {
                pixels[y * side + p * cell..y * side + (p + 1) * cell].fill(v);
            }
        }
    }
    pgm(side, side, &pixels)
}

/// Accuracy-versus-JNR bars, one `bar`-pixel column per level, 100 rows
/// for 0..100 %.
pub fn accuracy_bars_pgm(accuracy_percent: &[f64], bar: usize) -> Vec<u8> {
    let (w, h) = (accuracy_percent.len() * bar, 101);
    let mut pixels = vec![255u8; w * h];
    for (i, a) in accuracy_percent.iter().enumerate() {
        let top = h - 1 - a.clamp(0.0, 100.0).round() as usize;
        for y in top..h {
            // one-pixel gap between bars
            pixels[y * w + i * bar..y * w + (i + 1) * bar - usize::from(bar > 1)].fill(0);
        }
    }
    pgm(w, h, &pixels)
}

fn pgm(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}
