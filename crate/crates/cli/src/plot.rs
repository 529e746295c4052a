//! Minimal raster line plots; the PNG encoder settings are pinned, so equal
//! inputs give equal bytes.

use doorns::imageio::Image;

pub const PALETTE: [([f32; 3], &str); 6] = [
    ([0.12, 0.47, 0.71], "blue"),
    ([1.00, 0.50, 0.05], "orange"),
    ([0.17, 0.63, 0.17], "green"),
    ([0.84, 0.15, 0.16], "red"),
    ([0.58, 0.40, 0.74], "purple"),
    ([0.55, 0.34, 0.29], "brown"),
];

const WIDTH: usize = 480;
const HEIGHT: usize = 320;
const MARGIN: usize = 24;

pub struct Series<'a> {
    pub ys: &'a [f64],
    pub color: [f32; 3],
}

fn put(img: &mut Image, x: i64, y: i64, rgb: [f32; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
        img.set_rgb(y as usize, x as usize, rgb);
    }
}

fn line(img: &mut Image, (x0, y0): (f64, f64), (x1, y1): (f64, f64), rgb: [f32; 3], dashed: bool) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        if dashed && (k / 4) % 2 == 1 {
            continue;
        }
        let t = k as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        put(img, x.round() as i64, y.round() as i64, rgb);
        if !dashed {
            put(img, x.round() as i64, y.round() as i64 + 1, rgb);
        }
    }
}

/// Recall-style plot: x runs over `1..=n`, y over `[0, 1]`; the dashed
/// diagonal is the expectation under a uniformly random ranking.
pub fn recall_plot(series: &[Series<'_>]) -> Image {
    let mut img = Image::filled(HEIGHT, WIDTH, [1.0; 3]);
    let (x0, x1) = (MARGIN as f64, (WIDTH - MARGIN) as f64);
    let (y0, y1) = ((HEIGHT - MARGIN) as f64, MARGIN as f64);
    let n = series.iter().map(|s| s.ys.len()).max().unwrap_or(1).max(2);
    let px = |i: usize| x0 + (x1 - x0) * i as f64 / (n - 1) as f64;
    let py = |v: f64| y0 + (y1 - y0) * v.clamp(0.0, 1.0);
    let grid = [0.85; 3];
    for q in 1..=4 {
        let y = py(q as f64 / 4.0);
        line(&mut img, (x0, y), (x1, y), grid, true);
    }
    line(
        &mut img,
        (px(0), py(1.0 / n as f64)),
        (px(n - 1), py(1.0)),
        [0.5; 3],
        true,
    );
    line(&mut img, (x0, y0), (x1, y0), [0.0; 3], false);
    line(&mut img, (x0, y0), (x0, y1), [0.0; 3], false);
    for s in series {
        for (i, w) in s.ys.windows(2).enumerate() {
            line(
                &mut img,
                (px(i), py(w[0])),
                (px(i + 1), py(w[1])),
                s.color,
                false,
            );
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_land_inside_the_frame() {
        let ys = [0.0, 0.5, 1.0];
        let img = recall_plot(&[Series {
            ys: &ys,
            color: [1.0, 0.0, 0.0],
        }]);
        assert_eq!((img.height, img.width), (HEIGHT, WIDTH));
        let red = (0..HEIGHT)
            .flat_map(|r| (0..WIDTH).map(move |c| (r, c)))
            .filter(|&(r, c)| img.rgb(r, c) == [1.0, 0.0, 0.0])
            .count();
        assert!(red > WIDTH / 2);
    }
}
