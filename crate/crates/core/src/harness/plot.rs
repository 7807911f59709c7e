//! PNG rendering of predictions in the input / truth / prediction / error
//! layout: one image per sample, row and output channel.
//!
//! 2-D fields are rasterized by nearest node, with pixels far from every
//! node left white so holes and irregular outlines show. 1-D rollouts are
//! drawn as space-time images (time down, space across).

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

use super::evaluate::SamplePrediction;

const SIZE: u32 = 160;

/// Approximate viridis, five anchors.
const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn color(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (VIRIDIS[i][k] * (1.0 - f) + VIRIDIS[i + 1][k] * f).round() as u8)
        .collect();
    Rgb([c[0], c[1], c[2]])
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-14 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Nearest-node raster of a scattered 2-D field.
pub fn raster_scattered(coords: &Mat, values: &[f64], (lo, hi): (f64, f64)) -> RgbImage {
    let n = coords.nrows();
    let (x0, x1) = range(coords.column(0).iter().copied());
    let (y0, y1) = range(coords.column(1).iter().copied());
    let span = (x1 - x0).max(y1 - y0);
    let w = ((x1 - x0) / span * SIZE as f64).round().max(1.0) as u32;
    let h = ((y1 - y0) / span * SIZE as f64).round().max(1.0) as u32;
    // Pixels farther than this from every node are outside the domain.
    let spacing = span / (n as f64).sqrt().max(1.0);
    let cutoff2 = (1.5 * spacing).powi(2);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for py in 0..h {
        let y = y1 - (py as f64 + 0.5) / h as f64 * (y1 - y0);
        for px in 0..w {
            let x = x0 + (px as f64 + 0.5) / w as f64 * (x1 - x0);
            let (best, d2) = (0..n)
                .map(|i| (i, (coords[[i, 0]] - x).powi(2) + (coords[[i, 1]] - y).powi(2)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            if d2 <= cutoff2 {
                img.put_pixel(px, py, color((values[best] - lo) / (hi - lo)));
            }
        }
    }
    img
}

/// Image of a `rows × cols` array, each cell scaled to whole pixels.
pub fn raster_grid(values: &Mat, (lo, hi): (f64, f64)) -> RgbImage {
    let (r, c) = values.dim();
    let sx = (SIZE as usize / c.max(1)).max(1) as u32;
    let sy = (SIZE as usize / r.max(1)).max(1) as u32;
    RgbImage::from_fn(c as u32 * sx, r as u32 * sy, |px, py| {
        color((values[[(py / sy) as usize, (px / sx) as usize]] - lo) / (hi - lo))
    })
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// One image per sample, row (`input`, `truth`, `prediction`, `error`) and
/// channel, named `{problem}_{sample}_{row}.png` (channel suffix `_c{j}` for
/// multi-channel fields). Returns the written paths.
pub fn plot_predictions(
    problem: &str,
    time_dependent: bool,
    samples: &[SamplePrediction],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let dim = s.coords.ncols();
        let channels = s.prediction[0].ncols();
        // Stationary and 2-D rollouts show the last state; 1-D rollouts the
        // whole space-time field.
        let spacetime = time_dependent && dim == 1;
        let field = |states: &[Mat], c: usize| -> Mat {
            if spacetime {
                let n = states[0].nrows();
                Mat::from_shape_fn((states.len(), n), |(t, j)| states[t][[j, c]])
            } else {
                let last = states.last().expect("non-empty");
                Mat::from_shape_fn((last.nrows(), 1), |(j, _)| last[[j, c]])
            }
        };
        let mut order: Vec<usize> = (0..s.coords.nrows()).collect();
        if dim == 1 {
            order.sort_by(|&a, &b| s.coords[[a, 0]].total_cmp(&s.coords[[b, 0]]));
        }
        let draw = |m: &Mat, r: (f64, f64)| -> RgbImage {
            if dim == 2 {
                raster_scattered(&s.coords, m.as_slice().expect("standard layout"), r)
            } else {
                let rows = if m.ncols() == 1 { m.t().to_owned() } else { m.clone() };
                let sorted = Mat::from_shape_fn(rows.dim(), |(t, j)| rows[[t, order[j]]]);
                raster_grid(&sorted, r)
            }
        };
        for c in 0..channels {
            let suffix = if channels > 1 { format!("_c{c}") } else { String::new() };
            let mut emit = |row: &str, m: &Mat, r: (f64, f64)| -> Result<()> {
                let path = out_dir.join(format!("{problem}_{i}_{row}{suffix}.png"));
                save(&draw(m, r), &path)?;
                written.push(path);
                Ok(())
            };
            if let Some(a) = &s.input {
                let ci = c.min(a.ncols() - 1);
                let m = Mat::from_shape_fn((a.nrows(), 1), |(j, _)| a[[j, ci]]);
                emit("input", &m, range(m.iter().copied()))?;
            }
            let pred = field(&s.prediction, c);
            match &s.truth {
                Some(t) => {
                    let truth = field(t, c);
                    let r = range(truth.iter().chain(pred.iter()).copied());
                    emit("truth", &truth, r)?;
                    emit("prediction", &pred, r)?;
                    let err = (&pred - &truth).mapv(|v| v * v);
                    let (_, hi) = range(err.iter().copied());
                    emit("error", &err, (0.0, hi.max(1e-300)))?;
                }
                None => emit("prediction", &pred, range(pred.iter().copied()))?,
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn colormap_and_ranges() {
        assert_eq!(color(0.0), Rgb([68, 1, 84]));
        assert_eq!(color(1.0), Rgb([253, 231, 37]));
        assert_eq!(color(f64::NAN), color(0.0));
        assert_eq!(range([2.0, 2.0]), (1.5, 2.5));
        assert_eq!(range([f64::NAN]), (0.0, 1.0));
    }

    #[test]
    fn scattered_raster_leaves_holes_white() {
        // Ring of nodes around an empty disk.
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let (x, y) = (i as f64 / 39.0 * 2.0 - 1.0, j as f64 / 39.0 * 2.0 - 1.0);
                if x * x + y * y > 0.25 {
                    pts.extend([x, y]);
                }
            }
        }
        let coords = Array2::from_shape_vec((pts.len() / 2, 2), pts).unwrap();
        let vals: Vec<f64> = coords.column(0).to_vec();
        let img = raster_scattered(&coords, &vals, (-1.0, 1.0));
        let (w, h) = img.dimensions();
        assert_eq!(*img.get_pixel(w / 2, h / 2), Rgb([255, 255, 255]));
        assert_ne!(*img.get_pixel(2, 2), Rgb([255, 255, 255]));
    }

    #[test]
    fn writes_four_rows() {
        let dir = tempfile::tempdir().unwrap();
        let coords = Array2::from_shape_fn((16, 1), |(i, _)| i as f64 / 16.0);
        let st = |s: f64| Array2::from_shape_fn((16, 1), |(i, _)| s * i as f64);
        let s = SamplePrediction {
            seed: 3,
            coords,
            input: Some(st(1.0)),
            truth: Some(vec![st(1.0), st(2.0)]),
            prediction: vec![st(1.1), st(1.9)],
            error: 0.01,
        };
        let paths = plot_predictions("burgers", true, &[s], dir.path()).unwrap();
        let names: Vec<String> = paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            [
                "burgers_0_input.png",
                "burgers_0_truth.png",
                "burgers_0_prediction.png",
                "burgers_0_error.png"
            ]
        );
        for p in &paths {
            let img = image::open(p).unwrap();
            assert!(img.width() > 0 && img.height() > 0);
        }
    }
}
