//! RGB images with unit-interval channels, PNG encoding and contact sheets.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Planar RGB image, layout `[3, height, width]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(height, width);
        for (c, v) in rgb.iter().enumerate() {
            img.plane_mut(c).fill(*v);
        }
        img
    }

    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::invalid(format!(
                "planar buffer has {} values, expected 3x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        self.data[(c * self.height + row) * self.width + col] = v;
    }

    pub fn rgb(&self, row: usize, col: usize) -> [f32; 3] {
        [
            self.get(0, row, col),
            self.get(1, row, col),
            self.get(2, row, col),
        ]
    }

    pub fn set_rgb(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.iter().enumerate() {
            self.set(c, row, col, *v);
        }
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn mirror_horizontal(&self) -> Image {
        let mut out = Image::new(self.height, self.width);
        for c in 0..3 {
            for r in 0..self.height {
                for col in 0..self.width {
                    out.set(c, r, col, self.get(c, r, self.width - 1 - col));
                }
            }
        }
        out
    }

    /// Elementwise absolute difference.
    pub fn abs_diff(&self, other: &Image) -> Result<Image> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::invalid("image sizes differ"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(Image {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Quantise as the PNG writer does, `round(255 * v) / 255`.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    fn to_interleaved_u8(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(3 * self.height * self.width);
        for r in 0..self.height {
            for col in 0..self.width {
                for c in 0..3 {
                    buf.push(to_u8(self.get(c, r, col)));
                }
            }
        }
        buf
    }
}

fn to_u8(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Writes an 8-bit RGB PNG. Encoder settings are pinned so identical images
/// give identical bytes.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::Sub);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e))?;
    writer
        .write_image_data(&img.to_interleaved_u8())
        .map_err(|e| Error::format(path, e))?;
    writer.finish().map_err(|e| Error::format(path, e))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut img = Image::new(h, w);
    for r in 0..h {
        for col in 0..w {
            for c in 0..3 {
                img.set(
                    c,
                    r,
                    col,
                    buf[r * info.line_size + col * 3 + c] as f32 / 255.0,
                );
            }
        }
    }
    Ok(img)
}

/// Lays out rows of equally sized tiles with 2-pixel white gutters.
pub fn contact_sheet(rows: &[Vec<Image>]) -> Result<Image> {
    const GUTTER: usize = 2;
    let first = rows
        .iter()
        .flat_map(|r| r.first())
        .next()
        .ok_or_else(|| Error::invalid("contact sheet needs at least one tile"))?;
    let (th, tw) = (first.height, first.width);
    let ncols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let height = rows.len() * th + (rows.len() + 1) * GUTTER;
    let width = ncols * tw + (ncols + 1) * GUTTER;
    let mut sheet = Image::filled(height, width, [1.0, 1.0, 1.0]);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, tile) in row.iter().enumerate() {
            if tile.height != th || tile.width != tw {
                return Err(Error::invalid("contact sheet tiles differ in size"));
            }
            let y0 = GUTTER + ri * (th + GUTTER);
            let x0 = GUTTER + ci * (tw + GUTTER);
            for c in 0..3 {
                for r in 0..th {
                    for col in 0..tw {
                        sheet.set(c, y0 + r, x0 + col, tile.get(c, r, col));
                    }
                }
            }
        }
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(4, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.0137) % 1.0;
        }
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back, img.quantized());
    }

    #[test]
    fn sheet_geometry() {
        let t = Image::new(3, 4);
        let sheet = contact_sheet(&[vec![t.clone(), t.clone()], vec![t]]).unwrap();
        assert_eq!(sheet.height, 2 * 3 + 3 * 2);
        assert_eq!(sheet.width, 2 * 4 + 3 * 2);
        assert_eq!(sheet.rgb(0, 0), [1.0, 1.0, 1.0]);
        assert_eq!(sheet.rgb(2, 2), [0.0, 0.0, 0.0]);
    }
}
