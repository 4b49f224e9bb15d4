//! Float images and binary masks, with PFM and PNG codecs.
//!
//! Images are row-major with row 0 at the top; channels are interleaved.
//! PFM files store scanlines bottom-up, which the codec handles.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y) + c;
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn vec3_at(&self, p: usize) -> Vec3 {
        let s = self.pixel(p);
        Vec3::new(s[0], s[1], s[2])
    }

    pub fn set_vec3(&mut self, p: usize, v: &Vec3) {
        let s = self.pixel_mut(p);
        s[0] = v.x;
        s[1] = v.y;
        s[2] = v.z;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Separable 5-tap binomial blur (1,4,6,4,1)/16, clamp-to-edge, per channel.
    pub fn blur_binomial(&self) -> Image {
        let h = self.blur_axis(true);
        h.blur_axis(false)
    }

    /// Transpose of `blur_binomial` as a linear operator.
    pub fn blur_binomial_adjoint(&self) -> Image {
        let v = self.blur_axis_adjoint(false);
        v.blur_axis_adjoint(true)
    }

    fn blur_axis(&self, horizontal: bool) -> Image {
        let (w, h, ch) = (self.width as isize, self.height as isize, self.channels);
        let mut out = Image::new(self.width, self.height, ch);
        for y in 0..h {
            for x in 0..w {
                for (k, wk) in BINOMIAL5.iter().enumerate() {
                    let off = k as isize - 2;
                    let (sx, sy) = if horizontal {
                        ((x + off).clamp(0, w - 1), y)
                    } else {
                        (x, (y + off).clamp(0, h - 1))
                    };
                    let src = self.idx(sx as usize, sy as usize);
                    let dst = out.idx(x as usize, y as usize);
                    for c in 0..ch {
                        out.data[dst + c] += wk * self.data[src + c];
                    }
                }
            }
        }
        out
    }

    fn blur_axis_adjoint(&self, horizontal: bool) -> Image {
        let (w, h, ch) = (self.width as isize, self.height as isize, self.channels);
        let mut out = Image::new(self.width, self.height, ch);
        for y in 0..h {
            for x in 0..w {
                for (k, wk) in BINOMIAL5.iter().enumerate() {
                    let off = k as isize - 2;
                    let (sx, sy) = if horizontal {
                        ((x + off).clamp(0, w - 1), y)
                    } else {
                        (x, (y + off).clamp(0, h - 1))
                    };
                    let src = self.idx(x as usize, y as usize);
                    let dst = out.idx(sx as usize, sy as usize);
                    for c in 0..ch {
                        out.data[dst + c] += wk * self.data[src + c];
                    }
                }
            }
        }
        out
    }

    /// Keeps every second pixel starting at (0, 0); output is ceil(dim/2).
    pub fn decimate2(&self) -> Image {
        Image::from_fn(self.width.div_ceil(2), self.height.div_ceil(2), self.channels, |x, y, c| {
            self.get(2 * x, 2 * y, c)
        })
    }

    /// Transpose of `decimate2` onto a `width`×`height` grid.
    pub fn decimate2_adjoint(&self, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(2 * x, 2 * y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    pub fn read_pfm(path: &Path) -> Result<Image> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let what = || format!("PFM {}", path.display());
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            Ok(line.trim().to_string())
        };
        let channels = match next_line(&mut r)?.as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(Error::malformed(what(), format!("bad magic {other:?}"))),
        };
        let dims = next_line(&mut r)?;
        let mut it = dims.split_whitespace().map(str::parse::<usize>);
        let (width, height) = match (it.next(), it.next()) {
            (Some(Ok(w)), Some(Ok(h))) => (w, h),
            _ => return Err(Error::malformed(what(), format!("bad dimensions {dims:?}"))),
        };
        let scale: f64 = next_line(&mut r)?
            .parse()
            .map_err(|_| Error::malformed(what(), "bad scale line"))?;
        let little = scale < 0.0;
        let mut buf = vec![0u8; width * height * channels * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::malformed(what(), "truncated pixel data"))?;
        let mut img = Image::new(width, height, channels);
        let row_len = width * channels;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            let file_row = i / row_len;
            let y = height - 1 - file_row;
            img.data[y * row_len + i % row_len] = v as f64;
        }
        Ok(img)
    }

    /// Writes a little-endian PFM. Only 1- and 3-channel images are valid PFMs.
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let magic = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::Dimension(format!("PFM needs 1 or 3 channels, got {c}"))),
        };
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        write!(w, "{magic}\n{} {}\n-1.0\n", self.width, self.height).map_err(io)?;
        let row_len = self.width * self.channels;
        for y in (0..self.height).rev() {
            for v in &self.data[y * row_len..(y + 1) * row_len] {
                w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Writes a 16-bit linear PNG (gray or RGB), clamping to [0, 1].
    pub fn write_png16(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::Dimension(format!("PNG needs 1 or 3 channels, got {c}"))),
        };
        let bytes: Vec<u8> = self
            .data
            .iter()
            .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
            .collect();
        write_png(path, self.width, self.height, color, png::BitDepth::Sixteen, &bytes)
    }

    /// Reads any 8/16-bit gray, gray-alpha, RGB or RGBA PNG into [0, 1]
    /// floats, dropping alpha.
    pub fn read_png(path: &Path) -> Result<Image> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(f));
        decoder.set_transformations(png::Transformations::EXPAND);
        let what = || format!("PNG {}", path.display());
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::malformed(what(), e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::malformed(what(), "image too large"))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::malformed(what(), e.to_string()))?;
        let (src_ch, keep) = match info.color_type {
            png::ColorType::Grayscale => (1, 1),
            png::ColorType::GrayscaleAlpha => (2, 1),
            png::ColorType::Rgb => (3, 3),
            png::ColorType::Rgba => (4, 3),
            png::ColorType::Indexed => {
                return Err(Error::malformed(what(), "indexed color not expanded"))
            }
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let samples: Vec<f64> = match info.bit_depth {
            png::BitDepth::Sixteen => buf[..info.buffer_size()]
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
                .collect(),
            png::BitDepth::Eight => buf[..info.buffer_size()]
                .iter()
                .map(|b| *b as f64 / 255.0)
                .collect(),
            d => return Err(Error::malformed(what(), format!("unsupported bit depth {d:?}"))),
        };
        let stride = info.line_size / if info.bit_depth == png::BitDepth::Sixteen { 2 } else { 1 };
        Ok(Image::from_fn(w, h, keep, |x, y, c| samples[y * stride + x * src_ch + c]))
    }
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Mask { width, height, data }
    }

    /// Pixels of a single-channel image strictly above `threshold`.
    pub fn threshold(img: &Image, threshold: f64) -> Self {
        Mask {
            width: img.width,
            height: img.height,
            data: img.data.iter().step_by(img.channels).map(|v| *v > threshold).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|a| !a).collect(),
        }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as isize;
        Mask::from_fn(self.width, self.height, |x, y| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx >= 0
                        && yy >= 0
                        && (xx as usize) < self.width
                        && (yy as usize) < self.height
                        && self.get(xx as usize, yy as usize)
                    {
                        return true;
                    }
                }
            }
            false
        })
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// IoU where a pixel present in only one mask still counts as matched
    /// when it lies within `radius` pixels of the other mask.
    pub fn iou_tolerant(&self, other: &Mask, radius: usize) -> f64 {
        let union = self.or(other);
        if union.count() == 0 {
            return 1.0;
        }
        let da = self.dilate(radius);
        let db = other.dilate(radius);
        let matched = (0..self.data.len())
            .filter(|&i| (self.data[i] && db.data[i]) || (other.data[i] && da.data[i]))
            .count();
        matched as f64 / union.count() as f64
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// 8-bit grayscale, 255 inside the mask.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|b| if *b { 255 } else { 0 }).collect();
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Grayscale,
            png::BitDepth::Eight,
            &bytes,
        )
    }

    /// Any pixel at or above half intensity counts as inside.
    pub fn read_png(path: &Path) -> Result<Mask> {
        let img = Image::read_png(path)?;
        Ok(Mask::threshold(&img.channel(0), 0.5 - 1e-9))
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let png_err = |e: png::EncodingError| Error::malformed(format!("PNG {}", path.display()), e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
