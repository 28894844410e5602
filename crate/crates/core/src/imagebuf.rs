//! Float image buffers and their PNG encodings.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("image io: {0}")]
    Io(#[from] std::io::Error),
}

/// Quantizes a `[0,1]` float to 8 bits, rounding to nearest.
pub fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major RGB image with `f32` channels, nominally in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: u32,
    height: u32,
    data: Vec<[f32; 3]>,
}

impl ColorImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        ColorImage {
            width,
            height,
            data: vec![rgb; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        ColorImage { width, height, data }
    }

    pub fn from_pixels(width: u32, height: u32, data: Vec<[f32; 3]>) -> Self {
        assert_eq!(data.len(), (width as usize) * (height as usize));
        ColorImage { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.data
    }

    /// Channel values as one flat slice (`r, g, b, r, g, b, ...`).
    pub fn as_flat(&self) -> &[f32] {
        self.data.as_flattened()
    }

    pub fn as_flat_mut(&mut self) -> &mut [f32] {
        self.data.as_flattened_mut()
    }

    pub fn from_flat(width: u32, height: u32, flat: &[f32]) -> Self {
        assert_eq!(flat.len(), 3 * (width as usize) * (height as usize));
        let data = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        ColorImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let w = self.width;
        self.data[(y * w + x) as usize] = rgb;
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        })
    }

    pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        ColorImage::from_fn(img.width(), img.height(), |x, y| {
            let p = img.get_pixel(x, y).0;
            [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageIoError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageIoError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        Ok(ColorImage::from_rgb8(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageIoError> {
        let img = image::open(path)?.to_rgb8();
        Ok(ColorImage::from_rgb8(&img))
    }
}

/// Normalized depth in `[0,1]`: 1 at the near plane, 0 at the far plane and background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn from_values(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), (width as usize) * (height as usize));
        DepthImage { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    /// 16-bit quantization used on export.
    pub fn to_u16(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|&d| (d.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
            .collect()
    }

    pub fn encode_png16(&self) -> Result<Vec<u8>, ImageIoError> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, self.to_u16()).expect("sized buffer");
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png16(bytes: &[u8]) -> Result<Self, ImageIoError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma16();
        let data = img.pixels().map(|p| p.0[0] as f32 / 65535.0).collect();
        Ok(DepthImage::from_values(img.width(), img.height(), data))
    }

    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
        std::fs::write(path, self.encode_png16()?)?;
        Ok(())
    }
}

/// Saves a boolean mask as an 8-bit grayscale PNG (debug export).
pub fn save_mask_png(
    width: u32,
    height: u32,
    mask: &[bool],
    path: impl AsRef<Path>,
) -> Result<(), ImageIoError> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        width,
        height,
        mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
    )
    .expect("sized mask");
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let img = ColorImage::from_fn(7, 5, |x, y| {
            [x as f32 * 30.0 / 255.0, y as f32 * 50.0 / 255.0, 1.0]
        });
        let back = ColorImage::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn depth_png16_round_trip() {
        let d = DepthImage::from_values(3, 1, vec![0.0, 0.5, 1.0]);
        let back = DepthImage::decode_png16(&d.encode_png16().unwrap()).unwrap();
        assert_eq!(back.to_u16(), vec![0, 32768, 65535]);
    }

    #[test]
    fn flat_view_is_interleaved() {
        let img = ColorImage::filled(2, 1, [0.1, 0.2, 0.3]);
        assert_eq!(img.as_flat(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
        assert_eq!(ColorImage::from_flat(2, 1, img.as_flat()), img);
    }
}
