//! 8-bit RGB PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::numeric::Tensor;

/// Reads an 8-bit RGB PNG as a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let img_err = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(img_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(img_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!(
            "{}: expected 8-bit RGB, found {:?} at {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        buf[y * stride + 3 * x + c] as f64 / 255.0
    }))
}

/// Writes a `[3, H, W]` tensor as 8-bit RGB, clamping to `[0, 1]`.
/// Non-finite values are written as 0.
pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(shape_err(format!("png output expects [3,H,W], got {s:?}"))),
    };
    let mut bytes = vec![0u8; 3 * h * w];
    for (i, &v) in img.data().iter().enumerate() {
        let (c, p) = (i / (h * w), i % (h * w));
        let v = if v.is_finite() {
            v.clamp(0.0, 1.0)
        } else {
            0.0
        };
        bytes[3 * p + c] = (v * 255.0).round() as u8;
    }
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let enc_err = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(enc_err)?;
    writer.write_image_data(&bytes).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}
