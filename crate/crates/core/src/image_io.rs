//! Image file I/O: 8-bit PNG for LDR data, PFM (portable float map) for HDR
//! data. PFM files are written with the little-endian scale marker -1.0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::img::{ImageGray, ImageRgb};

/// Read an 8-bit PNG into [0,1] values. Grayscale and RGBA inputs are widened
/// or flattened to RGB.
pub fn read_png(path: &Path) -> Result<ImageRgb> {
    let dyn_img = image::open(path)
        .map_err(|e| Error::parse(path, "png", e.to_string()))?
        .to_rgb8();
    let (w, h) = (dyn_img.width() as usize, dyn_img.height() as usize);
    let mut out = ImageRgb::new(w, h);
    for (i, px) in dyn_img.pixels().enumerate() {
        out.data[i] = [
            px.0[0] as f64 / 255.0,
            px.0[1] as f64 / 255.0,
            px.0[2] as f64 / 255.0,
        ];
    }
    Ok(out)
}

/// Write [0,1] values as 8-bit PNG (values are clamped, rounded to nearest).
pub fn write_png(path: &Path, img: &ImageRgb) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, px) in img.data.iter().enumerate() {
        let x = (i % img.width) as u32;
        let y = (i / img.width) as u32;
        buf.put_pixel(x, y, image::Rgb(px.map(to_u8)));
    }
    buf.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Write an RGBA PNG from an RGB image plus an alpha channel in [0,1].
pub fn write_png_rgba(path: &Path, img: &ImageRgb, alpha: &ImageGray) -> Result<()> {
    if alpha.width != img.width || alpha.height != img.height {
        return Err(Error::Dimension("alpha/rgb size mismatch".into()));
    }
    let mut buf = image::RgbaImage::new(img.width as u32, img.height as u32);
    for (i, px) in img.data.iter().enumerate() {
        let x = (i % img.width) as u32;
        let y = (i / img.width) as u32;
        let a = to_u8(alpha.data[i]);
        buf.put_pixel(
            x,
            y,
            image::Rgba([to_u8(px[0]), to_u8(px[1]), to_u8(px[2]), a]),
        );
    }
    buf.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read a binary mask PNG: pixels with value >= 128 are set.
pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = read_png(path)?;
    let bits = img.data.iter().map(|p| p[0] >= 0.5).collect();
    Ok((img.width, img.height, bits))
}

pub fn write_mask_png(path: &Path, width: usize, height: usize, bits: &[bool]) -> Result<()> {
    let mut img = ImageRgb::new(width, height);
    for (i, &b) in bits.iter().enumerate() {
        img.data[i] = if b { [1.0; 3] } else { [0.0; 3] };
    }
    write_png(path, &img)
}

/// Write a color PFM ("PF"), scanlines bottom-to-top, little-endian floats.
pub fn write_pfm(path: &Path, img: &ImageRgb) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let hdr = format!("PF\n{} {}\n-1.0\n", img.width, img.height);
    w.write_all(hdr.as_bytes()).map_err(|e| Error::io(path, e))?;
    // bottom row first per the format
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            let px = img.get(x, y);
            for c in px {
                w.write_all(&(c as f32).to_le_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImageRgb> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let magic = read_token(&mut r, path)?;
    let color = match magic.as_str() {
        "PF" => true,
        "Pf" => false,
        other => {
            return Err(Error::parse(path, "header", format!("bad magic `{other}`")));
        }
    };
    let width: usize = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::parse(path, "header", "bad width"))?;
    let height: usize = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::parse(path, "header", "bad height"))?;
    let scale: f64 = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::parse(path, "header", "bad scale"))?;
    let little_endian = scale < 0.0;

    let chans = if color { 3 } else { 1 };
    let mut raw = vec![0u8; width * height * chans * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;

    let mut out = ImageRgb::new(width, height);
    let mut off = 0usize;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut px = [0.0f64; 3];
            for item in px.iter_mut().take(chans) {
                let b = [raw[off], raw[off + 1], raw[off + 2], raw[off + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                *item = v as f64;
                off += 4;
            }
            if chans == 1 {
                px = [px[0]; 3];
            }
            out.set(x, y, px);
        }
    }
    Ok(out)
}

/// Read one whitespace-delimited header token.
fn read_token(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    // skip leading whitespace
    loop {
        r.read_exact(&mut byte).map_err(|e| Error::io(path, e))?;
        if !byte[0].is_ascii_whitespace() {
            break;
        }
    }
    tok.push(byte[0] as char);
    loop {
        r.read_exact(&mut byte).map_err(|e| Error::io(path, e))?;
        if byte[0].is_ascii_whitespace() {
            break;
        }
        tok.push(byte[0] as char);
    }
    Ok(tok)
}
