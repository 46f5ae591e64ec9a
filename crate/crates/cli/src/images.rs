use std::path::{Path, PathBuf};

use noisegen::io::{read_tensor, write_tensor};
use noisegen::{Error, Result, Shape, Tensor};

/// Reads an image as a (1, 3, H, W) tensor in [0, 1]. Float tensor files
/// are read exactly; PNGs are decoded from 8-bit RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == "png") {
        if !path.exists() {
            return Err(Error::MissingFile(path.into()));
        }
        let img = image::open(path)
            .map_err(|e| Error::Malformed {
                what: "png",
                path: path.into(),
                detail: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
        Tensor::new(Shape::new(1, 3, h, w), data)
    } else {
        read_tensor(path)
    }
}

/// 8-bit preview of the first image in a batch.
pub fn write_preview(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    let (h, w) = (s.height(), s.width());
    let d = t.data();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (d[c * h * w + y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io {
            path: path.into(),
            source: io,
        },
        other => Error::InvalidArgument(other.to_string()),
    })
}

/// Writes the exact tensor and a PNG preview next to it.
pub fn write_image(dir: &Path, stem: &str, t: &Tensor) -> Result<PathBuf> {
    let name = PathBuf::from(format!("{stem}.f32"));
    write_tensor(&dir.join(&name), t)?;
    write_preview(&dir.join(format!("{stem}.png")), t)?;
    Ok(name)
}

/// Image files in a directory, sorted by name. A stem present as both
/// `.f32` and `.png` is read from the float file.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "f32" || e == "png"))
        .collect();
    files.sort();
    let has_f32 = |p: &Path| p.with_extension("f32").exists();
    files.retain(|p| p.extension().is_some_and(|e| e == "f32") || !has_f32(p));
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .f32 or .png images in {}", dir.display())));
    }
    Ok(files)
}
