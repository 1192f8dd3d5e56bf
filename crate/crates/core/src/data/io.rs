//! Dataset directories: `images/<id>.png`, `masks/<id>.png` and
//! `metadata.csv` with columns `id,region,skin_tone,gender,age_group`.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::data::{parse_cell, Meta, Sample};
use crate::diffarray::{Array4, Shape};
use crate::error::{Error, Result};

pub const METADATA_HEADER: [&str; 5] = ["id", "region", "skin_tone", "gender", "age_group"];

fn opt<V: ToString>(v: Option<V>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn image_to_rgb(image: &Array4<f32>) -> RgbImage {
    let s = image.shape();
    let plane = s.plane();
    let d = image.item_slice(0);
    RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let i = y as usize * s.w + x as usize;
        Rgb(std::array::from_fn(|c| {
            (d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

pub fn rgb_to_image(rgb: &RgbImage) -> Array4<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Array4::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

/// `{0, 1}` mask to an 8-bit `{0, 255}` grey image.
pub fn mask_to_gray(mask: &Array4<f32>) -> GrayImage {
    let s = mask.shape();
    GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        Luma([if mask.get(0, 0, y as usize, x as usize) >= 0.5 {
            255
        } else {
            0
        }])
    })
}

pub fn gray_to_mask(g: &GrayImage) -> Array4<f32> {
    let (w, h) = (g.width() as usize, g.height() as usize);
    Array4::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        if g.get_pixel(x as u32, y as u32)[0] >= 128 {
            1.0
        } else {
            0.0
        }
    })
}

/// Probability map as a 16-bit grey PNG.
pub fn save_probability_png(map: &Array4<f32>, path: &Path) -> Result<()> {
    let s = map.shape();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        Luma([(map.get(0, 0, y as usize, x as usize).clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    img.save(path)?;
    Ok(())
}

/// Decode an image file and resize it to `side x side`.
pub fn load_image(path: &Path, side: usize) -> Result<Array4<f32>> {
    let rgb = image::open(path)?.to_rgb8();
    let rgb = if rgb.width() as usize == side && rgb.height() as usize == side {
        rgb
    } else {
        imageops::resize(&rgb, side as u32, side as u32, FilterType::Triangle)
    };
    Ok(rgb_to_image(&rgb))
}

fn load_mask(path: &Path, side: usize) -> Result<Array4<f32>> {
    let g = image::open(path)?.to_luma8();
    let g = if g.width() as usize == side && g.height() as usize == side {
        g
    } else {
        imageops::resize(&g, side as u32, side as u32, FilterType::Triangle)
    };
    Ok(gray_to_mask(&g))
}

pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut w = csv::Writer::from_path(dir.join("metadata.csv"))?;
    w.write_record(METADATA_HEADER)?;
    for s in samples {
        image_to_rgb(&s.image).save(dir.join("images").join(format!("{}.png", s.id)))?;
        mask_to_gray(&s.mask).save(dir.join("masks").join(format!("{}.png", s.id)))?;
        w.write_record([
            s.id.clone(),
            opt(s.meta.region),
            opt(s.meta.skin_tone),
            opt(s.meta.gender),
            opt(s.meta.age_group),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<Vec<(String, Meta)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != METADATA_HEADER {
        return Err(Error::Data(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            header,
            METADATA_HEADER
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let id = cell(0).trim().to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("{}: row with empty id", path.display())));
        }
        let meta = Meta {
            region: parse_cell(cell(1))?,
            skin_tone: parse_cell(cell(2))?,
            gender: parse_cell(cell(3))?,
            age_group: parse_cell(cell(4))?,
        };
        rows.push((id, meta));
    }
    Ok(rows)
}

/// Load every sample listed in `metadata.csv`, resized to `side`.
pub fn read_dataset(dir: &Path, side: usize) -> Result<Vec<Sample>> {
    let rows = read_metadata(&dir.join("metadata.csv"))?;
    if rows.is_empty() {
        return Err(Error::Empty("dataset metadata"));
    }
    rows.into_iter()
        .map(|(id, meta)| {
            let image = load_image(&dir.join("images").join(format!("{id}.png")), side)?;
            let mask = load_mask(&dir.join("masks").join(format!("{id}.png")), side)?;
            Sample::new(id, image, mask, meta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = synth_dataset(4, 32, 5).unwrap();
        s[1].meta.gender = None;
        write_dataset(dir.path(), &s).unwrap();
        let back = read_dataset(dir.path(), 32).unwrap();
        assert_eq!(back, s);
        let text = fs::read_to_string(dir.path().join("metadata.csv")).unwrap();
        assert!(text.starts_with("id,region,skin_tone,gender,age_group\n"));
    }

    #[test]
    fn resize_on_load() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &synth_dataset(1, 32, 5).unwrap()).unwrap();
        let back = read_dataset(dir.path(), 16).unwrap();
        assert_eq!(back[0].image.shape(), Shape::new(1, 3, 16, 16));
        assert!(back[0].mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn bad_vocabulary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("metadata.csv"),
            "id,region,skin_tone,gender,age_group\na,trunk,green,male,18-30\n",
        )
        .unwrap();
        let err = read_metadata(&dir.path().join("metadata.csv")).unwrap_err();
        assert!(err.to_string().contains("green"));
    }
}
