//! Dataset layout, PNG i/o, tiling, folds, augmentation, and the synthetic
//! generator.
//!
//! On-disk layout:
//!
//! ```text
//! root/
//!   dataset.toml      flat key = value manifest (classes, palette)
//!   images/<stem>.png 8-bit grayscale or RGB
//!   labels/<stem>.png 8-bit single-channel class indices, same size
//! ```

pub mod augment;
pub mod folds;
pub mod synth;
pub mod tiling;

use std::path::{Path, PathBuf};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Channel-planar 8-bit image (1 or 3 channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    /// `channels * h * w` bytes, plane after plane.
    pub data: Vec<u8>,
}

impl ImageBuf {
    pub fn gray(h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), h * w);
        ImageBuf { channels: 1, h, w, data }
    }

    /// Model input: `3xHxW` floats in [0, 1]; grayscale replicates its plane.
    pub fn to_input<E: Float>(&self) -> Tensor<E> {
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(3 * hw);
        for c in 0..3 {
            let plane = if self.channels == 3 { c } else { 0 };
            out.extend(
                self.data[plane * hw..(plane + 1) * hw]
                    .iter()
                    .map(|&b| E::from_f64(b as f64 / 255.0)),
            );
        }
        Tensor::from_vec([3, self.h, self.w], out)
    }
}

/// One image/label pair in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub stem: String,
    pub image: ImageBuf,
    pub label: Vec<u8>,
}

/// Dataset description: root directory, classes, palette, sample stems.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub palette: Vec<[u8; 3]>,
    pub stems: Vec<String>,
}

impl DatasetSpec {
    pub fn manifest_path(root: &Path) -> PathBuf {
        root.join("dataset.toml")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn labels_dir(&self) -> PathBuf {
        self.root.join("labels")
    }

    /// Read the manifest and enumerate paired stems (sorted).
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = KvConfig::from_file(&Self::manifest_path(root))?;
        let class_count = manifest.usize_or("class_count", 0)?;
        if class_count < 2 {
            return Err(Error::data(format!(
                "dataset manifest {}: class_count must be at least 2",
                root.display()
            )));
        }
        let names: Vec<String> = manifest
            .str_or("class_names", "")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if names.len() != class_count {
            return Err(Error::data(format!(
                "dataset manifest: {} class names for class_count {class_count}",
                names.len()
            )));
        }
        let palette = parse_palette(manifest.str_or("palette", ""), class_count)?;

        let images_dir = root.join("images");
        let labels_dir = root.join("labels");
        let mut stems = Vec::new();
        let entries = std::fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&images_dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::data(format!("unreadable file name {}", path.display())))?
                    .to_string();
                if !labels_dir.join(format!("{stem}.png")).exists() {
                    return Err(Error::data(format!("image {stem}.png has no label mask")));
                }
                stems.push(stem);
            }
        }
        stems.sort();
        if stems.is_empty() {
            return Err(Error::data(format!("dataset {} has no images", root.display())));
        }
        Ok(DatasetSpec {
            root: root.to_path_buf(),
            class_count,
            class_names: names,
            palette,
            stems,
        })
    }

    pub fn write_manifest(&self) -> Result<()> {
        let mut manifest = KvConfig::new();
        manifest.insert("class_count", self.class_count);
        manifest.insert("class_names", self.class_names.join(","));
        // Bare hex (no '#'): the config syntax treats '#' as a comment start.
        manifest.insert(
            "palette",
            self.palette
                .iter()
                .map(|c| format!("{:02x}{:02x}{:02x}", c[0], c[1], c[2]))
                .collect::<Vec<_>>()
                .join(","),
        );
        manifest.write_to(&Self::manifest_path(&self.root))
    }

    /// Load one image/label pair, checking sizes and label range.
    pub fn load_sample(&self, stem: &str) -> Result<Sample> {
        let image = read_png(&self.images_dir().join(format!("{stem}.png")))?;
        let label_img = read_png(&self.labels_dir().join(format!("{stem}.png")))?;
        if label_img.channels != 1 {
            return Err(Error::data(format!("label {stem}.png must be single-channel")));
        }
        if (label_img.h, label_img.w) != (image.h, image.w) {
            return Err(Error::data(format!(
                "sample {stem}: image {}x{} vs label {}x{}",
                image.h, image.w, label_img.h, label_img.w
            )));
        }
        if let Some(&bad) = label_img.data.iter().find(|&&v| v as usize >= self.class_count) {
            return Err(Error::data(format!(
                "sample {stem}: label value {bad} outside [0, {})",
                self.class_count
            )));
        }
        Ok(Sample { stem: stem.to_string(), image, label: label_img.data })
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        self.stems.iter().map(|s| self.load_sample(s)).collect()
    }
}

fn parse_palette(text: &str, class_count: usize) -> Result<Vec<[u8; 3]>> {
    let entries: Vec<&str> = text.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if entries.len() != class_count {
        return Err(Error::data(format!(
            "palette has {} colors for {class_count} classes",
            entries.len()
        )));
    }
    entries
        .iter()
        .map(|e| {
            let hex = e.strip_prefix('#').unwrap_or(e);
            if hex.len() != 6 {
                return Err(Error::data(format!("palette color {e:?} is not #rrggbb")));
            }
            let v = u32::from_str_radix(hex, 16)
                .map_err(|_| Error::data(format!("palette color {e:?} is not hex")))?;
            Ok([(v >> 16) as u8, (v >> 8) as u8, v as u8])
        })
        .collect()
}

/// Read an 8-bit grayscale or RGB PNG into planar layout.
pub fn read_png(path: &Path) -> Result<ImageBuf> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::data(format!("{}: png decode failed: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::data(format!("{}: png decode failed: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::data(format!("{}: only 8-bit PNGs are supported", path.display())));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    match info.color_type {
        png::ColorType::Grayscale => Ok(ImageBuf::gray(h, w, buf[..h * w].to_vec())),
        png::ColorType::Rgb => {
            let mut planar = vec![0u8; 3 * h * w];
            for s in 0..h * w {
                for c in 0..3 {
                    planar[c * h * w + s] = buf[s * 3 + c];
                }
            }
            Ok(ImageBuf { channels: 3, h, w, data: planar })
        }
        other => Err(Error::data(format!(
            "{}: unsupported png color type {other:?}; use 8-bit grayscale or RGB",
            path.display()
        ))),
    }
}

/// Write a planar [`ImageBuf`] as grayscale or RGB PNG.
pub fn write_png(path: &Path, img: &ImageBuf) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), img.w as u32, img.h as u32);
    encoder.set_color(match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => return Err(Error::internal(format!("cannot encode {n}-channel png"))),
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::data(format!("{}: png encode failed: {e}", path.display())))?;
    let hw = img.h * img.w;
    let interleaved: Vec<u8> = if img.channels == 1 {
        img.data.clone()
    } else {
        let mut out = vec![0u8; 3 * hw];
        for s in 0..hw {
            for c in 0..3 {
                out[s * 3 + c] = img.data[c * hw + s];
            }
        }
        out
    };
    writer
        .write_image_data(&interleaved)
        .map_err(|e| Error::data(format!("{}: png encode failed: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_gray_and_rgb() {
        let dir = std::env::temp_dir().join("ff_png_round_trip");
        std::fs::create_dir_all(&dir).unwrap();

        let gray = ImageBuf::gray(3, 5, (0..15).map(|i| (i * 16) as u8).collect());
        let p = dir.join("g.png");
        write_png(&p, &gray).unwrap();
        assert_eq!(read_png(&p).unwrap(), gray);

        let rgb = ImageBuf {
            channels: 3,
            h: 2,
            w: 2,
            data: (0..12).map(|i| (i * 20) as u8).collect(),
        };
        let p = dir.join("c.png");
        write_png(&p, &rgb).unwrap();
        assert_eq!(read_png(&p).unwrap(), rgb);
    }

    #[test]
    fn to_input_replicates_grayscale_and_scales() {
        let img = ImageBuf::gray(1, 2, vec![0, 255]);
        let t: Tensor<f32> = img.to_input();
        assert_eq!(t.shape().dims(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn palette_parsing() {
        let p = parse_palette("#ffffff, #000000", 2).unwrap();
        assert_eq!(p, vec![[255, 255, 255], [0, 0, 0]]);
        assert!(parse_palette("#ffffff", 2).is_err());
        assert!(parse_palette("#xyzxyz, #000000", 2).is_err());
    }
}
