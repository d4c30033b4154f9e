//! Synthetic cell-image generator: Voronoi cells, membrane bands, optional
//! organelle classes, additive noise. Deterministic per (seed, image index).
//!
//! Cell interiors come from a Voronoi partition over random integer centers
//! (ties to the lowest center index, so the partition is exact). The
//! membrane class is every pixel within `membrane_thickness` (Euclidean,
//! pixel centers) of a partition boundary pixel, where boundary pixels are
//! those with a 4-neighbor in a different cell.

use std::path::Path;

use crate::data::{write_png, DatasetSpec, ImageBuf};
use crate::error::{Error, Result};
use crate::tensor::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassMode {
    /// membrane / background
    Two,
    /// membrane / mitochondria / synapse / glia / intracellular
    Five,
}

impl ClassMode {
    pub fn class_count(self) -> usize {
        match self {
            ClassMode::Two => 2,
            ClassMode::Five => 5,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            ClassMode::Two => vec!["membrane".into(), "background".into()],
            ClassMode::Five => vec![
                "membrane".into(),
                "mitochondria".into(),
                "synapse".into(),
                "glia".into(),
                "intracellular".into(),
            ],
        }
    }

    pub fn palette(self) -> Vec<[u8; 3]> {
        match self {
            ClassMode::Two => vec![[255, 255, 255], [0, 0, 0]],
            ClassMode::Five => vec![
                [255, 255, 255],
                [230, 25, 75],
                [255, 225, 25],
                [60, 180, 75],
                [0, 0, 128],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCellConfig {
    pub seed: u64,
    pub image_size: usize,
    pub image_count: usize,
    pub mode: ClassMode,
    pub cells_min: usize,
    pub cells_max: usize,
    pub membrane_thickness: f64,
    /// Standard deviation of additive Gaussian pixel noise, in [0, 1] units.
    pub noise: f64,
}

impl SyntheticCellConfig {
    pub fn new(seed: u64, image_size: usize, image_count: usize, mode: ClassMode) -> Self {
        SyntheticCellConfig {
            seed,
            image_size,
            image_count,
            mode,
            cells_min: 4,
            cells_max: 8,
            membrane_thickness: 1.5,
            noise: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::config("synthetic image_size must be at least 8".to_string()));
        }
        if self.image_count == 0 {
            return Err(Error::config("synthetic image_count must be positive".to_string()));
        }
        if self.cells_min == 0 || self.cells_max < self.cells_min {
            return Err(Error::config("synthetic cell count range is empty".to_string()));
        }
        if self.membrane_thickness <= 0.0 {
            return Err(Error::config("membrane_thickness must be positive".to_string()));
        }
        Ok(())
    }
}

/// Nearest-center partition; ties go to the lowest center index.
pub fn voronoi_cells(size: usize, centers: &[(usize, usize)]) -> Vec<u16> {
    let mut cells = vec![0u16; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut best = u64::MAX;
            let mut best_i = 0u16;
            for (i, &(cy, cx)) in centers.iter().enumerate() {
                let dy = cy as i64 - y as i64;
                let dx = cx as i64 - x as i64;
                let d = (dy * dy + dx * dx) as u64;
                if d < best {
                    best = d;
                    best_i = i as u16;
                }
            }
            cells[y * size + x] = best_i;
        }
    }
    cells
}

/// Pixels with a 4-neighbor in a different cell.
pub fn boundary_mask(cells: &[u16], size: usize) -> Vec<bool> {
    let mut out = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let c = cells[y * size + x];
            let mut boundary = false;
            if x + 1 < size && cells[y * size + x + 1] != c {
                boundary = true;
            }
            if !boundary && y + 1 < size && cells[(y + 1) * size + x] != c {
                boundary = true;
            }
            if !boundary && x > 0 && cells[y * size + x - 1] != c {
                boundary = true;
            }
            if !boundary && y > 0 && cells[(y - 1) * size + x] != c {
                boundary = true;
            }
            out[y * size + x] = boundary;
        }
    }
    out
}

/// Dilate the boundary by a Euclidean disc of radius `thickness`,
/// scanning a window of radius `ceil(thickness)` around each pixel.
pub fn membrane_mask(boundary: &[bool], size: usize, thickness: f64) -> Vec<bool> {
    let r = thickness.ceil() as i64;
    let t2 = thickness * thickness;
    let mut out = vec![false; size * size];
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            'scan: for dy in -r..=r {
                let sy = y + dy;
                if sy < 0 || sy >= size as i64 {
                    continue;
                }
                for dx in -r..=r {
                    let sx = x + dx;
                    if sx < 0 || sx >= size as i64 {
                        continue;
                    }
                    if (dy * dy + dx * dx) as f64 <= t2 && boundary[(sy * size as i64 + sx) as usize]
                    {
                        out[(y * size as i64 + x) as usize] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

struct Painted {
    label: Vec<u8>,
    gray: Vec<u8>,
}

fn synth_one(cfg: &SyntheticCellConfig, rng: &mut Rng) -> Painted {
    let s = cfg.image_size;
    let n_cells = cfg.cells_min + rng.below(cfg.cells_max - cfg.cells_min + 1);
    let centers: Vec<(usize, usize)> =
        (0..n_cells).map(|_| (rng.below(s), rng.below(s))).collect();
    let cells = voronoi_cells(s, &centers);
    let boundary = boundary_mask(&cells, s);
    let membrane = membrane_mask(&boundary, s, cfg.membrane_thickness);

    let cell_lum: Vec<f64> = (0..n_cells).map(|_| rng.uniform(120.0, 220.0)).collect();
    let mut label;
    let mut lum: Vec<f64> = (0..s * s).map(|i| cell_lum[cells[i] as usize]).collect();

    match cfg.mode {
        ClassMode::Two => {
            label = vec![1u8; s * s];
            for i in 0..s * s {
                if membrane[i] {
                    label[i] = 0;
                    lum[i] = 30.0;
                }
            }
        }
        ClassMode::Five => {
            label = vec![4u8; s * s];
            // Whole cells become glia with probability 0.2.
            let glia: Vec<bool> = (0..n_cells).map(|_| rng.chance(0.2)).collect();
            for i in 0..s * s {
                if glia[cells[i] as usize] {
                    label[i] = 3;
                    lum[i] += 15.0;
                }
            }
            // Mitochondria: up to two discs inside each non-glia cell.
            for (ci, &is_glia) in glia.iter().enumerate() {
                if is_glia {
                    continue;
                }
                for _ in 0..rng.below(3) {
                    let (cy, cx) = (rng.below(s) as i64, rng.below(s) as i64);
                    if cells[(cy * s as i64 + cx) as usize] as usize != ci {
                        continue;
                    }
                    let radius = rng.uniform(s as f64 / 32.0, s as f64 / 16.0).max(1.0);
                    paint_disc(s, cy, cx, radius, |i| {
                        if cells[i] as usize == ci && !membrane[i] {
                            label[i] = 1;
                            lum[i] = 70.0;
                        }
                    });
                }
            }
            // Membrane band on top.
            for i in 0..s * s {
                if membrane[i] {
                    label[i] = 0;
                    lum[i] = 30.0;
                }
            }
            // Synapses: small bright discs restricted to the membrane band.
            let boundary_idx: Vec<usize> =
                (0..s * s).filter(|&i| boundary[i]).collect();
            if !boundary_idx.is_empty() {
                for _ in 0..(n_cells / 2).max(1) {
                    let at = boundary_idx[rng.below(boundary_idx.len())];
                    let (cy, cx) = ((at / s) as i64, (at % s) as i64);
                    let radius = cfg.membrane_thickness + 1.0;
                    paint_disc(s, cy, cx, radius, |i| {
                        if membrane[i] {
                            label[i] = 2;
                            lum[i] = 240.0;
                        }
                    });
                }
            }
        }
    }

    let gray: Vec<u8> = lum
        .into_iter()
        .map(|v| {
            let noisy = v + rng.normal() * cfg.noise * 255.0;
            noisy.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Painted { label, gray }
}

fn paint_disc(size: usize, cy: i64, cx: i64, radius: f64, mut f: impl FnMut(usize)) {
    let r = radius.ceil() as i64;
    let r2 = radius * radius;
    for dy in -r..=r {
        let y = cy + dy;
        if y < 0 || y >= size as i64 {
            continue;
        }
        for dx in -r..=r {
            let x = cx + dx;
            if x < 0 || x >= size as i64 {
                continue;
            }
            if (dy * dy + dx * dx) as f64 <= r2 {
                f((y * size as i64 + x) as usize);
            }
        }
    }
}

/// Write `image_count` images plus masks and the manifest under `root`.
/// Existing `images/` and `labels/` directories are replaced, so regenerating
/// with the same configuration reproduces the dataset byte for byte.
pub fn generate(cfg: &SyntheticCellConfig, root: &Path) -> Result<DatasetSpec> {
    cfg.validate()?;
    let images = root.join("images");
    let labels = root.join("labels");
    for dir in [&images, &labels] {
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;

    let base = Rng::new(cfg.seed);
    for i in 0..cfg.image_count {
        let mut rng = base.stream(&[0x73796e74, i as u64]);
        let painted = synth_one(cfg, &mut rng);
        let stem = format!("img{i:03}");
        let s = cfg.image_size;
        write_png(&images.join(format!("{stem}.png")), &ImageBuf::gray(s, s, painted.gray))?;
        write_png(&labels.join(format!("{stem}.png")), &ImageBuf::gray(s, s, painted.label))?;
    }

    let spec = DatasetSpec {
        root: root.to_path_buf(),
        class_count: cfg.mode.class_count(),
        class_names: cfg.mode.class_names(),
        palette: cfg.mode.palette(),
        stems: (0..cfg.image_count).map(|i| format!("img{i:03}")).collect(),
    };
    spec.write_manifest()?;
    DatasetSpec::load(root)
}
