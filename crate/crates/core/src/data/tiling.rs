//! Non-overlapping tiling of image/label pairs.

use crate::data::{ImageBuf, Sample};
use crate::error::{Error, Result};

/// One square crop of a source sample.
#[derive(Debug, Clone)]
pub struct SampleTile {
    /// Stem of the source image.
    pub source: String,
    /// Crop origin in the source, pixels.
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub image: ImageBuf,
    pub label: Vec<u8>,
}

impl SampleTile {
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.source, self.y, self.x)
    }

    /// A whole sample as a single tile.
    pub fn whole(sample: &Sample) -> Result<SampleTile> {
        if sample.image.h != sample.image.w {
            return Err(Error::data(format!(
                "sample {}: non-square {}x{} image needs tiling",
                sample.stem, sample.image.h, sample.image.w
            )));
        }
        Ok(SampleTile {
            source: sample.stem.clone(),
            x: 0,
            y: 0,
            size: sample.image.h,
            image: sample.image.clone(),
            label: sample.label.clone(),
        })
    }
}

/// Cut a sample into `(H/tile) * (W/tile)` tiles in row-major order.
pub fn tile_sample(sample: &Sample, tile: usize) -> Result<Vec<SampleTile>> {
    let (h, w) = (sample.image.h, sample.image.w);
    if tile == 0 || h % tile != 0 || w % tile != 0 {
        return Err(Error::data(format!(
            "sample {}: {h}x{w} is not divisible into {tile}x{tile} tiles; pad or crop the source first",
            sample.stem
        )));
    }
    let hw = h * w;
    let mut tiles = Vec::with_capacity((h / tile) * (w / tile));
    for ty in 0..h / tile {
        for tx in 0..w / tile {
            let (y0, x0) = (ty * tile, tx * tile);
            let mut data = Vec::with_capacity(sample.image.channels * tile * tile);
            for c in 0..sample.image.channels {
                for y in 0..tile {
                    let row = c * hw + (y0 + y) * w + x0;
                    data.extend_from_slice(&sample.image.data[row..row + tile]);
                }
            }
            let mut label = Vec::with_capacity(tile * tile);
            for y in 0..tile {
                let row = (y0 + y) * w + x0;
                label.extend_from_slice(&sample.label[row..row + tile]);
            }
            tiles.push(SampleTile {
                source: sample.stem.clone(),
                x: x0,
                y: y0,
                size: tile,
                image: ImageBuf { channels: sample.image.channels, h: tile, w: tile, data },
                label,
            });
        }
    }
    Ok(tiles)
}

/// Reassemble tiles produced by [`tile_sample`] into the full image/label.
pub fn stitch_tiles(tiles: &[SampleTile], h: usize, w: usize) -> Result<(ImageBuf, Vec<u8>)> {
    let first = tiles.first().ok_or_else(|| Error::data("stitch: no tiles".to_string()))?;
    let (channels, tile) = (first.image.channels, first.size);
    let hw = h * w;
    let mut image = vec![0u8; channels * hw];
    let mut label = vec![0u8; hw];
    for t in tiles {
        if t.size != tile || t.image.channels != channels {
            return Err(Error::data("stitch: inconsistent tiles".to_string()));
        }
        for c in 0..channels {
            for y in 0..tile {
                let src = c * tile * tile + y * tile;
                let dst = c * hw + (t.y + y) * w + t.x;
                image[dst..dst + tile].copy_from_slice(&t.image.data[src..src + tile]);
            }
        }
        for y in 0..tile {
            let src = y * tile;
            let dst = (t.y + y) * w + t.x;
            label[dst..dst + tile].copy_from_slice(&t.label[src..src + tile]);
        }
    }
    Ok((ImageBuf { channels, h, w, data: image }, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;

    fn sample(h: usize, w: usize, seed: u64) -> Sample {
        let mut rng = Rng::new(seed);
        Sample {
            stem: "img".to_string(),
            image: ImageBuf::gray(h, w, (0..h * w).map(|_| rng.below(256) as u8).collect()),
            label: (0..h * w).map(|_| rng.below(3) as u8).collect(),
        }
    }

    #[test]
    fn tile_counts_match_grid() {
        let s = sample(1024, 1024, 1);
        assert_eq!(tile_sample(&s, 256).unwrap().len(), 16);
        let s = sample(512, 512, 2);
        assert_eq!(tile_sample(&s, 256).unwrap().len(), 4);
        let s = sample(256, 256, 3);
        let tiles = tile_sample(&s, 256).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].image.data, s.image.data);
    }

    #[test]
    fn non_divisible_suggests_preprocessing() {
        let s = sample(100, 100, 4);
        let err = tile_sample(&s, 64).unwrap_err();
        assert!(err.to_string().contains("pad or crop"));
    }

    #[test]
    fn tile_then_stitch_is_identity() {
        let s = sample(96, 64, 5);
        let tiles = tile_sample(&s, 32).unwrap();
        let (image, label) = stitch_tiles(&tiles, 96, 64).unwrap();
        assert_eq!(image, s.image);
        assert_eq!(label, s.label);
    }

    #[test]
    fn tiles_are_row_major() {
        let s = sample(64, 64, 6);
        let tiles = tile_sample(&s, 32).unwrap();
        let origins: Vec<(usize, usize)> = tiles.iter().map(|t| (t.y, t.x)).collect();
        assert_eq!(origins, vec![(0, 0), (0, 32), (32, 0), (32, 32)]);
    }
}
