//! Training-time augmentation: flips and right-angle rotations.
//!
//! Index maps for a square side `S` (destination pixel `(y, x)` reads from):
//! - horizontal flip: `(y, S-1-x)`
//! - vertical flip:   `(S-1-y, x)`
//! - +90 degrees (counter-clockwise): `(x, S-1-y)`
//! - -90 degrees (clockwise):         `(S-1-x, y)`
//!
//! Flips are drawn independently at probability 1/2; the rotation is uniform
//! over {-90, 0, +90}. The identical transform applies to image and label.

use crate::data::tiling::SampleTile;
use crate::data::ImageBuf;
use crate::error::{Error, Result};
use crate::tensor::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentChoice {
    pub hflip: bool,
    pub vflip: bool,
    /// -1, 0, or +1 quarter turns (counter-clockwise positive).
    pub quarter_turns: i8,
}

impl AugmentChoice {
    pub const IDENTITY: AugmentChoice = AugmentChoice { hflip: false, vflip: false, quarter_turns: 0 };

    pub fn draw(rng: &mut Rng) -> Self {
        AugmentChoice {
            hflip: rng.chance(0.5),
            vflip: rng.chance(0.5),
            quarter_turns: [-1, 0, 1][rng.below(3)],
        }
    }
}

fn remap_plane(src: &[u8], s: usize, choice: AugmentChoice) -> Vec<u8> {
    let mut out = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            let (mut sy, mut sx) = match choice.quarter_turns {
                1 => (x, s - 1 - y),
                -1 => (s - 1 - x, y),
                _ => (y, x),
            };
            if choice.vflip {
                sy = s - 1 - sy;
            }
            if choice.hflip {
                sx = s - 1 - sx;
            }
            out[y * s + x] = src[sy * s + sx];
        }
    }
    out
}

/// Apply a drawn transform to a square tile. Rotation happens after the
/// flips in source-index terms (the composed map above).
pub fn augment_with(tile: &SampleTile, choice: AugmentChoice) -> Result<SampleTile> {
    let s = tile.size;
    if tile.image.h != s || tile.image.w != s {
        return Err(Error::data(format!("augment: tile {} is not square", tile.id())));
    }
    let hw = s * s;
    let mut data = Vec::with_capacity(tile.image.channels * hw);
    for c in 0..tile.image.channels {
        data.extend(remap_plane(&tile.image.data[c * hw..(c + 1) * hw], s, choice));
    }
    Ok(SampleTile {
        source: tile.source.clone(),
        x: tile.x,
        y: tile.y,
        size: s,
        image: ImageBuf { channels: tile.image.channels, h: s, w: s, data },
        label: remap_plane(&tile.label, s, choice),
    })
}

/// Draw a transform from `rng` and apply it.
pub fn augment(tile: &SampleTile, rng: &mut Rng) -> Result<SampleTile> {
    augment_with(tile, AugmentChoice::draw(rng))
}
