//! Palette rendering of class maps and side-by-side prediction grids.
//!
//! A grid has one row per sample and one column per named panel set
//! (input, ground truth, then each prediction set), with a legend strip on
//! top drawn in a 5x7 bitmap font. Output bytes are deterministic for fixed
//! inputs.

use std::path::Path;

use crate::data::{write_png, ImageBuf};
use crate::error::{Error, Result};

const GAP: usize = 2;
const LEGEND_H: usize = 11;

/// Map a class-index image to RGB through the palette.
pub fn render_class_map(label: &[u8], h: usize, w: usize, palette: &[[u8; 3]]) -> Result<ImageBuf> {
    if label.len() != h * w {
        return Err(Error::internal(format!(
            "render: label has {} pixels for {h}x{w}",
            label.len()
        )));
    }
    if let Some(&bad) = label.iter().find(|&&v| v as usize >= palette.len()) {
        return Err(Error::data(format!(
            "render: class {bad} has no palette entry ({} colors defined)",
            palette.len()
        )));
    }
    let hw = h * w;
    let mut data = vec![0u8; 3 * hw];
    for (s, &v) in label.iter().enumerate() {
        let c = palette[v as usize];
        data[s] = c[0];
        data[hw + s] = c[1];
        data[2 * hw + s] = c[2];
    }
    Ok(ImageBuf { channels: 3, h, w, data })
}

fn to_rgb(img: &ImageBuf) -> ImageBuf {
    if img.channels == 3 {
        img.clone()
    } else {
        let hw = img.h * img.w;
        let mut data = Vec::with_capacity(3 * hw);
        for _ in 0..3 {
            data.extend_from_slice(&img.data[..hw]);
        }
        ImageBuf { channels: 3, h: img.h, w: img.w, data }
    }
}

/// One labelled column of panels.
pub struct GridColumn {
    pub title: String,
    pub panels: Vec<ImageBuf>,
}

/// Compose columns into a single RGB grid image and write it as PNG.
pub fn render_grid(path: &Path, columns: &[GridColumn]) -> Result<()> {
    let rows = columns.first().map(|c| c.panels.len()).unwrap_or(0);
    if rows == 0 || columns.iter().any(|c| c.panels.len() != rows) {
        return Err(Error::internal("render_grid: ragged or empty columns".to_string()));
    }
    let (ph, pw) = (columns[0].panels[0].h, columns[0].panels[0].w);
    for c in columns {
        for p in &c.panels {
            if (p.h, p.w) != (ph, pw) {
                return Err(Error::internal("render_grid: panels differ in size".to_string()));
            }
        }
    }

    let total_w = columns.len() * pw + (columns.len() - 1) * GAP;
    let total_h = LEGEND_H + rows * ph + (rows - 1) * GAP;
    let hw = total_h * total_w;
    let mut canvas = vec![32u8; 3 * hw]; // dark separator background

    for (ci, column) in columns.iter().enumerate() {
        let x0 = ci * (pw + GAP);
        draw_text(&mut canvas, total_w, total_h, x0 + 1, 2, &column.title.to_ascii_uppercase());
        for (ri, panel) in column.panels.iter().enumerate() {
            let y0 = LEGEND_H + ri * (ph + GAP);
            let rgb = to_rgb(panel);
            for c in 0..3 {
                for y in 0..ph {
                    for x in 0..pw {
                        canvas[c * hw + (y0 + y) * total_w + x0 + x] =
                            rgb.data[c * ph * pw + y * pw + x];
                    }
                }
            }
        }
    }
    write_png(path, &ImageBuf { channels: 3, h: total_h, w: total_w, data: canvas })
}

/// Convenience wrapper: input column, ground-truth column, then one column
/// per named prediction set, all palette-rendered.
pub fn render_predictions(
    path: &Path,
    images: &[ImageBuf],
    gt: &[Vec<u8>],
    pred_sets: &[(String, Vec<Vec<u8>>)],
    palette: &[[u8; 3]],
) -> Result<()> {
    let n = images.len();
    if gt.len() != n || pred_sets.iter().any(|(_, p)| p.len() != n) {
        return Err(Error::internal("render_predictions: sample counts differ".to_string()));
    }
    let (h, w) = (images[0].h, images[0].w);
    let mut columns = vec![GridColumn { title: "input".into(), panels: images.iter().map(to_rgb).collect() }];
    let gt_panels = gt
        .iter()
        .map(|l| render_class_map(l, h, w, palette))
        .collect::<Result<Vec<_>>>()?;
    columns.push(GridColumn { title: "truth".into(), panels: gt_panels });
    for (name, preds) in pred_sets {
        let panels = preds
            .iter()
            .map(|l| render_class_map(l, h, w, palette))
            .collect::<Result<Vec<_>>>()?;
        columns.push(GridColumn { title: name.clone(), panels });
    }
    render_grid(path, &columns)
}

// 5x7 font, one byte per row, low 5 bits used (MSB on the left).
fn glyph(c: char) -> [u8; 7] {
    match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ' ' => [0; 7],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F], // unknown: box
    }
}

fn draw_text(canvas: &mut [u8], total_w: usize, total_h: usize, x0: usize, y0: usize, text: &str) {
    let hw = total_h * total_w;
    for (i, ch) in text.chars().enumerate() {
        let gx = x0 + i * 6;
        if gx + 5 > total_w {
            break;
        }
        let g = glyph(ch);
        for (gy, row) in g.iter().enumerate() {
            for bit in 0..5 {
                if row & (0x10 >> bit) != 0 {
                    let (y, x) = (y0 + gy, gx + bit);
                    for c in 0..3 {
                        canvas[c * hw + y * total_w + x] = 255;
                    }
                }
            }
        }
    }
}
