//! Binary PPM frames of occupancy values with colored overlays.
//!
//! Occupancy is drawn in grayscale (white = free, black = occupied). Overlay
//! layers are painted in order, so later layers win on shared cells.

use crate::grid_world::{CellPos, GridDims};

pub type Rgb = [u8; 3];

pub const SUPPORTER_PATH: Rgb = [255, 170, 60];
pub const TRAJECTORY: Rgb = [40, 110, 230];
pub const PLAN: Rgb = [40, 190, 80];
pub const SUPPORTER: Rgb = [250, 220, 0];
pub const SEEKER: Rgb = [220, 30, 30];
pub const GOAL: Rgb = [200, 40, 200];

/// Overlay cells are drawn as an inset square so the value underneath
/// stays visible at the border.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    layers: Vec<(Rgb, Vec<CellPos>)>,
}

impl Frame {
    pub fn new() -> Self {
        Frame::default()
    }

    pub fn layer(mut self, color: Rgb, cells: impl IntoIterator<Item = CellPos>) -> Self {
        self.layers.push((color, cells.into_iter().collect()));
        self
    }

    /// P6 image with `scale x scale` pixels per cell.
    pub fn render(&self, dims: GridDims, values: &[f64], scale: usize) -> Vec<u8> {
        assert_eq!(values.len(), dims.len(), "one value per cell");
        let scale = scale.max(1);
        let (pw, ph) = (dims.width * scale, dims.height * scale);
        let mut px = vec![0u8; pw * ph * 3];
        let mut paint = |cell: CellPos, color: Rgb, inset: usize| {
            for y in cell.row * scale + inset..(cell.row + 1) * scale - inset {
                for x in cell.col * scale + inset..(cell.col + 1) * scale - inset {
                    let o = (y * pw + x) * 3;
                    px[o..o + 3].copy_from_slice(&color);
                }
            }
        };
        for (i, &v) in values.iter().enumerate() {
            let g = ((1.0 - v.clamp(0.0, 1.0)) * 255.0).round() as u8;
            paint(dims.pos(i), [g, g, g], 0);
        }
        let inset = if scale >= 4 { scale / 4 } else { 0 };
        for (color, cells) in &self.layers {
            for &c in cells {
                if dims.contains(c) {
                    paint(c, *color, inset);
                }
            }
        }
        let mut out = format!("P6\n{pw} {ph}\n255\n").into_bytes();
        out.extend_from_slice(&px);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_size() {
        let dims = GridDims::new(3, 2).unwrap();
        let img = Frame::new().render(dims, &[0.0; 6], 4);
        let header = b"P6\n12 8\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 12 * 8 * 3);
    }

    #[test]
    fn grayscale_and_overlay() {
        let dims = GridDims::new(2, 1).unwrap();
        let img = Frame::new()
            .layer(SEEKER, [CellPos::new(0, 1)])
            .render(dims, &[1.0, 0.0], 1);
        let body = &img[img.len() - 6..];
        assert_eq!(body, &[0, 0, 0, 220, 30, 30]);
    }
}
