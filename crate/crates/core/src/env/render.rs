//! Fixed 10x10 cell bitmaps and whole-board rendering.

use super::{CellContent, EnvConfig};
use crate::tensor::Tensor;

/// Side of a cell bitmap in pixels.
pub const GLYPH: usize = 10;

/// Ink mask (`true` = shape pixel) of one cell.
///
/// - Agent: plus, rows 4-5 across cols 2-7 and cols 4-5 across rows 2-7.
/// - Cross: both diagonals of the central 8x8 (rows/cols 1-8).
/// - Circle: Chebyshev ring on the border of rows/cols 2-7, corners removed.
/// - Square: outline of rows/cols 1-8.
pub fn glyph(kind: CellContent) -> [[bool; GLYPH]; GLYPH] {
    let mut g = [[false; GLYPH]; GLYPH];
    for (r, row) in g.iter_mut().enumerate() {
        for (c, px) in row.iter_mut().enumerate() {
            *px = match kind {
                CellContent::Empty => false,
                CellContent::Agent => {
                    let band = |x: usize| (4..=5).contains(&x);
                    let span = |x: usize| (2..=7).contains(&x);
                    (band(r) && span(c)) || (band(c) && span(r))
                }
                CellContent::Cross => (1..=8).contains(&r) && (c == r || c == 9 - r),
                CellContent::Circle => {
                    let inside = (2..=7).contains(&r) && (2..=7).contains(&c);
                    let edge = r == 2 || r == 7 || c == 2 || c == 7;
                    let corner = (r == 2 || r == 7) && (c == 2 || c == 7);
                    inside && edge && !corner
                }
                CellContent::Square => {
                    let inside = (1..=8).contains(&r) && (1..=8).contains(&c);
                    inside && (r == 1 || r == 8 || c == 1 || c == 8)
                }
            };
        }
    }
    g
}

/// Renders `cells` (row-major, `side * side`) as a `[1, H, W]` image.
pub fn render_cells(cells: &[CellContent], config: &EnvConfig) -> Tensor {
    let side = config.grid_side;
    let px = side * GLYPH;
    let mut data = vec![config.background_value; px * px];
    for (k, &kind) in cells.iter().enumerate() {
        if kind == CellContent::Empty {
            continue;
        }
        let (r0, c0) = ((k / side) * GLYPH, (k % side) * GLYPH);
        let g = glyph(kind);
        for (r, row) in g.iter().enumerate() {
            for (c, &ink) in row.iter().enumerate() {
                if ink {
                    data[(r0 + r) * px + c0 + c] = config.shape_value;
                }
            }
        }
    }
    Tensor::new(vec![1, px, px], data).expect("rendered image is well formed")
}
