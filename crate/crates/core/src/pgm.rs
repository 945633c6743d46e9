//! Binary PGM (P5) output for grayscale images in `[0, 1]`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes a `[h×w]` tensor as an 8-bit P5 image; values are clamped to `[0, 1]`.
pub fn write_pgm<W: Write>(mut out: W, img: &Tensor) -> Result<()> {
    let (h, w) = match img.shape() {
        [h, w] => (*h, *w),
        s => {
            return Err(Error::dim(
                "write_pgm",
                format!("expected a 2-D image, got {s:?}"),
            ))
        }
    };
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Tiles equally sized images row-major into a grid separated by 1-px black
/// lines, including an outer border. Fewer images than `cols` shrink the grid.
pub fn tile_grid(images: &[Tensor], cols: usize) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("no images to tile".into()))?;
    let (h, w) = match first.shape() {
        [h, w] => (*h, *w),
        s => {
            return Err(Error::dim(
                "tile_grid",
                format!("expected 2-D images, got {s:?}"),
            ))
        }
    };
    if cols == 0 {
        return Err(Error::Config("grid needs at least one column".into()));
    }
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let gh = rows * h + rows + 1;
    let gw = cols * w + cols + 1;
    let mut data = vec![0.0; gh * gw];
    for (k, img) in images.iter().enumerate() {
        if img.shape() != [h, w] {
            return Err(Error::dim("tile_grid", "images differ in size"));
        }
        let (r, c) = (k / cols, k % cols);
        let (oy, ox) = (1 + r * (h + 1), 1 + c * (w + 1));
        for y in 0..h {
            data[(oy + y) * gw + ox..(oy + y) * gw + ox + w]
                .copy_from_slice(&img.data()[y * w..(y + 1) * w]);
        }
    }
    Tensor::new(vec![gh, gw], data)
}
