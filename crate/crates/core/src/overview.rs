//! Thumbnail overview grids.
//!
//! Pages are split into consecutive groups of at most `G`; each group becomes
//! one composite image laid out on a near-square `R x C` grid with
//! `R = ceil(sqrt(n))` and `C = ceil(n / R)`. A cell is a `h`-pixel header
//! band carrying the absolute page number above a 256x256 letterboxed
//! thumbnail. Unused cells are blank.

use std::ops::RangeInclusive;

use image::RgbImage;
use serde::Serialize;

use crate::corpus::{page_token_cost, CorpusError, Document};
use crate::font;
use crate::raster::{letterbox, BLACK, WHITE};

pub const THUMB_SIZE: u32 = 256;

/// Consecutive 1-based page ranges of at most `capacity` pages covering `1..=n`.
pub fn partition_groups(n: usize, capacity: usize) -> Vec<RangeInclusive<u32>> {
    assert!(capacity >= 1, "group capacity must be positive");
    (0..n.div_ceil(capacity))
        .map(|k| {
            let first = k * capacity + 1;
            let last = ((k + 1) * capacity).min(n);
            first as u32..=last as u32
        })
        .collect()
}

/// `(rows, cols)` for `n` cells: `rows = ceil(sqrt(n))`, `cols = ceil(n / rows)`.
pub fn grid_dims(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut rows = (n as f64).sqrt() as usize;
    while rows * rows < n {
        rows += 1;
    }
    while rows > 1 && (rows - 1) * (rows - 1) >= n {
        rows -= 1;
    }
    (rows, n.div_ceil(rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellEntry {
    pub row: usize,
    pub col: usize,
    pub page: Option<u32>,
}

/// Geometry of one overview image; no pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupLayout {
    /// 1-based image number.
    pub k: usize,
    pub first_page: u32,
    pub last_page: u32,
    pub rows: usize,
    pub cols: usize,
    pub header_height: u32,
    pub width: u32,
    pub height: u32,
}

impl GroupLayout {
    pub fn page_count(&self) -> usize {
        (self.last_page - self.first_page + 1) as usize
    }

    /// Row-major: cell `(r, c)` holds the `(r * cols + c)`-th page of the group.
    pub fn cell_page(&self, row: usize, col: usize) -> Option<u32> {
        let slot = row * self.cols + col;
        (row < self.rows && col < self.cols && slot < self.page_count()).then(|| self.first_page + slot as u32)
    }

    pub fn cells(&self) -> Vec<CellEntry> {
        (0..self.rows)
            .flat_map(|row| (0..self.cols).map(move |col| (row, col)))
            .map(|(row, col)| CellEntry { row, col, page: self.cell_page(row, col) })
            .collect()
    }

    pub fn cell_origin(&self, row: usize, col: usize) -> (u32, u32) {
        (col as u32 * THUMB_SIZE, row as u32 * (self.header_height + THUMB_SIZE))
    }

    pub fn token_cost(&self) -> u64 {
        page_token_cost(self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverviewLayout {
    pub group_capacity: usize,
    pub header_height: u32,
    pub groups: Vec<GroupLayout>,
}

impl OverviewLayout {
    pub fn new(n_pages: usize, group_capacity: usize, header_height: u32) -> Self {
        let groups = partition_groups(n_pages, group_capacity)
            .into_iter()
            .enumerate()
            .map(|(i, range)| {
                let n = (range.end() - range.start() + 1) as usize;
                let (rows, cols) = grid_dims(n);
                GroupLayout {
                    k: i + 1,
                    first_page: *range.start(),
                    last_page: *range.end(),
                    rows,
                    cols,
                    header_height,
                    width: cols as u32 * THUMB_SIZE,
                    height: rows as u32 * (header_height + THUMB_SIZE),
                }
            })
            .collect();
        Self { group_capacity, header_height, groups }
    }

    pub fn token_cost(&self) -> u64 {
        self.groups.iter().map(GroupLayout::token_cost).sum()
    }
}

#[derive(Debug, Clone)]
pub struct OverviewImage {
    pub layout: GroupLayout,
    pub composite: RgbImage,
}

#[derive(Debug, Clone)]
pub struct OverviewSet {
    pub layout: OverviewLayout,
    pub images: Vec<OverviewImage>,
}

impl OverviewSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Glyph scale used for a header band of height `h`.
fn header_scale(h: u32) -> u32 {
    (h.saturating_sub(4) / font::GLYPH_HEIGHT).max(1)
}

/// Draws the page number into the header band whose top-left is (`x`, `y`).
pub fn draw_header(img: &mut RgbImage, x: u32, y: u32, h: u32, page: u32) {
    let label = page.to_string();
    let scale = header_scale(h);
    let tw = font::text_width(&label, scale);
    let tx = i64::from(x) + (i64::from(THUMB_SIZE) - i64::from(tw)) / 2;
    let ty = i64::from(y) + (i64::from(h) - i64::from(font::GLYPH_HEIGHT * scale)) / 2;
    font::draw_text(img, tx, ty, &label, scale, BLACK);
}

pub fn render_group(doc: &Document, layout: &GroupLayout) -> Result<RgbImage, CorpusError> {
    let mut img = RgbImage::from_pixel(layout.width, layout.height, WHITE);
    for cell in layout.cells() {
        let Some(page_no) = cell.page else { continue };
        let page = doc.page(page_no).expect("layout built from this document");
        let (x, y) = layout.cell_origin(cell.row, cell.col);
        draw_header(&mut img, x, y, layout.header_height, page_no);
        let thumb = letterbox(&page.raster()?, THUMB_SIZE, THUMB_SIZE);
        image::imageops::replace(&mut img, &thumb, i64::from(x), i64::from(y + layout.header_height));
    }
    Ok(img)
}

pub fn build_overview(doc: &Document, group_capacity: usize, header_height: u32) -> Result<OverviewSet, CorpusError> {
    let layout = OverviewLayout::new(doc.num_pages(), group_capacity, header_height);
    let images = layout
        .groups
        .iter()
        .map(|g| Ok(OverviewImage { layout: g.clone(), composite: render_group(doc, g)? }))
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(OverviewSet { layout, images })
}

pub fn overview_token_cost(set: &OverviewSet) -> u64 {
    set.images.iter().map(|i| page_token_cost(i.composite.width(), i.composite.height())).sum()
}
