use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::map::{LabelMap, LabelSpace};
use crate::error::{Error, Result};

/// Side length of a stitch grid.
pub const GRID: usize = 20;
/// Cells per grid.
pub const CELLS: usize = GRID * GRID;

/// A 20×20 grid of label indices, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StitchGrid {
    space: LabelSpace,
    cells: Vec<u8>,
}

impl StitchGrid {
    pub fn filled(space: LabelSpace, label: usize) -> Self {
        StitchGrid {
            space,
            cells: vec![label as u8; CELLS],
        }
    }

    pub fn from_cells(space: LabelSpace, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != CELLS {
            return Err(Error::GridFormat(format!(
                "grid must have {CELLS} cells, got {}",
                cells.len()
            )));
        }
        Ok(StitchGrid { space, cells })
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.cells[row * GRID + col] as usize
    }

    pub fn set(&mut self, row: usize, col: usize, label: usize) {
        self.cells[row * GRID + col] = label as u8;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().map(|&c| c as usize)
    }

    /// Fails unless the grid lives in the map's space and every index is valid there.
    pub fn check_against(&self, map: &LabelMap) -> Result<()> {
        if map.space() != self.space {
            return Err(Error::SpaceMismatch(format!(
                "grid is {} but map is {}",
                self.space,
                map.space()
            )));
        }
        if let Some(bad) = self.cells.iter().find(|&&c| c as usize >= map.len()) {
            return Err(Error::GridFormat(format!(
                "index {bad} out of range for {}-entry map",
                map.len()
            )));
        }
        Ok(())
    }

    /// Per-label cell counts over `k` labels.
    pub fn census(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &c in &self.cells {
            counts[c as usize] += 1;
        }
        counts
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(CELLS * 3);
        for row in self.cells.chunks(GRID) {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(s, "{c}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv_str(text: &str, map: &LabelMap) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != GRID {
            return Err(Error::GridFormat(format!("expected {GRID} rows, got {}", rows.len())));
        }
        let mut cells = Vec::with_capacity(CELLS);
        for (r, line) in rows.iter().enumerate() {
            let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
            if fields.len() != GRID {
                return Err(Error::GridFormat(format!(
                    "row {r}: expected {GRID} values, got {}",
                    fields.len()
                )));
            }
            for f in fields {
                let v: usize = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::GridFormat(format!("row {r}: bad value {f:?}")))?;
                if v >= map.len() {
                    return Err(Error::GridFormat(format!(
                        "row {r}: index {v} out of range for {}-entry map",
                        map.len()
                    )));
                }
                cells.push(v as u8);
            }
        }
        StitchGrid::from_cells(map.space(), cells)
    }
}

pub fn save_grid(grid: &StitchGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, grid.to_csv_string())?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>, map: &LabelMap) -> Result<StitchGrid> {
    StitchGrid::from_csv_str(&std::fs::read_to_string(path)?, map)
}

/// Projects a complete grid onto the front space cell by cell.
pub fn complete_to_front(grid: &StitchGrid, map: &LabelMap) -> Result<StitchGrid> {
    if grid.space() != LabelSpace::Complete {
        return Err(Error::SpaceMismatch(format!(
            "expected a complete grid, got {}",
            grid.space()
        )));
    }
    let proj = map
        .front_projection()
        .ok_or_else(|| Error::SpaceMismatch("map has no front projection".into()))?;
    let cells = grid
        .cells
        .iter()
        .map(|&c| {
            proj.get(c as usize)
                .map(|&f| f as u8)
                .ok_or_else(|| Error::GridFormat(format!("index {c} not in complete map")))
        })
        .collect::<Result<Vec<u8>>>()?;
    StitchGrid::from_cells(LabelSpace::Front, cells)
}

/// Paints each cell as a `cell_px`×`cell_px` block of its label's display color.
pub fn grid_to_color_image(grid: &StitchGrid, map: &LabelMap, cell_px: u32) -> Result<RgbImage> {
    if cell_px == 0 {
        return Err(Error::Param("cell_px must be at least 1".into()));
    }
    grid.check_against(map)?;
    let side = GRID as u32 * cell_px;
    Ok(RgbImage::from_fn(side, side, |x, y| {
        let label = grid.get((y / cell_px) as usize, (x / cell_px) as usize);
        Rgb(map.color(label).expect("checked index"))
    }))
}
