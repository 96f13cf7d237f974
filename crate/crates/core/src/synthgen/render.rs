//! Tile-atlas renderer and its exact inverse.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{LabelSpace, StitchGrid, COMPLETE_K, FRONT_K, GRID};

pub const TILE: usize = 8;
pub const IMAGE_SIZE: usize = GRID * TILE;
/// Minimum max-abs channel difference between any two tiles (16/255).
pub const MIN_TILE_DISTANCE: u8 = 16;

const TILE_BYTES: usize = TILE * TILE * 3;

/// One 8×8 RGB tile per label of a space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderTileAtlas {
    space: LabelSpace,
    seed: u64,
    tiles: Vec<[u8; TILE_BYTES]>,
}

impl RenderTileAtlas {
    /// Seeded atlas; tiles are knit-like loop textures in two tones.
    pub fn new(space: LabelSpace, seed: u64) -> Self {
        let k = match space {
            LabelSpace::Front => FRONT_K,
            LabelSpace::Complete => COMPLETE_K,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7469_6c65);
        let mut tiles: Vec<[u8; TILE_BYTES]> = Vec::with_capacity(k);
        while tiles.len() < k {
            let t = random_tile(&mut rng);
            if tiles.iter().all(|o| tile_distance(o, &t) > MIN_TILE_DISTANCE) {
                tiles.push(t);
            }
        }
        RenderTileAtlas { space, seed, tiles }
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// RGB bytes of a tile, row-major.
    pub fn tile(&self, label: usize) -> &[u8] {
        &self.tiles[label]
    }
}

fn tile_distance(a: &[u8], b: &[u8]) -> u8 {
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).max().unwrap_or(0)
}

/// A stitch-like tile: a base tone with a V-shaped loop in a second tone
/// plus a random speckle mask.
fn random_tile(rng: &mut ChaCha8Rng) -> [u8; TILE_BYTES] {
    let base: [f32; 3] = std::array::from_fn(|_| rng.gen_range(30.0..225.0));
    let loop_tone: [f32; 3] = std::array::from_fn(|_| rng.gen_range(30.0..225.0));
    let slope = rng.gen_range(0.3..1.2f32);
    let width = rng.gen_range(0.8..2.2f32);
    let tilt = rng.gen_range(-1.0..1.0f32);
    let mut t = [0u8; TILE_BYTES];
    for y in 0..TILE {
        for x in 0..TILE {
            let cx = x as f32 - 3.5 + tilt * (y as f32 - 3.5) * 0.3;
            let v = (cx.abs() * slope - (7.0 - y as f32) * 0.5).abs() < width;
            let speckle = rng.gen_range(-18.0..18.0f32);
            let tone = if v { loop_tone } else { base };
            for ch in 0..3 {
                t[(y * TILE + x) * 3 + ch] = (tone[ch] + speckle).clamp(0.0, 255.0) as u8;
            }
        }
    }
    t
}

/// Paints each cell with its label's tile.
pub fn render(grid: &StitchGrid, atlas: &RenderTileAtlas) -> Result<RgbImage> {
    if grid.space() != atlas.space() {
        return Err(Error::SpaceMismatch(format!(
            "cannot render a {} grid with a {} atlas",
            grid.space(),
            atlas.space()
        )));
    }
    let mut img = RgbImage::new(IMAGE_SIZE as u32, IMAGE_SIZE as u32);
    for r in 0..GRID {
        for c in 0..GRID {
            let tile = atlas.tile(grid.get(r, c));
            for y in 0..TILE {
                for x in 0..TILE {
                    let o = (y * TILE + x) * 3;
                    img.put_pixel(
                        (c * TILE + x) as u32,
                        (r * TILE + y) as u32,
                        Rgb([tile[o], tile[o + 1], tile[o + 2]]),
                    );
                }
            }
        }
    }
    Ok(img)
}

/// Nearest-tile classification per cell by summed squared difference; ties
/// go to the lowest label index. Images must be 160×160.
pub fn tile_decode(image: &RgbImage, atlas: &RenderTileAtlas) -> Result<StitchGrid> {
    if image.width() as usize != IMAGE_SIZE || image.height() as usize != IMAGE_SIZE {
        return Err(Error::Shape(format!(
            "tile_decode expects {IMAGE_SIZE}×{IMAGE_SIZE}, got {}×{}",
            image.width(),
            image.height()
        )));
    }
    let mut cells = Vec::with_capacity(GRID * GRID);
    let mut block = [0i32; TILE_BYTES];
    for r in 0..GRID {
        for c in 0..GRID {
            for y in 0..TILE {
                for x in 0..TILE {
                    let p = image.get_pixel((c * TILE + x) as u32, (r * TILE + y) as u32);
                    for ch in 0..3 {
                        block[(y * TILE + x) * 3 + ch] = p[ch] as i32;
                    }
                }
            }
            let mut best = (u64::MAX, 0usize);
            for (label, tile) in atlas.tiles.iter().enumerate() {
                let ssd: u64 = tile
                    .iter()
                    .zip(&block)
                    .map(|(&t, &b)| {
                        let d = (t as i32 - b) as i64;
                        (d * d) as u64
                    })
                    .sum();
                if ssd < best.0 {
                    best = (ssd, label);
                }
            }
            cells.push(best.1 as u8);
        }
    }
    StitchGrid::from_cells(atlas.space(), cells)
}
