//! Label spaces, stitch grids and their file formats.
//!
//! Two index spaces exist: the 14 visually observable *front* labels and the
//! wider *complete* space that also encodes back-bed structure. Every complete
//! label projects onto exactly one front label.

mod colored;
mod grid;
mod map;

pub use colored::{aggregate_colored, ColoredLabel, YarnKind, YarnType};
pub use grid::{
    complete_to_front, grid_to_color_image, load_grid, save_grid, StitchGrid, CELLS, GRID,
};
pub use map::{
    format_hex_color, load_label_map, parse_hex_color, LabelEntry, LabelMap, LabelSpace, SpaceId,
    COMPLETE_K, FRONT_K,
};

const FRONT_SJ_CSV: &str = include_str!("../../maps/front_sj.csv");
const FRONT_MJ_CSV: &str = include_str!("../../maps/front_mj.csv");
const COMPLETE_CSV: &str = include_str!("../../maps/complete.csv");

/// Front label indices of the shipped maps.
pub mod front {
    pub const FK: usize = 0;
    pub const BK: usize = 1;
    pub const T: usize = 2;
    pub const H: usize = 3;
    pub const M: usize = 4;
    pub const E: usize = 5;
    pub const V: usize = 6;
    pub const VR: usize = 7;
    pub const VL: usize = 8;
    pub const XR: usize = 9;
    pub const XL: usize = 10;
    pub const O: usize = 11;
    pub const Y: usize = 12;
    pub const FO: usize = 13;
}

/// Complete label indices of the shipped map.
pub mod complete {
    pub const FK: usize = 0;
    pub const BK: usize = 1;
    pub const T: usize = 2;
    pub const H_M: usize = 3;
    pub const M: usize = 4;
    pub const E_VL: usize = 5;
    pub const V_HM: usize = 6;
    pub const VR: usize = 7;
    pub const VL: usize = 8;
    pub const XR: usize = 9;
    pub const XL: usize = 10;
    pub const TF: usize = 11;
    pub const V_M: usize = 12;
    pub const E_VR: usize = 13;
    pub const FK_MAK: usize = 14;
    pub const FT_FMAK: usize = 15;
    pub const Y_MATBK: usize = 16;
    pub const FO2: usize = 17;
    pub const O5_BK: usize = 18;
    pub const VR_FMAK: usize = 19;
    pub const AO2: usize = 20;
}

/// Shipped single-yarn front map.
pub fn default_front_map() -> LabelMap {
    LabelMap::from_csv_str(FRONT_SJ_CSV, SpaceId::FrontSj).expect("bundled front_sj map is valid")
}

/// Shipped multi-yarn front map (same indices, different palette).
pub fn default_front_mj_map() -> LabelMap {
    LabelMap::from_csv_str(FRONT_MJ_CSV, SpaceId::FrontMj).expect("bundled front_mj map is valid")
}

/// Shipped complete map: 21 named labels plus reserved slots up to 34.
pub fn default_complete_map() -> LabelMap {
    LabelMap::from_csv_str(COMPLETE_CSV, SpaceId::Complete).expect("bundled complete map is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_maps_are_valid() {
        let f = default_front_map();
        assert_eq!(f.len(), FRONT_K);
        assert_eq!(f.name(front::FK), Some("FK"));
        assert_eq!(f.name(front::FO), Some("FO"));
        assert_eq!(default_front_mj_map().len(), FRONT_K);
        let c = default_complete_map();
        assert_eq!(c.len(), COMPLETE_K);
        assert_eq!(c.front_projection().unwrap().len(), COMPLETE_K);
    }

    #[test]
    fn front_names_agree_between_maps() {
        let f = default_front_map();
        let c = default_complete_map();
        for name in ["FK", "BK", "T", "M", "VR", "VL", "X(R)", "X(L)"] {
            let ci = c.index_of(name).unwrap();
            assert_eq!(c.front_projection().unwrap()[ci], f.index_of(name).unwrap());
        }
        let fkmak = c.index_of("FK,MAK").unwrap();
        assert_eq!(c.front_projection().unwrap()[fkmak], front::FK);
    }

    #[test]
    fn color_image_dimensions() {
        let map = default_front_map();
        let grid = StitchGrid::filled(LabelSpace::Front, front::BK);
        let img = grid_to_color_image(&grid, &map, 8).unwrap();
        assert_eq!(img.dimensions(), (160, 160));
        assert!(img.pixels().all(|p| p.0 == map.color(front::BK).unwrap()));
        assert!(grid_to_color_image(&grid, &map, 0).is_err());
    }

    #[test]
    fn adjacent_cells_paint_distinct_blocks() {
        let map = default_front_map();
        let mut grid = StitchGrid::filled(LabelSpace::Front, front::FK);
        grid.set(3, 4, front::T);
        let img = grid_to_color_image(&grid, &map, 8).unwrap();
        for y in 24..32 {
            for x in 32..40 {
                assert_eq!(img.get_pixel(x, y).0, map.color(front::T).unwrap());
            }
            for x in 24..32 {
                assert_eq!(img.get_pixel(x, y).0, map.color(front::FK).unwrap());
            }
        }
    }

    #[test]
    fn grid_file_errors() {
        let map = default_front_map();
        let grid = StitchGrid::filled(LabelSpace::Front, front::FK);
        let text = grid.to_csv_string();
        let short: String = text.lines().take(19).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            StitchGrid::from_csv_str(&short, &map),
            Err(crate::Error::GridFormat(_))
        ));
        let out_of_range = text.replacen('0', "14", 1);
        assert!(matches!(
            StitchGrid::from_csv_str(&out_of_range, &map),
            Err(crate::Error::GridFormat(_))
        ));
        assert_eq!(StitchGrid::from_csv_str(&text, &map).unwrap(), grid);
    }

    #[test]
    fn projection_rejects_front_grid() {
        let map = default_complete_map();
        let grid = StitchGrid::filled(LabelSpace::Front, 0);
        assert!(complete_to_front(&grid, &map).is_err());
    }
}
