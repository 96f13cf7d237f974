//! Procedural stitch-pattern families.
//!
//! Each family places motifs on a plain background. Single-yarn patterns use
//! the bare complete labels; multi-yarn patterns are first written as colored
//! labels `(slot/Nj)name` on horizontal yarn stripes and then aggregated.
//!
//! Several families deliberately share front labels while differing in their
//! complete labels, so that resolving them needs context wider than a few
//! cells: the VR diagonals of Move1 and Move2, and the E cells of Links1 and
//! Links2, look identical within a radius of two cells.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{aggregate_colored, default_complete_map, LabelMap, LabelSpace, StitchGrid, YarnType, GRID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternFamily {
    Hem,
    Move1,
    Miss,
    Cable1,
    Links2,
    Move2,
    Cable2,
    Mesh,
    Tuck,
    Links1,
}

impl PatternFamily {
    pub const ALL: [PatternFamily; 10] = [
        PatternFamily::Hem,
        PatternFamily::Move1,
        PatternFamily::Miss,
        PatternFamily::Cable1,
        PatternFamily::Links2,
        PatternFamily::Move2,
        PatternFamily::Cable2,
        PatternFamily::Mesh,
        PatternFamily::Tuck,
        PatternFamily::Links1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Hem => "Hem",
            PatternFamily::Move1 => "Move1",
            PatternFamily::Miss => "Miss",
            PatternFamily::Cable1 => "Cable1",
            PatternFamily::Links2 => "Links2",
            PatternFamily::Move2 => "Move2",
            PatternFamily::Cable2 => "Cable2",
            PatternFamily::Mesh => "Mesh",
            PatternFamily::Tuck => "Tuck",
            PatternFamily::Links1 => "Links1",
        }
    }

    /// Whether the family can be knitted with several yarns.
    pub fn supports_mj(self) -> bool {
        !matches!(self, PatternFamily::Move2 | PatternFamily::Cable2 | PatternFamily::Links2)
    }

    /// Families valid for `yarn`, in canonical order.
    pub fn for_yarn(yarn: YarnType) -> Vec<PatternFamily> {
        PatternFamily::ALL
            .into_iter()
            .filter(|f| yarn.is_sj() || f.supports_mj())
            .collect()
    }
}

impl fmt::Display for PatternFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Generation(format!("unknown pattern family {s:?}")))
    }
}

type Names = [[&'static str; GRID]; GRID];

/// Complete label names used by one yarn kind.
struct Palette {
    bg: &'static str,
    tuck: &'static str,
    hem: &'static str,
    diagonal: &'static str,
}

const SJ: Palette = Palette {
    bg: "FK",
    tuck: "T",
    hem: "T(F)",
    diagonal: "VR",
};

const MJ: Palette = Palette {
    bg: "FK,MAK",
    tuck: "FT,FMAK",
    hem: "FT,FMAK",
    diagonal: "VR,FMAK",
};

/// Deterministic complete grid for `(family, yarn, seed)`.
pub fn generate_pattern(family: PatternFamily, yarn: YarnType, seed: u64) -> Result<StitchGrid> {
    generate_with_map(family, yarn, seed, &default_complete_map())
}

pub(crate) fn generate_with_map(
    family: PatternFamily,
    yarn: YarnType,
    seed: u64,
    map: &LabelMap,
) -> Result<StitchGrid> {
    if !yarn.is_sj() && !family.supports_mj() {
        return Err(Error::Generation(format!("family {family} has no {yarn} variant")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mj = !yarn.is_sj();
    let pal = if mj { &MJ } else { &SJ };
    let mut n: Names = [[pal.bg; GRID]; GRID];
    match family {
        PatternFamily::Hem => hem(&mut n, pal, &mut rng),
        PatternFamily::Tuck => tuck(&mut n, pal, &mut rng),
        PatternFamily::Miss => miss(&mut n, mj, &mut rng),
        PatternFamily::Move1 => move1(&mut n, pal, &mut rng),
        PatternFamily::Move2 => move2(&mut n, &mut rng),
        PatternFamily::Cable1 => cables(&mut n, &["X(R)", "X(L)"], &mut rng),
        PatternFamily::Cable2 => cables(&mut n, &["X(R)", "X(R)", "X(L)", "X(L)"], &mut rng),
        PatternFamily::Mesh => mesh(&mut n, mj, &mut rng),
        PatternFamily::Links1 => links(&mut n, 1, 5, "E,V(L)", mj, &mut rng),
        PatternFamily::Links2 => links(&mut n, 2, 6, "E,V(R)", mj, &mut rng),
    }

    let slots = if mj { yarn_stripes(yarn.color_count(), &mut rng) } else { [1; GRID] };
    let mut cells = Vec::with_capacity(GRID * GRID);
    for (r, row) in n.iter().enumerate() {
        for &base in row {
            let name = if mj {
                aggregate_colored(&format!("({}/{}j){}", slots[r], yarn.color_count(), base))?
            } else {
                base.to_string()
            };
            let idx = map
                .index_of(&name)
                .ok_or_else(|| Error::Generation(format!("label {name:?} missing from complete map")))?;
            cells.push(idx as u8);
        }
    }
    StitchGrid::from_cells(LabelSpace::Complete, cells)
}

/// Yarn slot per row: stripes of 2–4 rows cycling through the colors.
fn yarn_stripes(count: u8, rng: &mut ChaCha8Rng) -> [u8; GRID] {
    let mut slots = [1; GRID];
    let mut slot = rng.gen_range(0..count);
    let mut r = 0;
    while r < GRID {
        let h = rng.gen_range(2..=4);
        for s in slots.iter_mut().skip(r).take(h) {
            *s = slot + 1;
        }
        slot = (slot + 1) % count;
        r += h;
    }
    slots
}

fn fill_row(n: &mut Names, r: usize, name: &'static str) {
    n[r] = [name; GRID];
}

fn hem(n: &mut Names, pal: &Palette, rng: &mut ChaCha8Rng) {
    let top = rng.gen_range(0..=2);
    let bottom = rng.gen_range(17..GRID);
    fill_row(n, top, pal.hem);
    fill_row(n, bottom, pal.hem);
    if rng.gen_bool(0.5) {
        fill_row(n, top + 1, pal.hem);
        fill_row(n, bottom - 1, pal.hem);
    }
    if rng.gen_bool(0.5) {
        fill_row(n, rng.gen_range(8..12), pal.hem);
    }
}

fn tuck(n: &mut Names, pal: &Palette, rng: &mut ChaCha8Rng) {
    let dx = rng.gen_range(3..=5);
    let dy = rng.gen_range(3..=4);
    let ox = rng.gen_range(0..dx);
    let oy = rng.gen_range(0..dy);
    for (i, r) in (oy..GRID - 1).step_by(dy).enumerate() {
        let shift = if i % 2 == 1 { dx / 2 } else { 0 };
        for c in ((ox + shift) % dx..GRID).step_by(dx) {
            n[r][c] = pal.tuck;
            n[r + 1][c] = "H,M";
        }
    }
}

fn miss(n: &mut Names, mj: bool, rng: &mut ChaCha8Rng) {
    let density = rng.gen_range(0.12..0.22);
    let mut placed = false;
    for r in 0..GRID {
        for c in 0..GRID {
            if rng.gen_bool(density) && n[r][c] != "V,M" {
                n[r][c] = "M";
                placed = true;
                if mj && r + 1 < GRID && rng.gen_bool(0.5) {
                    n[r + 1][c] = "V,M";
                }
            }
        }
    }
    if !placed {
        n[GRID / 2][GRID / 2] = "M";
    }
}

fn move1(n: &mut Names, pal: &Palette, rng: &mut ChaCha8Rng) {
    let spacing = rng.gen_range(4..=6);
    let offset = rng.gen_range(0..spacing);
    for (r, row) in n.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            if (c + GRID - r + offset) % spacing == 0 {
                *cell = pal.diagonal;
            }
        }
    }
}

/// Zigzag columns: `len` rows drifting right (VR) then `len` rows drifting left (VL).
fn move2(n: &mut Names, rng: &mut ChaCha8Rng) {
    let len = rng.gen_range(4..=6);
    let spacing = len + rng.gen_range(2..=3);
    let phase0 = rng.gen_range(0..2 * len);
    let start = rng.gen_range(0..spacing) as isize - spacing as isize;
    for (r, row) in n.iter_mut().enumerate() {
        let phase = (r + phase0) % (2 * len);
        let (drift, name) = if phase < len { (phase, "VR,FMAK") } else { (2 * len - phase, "VL") };
        let mut c0 = start;
        while c0 < GRID as isize {
            let c = c0 + drift as isize;
            if (0..GRID as isize).contains(&c) {
                row[c as usize] = name;
            }
            c0 += spacing as isize;
        }
    }
}

/// Cables flanked by purl columns, crossing every few rows.
fn cables(n: &mut Names, cross: &[&'static str], rng: &mut ChaCha8Rng) {
    let width = cross.len() + 2;
    let count = if cross.len() == 2 { rng.gen_range(2..=3) } else { rng.gen_range(1..=2) };
    let region = GRID / count;
    let period = rng.gen_range(4..=6);
    let offset = rng.gen_range(0..period);
    for k in 0..count {
        let c0 = k * region + rng.gen_range(0..=region - width);
        for (r, row) in n.iter_mut().enumerate() {
            row[c0] = "BK";
            row[c0 + width - 1] = "BK";
            if r % period == offset {
                for (j, &name) in cross.iter().enumerate() {
                    row[c0 + 1 + j] = name;
                }
            }
        }
    }
}

fn mesh(n: &mut Names, mj: bool, rng: &mut ChaCha8Rng) {
    if !mj {
        let dx = rng.gen_range(2..=3);
        let dy = rng.gen_range(2..=3);
        let ox = rng.gen_range(0..dx);
        let oy = rng.gen_range(0..dy);
        for (i, r) in (oy..GRID).step_by(dy).enumerate() {
            let shift = if i % 2 == 1 { 1 } else { 0 };
            for c in ((ox + shift) % dx..GRID).step_by(dx) {
                n[r][c] = "Y,MATBK";
            }
        }
        return;
    }
    // Eyelets with a transferred neighbor; the first eyelet row is an
    // anchor row with its own label.
    let dx = rng.gen_range(3..=4);
    let dy = rng.gen_range(3..=4);
    let ox = rng.gen_range(0..dx);
    let oy = rng.gen_range(0..dy);
    for (i, r) in (oy..GRID).step_by(dy).enumerate() {
        for c in (ox..GRID).step_by(dx) {
            n[r][c] = if i == 0 { "AO(2)" } else { "O(5),BK" };
            if c + 1 < GRID {
                n[r][c + 1] = "FO(2)";
            }
        }
    }
}

/// Purl stripes of `height` rows every `period` rows, with link cells two
/// rows below each stripe.
fn links(n: &mut Names, height: usize, period: usize, link: &'static str, mj: bool, rng: &mut ChaCha8Rng) {
    let offset = rng.gen_range(0..period);
    let spacing = rng.gen_range(3..=5);
    let ox = rng.gen_range(0..spacing);
    for r in 0..GRID {
        let phase = (r + period - offset) % period;
        if phase < height {
            fill_row(n, r, "BK");
        } else if phase == height + 1 {
            for c in (ox..GRID).step_by(spacing) {
                n[r][c] = link;
                if mj && r + 1 < GRID && (r + 1 + period - offset) % period >= height {
                    n[r + 1][c] = "V,HM";
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::complete as c;

    fn census(g: &StitchGrid) -> Vec<usize> {
        g.census(crate::labels::COMPLETE_K)
    }

    #[test]
    fn deterministic_per_seed() {
        for f in PatternFamily::ALL {
            let a = generate_pattern(f, YarnType::SJ, 7).unwrap();
            let b = generate_pattern(f, YarnType::SJ, 7).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn family_markers() {
        for seed in 0..20 {
            let miss = census(&generate_pattern(PatternFamily::Miss, YarnType::SJ, seed).unwrap());
            assert!(miss[c::M] > 0 && miss[c::FK] > 0);
            let tuck = census(&generate_pattern(PatternFamily::Tuck, YarnType::SJ, seed).unwrap());
            assert!(tuck[c::T] > 0);
            for fam in [PatternFamily::Cable1, PatternFamily::Cable2] {
                let cable = census(&generate_pattern(fam, YarnType::SJ, seed).unwrap());
                assert!(cable[c::XR] > 0);
                assert_eq!(cable[c::XR], cable[c::XL]);
            }
        }
    }

    #[test]
    fn mj_uses_aggregated_background() {
        let yarn = YarnType::mj(3).unwrap();
        for f in PatternFamily::for_yarn(yarn) {
            let g = census(&generate_pattern(f, yarn, 3).unwrap());
            assert_eq!(g[c::FK], 0, "{f}");
            assert!(g[c::FK_MAK] > 0, "{f}");
        }
    }

    #[test]
    fn unsupported_mj_family() {
        let yarn = YarnType::mj(2).unwrap();
        let err = generate_pattern(PatternFamily::Cable2, yarn, 0).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }

    #[test]
    fn family_names_parse() {
        for f in PatternFamily::ALL {
            assert_eq!(f.name().parse::<PatternFamily>().unwrap(), f);
        }
        assert!("Lace".parse::<PatternFamily>().is_err());
    }
}
