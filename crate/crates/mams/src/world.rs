//! World model: labeled occupancy/risk maps and their full dyadic tree
//! abstraction.
//!
//! A map assigns every unit cell a risk value in `[0, 1]`. The tree stores,
//! for every dyadic region of the world, the mean risk over the cells it
//! covers, so the value of an internal node is always the arithmetic mean of
//! its children. Cells with risk exactly 1.0 are impassable; a region is
//! impassable when it contains any such cell.

use std::io::Read;
use std::sync::Arc;

use thiserror::Error;

use crate::geom::{cell_index, Region};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("side length {0} is not a power of two")]
    NotPowerOfTwo(i64),
    #[error("map is not square: row {row} has {got} columns, expected {expected}")]
    RaggedRows { row: usize, got: usize, expected: usize },
    #[error("row count {rows} does not match column count {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("cell value {value} at index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cell count {got} does not match 2^(d*l) = {expected}")]
    WrongCellCount { got: usize, expected: usize },
}

/// Dense risk map over the unit cells of a `2^l`-sided hypercube world.
/// Cells are stored row-major with axis 0 varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap<const D: usize> {
    depth: u8,
    cells: Vec<f64>,
}

impl<const D: usize> OccupancyMap<D> {
    pub fn new(depth: u8, cells: Vec<f64>) -> Result<Self, MapError> {
        let expected = 1usize << (D as u32 * depth as u32);
        if cells.len() != expected {
            return Err(MapError::WrongCellCount { got: cells.len(), expected });
        }
        for (index, &value) in cells.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(MapError::ValueOutOfRange { index, value });
            }
        }
        Ok(OccupancyMap { depth, cells })
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn side(&self) -> i64 {
        1i64 << self.depth
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cell_value(&self, cell: &[i64; D]) -> f64 {
        self.cells[cell_index(cell, self.side())]
    }
}

/// Supported on-disk map encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    /// ASCII rows of comma-separated decimals in `[0, 1]`.
    GridCsv,
    /// Binary P5 PGM; gray level g maps to risk g / maxval.
    PgmGray,
}

/// Parse a 2-D map from a byte stream. Both formats are square with a
/// power-of-two side.
pub fn load_map(reader: &mut dyn Read, format: MapFormat) -> Result<OccupancyMap<2>, MapError> {
    match format {
        MapFormat::GridCsv => load_grid_csv(reader),
        MapFormat::PgmGray => load_pgm(reader),
    }
}

fn depth_for_side(side: usize) -> Result<u8, MapError> {
    if side == 0 || !side.is_power_of_two() {
        return Err(MapError::NotPowerOfTwo(side as i64));
    }
    Ok(side.trailing_zeros() as u8)
}

fn load_grid_csv(reader: &mut dyn Read) -> Result<OccupancyMap<2>, MapError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| MapError::Malformed(format!("not valid utf-8 text: {e}")))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = rows.len();
    let mut cells = vec![0.0; n * n];
    for (y, row) in rows.iter().enumerate() {
        let values: Vec<&str> = row.split(',').collect();
        if values.len() != n {
            if y == 0 {
                // A non-square header row is indistinguishable from a wrong
                // row count; report whichever mismatch we saw first.
                return Err(MapError::NotSquare { rows: n, cols: values.len() });
            }
            return Err(MapError::RaggedRows { row: y, got: values.len(), expected: n });
        }
        for (x, v) in values.iter().enumerate() {
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|e| MapError::Malformed(format!("row {y}, column {x}: {e}")))?;
            cells[y * n + x] = value;
        }
    }
    let depth = depth_for_side(n)?;
    OccupancyMap::new(depth, cells)
}

fn load_pgm(reader: &mut dyn Read) -> Result<OccupancyMap<2>, MapError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    fn token(bytes: &[u8], pos: &mut usize) -> Result<String, MapError> {
        // Skip whitespace and `#` comment lines between header fields.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(MapError::Malformed("truncated pgm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }

    let magic = token(&bytes, &mut pos)?;
    if magic != "P5" {
        return Err(MapError::Malformed(format!("expected P5 magic, found {magic:?}")));
    }
    let width: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|e| MapError::Malformed(format!("bad width: {e}")))?;
    let height: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|e| MapError::Malformed(format!("bad height: {e}")))?;
    let maxval: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|e| MapError::Malformed(format!("bad maxval: {e}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(MapError::Malformed(format!("unsupported maxval {maxval}")));
    }
    if width != height {
        return Err(MapError::NotSquare { rows: height, cols: width });
    }
    let depth = depth_for_side(width)?;
    // Exactly one whitespace byte separates the header from raster data.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(MapError::Malformed(format!(
            "raster truncated: need {need} bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let cells: Vec<f64> =
        bytes[pos..pos + need].iter().map(|&g| g as f64 / maxval as f64).collect();
    OccupancyMap::new(depth, cells)
}

/// Full dyadic tree over a map: per-level mean risk plus an impassability
/// flag. Level `k` holds one slot per region of side `2^k`, indexed row-major
/// by `origin >> k`.
#[derive(Debug, Clone)]
pub struct Tree<const D: usize> {
    depth: u8,
    levels: Vec<Vec<f64>>,
    blocked: Vec<Vec<bool>>,
}

impl<const D: usize> Tree<D> {
    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn side(&self) -> i64 {
        1i64 << self.depth
    }

    pub fn root(&self) -> Region<D> {
        Region::root(self.depth)
    }

    fn slot(&self, region: &Region<D>) -> usize {
        let level_side = 1i64 << (self.depth - region.depth);
        let mut idx: i64 = 0;
        for i in (0..D).rev() {
            idx = idx * level_side + (region.origin[i] >> region.depth);
        }
        idx as usize
    }

    /// Mean risk over the region.
    pub fn value(&self, region: &Region<D>) -> f64 {
        self.levels[region.depth as usize][self.slot(region)]
    }

    /// True when the region contains at least one cell with risk exactly 1.0.
    pub fn blocked(&self, region: &Region<D>) -> bool {
        self.blocked[region.depth as usize][self.slot(region)]
    }
}

/// Build the full tree bottom-up. Pure: the same map yields a bit-identical
/// tree.
pub fn build_tree<const D: usize>(map: &OccupancyMap<D>) -> Arc<Tree<D>> {
    let depth = map.depth();
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(depth as usize + 1);
    let mut blocked: Vec<Vec<bool>> = Vec::with_capacity(depth as usize + 1);
    levels.push(map.cells().to_vec());
    blocked.push(map.cells().iter().map(|&v| v == 1.0).collect());

    for k in 1..=depth {
        let child_side = 1usize << (depth - (k - 1)) as usize;
        let level_side = 1usize << (depth - k) as usize;
        let len = level_side.pow(D as u32);
        let mut values = vec![0.0; len];
        let mut block = vec![false; len];
        let children = &levels[(k - 1) as usize];
        let child_block = &blocked[(k - 1) as usize];
        for idx in 0..len {
            // Decompose the level-k slot index, then visit the 2^D children.
            let mut coords = [0usize; D];
            let mut rest = idx;
            for (i, c) in coords.iter_mut().enumerate().take(D) {
                *c = rest % level_side;
                rest /= level_side;
                let _ = i;
            }
            let mut sum = 0.0;
            let mut any_blocked = false;
            for bits in 0..(1usize << D) {
                let mut cidx = 0usize;
                for i in (0..D).rev() {
                    let c = coords[i] * 2 + ((bits >> i) & 1);
                    cidx = cidx * child_side + c;
                }
                sum += children[cidx];
                any_blocked |= child_block[cidx];
            }
            values[idx] = sum / (1usize << D) as f64;
            block[idx] = any_blocked;
        }
        levels.push(values);
        blocked.push(block);
    }

    Arc::new(Tree { depth, levels, blocked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Region;

    fn csv(text: &str) -> Result<OccupancyMap<2>, MapError> {
        load_map(&mut text.as_bytes(), MapFormat::GridCsv)
    }

    #[test]
    fn uniform_free_space_loads() {
        let map = csv("0,0,0,0\n0,0,0,0\n0,0,0,0\n0,0,0,0\n").unwrap();
        assert_eq!(map.depth(), 2);
        assert!(map.cells().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_is_a_direct_copy() {
        let map = csv("0,1\n0,0\n").unwrap();
        assert_eq!(map.cells(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_non_power_of_two_side() {
        let five = "0,0,0,0,0\n".repeat(5);
        match csv(&five) {
            Err(MapError::NotPowerOfTwo(5)) => {}
            other => panic!("expected NotPowerOfTwo, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_values() {
        match csv("0,1.5\n0,0\n") {
            Err(MapError::ValueOutOfRange { value, .. }) => assert_eq!(value, 1.5),
            other => panic!("expected ValueOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_streams() {
        assert!(matches!(csv("0,abc\n0,0\n"), Err(MapError::Malformed(_))));
        assert!(matches!(csv("0,0\n0\n"), Err(MapError::RaggedRows { .. })));
    }

    #[test]
    fn pgm_maps_gray_linearly() {
        let mut data: Vec<u8> = b"P5\n# demo\n2 2\n200\n".to_vec();
        data.extend_from_slice(&[0, 100, 200, 50]);
        let map = load_map(&mut data.as_slice(), MapFormat::PgmGray).unwrap();
        assert_eq!(map.cells(), &[0.0, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn pgm_rejects_bad_magic_and_truncation() {
        let mut bad = b"P2\n2 2\n255\n".to_vec();
        bad.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            load_map(&mut bad.as_slice(), MapFormat::PgmGray),
            Err(MapError::Malformed(_))
        ));
        let short = b"P5\n2 2\n255\n\x00\x01".to_vec();
        assert!(matches!(
            load_map(&mut short.as_slice(), MapFormat::PgmGray),
            Err(MapError::Malformed(_))
        ));
    }

    #[test]
    fn tree_of_zeros_is_all_zero() {
        let map = csv("0,0,0,0\n0,0,0,0\n0,0,0,0\n0,0,0,0\n").unwrap();
        let tree = build_tree(&map);
        assert_eq!(tree.value(&tree.root()), 0.0);
        assert_eq!(tree.value(&Region::new(1, [2, 2])), 0.0);
    }

    #[test]
    fn root_value_is_the_flat_mean_over_all_cells() {
        let map = csv("1,0\n0,0\n").unwrap();
        let tree = build_tree(&map);
        // Independent oracle: flat average over every leaf.
        let flat: f64 = map.cells().iter().sum::<f64>() / map.cells().len() as f64;
        assert_eq!(flat, 0.25);
        assert_eq!(tree.value(&tree.root()), flat);
    }

    #[test]
    fn quadrant_averages_combine_into_the_root() {
        let text = "0.1,0.1,0.2,0.2\n0.1,0.1,0.2,0.2\n0.3,0.3,0.4,0.4\n0.3,0.3,0.4,0.4\n";
        let map = csv(text).unwrap();
        let tree = build_tree(&map);
        let flat: f64 = map.cells().iter().sum::<f64>() / 16.0;
        assert!((tree.value(&tree.root()) - flat).abs() < 1e-12);
        assert!((tree.value(&tree.root()) - (0.1 + 0.2 + 0.3 + 0.4) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn internal_values_are_means_of_children() {
        let map = csv("0.25,0.5,0,0\n0.75,1,0,0.125\n0,0,1,1\n0,0,1,1\n").unwrap();
        let tree = build_tree(&map);
        let mut stack = vec![tree.root()];
        while let Some(region) = stack.pop() {
            if region.depth == 0 {
                continue;
            }
            let kids = region.children();
            let mean: f64 = kids.iter().map(|k| tree.value(k)).sum::<f64>() / kids.len() as f64;
            assert!((tree.value(&region) - mean).abs() < 1e-12);
            assert_eq!(tree.blocked(&region), kids.iter().any(|k| tree.blocked(k)));
            stack.extend(kids);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let text = "0.1,0.9\n0.3,0.7\n";
        let a = build_tree(&csv(text).unwrap());
        let b = build_tree(&csv(text).unwrap());
        assert_eq!(a.levels, b.levels);
        assert_eq!(a.blocked, b.blocked);
    }

    #[test]
    fn blocked_requires_exact_one() {
        let map = csv("0.999,0\n0,0\n").unwrap();
        let tree = build_tree(&map);
        assert!(!tree.blocked(&tree.root()));
        let map = csv("1,0\n0,0\n").unwrap();
        let tree = build_tree(&map);
        assert!(tree.blocked(&tree.root()));
        assert!(tree.blocked(&Region::cell([0, 0])));
        assert!(!tree.blocked(&Region::cell([1, 0])));
    }

    #[test]
    fn three_dimensional_trees_aggregate_too() {
        let cells: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let map: OccupancyMap<3> = OccupancyMap::new(1, cells.clone()).unwrap();
        let tree = build_tree(&map);
        let mean = cells.iter().sum::<f64>() / 8.0;
        assert!((tree.value(&tree.root()) - mean).abs() < 1e-12);
    }
}
