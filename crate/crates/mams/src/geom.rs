//! Dyadic geometry for hypercube worlds.
//!
//! The world is the hypercube `[0, 2^l]^D` tiled by unit cells. Every region
//! handled by the planner is a dyadic cube: side `2^k`, anchored at a corner
//! whose coordinates are multiples of `2^k` (in unit-cell coordinates). Two
//! dyadic cubes are therefore either interior-disjoint or nested, which is
//! what makes exact integer comparisons possible throughout.

use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A point in world coordinates.
pub type Point<const D: usize> = [f64; D];

/// Axis-aligned dyadic cube of side `2^depth` with its minimum corner at
/// `origin` (unit-cell coordinates). Doubles as the identity of a tree node
/// and of a graph vertex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region<const D: usize> {
    pub depth: u8,
    pub origin: [i64; D],
}

impl<const D: usize> Serialize for Region<D> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Region", 2)?;
        st.serialize_field("depth", &self.depth)?;
        st.serialize_field("origin", &self.origin[..])?;
        st.end()
    }
}

impl<'de, const D: usize> Deserialize<'de> for Region<D> {
    fn deserialize<De: Deserializer<'de>>(deserializer: De) -> Result<Self, De::Error> {
        #[derive(Deserialize)]
        struct Raw {
            depth: u8,
            origin: Vec<i64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.origin.len() != D {
            return Err(De::Error::custom(format!(
                "expected {D} origin coordinates, found {}",
                raw.origin.len()
            )));
        }
        let mut origin = [0i64; D];
        origin.copy_from_slice(&raw.origin);
        Ok(Region { depth: raw.depth, origin })
    }
}

impl<const D: usize> Region<D> {
    pub fn new(depth: u8, origin: [i64; D]) -> Self {
        debug_assert!(
            origin.iter().all(|o| o % (1i64 << depth) == 0),
            "origin must be aligned to the region side"
        );
        Region { depth, origin }
    }

    /// Unit cell with the given origin.
    pub fn cell(origin: [i64; D]) -> Self {
        Region { depth: 0, origin }
    }

    /// Root region of a world of depth `l`.
    pub fn root(world_depth: u8) -> Self {
        Region { depth: world_depth, origin: [0; D] }
    }

    pub fn side(&self) -> i64 {
        1i64 << self.depth
    }

    /// Number of unit cells covered.
    pub fn volume(&self) -> i64 {
        1i64 << (self.depth as usize * D)
    }

    /// Center coordinates doubled, so they stay integers for exact
    /// lexicographic comparisons.
    pub fn center_x2(&self) -> [i64; D] {
        let mut c = [0i64; D];
        for i in 0..D {
            c[i] = 2 * self.origin[i] + self.side();
        }
        c
    }

    pub fn center(&self) -> Point<D> {
        let mut c = [0.0; D];
        for (i, v) in self.center_x2().iter().enumerate() {
            c[i] = *v as f64 / 2.0;
        }
        c
    }

    /// The 2^D children, in lexicographic origin order.
    pub fn children(&self) -> Vec<Region<D>> {
        assert!(self.depth > 0, "unit cells have no children");
        let half = self.side() / 2;
        let mut out = Vec::with_capacity(1 << D);
        for bits in 0..(1u32 << D) {
            let mut o = self.origin;
            for i in 0..D {
                if bits & (1 << i) != 0 {
                    o[i] += half;
                }
            }
            out.push(Region { depth: self.depth - 1, origin: o });
        }
        out.sort();
        out
    }

    pub fn parent(&self) -> Region<D> {
        let side2 = self.side() * 2;
        let mut o = self.origin;
        for v in o.iter_mut() {
            *v = v.div_euclid(side2) * side2;
        }
        Region { depth: self.depth + 1, origin: o }
    }

    /// Closed containment: every point of `other` lies in `self`.
    pub fn contains(&self, other: &Region<D>) -> bool {
        if self.depth < other.depth {
            return false;
        }
        (0..D).all(|i| {
            self.origin[i] <= other.origin[i]
                && other.origin[i] + other.side() <= self.origin[i] + self.side()
        })
    }

    pub fn strictly_contains(&self, other: &Region<D>) -> bool {
        self.depth > other.depth && self.contains(other)
    }

    /// True when the two closed cubes intersect in more than a single point,
    /// i.e. the intersection has dimension >= 1. Corner-only contact is not
    /// adjacency.
    pub fn touches(&self, other: &Region<D>) -> bool {
        let mut extended = 0;
        for i in 0..D {
            let lo = self.origin[i].max(other.origin[i]);
            let hi = (self.origin[i] + self.side()).min(other.origin[i] + other.side());
            if lo > hi {
                return false;
            }
            if lo < hi {
                extended += 1;
            }
        }
        extended >= 1
    }

    /// Closed-region point membership.
    pub fn contains_point(&self, p: &Point<D>) -> bool {
        (0..D).all(|i| {
            p[i] >= self.origin[i] as f64 && p[i] <= (self.origin[i] + self.side()) as f64
        })
    }

    pub fn interior_contains_point(&self, p: &Point<D>) -> bool {
        (0..D).all(|i| {
            p[i] > self.origin[i] as f64 && p[i] < (self.origin[i] + self.side()) as f64
        })
    }

    /// Origins of the unit cells covered by this region.
    pub fn cells(&self) -> CellIter<D> {
        CellIter { base: self.origin, side: self.side(), cursor: Some([0; D]) }
    }

    /// Unit cells outside the region within Chebyshev distance one of it,
    /// clipped to the world box. Any region touching `self` covers at least
    /// one of these cells.
    pub fn shell_cells(&self, world_depth: u8) -> Vec<[i64; D]> {
        let world = 1i64 << world_depth;
        let side = self.side();
        let mut out = Vec::new();
        let mut cursor = [0i64; D];
        let lo: Vec<i64> = (0..D).map(|i| (self.origin[i] - 1).max(0)).collect();
        let hi: Vec<i64> = (0..D).map(|i| (self.origin[i] + side).min(world - 1)).collect();
        for i in 0..D {
            cursor[i] = lo[i];
        }
        'outer: loop {
            let inside = (0..D)
                .all(|i| cursor[i] >= self.origin[i] && cursor[i] < self.origin[i] + side);
            if !inside {
                out.push(cursor);
            }
            for i in 0..D {
                cursor[i] += 1;
                if cursor[i] <= hi[i] {
                    continue 'outer;
                }
                cursor[i] = lo[i];
            }
            break;
        }
        out
    }
}

impl<const D: usize> std::fmt::Debug for Region<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "R{}@{:?}", self.depth, self.origin)
    }
}

/// Iterates the unit-cell origins of a region in lexicographic order.
pub struct CellIter<const D: usize> {
    base: [i64; D],
    side: i64,
    cursor: Option<[i64; D]>,
}

impl<const D: usize> Iterator for CellIter<D> {
    type Item = [i64; D];

    fn next(&mut self) -> Option<[i64; D]> {
        let cur = self.cursor?;
        let mut item = self.base;
        for i in 0..D {
            item[i] += cur[i];
        }
        let mut next = cur;
        let mut done = true;
        for i in (0..D).rev() {
            next[i] += 1;
            if next[i] < self.side {
                done = false;
                break;
            }
            next[i] = 0;
        }
        self.cursor = if done { None } else { Some(next) };
        Some(item)
    }
}

/// Row-major linear index of a unit cell: axis 0 varies fastest.
pub fn cell_index<const D: usize>(cell: &[i64; D], world_side: i64) -> usize {
    let mut idx: i64 = 0;
    for i in (0..D).rev() {
        debug_assert!(cell[i] >= 0 && cell[i] < world_side);
        idx = idx * world_side + cell[i];
    }
    idx as usize
}

/// Unit cell containing a point; points on a grid line resolve downward so
/// that the result stays inside the world box.
pub fn cell_of_point<const D: usize>(p: &Point<D>, world_side: i64) -> [i64; D] {
    let mut c = [0i64; D];
    for i in 0..D {
        c[i] = (p[i].floor() as i64).clamp(0, world_side - 1);
    }
    c
}

pub fn dist2<const D: usize>(a: &Point<D>, b: &Point<D>) -> f64 {
    (0..D).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

pub fn linf<const D: usize>(a: &Point<D>, b: &Point<D>) -> f64 {
    (0..D).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_follow_the_sign_vector_convention() {
        // Children of n_{k,p} sit at p + 2^(k-2) * e_i with e_i in {±1}^D.
        let parent: Region<2> = Region::new(2, [4, 0]);
        let pc = parent.center();
        let offset = f64::powi(2.0, parent.depth as i32 - 2);
        let kids = parent.children();
        assert_eq!(kids.len(), 4);
        for kid in &kids {
            let c = kid.center();
            for i in 0..2 {
                assert_eq!((c[i] - pc[i]).abs(), offset);
            }
            assert_eq!(kid.depth, parent.depth - 1);
        }
    }

    #[test]
    fn children_tile_the_parent() {
        let parent: Region<3> = Region::new(2, [0, 4, 0]);
        let kids = parent.children();
        assert_eq!(kids.len(), 8);
        let total: i64 = kids.iter().map(|k| k.volume()).sum();
        assert_eq!(total, parent.volume());
        for kid in &kids {
            assert!(parent.strictly_contains(kid));
            assert_eq!(kid.parent(), parent);
        }
    }

    #[test]
    fn adjacency_requires_dimension_one_contact() {
        // Shared edge: neighbors.
        let a: Region<2> = Region::cell([0, 0]);
        let b: Region<2> = Region::cell([1, 0]);
        assert!(a.touches(&b));
        // Corner-only contact: a singleton, not neighbors.
        let c: Region<2> = Region::cell([1, 1]);
        assert!(!a.touches(&c));
        // Unit square against the side of a 4x larger square.
        let big: Region<2> = Region::new(2, [4, 0]);
        let small: Region<2> = Region::cell([3, 1]);
        assert!(big.touches(&small));
        // Disjoint.
        let far: Region<2> = Region::cell([3, 3]);
        assert!(!a.touches(&far));
    }

    #[test]
    fn edge_contact_counts_in_three_dimensions() {
        let a: Region<3> = Region::cell([0, 0, 0]);
        let edge: Region<3> = Region::cell([1, 1, 0]);
        let corner: Region<3> = Region::cell([1, 1, 1]);
        assert!(a.touches(&edge));
        assert!(!a.touches(&corner));
    }

    #[test]
    fn cells_enumerates_the_whole_region() {
        let r: Region<2> = Region::new(1, [2, 0]);
        let cells: Vec<_> = r.cells().collect();
        assert_eq!(cells, vec![[2, 0], [2, 1], [3, 0], [3, 1]]);
    }

    #[test]
    fn shell_is_exactly_the_one_cell_dilation() {
        let r: Region<2> = Region::new(1, [0, 0]);
        let shell = r.shell_cells(2);
        // 2x2 region in a 4x4 world: the dilation is a 3x3 corner block minus
        // the region itself, clipped to the world.
        assert_eq!(shell.len(), 5);
        assert!(shell.contains(&[2, 0]));
        assert!(shell.contains(&[2, 2]));
        assert!(!shell.contains(&[0, 0]));
    }

    #[test]
    fn point_location_helpers() {
        let r: Region<2> = Region::new(1, [0, 2]);
        assert!(r.contains_point(&[0.0, 2.0]));
        assert!(!r.interior_contains_point(&[0.0, 2.0]));
        assert!(r.interior_contains_point(&[1.0, 3.0]));
        assert_eq!(cell_of_point(&[3.999, 0.2], 4), [3, 0]);
        assert_eq!(cell_of_point(&[4.0, 0.0], 4), [3, 0]);
    }
}
