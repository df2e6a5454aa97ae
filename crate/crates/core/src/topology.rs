//! Cabinet grid geometry and the folded-torus logical relabeling.
//!
//! Locations are enumerated column-major: location `j` (0-based) sits at
//! physical row `j % n_rows + 1` and column `j / n_rows + 1`. Coordinates are
//! 1-based everywhere they leave this module.
//!
//! The interconnect cables every other cabinet along each axis and closes
//! the loop with a short return cable, so the logical position of physical
//! row `r` is its place in the circuit `1, 2, 4, 6, …, 5, 3`. The same rule
//! is applied to columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    n_rows: usize,
    n_cols: usize,
}

impl GridSpec {
    pub fn new(n_rows: usize, n_cols: usize) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid dimensions must be positive, got {n_rows}x{n_cols}"
            )));
        }
        Ok(Self { n_rows, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_locations(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Column-major index of a 1-based `(row, col)` pair.
    pub fn index_of(&self, row: usize, col: usize) -> Result<usize> {
        if row == 0 || row > self.n_rows || col == 0 || col > self.n_cols {
            return Err(Error::Domain(format!(
                "coordinate ({row}, {col}) outside {self}"
            )));
        }
        Ok((col - 1) * self.n_rows + (row - 1))
    }

    /// 1-based `(row, col)` of a column-major index.
    pub fn coords_of(&self, index: usize) -> (usize, usize) {
        (index % self.n_rows + 1, index / self.n_rows + 1)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_rows, self.n_cols)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidGrid(format!("expected ROWSxCOLS, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidGrid(format!("expected ROWSxCOLS, got {s:?}")))
        };
        GridSpec::new(parse(r)?, parse(c)?)
    }
}

impl TryFrom<String> for GridSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

/// Physical indices (1-based) in the order the folded cable circuit visits
/// them: `[1, 2, 4, …, 3]`.
///
/// Even lengths give `[1, 2, 4, …, n, n-1, n-3, …, 3]`. For odd `n` the
/// evens run up to `n-1` and the return leg starts at `n`.
pub fn folded_torus_order(n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidGrid("circuit length must be positive".into()));
    }
    let mut order = Vec::with_capacity(n);
    order.push(1);
    order.extend((2..=n).step_by(2));
    let last_odd = if n % 2 == 1 { n } else { n - 1 };
    order.extend((3..=last_odd).rev().step_by(2));
    Ok(order)
}

/// Logical position (1-based) of each physical index, i.e. the inverse
/// permutation of [`folded_torus_order`]. Entry `r - 1` holds the logical
/// index of physical index `r`.
pub fn folded_logical_positions(n: usize) -> Result<Vec<usize>> {
    let order = folded_torus_order(n)?;
    let mut pos = vec![0; n];
    for (k, &phys) in order.iter().enumerate() {
        pos[phys - 1] = k + 1;
    }
    Ok(pos)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relabeling {
    /// Folded-torus cabling along both axes.
    #[default]
    Folded,
    /// Logical coordinates equal physical coordinates.
    Identity,
}

impl FromStr for Relabeling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "folded" => Ok(Relabeling::Folded),
            "identity" => Ok(Relabeling::Identity),
            other => Err(Error::Domain(format!("unknown relabeling {other:?}"))),
        }
    }
}

impl fmt::Display for Relabeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relabeling::Folded => f.write_str("folded"),
            Relabeling::Identity => f.write_str("identity"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub physical: (usize, usize),
    pub logical: (usize, usize),
}

/// Physical and logical coordinates of every grid location.
///
/// Random effects `v` are indexed by physical location index and `w` by
/// logical location index; both indices are column-major on their own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationMap {
    grid: GridSpec,
    relabeling: Relabeling,
    locations: Vec<Location>,
    logical_index: Vec<usize>,
    physical_of_logical: Vec<usize>,
}

pub fn build_location_map(grid: GridSpec, relabeling: Relabeling) -> Result<LocationMap> {
    let (row_pos, col_pos) = match relabeling {
        Relabeling::Folded => (
            folded_logical_positions(grid.n_rows())?,
            folded_logical_positions(grid.n_cols())?,
        ),
        Relabeling::Identity => (
            (1..=grid.n_rows()).collect(),
            (1..=grid.n_cols()).collect(),
        ),
    };
    let m = grid.n_locations();
    let mut locations = Vec::with_capacity(m);
    let mut logical_index = Vec::with_capacity(m);
    let mut physical_of_logical = vec![usize::MAX; m];
    for j in 0..m {
        let (r, c) = grid.coords_of(j);
        let logical = (row_pos[r - 1], col_pos[c - 1]);
        let l = grid.index_of(logical.0, logical.1)?;
        if physical_of_logical[l] != usize::MAX {
            return Err(Error::Consistency(format!(
                "logical coordinate {logical:?} assigned twice"
            )));
        }
        physical_of_logical[l] = j;
        logical_index.push(l);
        locations.push(Location {
            physical: (r, c),
            logical,
        });
    }
    Ok(LocationMap {
        grid,
        relabeling,
        locations,
        logical_index,
        physical_of_logical,
    })
}

impl LocationMap {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn relabeling(&self) -> Relabeling {
        self.relabeling
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    /// Physical location index of a 1-based physical `(row, col)`.
    pub fn physical_index(&self, row: usize, col: usize) -> Result<usize> {
        self.grid.index_of(row, col)
    }

    /// Logical location index of physical location `j`.
    pub fn logical_index(&self, j: usize) -> usize {
        self.logical_index[j]
    }

    pub fn logical_indices(&self) -> &[usize] {
        &self.logical_index
    }

    /// Physical location sitting at logical index `l`.
    pub fn physical_of_logical(&self, l: usize) -> usize {
        self.physical_of_logical[l]
    }

    /// Physical coordinates in physical-index order.
    pub fn physical_coords(&self) -> Vec<(usize, usize)> {
        self.locations.iter().map(|l| l.physical).collect()
    }

    /// Logical coordinates in logical-index order, i.e. the column-major
    /// sorted list the Kronecker construction assumes.
    pub fn logical_coords(&self) -> Vec<(usize, usize)> {
        self.physical_of_logical
            .iter()
            .map(|&j| self.locations[j].logical)
            .collect()
    }
}

/// Assignment of one unit to a grid location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitPlacement {
    pub unit: usize,
    pub physical: usize,
    pub logical: usize,
}

impl LocationMap {
    pub fn place(&self, unit: usize, physical: usize) -> Result<UnitPlacement> {
        if physical >= self.len() {
            return Err(Error::Domain(format!(
                "location index {} outside 1..={}",
                physical + 1,
                self.len()
            )));
        }
        Ok(UnitPlacement {
            unit,
            physical,
            logical: self.logical_index[physical],
        })
    }
}
