//! Piecewise-linear height-field terrains.
//!
//! Two kinds are provided: the flat training ground and a sloped-tile
//! evaluation course. Sloped courses are generated from a ChaCha8 stream
//! (`rand_chacha::ChaCha8Rng`, seeded with `seed_from_u64`); each slope is
//! drawn as `(next_u64 >> 11) * 2^-53` mapped onto `[-max, +max]`, which
//! keeps the knot lists bit-identical across platforms.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the flat section preceding the first tile.
pub const RUN_IN_LENGTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    SlopedTiles,
}

/// Height profile `y(x)` defined by knots, extended flat beyond both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    kind: TerrainKind,
    knots: Vec<(f64, f64)>,
}

/// Parameters of the sloped-tile course.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileParams {
    pub n_tiles: usize,
    pub tile_length: f64,
    pub max_slope_deg: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        Self {
            n_tiles: 10,
            tile_length: 1.0,
            max_slope_deg: 5.0,
        }
    }
}

impl Terrain {
    pub fn flat() -> Self {
        Self {
            kind: TerrainKind::Flat,
            knots: vec![(0.0, 0.0)],
        }
    }

    /// Random-slope tile course. Heights accumulate from tile to tile so the
    /// profile stays continuous; the ground is flat for `x < 0`.
    pub fn sloped_tiles(seed: u64, params: TileParams) -> Result<Self> {
        if params.n_tiles == 0 {
            return Err(Error::InvalidArgument("n_tiles must be at least 1".into()));
        }
        if !(params.tile_length > 0.0) || !params.tile_length.is_finite() {
            return Err(Error::InvalidArgument("tile_length must be positive".into()));
        }
        if !(params.max_slope_deg >= 0.0) || params.max_slope_deg >= 90.0 {
            return Err(Error::InvalidArgument(
                "max_slope must lie in [0, 90) degrees".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut knots = Vec::with_capacity(params.n_tiles + 2);
        knots.push((-RUN_IN_LENGTH, 0.0));
        knots.push((0.0, 0.0));
        let mut y = 0.0;
        for i in 0..params.n_tiles {
            let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let slope_deg = (2.0 * unit - 1.0) * params.max_slope_deg;
            y += slope_deg.to_radians().tan() * params.tile_length;
            knots.push(((i + 1) as f64 * params.tile_length, y));
        }
        Ok(Self {
            kind: TerrainKind::SlopedTiles,
            knots,
        })
    }

    /// Builds a terrain from explicit knots; x must be strictly increasing.
    pub fn from_knots(kind: TerrainKind, knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("terrain needs at least one knot".into()));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidArgument("terrain knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(
                "terrain knots must be strictly increasing in x".into(),
            ));
        }
        Ok(Self { kind, knots })
    }

    pub fn kind(&self) -> TerrainKind {
        self.kind
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Slope angles (degrees) of every segment between consecutive knots.
    pub fn slopes_deg(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).atan().to_degrees())
            .collect()
    }

    /// Where a rollout on this terrain starts: the beginning of the flat
    /// run-in for tile courses, the origin otherwise.
    pub fn start_x(&self) -> f64 {
        match self.kind {
            TerrainKind::Flat => 0.0,
            TerrainKind::SlopedTiles => self.knots[0].0,
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        self.height_and_normal(x).0
    }

    /// Height at `x` and the unit surface normal there. At a knot the segment
    /// to the right is used for the normal; heights agree from both sides.
    pub fn height_and_normal(&self, x: f64) -> (f64, [f64; 2]) {
        let k = &self.knots;
        let first = k[0];
        let last = k[k.len() - 1];
        if x <= first.0 {
            return (first.1, [0.0, 1.0]);
        }
        if x >= last.0 {
            return (last.1, [0.0, 1.0]);
        }
        // first index with knot.x > x
        let hi = k.partition_point(|&(kx, _)| kx <= x);
        let (x0, y0) = k[hi - 1];
        let (x1, y1) = k[hi];
        let slope = (y1 - y0) / (x1 - x0);
        let y = y0 + slope * (x - x0);
        let norm = (1.0 + slope * slope).sqrt();
        (y, [-slope / norm, 1.0 / norm])
    }

    /// CSV knot list with an `x,y` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.knots {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_zero_with_vertical_normal() {
        let t = Terrain::flat();
        assert_eq!(t.kind(), TerrainKind::Flat);
        assert_eq!(t.height_and_normal(-3.7), (0.0, [0.0, 1.0]));
        assert_eq!(t.height_and_normal(123.0), (0.0, [0.0, 1.0]));
    }

    #[test]
    fn single_tile_midpoint() {
        let rise = 5f64.to_radians().tan();
        let t = Terrain::from_knots(TerrainKind::SlopedTiles, vec![(0.0, 0.0), (1.0, rise)]).unwrap();
        let (y, n) = t.height_and_normal(0.5);
        assert!((y - 5f64.to_radians().tan() * 0.5).abs() < 1e-15);
        // normal is perpendicular to the tile direction
        let dot = n[0] * 1.0 + n[1] * rise;
        assert!(dot.abs() < 1e-15);
        assert!(((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn default_course_has_ten_bounded_tiles() {
        let t = Terrain::sloped_tiles(7, TileParams::default()).unwrap();
        let slopes = t.slopes_deg();
        // run-in segment plus ten tiles
        assert_eq!(slopes.len(), 11);
        assert_eq!(slopes[0], 0.0);
        assert!(slopes[1..].iter().all(|s| s.abs() <= 5.0 + 1e-9));
        assert_eq!(t.start_x(), -RUN_IN_LENGTH);
    }

    #[test]
    fn zero_max_slope_is_flat() {
        let p = TileParams { max_slope_deg: 0.0, ..Default::default() };
        let t = Terrain::sloped_tiles(3, p).unwrap();
        assert!(t.knots().iter().all(|&(_, y)| y == 0.0));
    }

    #[test]
    fn same_seed_same_knots() {
        let a = Terrain::sloped_tiles(99, TileParams::default()).unwrap();
        let b = Terrain::sloped_tiles(99, TileParams::default()).unwrap();
        let c = Terrain::sloped_tiles(100, TileParams::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Terrain::sloped_tiles(0, TileParams { n_tiles: 0, ..Default::default() }).is_err());
        assert!(Terrain::sloped_tiles(0, TileParams { tile_length: 0.0, ..Default::default() }).is_err());
        assert!(Terrain::sloped_tiles(0, TileParams { max_slope_deg: -1.0, ..Default::default() }).is_err());
        assert!(Terrain::from_knots(TerrainKind::Flat, vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn knot_continuity() {
        let t = Terrain::sloped_tiles(11, TileParams::default()).unwrap();
        for &(x, y) in t.knots() {
            let eps = 1e-12;
            assert!((t.height(x - eps) - y).abs() < 1e-9);
            assert!((t.height(x + eps) - y).abs() < 1e-9);
            assert_eq!(t.height(x), y);
        }
    }
}
