//! Berman–Turner quadrature over `W x M`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, TileGrid};
use crate::patterns::MarkedPointPattern;
use crate::scalar::Scalar;

/// Smallest default dummy grid side.
pub const MIN_DUMMY_SIDE: usize = 64;

/// One marked quadrature point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QuadraturePoint<T> {
    pub location: Point2<T>,
    pub mark: usize,
    pub weight: T,
    /// Index into the pattern's points for data points.
    pub data: Option<usize>,
    pub tile: usize,
}

impl<T: Scalar> QuadraturePoint<T> {
    pub fn is_data(&self) -> bool {
        self.data.is_some()
    }
}

/// Data points plus one dummy per tile and mark, with counting weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QuadratureScheme<T> {
    points: Vec<QuadraturePoint<T>>,
    marks: usize,
    grid: TileGrid<T>,
}

/// Default dummy grid side: 64, or enough for four dummies per point of the
/// most abundant mark.
pub fn default_dummy_side(max_points_per_mark: usize) -> usize {
    let side = ((4 * max_points_per_mark) as f64).sqrt().ceil() as usize;
    side.max(MIN_DUMMY_SIDE)
}

/// Builds the scheme on `grid`, whose window is the (eroded) integration domain.
///
/// Every tile of positive area holds one dummy per mark at its representative
/// point. Data points inside the domain share their tile's area with that
/// tile's dummy of the same mark: `w = area / (1 + data in tile)`.
pub fn make_quadrature<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    grid: &TileGrid<T>,
    marks: usize,
) -> Result<QuadratureScheme<T>> {
    if marks == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one mark".into()));
    }
    let window = grid.window();
    let mut counts = vec![0usize; grid.len() * marks];
    let mut data: Vec<(usize, usize)> = Vec::new();
    for (k, p) in pattern.points().iter().enumerate() {
        if p.mark >= marks {
            return Err(Error::InvalidArgument(format!("point {k} has mark {} >= {marks}", p.mark)));
        }
        if !window.contains(&p.location) {
            continue;
        }
        let tile = grid.cell_index(&p.location).unwrap_or_else(|| grid.nearest_cell(&p.location));
        if !(grid.area(tile) > T::zero()) {
            log::warn!("{}: data point {k} falls in a zero-area tile and is skipped", pattern.id());
            continue;
        }
        counts[tile * marks + p.mark] += 1;
        data.push((k, tile));
    }
    let share = |tile: usize, mark: usize| grid.area(tile) / T::from_usize_lossy(1 + counts[tile * marks + mark]);
    let mut points = Vec::with_capacity(data.len() + grid.len() * marks);
    for (k, tile) in data {
        let p = &pattern.points()[k];
        points.push(QuadraturePoint {
            location: p.location,
            mark: p.mark,
            weight: share(tile, p.mark),
            data: Some(k),
            tile,
        });
    }
    for tile in 0..grid.len() {
        if !(grid.area(tile) > T::zero()) {
            continue;
        }
        let location = grid.representative_point(tile);
        for mark in 0..marks {
            points.push(QuadraturePoint {
                location,
                mark,
                weight: share(tile, mark),
                data: None,
                tile,
            });
        }
    }
    Ok(QuadratureScheme {
        points,
        marks,
        grid: grid.clone(),
    })
}

impl<T: Scalar> QuadratureScheme<T> {
    pub fn points(&self) -> &[QuadraturePoint<T>] {
        &self.points
    }

    pub fn marks(&self) -> usize {
        self.marks
    }

    pub fn grid(&self) -> &TileGrid<T> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn data_count(&self) -> usize {
        self.points.iter().filter(|q| q.is_data()).count()
    }

    pub fn dummy_count(&self) -> usize {
        self.len() - self.data_count()
    }

    /// Sum of weights of one mark; equals the domain area.
    pub fn weight_sum(&self, mark: usize) -> T {
        self.points
            .iter()
            .filter(|q| q.mark == mark)
            .map(|q| q.weight)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{erode_border, tile_grid, PolygonalWindow};
    use crate::patterns::MarkedPoint;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(points: Vec<MarkedPoint<f64>>) -> MarkedPointPattern<f64> {
        MarkedPointPattern::new("q", points, PolygonalWindow::unit_square()).unwrap()
    }

    #[test]
    fn four_dummies_no_data() {
        let p = unit(vec![]);
        let g = tile_grid(p.window(), 2, 2).unwrap();
        let q = make_quadrature(&p, &g, 1).unwrap();
        assert_eq!(q.len(), 4);
        assert!(q.points().iter().all(|x| x.weight == 0.25 && !x.is_data()));
    }

    #[test]
    fn shared_tile_splits_area() {
        let p = unit(vec![MarkedPoint::new(0.2, 0.2, 0)]);
        let g = tile_grid(p.window(), 2, 2).unwrap();
        let q = make_quadrature(&p, &g, 1).unwrap();
        let data = q.points().iter().find(|x| x.is_data()).unwrap();
        assert_eq!(data.weight, 0.125);
        let twin = q.points().iter().find(|x| !x.is_data() && x.tile == data.tile).unwrap();
        assert_eq!(twin.weight, 0.125);
        // Another mark's dummy in the same tile keeps the full tile.
        let q2 = make_quadrature(&p, &g, 2).unwrap();
        let other = q2.points().iter().find(|x| x.mark == 1 && x.tile == data.tile).unwrap();
        assert_eq!(other.weight, 0.25);
    }

    #[test]
    fn points_outside_domain_are_skipped() {
        let p = unit(vec![MarkedPoint::new(0.05, 0.5, 0), MarkedPoint::new(0.5, 0.5, 0)]);
        let eroded = erode_border(p.window(), 0.1).unwrap();
        let g = tile_grid(&eroded, 4, 4).unwrap();
        let q = make_quadrature(&p, &g, 1).unwrap();
        assert_eq!(q.data_count(), 1);
        assert_relative_eq!(q.weight_sum(0), 0.64, epsilon = 1e-12);
    }

    #[test]
    fn default_side_rule() {
        assert_eq!(default_dummy_side(10), 64);
        assert_eq!(default_dummy_side(4096), 128);
        assert_eq!(default_dummy_side(4097), 129);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_sum_to_area(raw in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0usize..3), 0..200), n in 2usize..20, margin in 0.0..0.2f64) {
            let pts = raw.iter().map(|(x, y, m)| MarkedPoint::new(*x, *y, *m)).collect();
            let p = unit(pts);
            let dom = erode_border(p.window(), margin).unwrap();
            let g = tile_grid(&dom, n, n + 1).unwrap();
            let q = make_quadrature(&p, &g, 3).unwrap();
            for m in 0..3 {
                prop_assert!((q.weight_sum(m) - dom.area()).abs() <= 1e-6 * dom.area());
            }
            prop_assert!(q.points().iter().all(|x| x.weight > 0.0));
            let inside = p.points().iter().filter(|x| dom.contains(&x.location)).count();
            prop_assert_eq!(q.data_count(), inside);
        }
    }
}
