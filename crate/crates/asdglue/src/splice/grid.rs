//! Quadrature over the connected sum, one composite grid per vertex chart.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{
    build_grid, CompositeGrid, ConformalMap, GridSpec, Integrator, Patch, Point4, Region,
};

use super::metric::ConnectedSumMetric;
use super::tree::ResolvedTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeGridOptions {
    pub per_decade: usize,
    pub gauss_order: usize,
    pub s3_order: usize,
    /// Innermost log-panel radius of the root chart.
    pub root_inner: f64,
    /// Radius beyond which the root chart uses the mapped tail rule.
    pub root_outer: f64,
}

impl Default for TreeGridOptions {
    fn default() -> Self {
        Self {
            per_decade: 6,
            gauss_order: 8,
            s3_order: 6,
            root_inner: 1e-2,
            root_outer: 1e2,
        }
    }
}

impl TreeGridOptions {
    /// A cheaper rule for smoke tests.
    pub fn coarse() -> Self {
        Self {
            per_decade: 4,
            gauss_order: 6,
            s3_order: 4,
            ..Self::default()
        }
    }
}

/// Per-vertex composite grids. The integrand of vertex J is masked to the
/// region of J, so the sum over vertices covers X exactly once.
#[derive(Debug, Clone)]
pub struct TreeGrid {
    pub vertices: Vec<CompositeGrid>,
    pub to_base: Vec<ConformalMap>,
    pub metric: ConnectedSumMetric,
}

fn log_spec(region: Region, r_min: f64, r_max: f64, o: &TreeGridOptions) -> GridSpec {
    let decades = (r_max / r_min).log10().max(1.0);
    let panels = (o.per_decade as f64 * decades).ceil() as usize;
    GridSpec::new(region, r_min, r_max).with_orders(panels, o.gauss_order, o.s3_order)
}

impl TreeGrid {
    pub fn build(tree: &ResolvedTree, opts: &TreeGridOptions) -> Result<Self> {
        let n = tree.n;
        let metric = ConnectedSumMetric::new(tree);
        let mut vertices = Vec::with_capacity(tree.nodes.len());
        let mut to_base: Vec<ConformalMap> = Vec::with_capacity(tree.nodes.len());
        for v in &tree.nodes {
            let background = match v.parent {
                None => build_grid(&log_spec(
                    Region::Full,
                    opts.root_inner,
                    opts.root_outer,
                    opts,
                ))?,
                Some(_) => {
                    let r = v.region_radius(n);
                    build_grid(&log_spec(
                        Region::Ball,
                        opts.root_inner.min(1e-3 * r),
                        r,
                        opts,
                    ))?
                }
            };
            let mut patches = Vec::with_capacity(v.children.len());
            for &c in &v.children {
                let child = &tree.nodes[c];
                let mut radius = 2.0 * child.b.max(2.0 * child.lambda.sqrt());
                for &o in &v.children {
                    if o != c {
                        radius = radius.min(0.45 * (tree.nodes[o].site - child.site).norm());
                    }
                }
                let inner = 0.5 * child.neck_inner(n);
                let spec = log_spec(Region::Ball, inner, radius, opts).centred_at(&child.site);
                patches.push(Patch {
                    grid: build_grid(&spec)?,
                    radius,
                });
            }
            vertices.push(CompositeGrid {
                background,
                patches,
            });
            to_base.push(match v.parent {
                None => ConformalMap::identity(),
                Some(p) => ConformalMap::new(v.lambda, v.site)?
                    .with_rotation(v.frame)?
                    .inverse()
                    .then(&to_base[p]),
            });
        }
        Ok(Self {
            vertices,
            to_base,
            metric,
        })
    }

    /// Σ_J ∫_{region J} f(J, x) d⁴x in the chart of each vertex.
    pub fn integrate_regions<const K: usize, F>(&self, f: F) -> Result<[f64; K]>
    where
        F: Fn(usize, &Point4) -> Result<[f64; K]> + Sync + Send,
    {
        let mut out = [0.0; K];
        for (j, grid) in self.vertices.iter().enumerate() {
            let part = grid.integrate_array(|x| {
                if !self.metric.in_region(j, x) {
                    return Ok([0.0; K]);
                }
                f(j, x)
            })?;
            out.iter_mut().zip(part).for_each(|(o, p)| *o += p);
        }
        Ok(out)
    }

    /// (vertex, chart point, weight) for every node inside its vertex region.
    pub fn region_nodes(&self) -> Vec<(usize, Point4, f64)> {
        let mut out = Vec::new();
        for (j, grid) in self.vertices.iter().enumerate() {
            out.extend(
                grid.weighted_nodes()
                    .into_iter()
                    .filter(|(x, _)| self.metric.in_region(j, x))
                    .map(|(x, w)| (j, x, w)),
            );
        }
        out
    }

    /// The same rule read on the root chart: nodes mapped to the base and
    /// weights scaled by the Jacobian Λ_J⁴.
    pub fn base(&self) -> BaseIntegrator<'_> {
        BaseIntegrator { grid: self }
    }
}

/// Integration against d⁴y on the root chart through the vertex grids.
#[derive(Debug, Clone, Copy)]
pub struct BaseIntegrator<'a> {
    grid: &'a TreeGrid,
}

impl Integrator for BaseIntegrator<'_> {
    fn centre(&self) -> Point4 {
        Point4::zeros()
    }

    fn integrate_array<const K: usize, F>(&self, f: F) -> Result<[f64; K]>
    where
        F: Fn(&Point4) -> Result<[f64; K]> + Sync + Send,
    {
        self.grid.integrate_regions(|j, x| {
            let map = &self.grid.to_base[j];
            let jac = map.stretch().powi(4);
            let mut v = f(&map.apply(x))?;
            v.iter_mut().for_each(|a| *a *= jac);
            Ok(v)
        })
    }

    fn weighted_nodes(&self) -> Vec<(Point4, f64)> {
        self.grid
            .region_nodes()
            .into_iter()
            .map(|(j, x, w)| {
                let map = &self.grid.to_base[j];
                (map.apply(&x), w * map.stretch().powi(4))
            })
            .collect()
    }
}
