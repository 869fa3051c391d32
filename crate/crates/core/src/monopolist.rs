//! Monopolist instances: finite-difference energies, exact profit of the convex
//! envelope of a discrete solution, and the economic read-outs (exclusion,
//! bunching, sales and margins).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cvxgrid_ipm::{ConvexProgram, Settings, VarBound};

use crate::constraints::{count_full, Cone};
use crate::delaunay::{cells_of_triangulation, lower_envelope};
use crate::grid::GridDomain;
use crate::lattice::v;
use crate::polygon::{polygon_area, polygon_centroid, ConvexPolygon, P2};
use crate::refine::{self, Algorithm, ConeFamily, RefineSettings, RefinementRun};
use crate::stencils::StencilFamily;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModel {
    /// `½‖q‖²` on the positive quadrant.
    Quadratic,
    /// Free on `[0, 1]²`, infinite outside.
    #[serde(alias = "bundlebox")]
    Bundle,
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensitySpec {
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    Polygon { vertices: Vec<P2> },
}

/// The JSON form of an instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub density: DensitySpec,
    pub cost: CostModel,
    /// Rotation of the density support about its centroid.
    #[serde(default)]
    pub rotation: f64,
}

/// Uniform customer density (unit weight) on a convex polygon.
#[derive(Clone, Debug)]
pub struct MonopolistInstance {
    pub density: ConvexPolygon,
    pub cost: CostModel,
    pub rotation: f64,
}

impl MonopolistInstance {
    pub fn from_spec(spec: &InstanceSpec) -> Result<Self, Error> {
        let base = match &spec.density {
            DensitySpec::Rectangle { x0, y0, x1, y1 } => {
                if !(x1 > x0 && y1 > y0) {
                    return Err(Error::DegenerateDomain("empty density rectangle".into()));
                }
                ConvexPolygon::rectangle(*x0, *y0, *x1, *y1)
            }
            DensitySpec::Polygon { vertices } => ConvexPolygon::new(vertices.clone())?,
        };
        let density = if spec.rotation != 0.0 {
            base.rotated(spec.rotation, polygon_centroid(base.vertices()))
        } else {
            base
        };
        Ok(Self {
            density,
            cost: spec.cost,
            rotation: spec.rotation,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        Self::from_spec(&serde_json::from_str(text)?)
    }

    /// Quadratic cost, customers uniform on `[1,2]²` rotated by `theta` about its centre.
    pub fn classical(theta: f64) -> Self {
        Self::from_spec(&InstanceSpec {
            density: DensitySpec::Rectangle {
                x0: 1.0,
                y0: 1.0,
                x1: 2.0,
                y1: 2.0,
            },
            cost: CostModel::Quadratic,
            rotation: theta,
        })
        .expect("valid square")
    }

    /// Bundles of two goods, customers uniform on `[0,1]²`.
    pub fn bundles() -> Self {
        Self::from_spec(&InstanceSpec {
            density: DensitySpec::Rectangle {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 1.0,
            },
            cost: CostModel::Bundle,
            rotation: 0.0,
        })
        .expect("valid square")
    }

    pub fn mass(&self) -> f64 {
        self.density.area()
    }

    /// `n × n` axis-aligned grid on the smallest square containing the density.
    pub fn grid(&self, n: usize) -> Result<GridDomain, Error> {
        let (lo, hi) = self.density.bbox();
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        GridDomain::square(cx - 0.5 * side, cx + 0.5 * side, cy - 0.5 * side, n)
    }

    /// Customer mass of each grid cell `x + [−h/2, h/2]²`.
    pub fn weights(&self, grid: &GridDomain) -> Vec<f64> {
        let r = 0.5 * grid.h();
        (0..grid.len())
            .map(|i| {
                let [x, y] = grid.embed(i);
                let cell = [[x - r, y - r], [x + r, y - r], [x + r, y + r], [x - r, y + r]];
                polygon_area(&self.density.clip(&cell)).max(0.0)
            })
            .collect()
    }

    /// Negated discrete profit as a program over the grid values (plus one fixed
    /// variable for the bundle box). Rows: gradient constraints of the cost model.
    pub fn discretize(&self, grid: &GridDomain) -> Result<ConvexProgram, Error> {
        let fd = FiniteDifferences::new(grid)?;
        let n = grid.len();
        let h = grid.h();
        let mu = self.weights(grid);
        let mut p = ConvexProgram::new(n);
        for (x, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let z = grid.embed(x);
            p.linear[x] += m;
            for (k, &(i, j)) in fd.at[x].iter().enumerate() {
                // −⟨∇u, z⟩ with ∇u_k = (u_j − u_i)/h
                let c = m * z[k] / h;
                p.linear[j] -= c;
                p.linear[i] += c;
                if self.cost == CostModel::Quadratic {
                    let w = m / (h * h);
                    p.hessian.add(i, i, w);
                    p.hessian.add(j, j, w);
                    p.hessian.add(i, j, -w);
                }
            }
        }
        for b in &mut p.bounds {
            *b = VarBound::Lower(0.0);
        }
        match self.cost {
            CostModel::Quadratic => {
                for &(i, j) in &fd.pairs {
                    p.rows.push_row([(j, 1.0), (i, -1.0)]);
                }
            }
            CostModel::Bundle => {
                let one = p.add_fixed_variable(1.0);
                for &(i, j) in &fd.pairs {
                    p.rows.push_row([(j, 1.0), (i, -1.0)]);
                    p.rows.push_row([(one, h), (j, -1.0), (i, 1.0)]);
                }
            }
            CostModel::None => {}
        }
        Ok(p)
    }

    fn cost_of(&self, g: P2) -> Option<f64> {
        const TOL: f64 = 1e-5;
        match self.cost {
            CostModel::Quadratic => (g[0] >= -TOL && g[1] >= -TOL).then(|| 0.5 * (g[0] * g[0] + g[1] * g[1])),
            CostModel::Bundle => g.iter().all(|&c| (-TOL..=1.0 + TOL).contains(&c)).then_some(0.0),
            CostModel::None => Some(0.0),
        }
    }

    /// Profit of the largest convex map below `u`, integrated exactly on every
    /// envelope triangle.
    pub fn exact_profit(&self, grid: &GridDomain, u: &[f64]) -> Result<Profit, Error> {
        Ok(self.sales(grid, u)?.1)
    }

    fn sales(&self, grid: &GridDomain, u: &[f64]) -> Result<(Envelope, Profit, Vec<Sale>), Error> {
        let (t, env) = lower_envelope(grid, u)?;
        let mut sales = Vec::new();
        let mut value = 0.0;
        let mut infeasible_mass = 0.0;
        for (id, tri) in t.triangles().into_iter().enumerate() {
            let verts: Vec<P2> = tri.iter().map(|&k| grid.embed(k)).collect();
            let piece = self.density.clip(&verts);
            let mass = polygon_area(&piece);
            if mass <= 0.0 {
                continue;
            }
            let g = grid.gradient_to_domain(t.gradient(id, &env));
            let p0 = verts[0];
            let intercept = env[tri[0]] - g[0] * p0[0] - g[1] * p0[1];
            // U(z) = ⟨g, z⟩ + intercept, so the price ⟨g, z⟩ − U(z) is constant
            let price = -intercept;
            let margin = match self.cost_of(g) {
                Some(c) => price - c,
                None => {
                    infeasible_mass += mass;
                    f64::NEG_INFINITY
                }
            };
            if margin.is_finite() {
                value += mass * margin;
            }
            sales.push(Sale {
                gradient: g,
                mass,
                price,
                margin,
                centroid: polygon_centroid(&piece),
            });
        }
        let profit = Profit {
            value: if infeasible_mass > 0.0 {
                f64::NEG_INFINITY
            } else {
                value
            },
            finite_part: value,
            infeasible_mass,
        };
        Ok(((t, env), profit, sales))
    }

    pub fn economic_report(
        &self,
        grid: &GridDomain,
        u: &[f64],
        thresholds: &Thresholds,
    ) -> Result<EconomicReport, Error> {
        let ((t, env), profit, sales) = self.sales(grid, u)?;
        let det = cells_of_triangulation(grid, &t, &env).det_estimates();
        // customers whose whole cell lies in the support; along the boundary U
        // vanishes to first order where the participation constraint binds
        let full = grid.h() * grid.h() * (1.0 - 1e-9);
        let support: Vec<bool> = self.weights(grid).iter().map(|&w| w >= full).collect();
        let exclusion: Vec<bool> = (0..grid.len())
            .map(|i| support[i] && env[i] < thresholds.exclusion)
            .collect();
        let bunching: Vec<bool> = (0..grid.len())
            .map(|i| support[i] && !exclusion[i] && det[i].is_some_and(|d| d < thresholds.bunching))
            .collect();
        Ok(EconomicReport {
            profit,
            total_mass: self.mass(),
            envelope: env,
            det,
            exclusion,
            bunching,
            sales,
        })
    }
}

type Envelope = (crate::delaunay::Triangulation, Vec<f64>);

/// Forward differences along both axes, backward where the forward neighbour is missing.
struct FiniteDifferences {
    /// Per point and axis, the pair `(i, j)` with `∂_k u ≈ (u_j − u_i)/h`.
    at: Vec<[(usize, usize); 2]>,
    /// Every distinct pair used above.
    pairs: Vec<(usize, usize)>,
}

impl FiniteDifferences {
    fn new(grid: &GridDomain) -> Result<Self, Error> {
        if grid.theta() != 0.0 {
            return Err(Error::InvalidArgument(
                "finite differences need an axis-aligned grid".into(),
            ));
        }
        let axes = [v(1, 0), v(0, 1)];
        let mut at = Vec::with_capacity(grid.len());
        for x in 0..grid.len() {
            let p = grid.point(x);
            let mut pair = [(0, 0); 2];
            for (k, &e) in axes.iter().enumerate() {
                pair[k] = if let Some(j) = grid.index_of(p + e) {
                    (x, j)
                } else if let Some(i) = grid.index_of(p - e) {
                    (i, x)
                } else {
                    return Err(Error::DegenerateDomain(format!(
                        "point {x} has no neighbour along axis {k}"
                    )));
                };
            }
            at.push(pair);
        }
        let mut pairs: Vec<(usize, usize)> = at.iter().flatten().copied().collect();
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self { at, pairs })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Profit {
    /// `−∞` when a positive mass of customers gets a product of infinite cost.
    pub value: f64,
    /// Profit over the feasible triangles only.
    pub finite_part: f64,
    pub infeasible_mass: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Sale {
    /// Product, i.e. the gradient of the envelope on one triangle.
    pub gradient: P2,
    pub mass: f64,
    pub price: f64,
    pub margin: f64,
    pub centroid: P2,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Thresholds {
    pub exclusion: f64,
    pub bunching: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            exclusion: 1e-4,
            bunching: 0.07,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EconomicReport {
    pub profit: Profit,
    pub total_mass: f64,
    pub envelope: Vec<f64>,
    /// Subgradient-cell estimate of `det ∇²U`, `None` on the boundary.
    pub det: Vec<Option<f64>>,
    /// Both masks only cover points whose grid cell lies inside the support.
    pub exclusion: Vec<bool>,
    /// Excludes the exclusion region, where the determinant vanishes trivially.
    pub bunching: Vec<bool>,
    pub sales: Vec<Sale>,
}

impl EconomicReport {
    pub fn sales_mass(&self) -> f64 {
        self.sales.iter().map(|s| s.mass).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "profit": self.profit.value,
            "profit_finite_part": self.profit.finite_part,
            "infeasible_mass": self.profit.infeasible_mass,
            "total_mass": self.total_mass,
            "excluded_points": self.exclusion.iter().filter(|&&b| b).count(),
            "bunching_points": self.bunching.iter().filter(|&&b| b).count(),
            "sales": self.sales,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// All constraints of `Conv(X)`.
    Clrm,
    /// S forms on the fixed stencils `{e ∈ V_max(x) : ‖e‖∞ ≤ k}`.
    Of(usize),
    AdaptiveConv,
    AdaptiveDConv,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Clrm => write!(f, "clrm"),
            Method::Of(k) => write!(f, "of{k}"),
            Method::AdaptiveConv => write!(f, "adaptive-conv"),
            Method::AdaptiveDConv => write!(f, "adaptive-dconv"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        match s.as_str() {
            "clrm" | "full" => Ok(Method::Clrm),
            "adaptive-conv" | "conv" | "adaptive" => Ok(Method::AdaptiveConv),
            "adaptive-dconv" | "dconv" => Ok(Method::AdaptiveDConv),
            _ => s
                .strip_prefix("of")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 1)
                .map(Method::Of)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

/// Fixed stencils of width `k` in the max norm.
pub fn of_stencils(grid: &GridDomain, k: usize) -> StencilFamily {
    let k = k as i64;
    let sets = (0..grid.len())
        .map(|x| {
            let mut set = Vec::new();
            for a in -k..=k {
                for b in -k..=k {
                    let e = v(a, b);
                    if grid.in_max_stencil(x, e) {
                        set.push(e);
                    }
                }
            }
            set
        })
        .collect();
    StencilFamily::from_sets(sets)
}

/// Row count a method assembles, without solving. Adaptive methods have no
/// a-priori system and give `None`.
pub fn baseline_constraint_count(grid: &GridDomain, method: Method) -> Result<Option<usize>, Error> {
    Ok(match method {
        Method::Clrm => {
            let (s, t) = count_full(grid);
            Some(s + t)
        }
        Method::Of(k) => Some(crate::constraints::assemble(grid, Cone::DConvPrimeV(&of_stencils(grid, k)))?.len()),
        Method::AdaptiveConv | Method::AdaptiveDConv => None,
    })
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub values: Vec<f64>,
    pub objective: f64,
    pub constraint_count: usize,
    pub refinement_steps: usize,
    pub seconds: f64,
    pub run: Option<RefinementRun>,
}

pub fn solve_method(
    instance: &MonopolistInstance,
    grid: &GridDomain,
    method: Method,
    refine_settings: &RefineSettings,
) -> Result<MethodResult, Error> {
    let clock = Instant::now();
    let base = instance.discretize(grid)?;
    let n = grid.len();
    let fixed = |cone: Cone<'_>, settings: &Settings| -> Result<(usize, f64, Vec<f64>), Error> {
        let (sys, sol) = refine::solve_over(&base, grid, cone, settings)?;
        Ok((sys.len(), sol.objective, sol.primal[..n].to_vec()))
    };
    let (count, objective, values, run) = match method {
        Method::Clrm => {
            let (c, o, v) = fixed(Cone::FullConv, &refine_settings.solver)?;
            (c, o, v, None)
        }
        Method::Of(k) => {
            let fam = of_stencils(grid, k);
            let (c, o, v) = fixed(Cone::DConvPrimeV(&fam), &refine_settings.solver)?;
            (c, o, v, None)
        }
        Method::AdaptiveConv | Method::AdaptiveDConv => {
            let cone = if method == Method::AdaptiveConv {
                ConeFamily::Conv
            } else {
                ConeFamily::DConv
            };
            let s = RefineSettings {
                cone,
                ..*refine_settings
            };
            let r = refine::run(&base, grid, &s)?;
            (r.constraint_count(), r.objective(), r.values.clone(), Some(r))
        }
    };
    Ok(MethodResult {
        method,
        values,
        objective,
        constraint_count: count,
        refinement_steps: run.as_ref().map_or(0, |r| r.iterations.len() - 1),
        seconds: clock.elapsed().as_secs_f64(),
        run,
    })
}

/// Default loop of the experiments: super-cones, `ρ = 1.5`.
pub fn default_refine(cone: ConeFamily) -> RefineSettings {
    RefineSettings {
        algorithm: Algorithm::SuperCones,
        cone,
        ..Default::default()
    }
}
