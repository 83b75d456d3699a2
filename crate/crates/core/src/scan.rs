//! One- and two-parameter sweeps: attractor-classification grids for map
//! families and branch diagrams for maps and Stommel's model.
//!
//! Cells are independent. With the `parallel` feature, rows are distributed
//! over a rayon pool; results are always assembled by position, so output is
//! identical for every thread count.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{map_fixed_points, Admissibility, CertError, PwlMap};
use crate::flow::{fmt_f64, integrate_filippov, FlowOptions};
use crate::linalg::Vector;
use crate::map_dynamics::{
    classify_attractor, iterate_within, Attractor, ClassifyConfig, OrbitOutcome,
};
use crate::models::{Stability, StommelModel, StommelSide};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("could not build a thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl ParamAxis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, cells: usize) -> Self {
        ParamAxis {
            name: name.into(),
            min,
            max,
            cells,
        }
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.cells as f64
    }

    /// Centre of cell `i`.
    pub fn value(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.width()
    }

    fn validate(&self) -> Result<(), ScanError> {
        if self.cells == 0 {
            return Err(ScanError::InvalidSpec(format!(
                "axis {} has no cells",
                self.name
            )));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(ScanError::InvalidSpec(format!(
                "axis {} needs finite min < max",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: ParamAxis,
    pub y: ParamAxis,
    pub classify: ClassifyConfig,
    /// Every cell iterates from this state; zero when empty.
    #[serde(default)]
    pub initial: Vec<f64>,
}

impl GridSpec {
    /// Desk-scale budget: `10^4` iterates with the last `10^3` inspected.
    pub fn desk_scale(x: ParamAxis, y: ParamAxis) -> Self {
        GridSpec {
            x,
            y,
            classify: ClassifyConfig {
                transient: 9_000,
                budget: 10_000,
                ..ClassifyConfig::default()
            },
            initial: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        self.x.validate()?;
        self.y.validate()?;
        self.classify
            .validate()
            .map_err(|e| ScanError::InvalidSpec(e.to_string()))
    }

    pub fn cell_count(&self) -> usize {
        self.x.cells * self.y.cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellOutcome {
    pub attractor: Attractor,
    /// The family or the classifier failed for this cell; recorded as
    /// divergence.
    pub failed: bool,
}

impl CellOutcome {
    pub fn is_diverged(&self) -> bool {
        self.attractor == Attractor::Diverged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub spec: GridSpec,
    /// Row-major: index `j * x.cells + i` holds cell `(i, j)`.
    pub cells: Vec<CellOutcome>,
    pub elapsed: Duration,
}

/// How cells are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon's global pool, or a dedicated pool with this many threads.
    /// Falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
    Threads(usize),
}

/// Evaluates `f(0..n)` and returns the results in index order.
fn collect_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>, ScanError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok((0..n).map(f).collect()),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            Ok((0..n).into_par_iter().map(f).collect())
        }
        #[cfg(feature = "parallel")]
        Execution::Threads(threads) => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| ScanError::ThreadPool(e.to_string()))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel | Execution::Threads(_) => Ok((0..n).map(f).collect()),
    }
}

/// Classifies the orbit of the initial state for every grid cell.
///
/// `family(x, y)` builds the map at the cell centre `(x, y)`.
pub fn scan2d<F>(family: F, spec: &GridSpec, exec: Execution) -> Result<ScanResult, ScanError>
where
    F: Fn(f64, f64) -> Result<PwlMap, CertError> + Sync + Send,
{
    spec.validate()?;
    let started = Instant::now();
    let nx = spec.x.cells;
    let rows = collect_indexed(spec.y.cells, exec, |j| {
        let py = spec.y.value(j);
        (0..nx)
            .map(|i| classify_cell(&family, spec, spec.x.value(i), py))
            .collect::<Vec<_>>()
    })?;
    Ok(ScanResult {
        spec: spec.clone(),
        cells: rows.into_iter().flatten().collect(),
        elapsed: started.elapsed(),
    })
}

fn classify_cell<F>(family: &F, spec: &GridSpec, px: f64, py: f64) -> CellOutcome
where
    F: Fn(f64, f64) -> Result<PwlMap, CertError>,
{
    let failed = CellOutcome {
        attractor: Attractor::Diverged,
        failed: true,
    };
    let Ok(map) = family(px, py) else {
        return failed;
    };
    let x0 = if spec.initial.is_empty() {
        vec![0.0; map.dim()]
    } else {
        spec.initial.clone()
    };
    match classify_attractor(&map, &x0, &spec.classify) {
        Ok(attractor) => CellOutcome {
            attractor,
            failed: false,
        },
        Err(_) => failed,
    }
}

impl ScanResult {
    pub fn get(&self, i: usize, j: usize) -> CellOutcome {
        self.cells[j * self.spec.x.cells + i]
    }

    /// `x,y,outcome,T` with the axis names as the first two headers.
    /// Outcomes are `periodic`, `aperiodic`, `diverged` and
    /// `diverged-flagged`; `T` is empty unless periodic.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},outcome,T\n", self.spec.x.name, self.spec.y.name);
        for j in 0..self.spec.y.cells {
            for i in 0..self.spec.x.cells {
                let c = self.get(i, j);
                let (label, period) = match c.attractor {
                    Attractor::Periodic(t) => ("periodic", t.to_string()),
                    Attractor::Aperiodic => ("aperiodic", String::new()),
                    Attractor::Diverged if c.failed => ("diverged-flagged", String::new()),
                    Attractor::Diverged => ("diverged", String::new()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{label},{period}",
                    fmt_f64(self.spec.x.value(i)),
                    fmt_f64(self.spec.y.value(j))
                );
            }
        }
        out
    }

    /// Binary PPM, one pixel per cell, `y` increasing upwards.
    pub fn to_ppm(&self) -> Vec<u8> {
        let (nx, ny) = (self.spec.x.cells, self.spec.y.cells);
        let mut out = format!("P6\n{nx} {ny}\n255\n").into_bytes();
        for j in (0..ny).rev() {
            for i in 0..nx {
                out.extend_from_slice(&color(self.get(i, j).attractor));
            }
        }
        out
    }

    /// SVG heatmap with one rectangle per cell, `y` increasing upwards.
    pub fn to_svg(&self, cell_px: usize) -> String {
        let (nx, ny) = (self.spec.x.cells, self.spec.y.cells);
        let (w, h) = (nx * cell_px, ny * cell_px);
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\" shape-rendering=\"crispEdges\">\n"
        );
        let _ = writeln!(
            out,
            "<title>{} in [{}, {}] by {} in [{}, {}]</title>",
            self.spec.x.name,
            self.spec.x.min,
            self.spec.x.max,
            self.spec.y.name,
            self.spec.y.min,
            self.spec.y.max
        );
        for j in 0..ny {
            for i in 0..nx {
                let [r, g, b] = color(self.get(i, j).attractor);
                let _ = writeln!(
                    out,
                    "<rect x=\"{}\" y=\"{}\" width=\"{cell_px}\" height=\"{cell_px}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>",
                    i * cell_px,
                    (ny - 1 - j) * cell_px
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Fixed colour table: period `T` in `1..=50` gets hue `(T - 1) * 137.5`
/// degrees (mod 360) at saturation 0.75 and value 0.9; aperiodic cells are
/// black and divergent cells white.
pub fn color(a: Attractor) -> [u8; 3] {
    match a {
        Attractor::Diverged => [255, 255, 255],
        Attractor::Aperiodic => [0, 0, 0],
        Attractor::Periodic(t) => hsv((t.saturating_sub(1) as f64 * 137.5) % 360.0, 0.75, 0.9),
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |u: f64| ((u + m) * 255.0).round() as u8;
    [to(r), to(g), to(b)]
}

/// Long-run behaviour of the reference orbit in a branch diagram.
#[derive(Debug, Clone, PartialEq)]
pub enum Asymptotic {
    Diverged,
    /// Attractor class and final state.
    Bounded(Attractor, Vector),
    Rest(Vector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub label: String,
    pub state: Vector,
    pub admissibility: Admissibility,
    pub stability: Option<Stability>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub param: f64,
    pub points: Vec<BranchPoint>,
    pub asymptotic: Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scan1dOptions {
    pub samples: usize,
}

fn sample_values(range: (f64, f64), samples: usize) -> Result<Vec<f64>, ScanError> {
    if samples == 0 || !(range.0.is_finite() && range.1.is_finite()) {
        return Err(ScanError::InvalidSpec(
            "need a finite range and at least one sample".into(),
        ));
    }
    if samples == 1 {
        return Ok(vec![range.0]);
    }
    let step = (range.1 - range.0) / (samples - 1) as f64;
    Ok((0..samples).map(|k| range.0 + k as f64 * step).collect())
}

/// Fixed points with admissibility, and the attractor reached from `x0`,
/// for `family(p)` at `samples` equi-spaced values of `p`.
pub fn scan1d_map<F>(
    family: F,
    range: (f64, f64),
    samples: usize,
    x0: &[f64],
    classify: &ClassifyConfig,
    exec: Execution,
) -> Result<Vec<BranchRow>, ScanError>
where
    F: Fn(f64) -> Result<PwlMap, CertError> + Sync + Send,
{
    classify
        .validate()
        .map_err(|e| ScanError::InvalidSpec(e.to_string()))?;
    let values = sample_values(range, samples)?;
    collect_indexed(values.len(), exec, |k| {
        let p = values[k];
        let Ok(map) = family(p) else {
            return BranchRow {
                param: p,
                points: Vec::new(),
                asymptotic: Asymptotic::Diverged,
            };
        };
        let points = map_fixed_points(&map)
            .map(|report| {
                report
                    .solutions
                    .iter()
                    .zip(["xL", "xR"])
                    .map(|(s, label)| BranchPoint {
                        label: label.into(),
                        state: s.location.clone(),
                        admissibility: s.admissibility,
                        stability: None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        let asymptotic = match classify_attractor(&map, x0, classify) {
            Ok(Attractor::Diverged) | Err(_) => Asymptotic::Diverged,
            Ok(a) => {
                let orbit = iterate_within(&map, x0, classify.budget, classify.divergence_radius);
                match orbit {
                    Ok(o) if o.outcome == OrbitOutcome::BudgetExhausted => {
                        Asymptotic::Bounded(a, o.iterates.last().cloned().unwrap_or_default())
                    }
                    _ => Asymptotic::Diverged,
                }
            }
        };
        BranchRow {
            param: p,
            points,
            asymptotic,
        }
    })
}

/// Equilibrium branches of Stommel's model over `mu`, with the state reached
/// from `x0` after integrating to `t_end` at each frozen `mu`.
pub fn scan1d_stommel(
    model: &StommelModel,
    range: (f64, f64),
    samples: usize,
    x0: &[f64],
    t_end: f64,
    opts: &FlowOptions,
    exec: Execution,
) -> Result<Vec<BranchRow>, ScanError> {
    let values = sample_values(range, samples)?;
    collect_indexed(values.len(), exec, |k| {
        let mu = values[k];
        let m = model.with_mu(mu);
        let points = m
            .equilibria()
            .equilibria
            .into_iter()
            .map(|e| BranchPoint {
                label: match e.side {
                    StommelSide::TemperatureDominated => "T>S",
                    StommelSide::SalinityDominated => "T<S",
                    StommelSide::Boundary => "T=S",
                }
                .into(),
                state: e.state,
                admissibility: if e.side == StommelSide::Boundary {
                    Admissibility::Boundary
                } else {
                    Admissibility::Admissible
                },
                stability: Some(e.stability),
            })
            .collect();
        let asymptotic = match integrate_filippov(&m.system(), x0, mu, t_end, opts) {
            Ok(traj) if traj.termination == crate::flow::Termination::Completed => {
                Asymptotic::Rest(traj.last().x.clone())
            }
            _ => Asymptotic::Diverged,
        };
        BranchRow {
            param: mu,
            points,
            asymptotic,
        }
    })
}

/// Long format: `param,branch,status,stability,x1..xn`. The reference orbit
/// appears as branch `orbit`.
pub fn branch_rows_to_csv(param: &str, rows: &[BranchRow]) -> String {
    let n = rows
        .iter()
        .flat_map(|r| r.points.iter().map(|p| p.state.dim()))
        .chain(rows.iter().filter_map(|r| match &r.asymptotic {
            Asymptotic::Bounded(_, x) | Asymptotic::Rest(x) => Some(x.dim()),
            Asymptotic::Diverged => None,
        }))
        .max()
        .unwrap_or(0);
    let mut out = format!("{param},branch,status,stability");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    let push_state = |out: &mut String, x: Option<&Vector>| {
        for i in 0..n {
            out.push(',');
            if let Some(v) = x.and_then(|x| x.get(i)) {
                out.push_str(&fmt_f64(*v));
            }
        }
        out.push('\n');
    };
    for r in rows {
        for p in &r.points {
            let status = match p.admissibility {
                Admissibility::Admissible => "admissible",
                Admissibility::Virtual => "virtual",
                Admissibility::Boundary => "boundary",
            };
            let stability = match p.stability {
                Some(Stability::Stable) => "stable",
                Some(Stability::Unstable) => "unstable",
                None => "",
            };
            let _ = write!(out, "{},{},{status},{stability}", fmt_f64(r.param), p.label);
            push_state(&mut out, Some(&p.state));
        }
        let (status, x) = match &r.asymptotic {
            Asymptotic::Diverged => ("diverged".to_string(), None),
            Asymptotic::Rest(x) => ("rest".to_string(), Some(x)),
            Asymptotic::Bounded(Attractor::Periodic(t), x) => (format!("period-{t}"), Some(x)),
            Asymptotic::Bounded(_, x) => ("aperiodic".to_string(), Some(x)),
        };
        let _ = write!(out, "{},orbit,{status},", fmt_f64(r.param));
        push_state(&mut out, x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bcnf3d, example_map, Bcnf3dParams, ExampleMapParams};

    fn bcnf_family(tau_l: f64, tau_r: f64) -> Result<PwlMap, CertError> {
        bcnf3d(
            &Bcnf3dParams {
                tau_l,
                sigma_l: 0.0,
                delta_l: 0.5,
                tau_r,
                sigma_r: 1.0,
                delta_r: 1.5,
            },
            1.0,
        )
        .map_err(|e| match e {
            crate::models::ModelError::Cert(c) => c,
            other => panic!("{other}"),
        })
    }

    fn small_spec(n: usize) -> GridSpec {
        GridSpec {
            classify: ClassifyConfig {
                transient: 900,
                budget: 1000,
                ..ClassifyConfig::default()
            },
            ..GridSpec::desk_scale(
                ParamAxis::new("tau_L", -2.0, 2.0, n),
                ParamAxis::new("tau_R", -2.0, 2.0, n),
            )
        }
    }

    #[test]
    fn axis_cell_centres() {
        let a = ParamAxis::new("p", -2.0, 2.0, 4);
        assert_eq!(
            (0..4).map(|i| a.value(i)).collect::<Vec<_>>(),
            vec![-1.5, -0.5, 0.5, 1.5]
        );
        assert!(ParamAxis::new("p", 1.0, 1.0, 3).validate().is_err());
        assert!(ParamAxis::new("p", 0.0, 1.0, 0).validate().is_err());
    }

    #[test]
    fn single_cell_at_stable_fixed_point() {
        // At (0.3, 0.3) the right fixed point has x_1 = 1/det(I - A_R) = 2 > 0
        // and A_R has spectral radius below one.
        let family = |tau_l: f64, tau_r: f64| {
            bcnf3d(
                &Bcnf3dParams {
                    tau_l,
                    sigma_l: 0.0,
                    delta_l: 0.2,
                    tau_r,
                    sigma_r: 0.0,
                    delta_r: 0.2,
                },
                1.0,
            )
            .map_err(|_| CertError::NonFinite("bcnf"))
        };
        let spec = GridSpec {
            x: ParamAxis::new("tau_L", 0.2, 0.4, 1),
            y: ParamAxis::new("tau_R", 0.2, 0.4, 1),
            ..small_spec(1)
        };
        let r = scan2d(family, &spec, Execution::Sequential).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].attractor, Attractor::Periodic(1));
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = small_spec(12);
        let a = scan2d(bcnf_family, &spec, Execution::Sequential).unwrap();
        let b = scan2d(bcnf_family, &spec, Execution::Threads(3)).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn outputs_have_expected_shape() {
        let r = scan2d(bcnf_family, &small_spec(5), Execution::Parallel).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 26);
        assert!(csv.starts_with("tau_L,tau_R,outcome,T\n"));
        let ppm = r.to_ppm();
        assert!(ppm.starts_with(b"P6\n5 5\n255\n"));
        assert_eq!(ppm.len(), b"P6\n5 5\n255\n".len() + 75);
        assert_eq!(r.to_svg(4).matches("<rect").count(), 25);
    }

    #[test]
    fn palette_is_fixed() {
        assert_eq!(color(Attractor::Diverged), [255, 255, 255]);
        assert_eq!(color(Attractor::Aperiodic), [0, 0, 0]);
        assert_eq!(color(Attractor::Periodic(1)), [230, 57, 57]);
        assert_ne!(color(Attractor::Periodic(2)), color(Attractor::Periodic(3)));
    }

    #[test]
    fn example_map_branches_change_admissibility_at_zero() {
        let p = ExampleMapParams {
            delta_l: 1.2,
            delta_r: -2.4,
            alpha: 0.1,
        };
        let cfg = ClassifyConfig {
            transient: 900,
            budget: 1000,
            ..ClassifyConfig::default()
        };
        let rows = scan1d_map(
            |mu| {
                example_map(&p, mu).map_err(|e| match e {
                    crate::models::ModelError::Cert(c) => c,
                    other => panic!("{other}"),
                })
            },
            (-1.0, 1.0),
            5,
            &[0.0, 0.0],
            &cfg,
            Execution::Sequential,
        )
        .unwrap();
        let status = |r: &BranchRow| r.points.iter().map(|p| p.admissibility).collect::<Vec<_>>();
        assert_eq!(status(&rows[0]), vec![Admissibility::Admissible; 2]);
        assert_eq!(status(&rows[2]), vec![Admissibility::Boundary; 2]);
        assert_eq!(status(&rows[4]), vec![Admissibility::Virtual; 2]);
        assert_eq!(rows[4].asymptotic, Asymptotic::Diverged);
        let csv = branch_rows_to_csv("mu", &rows);
        assert!(csv.starts_with("mu,branch,status,stability,x1,x2\n"));
        assert_eq!(csv.lines().count(), 1 + 5 * 3);
    }

    #[test]
    fn stommel_branches_meet_at_the_fold() {
        let m = StommelModel::new(5.0, 0.2, 1.0).unwrap();
        let rows = scan1d_stommel(
            &m,
            (0.8, 1.4),
            7,
            &[0.9, 1.0],
            50.0,
            &FlowOptions::default(),
            Execution::Sequential,
        )
        .unwrap();
        let lower = |r: &BranchRow| r.points.iter().any(|p| p.label == "T<S");
        assert!(!lower(&rows[0]) && !lower(&rows[1]));
        assert!(rows[2].points.iter().any(|p| p.label == "T=S"));
        assert!(rows[3..].iter().all(lower));
    }
}
