//! Brute-force characterization of the deviation space: slice two chosen
//! deviation dimensions into a grid, run the lower-layer falsifier at each
//! cell center, and render the result as a CSV plus an SVG heatmap.
//!
//! The grid is ground truth for consistency checks and for the heatmap
//! figures; it is not used by the search algorithms.

use crate::control::Policy;
use crate::falsify::{self, DeviationRecord, FalsifyError};
use crate::seed::{derive_seed, TAG_GRID};
use crate::stl::Formula;
use crate::SystemModel;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Falsify(#[from] FalsifyError),
    #[error("grid needs two distinct deviation dimensions")]
    BadDims,
    #[error("grid resolution must be at least 2")]
    BadResolution,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-cell minimum robustness over a 2-D slice of the deviation space.
/// Cells are stored row-major: `index = iy * resolution + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim_x: usize,
    pub dim_y: usize,
    pub name_x: String,
    pub name_y: String,
    pub resolution: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub gammas: Vec<f64>,
    pub lower_budget: usize,
    pub seed: u64,
}

impl Grid {
    pub fn gamma(&self, ix: usize, iy: usize) -> f64 {
        self.gammas[iy * self.resolution + ix]
    }

    /// Center coordinates of cell (ix, iy).
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let fx = (ix as f64 + 0.5) / self.resolution as f64;
        let fy = (iy as f64 + 0.5) / self.resolution as f64;
        (self.x_lo + fx * (self.x_hi - self.x_lo), self.y_lo + fy * (self.y_hi - self.y_lo))
    }

    /// Cell containing the point, if it lies within the slice.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.x_lo) / (self.x_hi - self.x_lo);
        let fy = (y - self.y_lo) / (self.y_hi - self.y_lo);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let ix = ((fx * self.resolution as f64) as usize).min(self.resolution - 1);
        let iy = ((fy * self.resolution as f64) as usize).min(self.resolution - 1);
        Some((ix, iy))
    }
}

/// Evaluate the lower-layer falsifier at every cell center of a
/// `resolution x resolution` slice through dimensions `dims`, with the
/// remaining deviation dimensions pinned to nominal.
pub fn grid_scan(
    model: &SystemModel,
    policy: &Policy,
    spec: &Formula,
    dims: (usize, usize),
    resolution: usize,
    lower_budget: usize,
    seed: u64,
) -> Result<Grid, OracleError> {
    let space = &model.deviation;
    if dims.0 == dims.1 || dims.0 >= space.dim() || dims.1 >= space.dim() {
        return Err(OracleError::BadDims);
    }
    if resolution < 2 {
        return Err(OracleError::BadResolution);
    }
    let mut grid = Grid {
        dim_x: dims.0,
        dim_y: dims.1,
        name_x: space.names[dims.0].clone(),
        name_y: space.names[dims.1].clone(),
        resolution,
        x_lo: space.lower[dims.0],
        x_hi: space.upper[dims.0],
        y_lo: space.lower[dims.1],
        y_hi: space.upper[dims.1],
        gammas: Vec::with_capacity(resolution * resolution),
        lower_budget,
        seed,
    };
    for iy in 0..resolution {
        for ix in 0..resolution {
            let (cx, cy) = grid.center(ix, iy);
            let mut delta = space.nominal.clone();
            delta[dims.0] = cx;
            delta[dims.1] = cy;
            let cell_seed = derive_seed(seed, &[TAG_GRID, ix as u64, iy as u64]);
            let outcome =
                falsify::lower_falsify(model, &delta, policy, spec, lower_budget, cell_seed)?;
            grid.gammas.push(outcome.gamma);
        }
    }
    Ok(grid)
}

/// Diverging cell color anchored at gamma = 0: positive values shade
/// toward red, negative toward blue, after clamping `gamma / scale` to
/// [-1, 1].
pub fn cell_color(gamma: f64, scale: f64) -> (u8, u8, u8) {
    let t = (gamma / scale).clamp(-1.0, 1.0);
    let shade = (191.0 * t.abs()).round() as u8;
    if t >= 0.0 {
        (255, 255 - shade, 255 - shade)
    } else {
        (255 - shade, 255 - shade, 255)
    }
}

const SVG_PLOT: f64 = 500.0;
const SVG_MARGIN_LEFT: f64 = 80.0;
const SVG_MARGIN_BOTTOM: f64 = 55.0;
const SVG_MARGIN_TOP: f64 = 20.0;
const SVG_MARGIN_RIGHT: f64 = 20.0;
const CROSS_HALF: f64 = 5.0;
pub const CROSS_SAFE_COLOR: &str = "#888888";
pub const CROSS_VIOLATION_COLOR: &str = "#ffd700";

/// Write the grid to `<base>.csv` and `<base>.svg`, overlaying deviation
/// samples as crosses: grey for non-violating, yellow for violations.
/// The CSV is the source of truth; the SVG encodes identical values.
pub fn render_heatmap(
    grid: &Grid,
    overlay: &[DeviationRecord],
    base: &Path,
) -> Result<(PathBuf, PathBuf), OracleError> {
    let csv_path = base.with_extension("csv");
    let svg_path = base.with_extension("svg");
    let io_err = |path: &Path| {
        let p = path.display().to_string();
        move |source: std::io::Error| OracleError::Io { path: p.clone(), source }
    };

    let mut csv = String::from("dim1,dim2,center1,center2,gamma\n");
    for iy in 0..grid.resolution {
        for ix in 0..grid.resolution {
            let (cx, cy) = grid.center(ix, iy);
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                grid.name_x,
                grid.name_y,
                cx,
                cy,
                grid.gamma(ix, iy)
            ));
        }
    }
    std::fs::File::create(&csv_path)
        .and_then(|mut f| f.write_all(csv.as_bytes()))
        .map_err(io_err(&csv_path))?;

    let scale = grid.gammas.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(f64::MIN_POSITIVE);
    let width = SVG_MARGIN_LEFT + SVG_PLOT + SVG_MARGIN_RIGHT;
    let height = SVG_MARGIN_TOP + SVG_PLOT + SVG_MARGIN_BOTTOM;
    let cell = SVG_PLOT / grid.resolution as f64;
    let px = |x: f64| SVG_MARGIN_LEFT + (x - grid.x_lo) / (grid.x_hi - grid.x_lo) * SVG_PLOT;
    let py = |y: f64| SVG_MARGIN_TOP + (grid.y_hi - y) / (grid.y_hi - grid.y_lo) * SVG_PLOT;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    for iy in 0..grid.resolution {
        for ix in 0..grid.resolution {
            let g = grid.gamma(ix, iy);
            let (r, gg, b) = cell_color(g, scale);
            let x = SVG_MARGIN_LEFT + ix as f64 * cell;
            // Row iy = 0 sits at the bottom.
            let y = SVG_MARGIN_TOP + SVG_PLOT - (iy as f64 + 1.0) * cell;
            svg.push_str(&format!(
                "<rect class=\"cell\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({r},{gg},{b})\" data-gamma=\"{g}\"/>\n"
            ));
        }
    }
    for rec in overlay {
        let x = px(rec.delta[grid.dim_x]);
        let y = py(rec.delta[grid.dim_y]);
        let color = if rec.violating { CROSS_VIOLATION_COLOR } else { CROSS_SAFE_COLOR };
        let class = if rec.violating { "violation" } else { "sample" };
        svg.push_str(&format!(
            "<g class=\"{class}\" stroke=\"{color}\" stroke-width=\"2\">\
<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>\
<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/></g>\n",
            x - CROSS_HALF,
            y - CROSS_HALF,
            x + CROSS_HALF,
            y + CROSS_HALF,
            x - CROSS_HALF,
            y + CROSS_HALF,
            x + CROSS_HALF,
            y - CROSS_HALF,
        ));
    }
    // Axis labels and extent ticks.
    let x_mid = SVG_MARGIN_LEFT + SVG_PLOT / 2.0;
    let y_mid = SVG_MARGIN_TOP + SVG_PLOT / 2.0;
    svg.push_str(&format!(
        "<text x=\"{x_mid}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        height - 12.0,
        grid.name_x
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{y_mid}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 {y_mid})\">{}</text>\n",
        grid.name_y
    ));
    svg.push_str(&format!(
        "<text x=\"{SVG_MARGIN_LEFT}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
        height - 34.0,
        grid.x_lo
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
        SVG_MARGIN_LEFT + SVG_PLOT,
        height - 34.0,
        grid.x_hi
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
        SVG_MARGIN_LEFT - 6.0,
        SVG_MARGIN_TOP + SVG_PLOT,
        grid.y_lo
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
        SVG_MARGIN_LEFT - 6.0,
        SVG_MARGIN_TOP + 10.0,
        grid.y_hi
    ));
    svg.push_str("</svg>\n");
    std::fs::File::create(&svg_path)
        .and_then(|mut f| f.write_all(svg.as_bytes()))
        .map_err(io_err(&svg_path))?;
    Ok((csv_path, svg_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{registry, SystemId};
    use crate::falsify::Witness;

    fn disk() -> (SystemModel, Policy, Formula) {
        let (model, policy) = registry::build(SystemId::SyntheticDisk).unwrap();
        let spec = model.spec_formula().unwrap();
        (model, policy, spec)
    }

    #[test]
    fn disk_grid_signs_match_the_analytic_boundary() {
        let (model, policy, spec) = disk();
        let grid = grid_scan(&model, &policy, &spec, (0, 1), 20, 1, 4).unwrap();
        for iy in 0..20 {
            for ix in 0..20 {
                let (cx, cy) = grid.center(ix, iy);
                let dist = model.deviation.normalized_l2(&[cx, cy]);
                let g = grid.gamma(ix, iy);
                if dist > 0.4 {
                    assert!(g < 0.0, "cell ({ix},{iy}) dist {dist} gamma {g}");
                } else {
                    assert!(g >= 0.0, "cell ({ix},{iy}) dist {dist} gamma {g}");
                }
            }
        }
    }

    #[test]
    fn resolution_two_costs_four_evaluations() {
        let (model, policy, spec) = disk();
        let before = model.sim_calls();
        let grid = grid_scan(&model, &policy, &spec, (0, 1), 2, 1, 4).unwrap();
        assert_eq!(grid.gammas.len(), 4);
        assert_eq!(model.sim_calls() - before, 4);
    }

    #[test]
    fn scans_are_seed_deterministic() {
        let (model, policy, spec) = disk();
        let a = grid_scan(&model, &policy, &spec, (0, 1), 5, 2, 11).unwrap();
        let b = grid_scan(&model, &policy, &spec, (0, 1), 5, 2, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let (model, policy, spec) = disk();
        assert!(matches!(
            grid_scan(&model, &policy, &spec, (0, 0), 5, 1, 0),
            Err(OracleError::BadDims)
        ));
        assert!(matches!(
            grid_scan(&model, &policy, &spec, (0, 1), 1, 1, 0),
            Err(OracleError::BadResolution)
        ));
    }

    #[test]
    fn csv_and_svg_encode_identical_values() {
        let (model, policy, spec) = disk();
        let grid = grid_scan(&model, &policy, &spec, (0, 1), 4, 1, 2).unwrap();
        let dir = std::env::temp_dir().join("tolfal_oracle_csv_svg");
        std::fs::create_dir_all(&dir).unwrap();
        let (csv_path, svg_path) = render_heatmap(&grid, &[], &dir.join("hm")).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "dim1,dim2,center1,center2,gamma");
        let scale = grid.gammas.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut cells = 0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0], "d1");
            assert_eq!(fields[1], "d2");
            let gamma: f64 = fields[4].parse().unwrap();
            // The SVG carries the same gamma on the cell and a sign-correct
            // fill color.
            assert!(svg.contains(&format!("data-gamma=\"{gamma}\"")), "{gamma} missing in svg");
            let (r, _, b) = cell_color(gamma, scale);
            let snippet = format!("data-gamma=\"{gamma}\"");
            let pos = svg.find(&snippet).unwrap();
            let rect = &svg[..pos];
            let fill_start = rect.rfind("fill=\"rgb(").unwrap();
            let fill = &rect[fill_start + 10..];
            let parts: Vec<u8> = fill[..fill.find(')').unwrap()]
                .split(',')
                .map(|s| s.parse().unwrap())
                .collect();
            assert_eq!((parts[0], parts[2]), (r, b));
            if gamma > 0.0 {
                assert!(parts[0] > parts[2], "positive gamma must shade red");
            } else if gamma < 0.0 {
                assert!(parts[2] > parts[0], "negative gamma must shade blue");
            }
            cells += 1;
        }
        assert_eq!(cells, 16);
    }

    #[test]
    fn all_positive_grid_renders_red_and_no_violation_crosses() {
        let grid = Grid {
            dim_x: 0,
            dim_y: 1,
            name_x: "a".into(),
            name_y: "b".into(),
            resolution: 2,
            x_lo: 0.0,
            x_hi: 1.0,
            y_lo: 0.0,
            y_hi: 1.0,
            gammas: vec![0.1, 0.2, 0.3, 0.4],
            lower_budget: 1,
            seed: 0,
        };
        let overlay = vec![DeviationRecord {
            iteration: 0,
            index: 0,
            delta: vec![0.5, 0.5],
            gamma: 0.1,
            distance: 0.0,
            similarity: None,
            objective: 0.1,
            violating: false,
            lower_evals: 1,
            witness: Witness { init: vec![], points: vec![], seed: 0 },
        }];
        let dir = std::env::temp_dir().join("tolfal_oracle_allred");
        std::fs::create_dir_all(&dir).unwrap();
        let (_, svg_path) = render_heatmap(&grid, &overlay, &dir.join("hm")).unwrap();
        let svg = std::fs::read_to_string(svg_path).unwrap();
        assert!(!svg.contains(CROSS_VIOLATION_COLOR), "no yellow crosses expected");
        assert!(svg.contains(CROSS_SAFE_COLOR), "grey sample cross expected");
        // Every cell shades red.
        for part in svg.split("fill=\"rgb(").skip(2) {
            // skip background + first split remainder
            let triple = &part[..part.find(')').unwrap()];
            let vals: Vec<u8> = triple.split(',').map(|s| s.parse().unwrap()).collect();
            assert!(vals[0] >= vals[2]);
        }
    }

    #[test]
    fn violation_crosses_land_in_negative_cells() {
        let (model, policy, spec) = disk();
        let grid = grid_scan(&model, &policy, &spec, (0, 1), 20, 1, 2).unwrap();
        let mut config = crate::falsify::CampaignConfig::default_for(2, 6);
        config.upper_iterations = 10;
        config.lower_budget = 1;
        let report = crate::falsify::falsify_tolerance(&model, &policy, &spec, &config).unwrap();
        assert!(report.violation_count > 0);
        for r in report.records.iter().filter(|r| r.violating) {
            let (ix, iy) = grid.cell_of(r.delta[0], r.delta[1]).unwrap();
            // Cells are regions; centers may differ slightly from the
            // witness point, hence the tolerance.
            assert!(
                grid.gamma(ix, iy) <= 0.05,
                "violation at {:?} sits in cell with gamma {}",
                r.delta,
                grid.gamma(ix, iy)
            );
        }
        let dir = std::env::temp_dir().join("tolfal_oracle_overlay");
        std::fs::create_dir_all(&dir).unwrap();
        let (_, svg_path) = render_heatmap(&grid, &report.records, &dir.join("hm")).unwrap();
        let svg = std::fs::read_to_string(svg_path).unwrap();
        let yellow = svg.matches("class=\"violation\"").count();
        assert_eq!(yellow, report.violation_count);
    }
}
