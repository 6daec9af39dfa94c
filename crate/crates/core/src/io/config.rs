//! Flat TOML run configuration covering the domain, basis, fit settings,
//! cross-validation grid and input column mapping.
//!
//! ```toml
//! domain = "interval"
//! a = 0.0
//! b = 1.0
//! interior_knots = 10
//! p = 1
//! nu1 = 1e-4
//! grid_log10_nu1 = [-5.0, -4.0]
//! grid_log10_nu2 = [-3.0]
//! grid_p = [1]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::events::ColumnMapping;
use crate::basis::{make_bspline_basis, make_kernel_basis};
use crate::domain::{ObservationDomain, Polygon, Rect};
use crate::error::{Error, Result};
use crate::estimation::{product_grid, FitConfig, GridPoint, InitMode};
use crate::model::ModelSpace;
use crate::scores::DEFAULT_CURVE_MULTIPLIER;

pub const DEFAULT_INTERIOR_KNOTS: usize = 10;
pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_KERNEL_CENTERS: usize = 100;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `"interval"` or `"planar"`.
    pub domain: Option<String>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `[x0, x1, y0, y1]`.
    pub rect: Option<[f64; 4]>,
    pub polygon: Option<Vec<[f64; 2]>>,
    /// CSV (`x,y`), JSON array of pairs, or GeoJSON; relative to the config file.
    pub polygon_file: Option<PathBuf>,

    /// `"bspline"` or `"kernel"`.
    pub basis: Option<String>,
    pub interior_knots: Option<usize>,
    pub degree: Option<usize>,
    /// Number of kernel centres on the bounding grid (a perfect square).
    pub kernel_centers: Option<usize>,
    pub resolution: Option<usize>,

    pub p: Option<usize>,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub draws: Option<usize>,
    pub eval_draws: Option<usize>,
    pub seed: Option<u64>,
    pub max_outer_iters: Option<usize>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub multistart: Option<usize>,
    pub init: Option<InitMode>,

    pub folds: Option<usize>,
    pub grid_nu1: Option<Vec<f64>>,
    pub grid_nu2: Option<Vec<f64>>,
    pub grid_log10_nu1: Option<Vec<f64>>,
    pub grid_log10_nu2: Option<Vec<f64>>,
    pub grid_p: Option<Vec<usize>>,

    pub replicate_column: Option<String>,
    pub x_column: Option<String>,
    pub y_column: Option<String>,
    pub date_column: Option<String>,
    pub date_format: Option<String>,
    pub date_start: Option<String>,
    pub date_end: Option<String>,

    pub curve_multiplier: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(None, format!("config: {e}")))
    }

    /// Reads a config file; `polygon_file` is resolved against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let (Some(p), Some(dir)) = (&cfg.polygon_file, path.parent()) {
            if p.is_relative() {
                cfg.polygon_file = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn domain(&self) -> Result<ObservationDomain> {
        let kind = self
            .domain
            .as_deref()
            .unwrap_or(if self.rect.is_some() || self.polygon.is_some() || self.polygon_file.is_some() {
                "planar"
            } else {
                "interval"
            });
        match kind {
            "interval" => ObservationDomain::interval(self.a.unwrap_or(0.0), self.b.unwrap_or(1.0)),
            "planar" => {
                let mask = match (&self.polygon, &self.polygon_file) {
                    (Some(_), Some(_)) => return Err(Error::Usage("give polygon or polygon_file, not both".into())),
                    (Some(v), None) => Some(Polygon::new(v.clone())?),
                    (None, Some(f)) => Some(read_polygon(f)?),
                    (None, None) => None,
                };
                let rect = match (self.rect, &mask) {
                    (Some(r), _) => Rect::new(r[0], r[1], r[2], r[3]),
                    (None, Some(m)) => bounding_box(m.vertices()),
                    (None, None) => return Err(Error::Usage("a planar domain needs rect or a polygon".into())),
                };
                ObservationDomain::planar(rect, mask)
            }
            other => Err(Error::Usage(format!("unknown domain kind {other:?}"))),
        }
    }

    pub fn model_space(&self, domain: &ObservationDomain) -> Result<ModelSpace> {
        let default = if domain.dim() == 1 { "bspline" } else { "kernel" };
        let basis = match self.basis.as_deref().unwrap_or(default) {
            "bspline" => make_bspline_basis(
                domain,
                self.interior_knots.unwrap_or(DEFAULT_INTERIOR_KNOTS),
                self.degree.unwrap_or(DEFAULT_DEGREE),
            )?,
            "kernel" => make_kernel_basis(domain, self.kernel_centers.unwrap_or(DEFAULT_KERNEL_CENTERS))?,
            other => return Err(Error::Usage(format!("unknown basis {other:?}"))),
        };
        match self.resolution {
            Some(r) => ModelSpace::new(basis, r),
            None => ModelSpace::with_default_resolution(basis),
        }
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let d = FitConfig::default();
        let c = FitConfig {
            p: self.p.unwrap_or(d.p),
            nu1: self.nu1.unwrap_or(d.nu1),
            nu2: self.nu2.unwrap_or(d.nu2),
            draws: self.draws.unwrap_or(d.draws),
            eval_draws: self.eval_draws.unwrap_or(d.eval_draws),
            seed: self.seed.unwrap_or(d.seed),
            max_outer_iters: self.max_outer_iters.unwrap_or(d.max_outer_iters),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            multistart: self.multistart.unwrap_or(d.multistart),
            init: self.init.unwrap_or(d.init),
        };
        c.validate()?;
        Ok(c)
    }

    /// Cross-validation grid, if one is configured. Missing axes default to
    /// the single fit-config value.
    pub fn grid(&self) -> Result<Option<Vec<GridPoint>>> {
        let axis = |plain: &Option<Vec<f64>>, logs: &Option<Vec<f64>>, name: &str| -> Result<Option<Vec<f64>>> {
            match (plain, logs) {
                (Some(_), Some(_)) => Err(Error::Usage(format!("give grid_{name} or grid_log10_{name}, not both"))),
                (Some(v), None) => Ok(Some(v.clone())),
                (None, Some(l)) => Ok(Some(l.iter().map(|x| 10f64.powf(*x)).collect())),
                (None, None) => Ok(None),
            }
        };
        let nu1 = axis(&self.grid_nu1, &self.grid_log10_nu1, "nu1")?;
        let nu2 = axis(&self.grid_nu2, &self.grid_log10_nu2, "nu2")?;
        if nu1.is_none() && nu2.is_none() && self.grid_p.is_none() {
            return Ok(None);
        }
        let fc = self.fit_config()?;
        Ok(Some(product_grid(
            &nu1.unwrap_or(vec![fc.nu1]),
            &nu2.unwrap_or(vec![fc.nu2]),
            &self.grid_p.clone().unwrap_or(vec![fc.p]),
        )))
    }

    pub fn columns(&self) -> ColumnMapping {
        let d = ColumnMapping::default();
        ColumnMapping {
            replicate: self.replicate_column.clone().unwrap_or(d.replicate),
            x: self.x_column.clone().unwrap_or(d.x),
            y: self.y_column.clone().unwrap_or(d.y),
            date: self.date_column.clone(),
            date_format: self.date_format.clone(),
            date_start: self.date_start.clone(),
            date_end: self.date_end.clone(),
        }
    }

    pub fn folds(&self) -> usize {
        self.folds.unwrap_or(DEFAULT_FOLDS)
    }

    pub fn curve_multiplier(&self) -> f64 {
        self.curve_multiplier.unwrap_or(DEFAULT_CURVE_MULTIPLIER)
    }
}

fn bounding_box(v: &[[f64; 2]]) -> Rect {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for [x, y] in v {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    Rect::new(x0, x1, y0, y1)
}

/// Reads a polygon from CSV (`x,y` header), a JSON array of pairs, or
/// GeoJSON (the outer ring of the first Polygon or MultiPolygon found).
pub fn read_polygon(path: impl AsRef<Path>) -> Result<Polygon> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let vertices = if ext == "csv" {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut v = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(e.position().map(|p| p.line()), e.to_string()))?;
            let line = rec.position().map(|p| p.line());
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::parse(line, "polygon vertex needs two numbers"))
            };
            v.push([num(0)?, num(1)?]);
        }
        v
    } else {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse(Some(e.line() as u64), e.to_string()))?;
        ring_from_json(&value).ok_or_else(|| Error::parse(None, "no polygon ring found in JSON"))?
    };
    Polygon::new(vertices)
}

fn ring_from_json(v: &serde_json::Value) -> Option<Vec<[f64; 2]>> {
    use serde_json::Value;
    let pair = |p: &Value| -> Option<[f64; 2]> {
        let a = p.as_array()?;
        Some([a.first()?.as_f64()?, a.get(1)?.as_f64()?])
    };
    let ring = |r: &Value| -> Option<Vec<[f64; 2]>> { r.as_array()?.iter().map(pair).collect() };
    match v {
        Value::Array(_) => ring(v),
        Value::Object(o) => match o.get("type").and_then(Value::as_str)? {
            "Polygon" => ring(o.get("coordinates")?.as_array()?.first()?),
            "MultiPolygon" => ring(o.get("coordinates")?.as_array()?.first()?.as_array()?.first()?),
            "Feature" => ring_from_json(o.get("geometry")?),
            "FeatureCollection" => o.get("features")?.as_array()?.iter().find_map(ring_from_json),
            _ => None,
        },
        _ => None,
    }
}

/// Reads a CV grid CSV with columns `nu1,nu2,p` or `log10_nu1,log10_nu2,p`.
pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<Vec<GridPoint>> {
    let text = std::fs::read_to_string(path)?;
    parse_grid_csv(&text)
}

pub fn parse_grid_csv(text: &str) -> Result<Vec<GridPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::parse(Some(1), e.to_string()))?.clone();
    let find = |n: &str| headers.iter().position(|h| h.trim() == n);
    let (i1, i2, log) = match (find("nu1"), find("nu2"), find("log10_nu1"), find("log10_nu2")) {
        (Some(a), Some(b), _, _) => (a, b, false),
        (_, _, Some(a), Some(b)) => (a, b, true),
        _ => return Err(Error::parse(Some(1), "grid needs nu1,nu2 or log10_nu1,log10_nu2 columns")),
    };
    let ip = find("p").ok_or_else(|| Error::parse(Some(1), "grid needs a p column"))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(e.position().map(|p| p.line()), e.to_string()))?;
        let line = rec.position().map(|p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::parse(line, format!("column {:?} is not a number", &headers[i])))
        };
        let p = rec
            .get(ip)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(line, "p is not a non-negative integer"))?;
        let (a, b) = (num(i1)?, num(i2)?);
        out.push(if log {
            GridPoint::from_log10(a, b, p)
        } else {
            GridPoint { nu1: a, nu2: b, p }
        });
    }
    if out.is_empty() {
        return Err(Error::parse(None, "grid is empty"));
    }
    Ok(out)
}
