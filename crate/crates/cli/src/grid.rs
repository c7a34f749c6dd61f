//! Parameter grids. An axis is a number, a list of numbers, or a string
//! `start:stop:count[:lin|log]`.

use std::fmt;

use anyhow::{anyhow, bail, Result};
use pbgeom::pimage::Weighting;
use pbgeom::pullback::EncodingSpec;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub struct Axis(pub Vec<f64>);

impl Axis {
    /// Parses `start:stop:count[:lin|log]`.
    pub fn parse(s: &str) -> Result<Axis> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if !(3..=4).contains(&parts.len()) {
            bail!("grid `{s}` must look like start:stop:count[:lin|log]");
        }
        let start: f64 = parts[0].parse().map_err(|_| anyhow!("grid `{s}`: bad start"))?;
        let stop: f64 = parts[1].parse().map_err(|_| anyhow!("grid `{s}`: bad stop"))?;
        let count: usize = parts[2].parse().map_err(|_| anyhow!("grid `{s}`: bad count"))?;
        let log = match parts.get(3).copied() {
            None | Some("lin") => false,
            Some("log") => true,
            Some(other) => bail!("grid `{s}`: spacing must be lin or log, got {other}"),
        };
        if count == 0 {
            bail!("grid `{s}` is empty");
        }
        if !(start.is_finite() && stop.is_finite()) {
            bail!("grid `{s}` has non-finite ends");
        }
        if log && !(start > 0.0 && stop > 0.0) {
            bail!("grid `{s}`: log spacing needs positive ends");
        }
        if count == 1 {
            if start != stop {
                bail!("grid `{s}`: a single point needs start == stop");
            }
            return Ok(Axis(vec![start]));
        }
        let last = (count - 1) as f64;
        let values = (0..count)
            .map(|i| {
                let t = i as f64 / last;
                if i == 0 {
                    start
                } else if i == count - 1 {
                    stop
                } else if log {
                    (start.ln() + t * (stop.ln() - start.ln())).exp()
                } else {
                    start + t * (stop - start)
                }
            })
            .collect();
        Ok(Axis(values))
    }
}

impl Serialize for Axis {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Axis {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(f64),
            Many(Vec<f64>),
            Spec(String),
        }
        let axis = match Raw::deserialize(d)? {
            Raw::One(v) => Axis(vec![v]),
            Raw::Many(v) => Axis(v),
            Raw::Spec(s) => Axis::parse(&s).map_err(serde::de::Error::custom)?,
        };
        if axis.0.is_empty() {
            return Err(serde::de::Error::custom("grid axis is empty"));
        }
        Ok(axis)
    }
}

/// Axes over image resolution, kernel variance and weighting parameters.
/// Missing axes keep the base encoding's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_mean: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Axis>,
}

/// One grid point; `None` keeps the base value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cell {
    pub resolution: Option<f64>,
    pub variance: Option<f64>,
    pub l_max: Option<f64>,
    pub k_mean: Option<f64>,
    pub s2: Option<f64>,
    pub kappa: Option<f64>,
}

impl Grid {
    pub fn is_empty(&self) -> bool {
        *self == Grid::default()
    }

    /// Cartesian product in field order, last axis fastest. A grid without
    /// axes has the single base cell.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let axes: [(&Option<Axis>, fn(&mut Cell, f64)); 6] = [
            (&self.resolution, |c, v| c.resolution = Some(v)),
            (&self.variance, |c, v| c.variance = Some(v)),
            (&self.l_max, |c, v| c.l_max = Some(v)),
            (&self.k_mean, |c, v| c.k_mean = Some(v)),
            (&self.s2, |c, v| c.s2 = Some(v)),
            (&self.kappa, |c, v| c.kappa = Some(v)),
        ];
        let mut cells = vec![Cell::default()];
        for (axis, set) in axes {
            if let Some(Axis(values)) = axis {
                if values.is_empty() {
                    bail!("grid axis is empty");
                }
                cells = cells
                    .into_iter()
                    .flat_map(|c| {
                        values.iter().map(move |&v| {
                            let mut c = c;
                            set(&mut c, v);
                            c
                        })
                    })
                    .collect();
            }
        }
        Ok(cells)
    }
}

impl Cell {
    /// The base encoding with this cell's values substituted.
    pub fn apply(&self, base: &EncodingSpec) -> Result<EncodingSpec> {
        let mut spec = base.clone();
        if let Some(p) = self.resolution {
            if !(p >= 1.0 && p.fract() == 0.0) {
                bail!("resolution must be a positive integer, got {p}");
            }
            spec.pi.resolution = p as usize;
        }
        if let Some(v) = self.variance {
            spec.pi.variance = v;
        }
        match &mut spec.pi.weighting {
            Weighting::Linear { l_max } => {
                if self.k_mean.is_some() || self.s2.is_some() || self.kappa.is_some() {
                    bail!("k_mean, s2 and kappa need a beta weighting");
                }
                if let Some(v) = self.l_max {
                    *l_max = v;
                }
            }
            Weighting::Beta { k_mean, s2, kappa } => {
                if self.l_max.is_some() {
                    bail!("l_max needs a linear weighting");
                }
                if let Some(v) = self.k_mean {
                    *k_mean = v;
                }
                if let Some(v) = self.s2 {
                    *s2 = v;
                }
                if let Some(v) = self.kappa {
                    *kappa = v;
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [
            ("P", self.resolution),
            ("variance", self.variance),
            ("l_max", self.l_max),
            ("k_mean", self.k_mean),
            ("s2", self.s2),
            ("kappa", self.kappa),
        ]
        .iter()
        .filter_map(|(n, v)| v.map(|v| format!("{n}={v}")))
        .collect();
        if parts.is_empty() {
            write!(f, "base")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_log_axes() {
        assert_eq!(Axis::parse("15:30:16").unwrap().0.len(), 16);
        let a = Axis::parse("0.1:0.7:7").unwrap().0;
        assert!((a[3] - 0.4).abs() < 1e-15);
        assert_eq!(a[6], 0.7);
        let g = Axis::parse("1e-5:1e-4:8:log").unwrap().0;
        assert_eq!(g[0], 1e-5);
        assert_eq!(g[7], 1e-4);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(1.0 / 7.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_axes() {
        for s in ["1:2", "1:2:0", "0:1:3:log", "1:2:3:cubic", "a:1:2", "1:2:1"] {
            assert!(Axis::parse(s).is_err(), "{s}");
        }
        assert_eq!(Axis::parse("3:3:1").unwrap().0, vec![3.0]);
    }

    #[test]
    fn cells_are_a_product() {
        let g = Grid {
            resolution: Some(Axis(vec![10.0, 20.0])),
            variance: Some(Axis(vec![1e-4, 1e-3, 1e-2])),
            ..Grid::default()
        };
        let cells = g.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].resolution, Some(10.0));
        assert_eq!(cells[1].variance, Some(1e-3));
        assert_eq!(Grid::default().cells().unwrap(), vec![Cell::default()]);
    }
}
