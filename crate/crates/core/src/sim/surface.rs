//! Ground-truth terrain for the simulator: a piecewise-linear height profile
//! along x (y-invariant) with quadratic fillets at the vertices so the
//! contact normal stays well defined over edges.

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::terrain::TerrainPlane;

/// Rounding half-width applied at profile vertices (m).
pub const FILLET: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TerrainSpec {
    Flat {
        #[serde(default)]
        height: f64,
    },
    /// Two triangular ramps of the given height and slope, separated by a
    /// flat gap.
    DoubleIncline {
        height: f64,
        slope_deg: f64,
        start_x: f64,
        gap: f64,
    },
    Step {
        height: f64,
        at_x: f64,
    },
    Stairs {
        rise: f64,
        run: f64,
        count: usize,
        start_x: f64,
    },
    Profile {
        points: Vec<[f64; 2]>,
    },
}

impl Default for TerrainSpec {
    fn default() -> TerrainSpec {
        TerrainSpec::Flat { height: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TerrainSurface {
    /// Sorted (x, z) breakpoints; flat extrapolation beyond the ends.
    breakpoints: Vec<(f64, f64)>,
    fillet: f64,
}

impl TerrainSurface {
    pub fn from_spec(spec: &TerrainSpec) -> TerrainSurface {
        let breakpoints = match spec {
            TerrainSpec::Flat { height } => vec![(-1e3, *height), (1e3, *height)],
            TerrainSpec::DoubleIncline {
                height,
                slope_deg,
                start_x,
                gap,
            } => {
                let run = height / slope_deg.to_radians().tan();
                let x0 = *start_x;
                vec![
                    (-1e3, 0.0),
                    (x0, 0.0),
                    (x0 + run, *height),
                    (x0 + 2.0 * run, 0.0),
                    (x0 + 2.0 * run + gap, 0.0),
                    (x0 + 3.0 * run + gap, *height),
                    (x0 + 4.0 * run + gap, 0.0),
                    (1e3, 0.0),
                ]
            }
            TerrainSpec::Step { height, at_x } => vec![
                (-1e3, 0.0),
                (at_x - 0.015, 0.0),
                (at_x + 0.015, *height),
                (1e3, *height),
            ],
            TerrainSpec::Stairs {
                rise,
                run,
                count,
                start_x,
            } => {
                let mut pts = vec![(-1e3, 0.0), (*start_x, 0.0)];
                for i in 0..*count {
                    let z0 = *rise * i as f64;
                    let z1 = *rise * (i + 1) as f64;
                    let x = start_x + run * i as f64;
                    pts.push((x + run - 0.015, z0));
                    pts.push((x + run + 0.015, z1));
                }
                let top = *rise * *count as f64;
                pts.push((start_x + run * *count as f64 + 1e3, top));
                pts
            }
            TerrainSpec::Profile { points } => {
                let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                pts
            }
        };
        TerrainSurface {
            breakpoints,
            fillet: FILLET,
        }
    }

    fn segment_slope(&self, i: usize) -> f64 {
        let (x0, z0) = self.breakpoints[i];
        let (x1, z1) = self.breakpoints[i + 1];
        if x1 > x0 {
            (z1 - z0) / (x1 - x0)
        } else {
            0.0
        }
    }

    /// Height and slope at x, with C¹ fillets at interior vertices.
    pub fn height_and_slope(&self, x: f64) -> (f64, f64) {
        let pts = &self.breakpoints;
        let n = pts.len();
        if x <= pts[0].0 {
            return (pts[0].1, 0.0);
        }
        if x >= pts[n - 1].0 {
            return (pts[n - 1].1, 0.0);
        }
        let mut seg = 0;
        while seg + 2 < n && x > pts[seg + 1].0 {
            seg += 1;
        }
        // Candidate fillet around the vertices bounding this segment.
        for v in [seg, seg + 1] {
            if v == 0 || v == n - 1 {
                continue;
            }
            let (xv, zv) = pts[v];
            if (x - xv).abs() <= self.fillet {
                let m0 = self.segment_slope(v - 1);
                let m1 = self.segment_slope(v);
                let s = x - (xv - self.fillet);
                let z_in = zv - m0 * self.fillet;
                let z = z_in + m0 * s + (m1 - m0) * s * s / (4.0 * self.fillet);
                let slope = m0 + (m1 - m0) * s / (2.0 * self.fillet);
                return (z, slope);
            }
        }
        let (x0, z0) = pts[seg];
        let m = self.segment_slope(seg);
        (z0 + m * (x - x0), m)
    }

    pub fn height(&self, x: f64) -> f64 {
        self.height_and_slope(x).0
    }

    /// Local tangent plane at the surface point below (x, y).
    pub fn local_plane(&self, x: f64, y: f64) -> TerrainPlane {
        let (z, m) = self.height_and_slope(x);
        TerrainPlane {
            normal: Unit::new_normalize(Vector3::new(-m, 0.0, 1.0)),
            point: Vector3::new(x, y, z),
            updated_at: 0.0,
        }
    }
}
