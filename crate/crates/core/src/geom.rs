use std::collections::HashMap;

use crate::Vec3;

/// Axis-aligned box given by its center and full side lengths.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center(center: Vec3, extents: [f64; 3]) -> Self {
        let half = Vec3::new(extents[0], extents[1], extents[2]) * 0.5;
        Self {
            min: center - half,
            max: center + half,
        }
    }

    /// Slab test for the closed segment `a -> b`.
    pub fn intersects_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for axis in 0..3 {
            if d[axis].abs() < 1e-15 {
                if a[axis] < self.min[axis] || a[axis] > self.max[axis] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d[axis];
            let mut ta = (self.min[axis] - a[axis]) * inv;
            let mut tb = (self.max[axis] - a[axis]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

/// Uniform hash grid for fixed-radius neighbor queries.
pub(crate) struct Grid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: HashMap<_, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
        }
    }

    /// Indices of points within `radius` of point `i` (excluding `i`), restricted to `alive`.
    pub fn neighbors(&self, i: usize, radius: f64, alive: &[bool], out: &mut Vec<usize>) {
        out.clear();
        let p = &self.points[i];
        let (cx, cy, cz) = key(p, self.cell);
        let reach = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if j != i && alive[j] && (self.points[j] - p).norm_squared() <= r2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
