use crate::geom::Grid;
use crate::scene::Frame;
use crate::Vec3;

use super::Detection;

/// Euclidean connected-component clustering. Components with at least
/// `min_cluster_size` points become detections at their centroid, ordered by
/// the index of their first point.
pub fn detect(frame: &Frame, cluster_radius: f64, min_cluster_size: usize) -> Vec<Detection> {
    let points = &frame.points;
    if points.is_empty() {
        return Vec::new();
    }
    let grid = Grid::new(points, cluster_radius);
    let alive = vec![true; points.len()];
    let mut parent: Vec<usize> = (0..points.len()).collect();
    let mut buf = Vec::new();
    for i in 0..points.len() {
        grid.neighbors(i, cluster_radius, &alive, &mut buf);
        for &j in &buf {
            union(&mut parent, i, j);
        }
    }

    let mut order: Vec<usize> = Vec::new();
    let mut members: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for i in 0..points.len() {
        let r = find(&mut parent, i);
        let entry = members.entry(r).or_default();
        if entry.is_empty() {
            order.push(r);
        }
        entry.push(i);
    }

    order
        .into_iter()
        .filter_map(|r| {
            let m = &members[&r];
            if m.len() < min_cluster_size.max(1) {
                return None;
            }
            let centroid = m.iter().map(|&i| points[i]).sum::<Vec3>() / m.len() as f64;
            Some(Detection {
                position: centroid,
                timestamp: frame.timestamp,
                point_count: m.len(),
            })
        })
        .collect()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: Vec3, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.7;
                center + Vec3::new(0.2 * a.cos(), 0.2 * a.sin(), 0.05 * (i % 3) as f64)
            })
            .collect()
    }

    #[test]
    fn empty_frame() {
        let f = Frame {
            timestamp: 0.0,
            points: vec![],
        };
        assert!(detect(&f, 1.0, 3).is_empty());
    }

    #[test]
    fn two_separated_blobs() {
        let a = blob(Vec3::new(0.0, 0.0, 0.0), 20);
        let b = blob(Vec3::new(10.0, 0.0, 0.0), 30);
        let ca = a.iter().sum::<Vec3>() / 20.0;
        let cb = b.iter().sum::<Vec3>() / 30.0;
        let f = Frame {
            timestamp: 1.5,
            points: a.into_iter().chain(b).collect(),
        };
        let d = detect(&f, 1.0, 5);
        assert_eq!(d.len(), 2);
        assert!((d[0].position - ca).norm() < 1e-12);
        assert!((d[1].position - cb).norm() < 1e-12);
        assert_eq!(d[1].point_count, 30);
        assert_eq!(d[0].timestamp, 1.5);
    }

    #[test]
    fn undersized_blob_is_dropped() {
        let f = Frame {
            timestamp: 0.0,
            points: blob(Vec3::zeros(), 4),
        };
        assert!(detect(&f, 1.0, 5).is_empty());
        assert_eq!(detect(&f, 1.0, 4).len(), 1);
    }
}
