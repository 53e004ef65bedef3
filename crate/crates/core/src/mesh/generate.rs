//! Structured mesh generators for the benchmark geometries.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;

use super::HexMesh;
use crate::error::{invalid, Error, Result};
use crate::quadrature::element_jacobian_dets;

/// Structured box `[0, lx] x [0, ly] x [0, lz]` with `nx * ny * nz` elements.
///
/// Nodes are numbered x-fastest. Node sets `xmin`, `xmax`, `ymin`, `ymax`,
/// `zmin`, `zmax` are created along with matching side sets.
pub fn generate_box(lengths: [f64; 3], divisions: [usize; 3]) -> Result<HexMesh> {
    if lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(invalid(format!("box lengths must be positive, got {lengths:?}")));
    }
    if divisions.iter().any(|&d| d == 0) {
        return Err(invalid(format!("box divisions must be >= 1, got {divisions:?}")));
    }
    let [nx, ny, nz] = divisions;
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let idx = [i, j, k];
                nodes.push(Vector3::from_fn(|d, _| {
                    if idx[d] == divisions[d] {
                        lengths[d]
                    } else {
                        lengths[d] * idx[d] as f64 / divisions[d] as f64
                    }
                }));
            }
        }
    }

    let mut elements = Vec::with_capacity(nx * ny * nz);
    let mut side_sets: BTreeMap<String, Vec<(usize, u8)>> = BTreeMap::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let e = elements.len();
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
                let mut side = |name: &str, face: u8| {
                    side_sets.entry(name.to_string()).or_default().push((e, face));
                };
                if i == 0 {
                    side("xmin", 5);
                }
                if i + 1 == nx {
                    side("xmax", 3);
                }
                if j == 0 {
                    side("ymin", 2);
                }
                if j + 1 == ny {
                    side("ymax", 4);
                }
                if k == 0 {
                    side("zmin", 0);
                }
                if k + 1 == nz {
                    side("zmax", 1);
                }
            }
        }
    }

    let mut node_sets = BTreeMap::new();
    for (axis, (lo, hi)) in [("x", 0usize), ("y", 1), ("z", 2)]
        .into_iter()
        .map(|(a, d)| (d, (format!("{a}min"), format!("{a}max"))))
    {
        let max = lengths[axis];
        let lo_set = (0..nodes.len()).filter(|&n| nodes[n][axis] == 0.0).collect();
        let hi_set = (0..nodes.len()).filter(|&n| nodes[n][axis] == max).collect();
        node_sets.insert(lo, lo_set);
        node_sets.insert(hi, hi_set);
    }

    HexMesh::new(nodes, elements, node_sets, side_sets)
}

/// Rectangular plate `[0, width] x [0, height] x [0, thickness]` with a
/// centered through-hole, meshed as a single O-grid ring.
///
/// `refinement = r` gives `8r` segments per plate side, `4r` radial layers
/// and `2r` layers through the thickness. Node sets: the six bounding planes
/// plus `hole`.
pub fn generate_plate_with_hole(
    width: f64,
    height: f64,
    thickness: f64,
    hole_radius: f64,
    refinement: usize,
) -> Result<HexMesh> {
    check_plate(width, height, thickness, hole_radius, refinement)?;
    let n_side = 8 * refinement;
    let perimeter = plate_perimeter(width, height, [n_side; 4], &[]);
    ring_mesh(
        &perimeter,
        [width, height, thickness],
        hole_radius,
        4 * refinement,
        2 * refinement,
    )
}

/// A semicircular edge notch cut into the top (`y = height`) or bottom
/// (`y = 0`) side of a plate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotchSpec {
    pub top: bool,
    /// x-coordinate of the notch center on its edge.
    pub center: f64,
    pub radius: f64,
}

/// Plate with a centered hole and semicircular edge notches. The notch
/// positions are caller-supplied so asymmetric layouts can be studied.
///
/// `refinement = r` gives `10r` segments per side, `5r` radial layers and
/// `3r` layers through the thickness (600 elements for `r = 1`).
pub fn generate_notched_plate(
    width: f64,
    height: f64,
    thickness: f64,
    hole_radius: f64,
    notches: &[NotchSpec],
    refinement: usize,
) -> Result<HexMesh> {
    check_plate(width, height, thickness, hole_radius, refinement)?;
    for n in notches {
        if !(n.radius > 0.0) || n.center - n.radius <= 0.0 || n.center + n.radius >= width {
            return Err(invalid(format!("notch {n:?} does not fit on a plate of width {width}")));
        }
        if height / 2.0 - hole_radius <= n.radius {
            return Err(invalid(format!("notch {n:?} intersects the central hole")));
        }
    }
    for (a, b) in notches.iter().zip(notches.iter().skip(1)) {
        if a.top == b.top && (a.center - b.center).abs() < a.radius + b.radius {
            return Err(invalid("overlapping notches on the same edge"));
        }
    }
    let n_side = 10 * refinement;
    let perimeter = plate_perimeter(width, height, [n_side; 4], notches);
    let mut mesh = ring_mesh(
        &perimeter,
        [width, height, thickness],
        hole_radius,
        5 * refinement,
        3 * refinement,
    )?;
    // Notch surfaces: outer-ring nodes that moved off the straight edges.
    let n_perim = perimeter.len();
    let layers = 3 * refinement + 1;
    let n_rad = 5 * refinement + 1;
    for (name, top) in [("notch_top", true), ("notch_bottom", false)] {
        let edge_y = if top { height } else { 0.0 };
        let set: Vec<usize> = (0..layers)
            .flat_map(|k| {
                perimeter
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.notch == Some(top) && p.xy[1] != edge_y)
                    .map(move |(i, _)| i + n_perim * ((n_rad - 1) + n_rad * k))
            })
            .collect();
        if !set.is_empty() {
            mesh.node_sets.insert(name.to_string(), set);
        }
    }
    Ok(mesh)
}

fn check_plate(width: f64, height: f64, thickness: f64, radius: f64, refinement: usize) -> Result<()> {
    if [width, height, thickness].iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("plate dimensions must be positive"));
    }
    if !(radius > 0.0) || 2.0 * radius >= width.min(height) {
        return Err(invalid(format!(
            "hole radius {radius} does not fit in a {width} x {height} plate"
        )));
    }
    if refinement == 0 {
        return Err(invalid("refinement must be >= 1"));
    }
    Ok(())
}

struct PerimeterPoint {
    xy: [f64; 2],
    /// `Some(top)` for points on a notch arc.
    notch: Option<bool>,
}

/// Counterclockwise outer boundary starting at the origin corner.
fn plate_perimeter(width: f64, height: f64, counts: [usize; 4], notches: &[NotchSpec]) -> Vec<PerimeterPoint> {
    let corners = [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]];
    let mut out = Vec::new();
    for side in 0..4 {
        let a = corners[side];
        let b = corners[(side + 1) % 4];
        let edge_notches: Vec<&NotchSpec> = match side {
            0 => notches.iter().filter(|n| !n.top).collect(),
            2 => notches.iter().filter(|n| n.top).collect(),
            _ => Vec::new(),
        };
        if edge_notches.is_empty() {
            for s in 0..counts[side] {
                let t = s as f64 / counts[side] as f64;
                out.push(PerimeterPoint {
                    xy: [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                    notch: None,
                });
            }
            continue;
        }
        // Split the edge into straight runs and arcs, distributing points by length.
        let top = side == 2;
        let y = a[1];
        let mut pieces: Vec<(f64, f64, bool)> = Vec::new(); // (x0, x1, is_arc) along travel
        let mut sorted = edge_notches.clone();
        sorted.sort_by(|p, q| p.center.total_cmp(&q.center));
        if top {
            sorted.reverse();
        }
        let mut cursor = a[0];
        for n in sorted {
            let (enter, exit) = if top {
                (n.center + n.radius, n.center - n.radius)
            } else {
                (n.center - n.radius, n.center + n.radius)
            };
            pieces.push((cursor, enter, false));
            pieces.push((enter, exit, true));
            cursor = exit;
        }
        pieces.push((cursor, b[0], false));
        let lengths: Vec<f64> = pieces
            .iter()
            .map(|&(x0, x1, arc)| if arc { PI * (x1 - x0).abs() / 2.0 } else { (x1 - x0).abs() })
            .collect();
        let total: f64 = lengths.iter().sum();
        let mut segs: Vec<usize> = pieces
            .iter()
            .zip(&lengths)
            .map(|(&(_, _, arc), len)| {
                ((counts[side] as f64 * len / total).round() as usize).max(if arc { 4 } else { 1 })
            })
            .collect();
        // keep the side total fixed by absorbing rounding in the longest straight run
        let longest = (0..pieces.len())
            .filter(|&p| !pieces[p].2)
            .max_by(|&p, &q| lengths[p].total_cmp(&lengths[q]))
            .unwrap_or(0);
        let assigned: usize = segs.iter().sum();
        segs[longest] = (segs[longest] + counts[side]).saturating_sub(assigned).max(1);
        for (&(x0, x1, arc), &segs) in pieces.iter().zip(&segs) {
            for s in 0..segs {
                let t = s as f64 / segs as f64;
                if arc {
                    let center = 0.5 * (x0 + x1);
                    let r = 0.5 * (x1 - x0).abs();
                    let phi = PI * t;
                    let dir = if x1 > x0 { 1.0 } else { -1.0 };
                    let depth = r * phi.sin();
                    out.push(PerimeterPoint {
                        xy: [center - dir * r * phi.cos(), if top { y - depth } else { y + depth }],
                        notch: Some(top),
                    });
                } else {
                    out.push(PerimeterPoint {
                        xy: [x0 + t * (x1 - x0), y],
                        notch: None,
                    });
                }
            }
        }
    }
    out
}

fn ring_mesh(
    perimeter: &[PerimeterPoint],
    dims: [f64; 3],
    radius: f64,
    n_rad: usize,
    n_z: usize,
) -> Result<HexMesh> {
    let [width, height, thickness] = dims;
    let center = [width / 2.0, height / 2.0];
    let n_perim = perimeter.len();
    let id = |i: usize, j: usize, k: usize| (i % n_perim) + n_perim * (j + (n_rad + 1) * k);

    let mut nodes = Vec::with_capacity(n_perim * (n_rad + 1) * (n_z + 1));
    for k in 0..=n_z {
        let z = thickness * k as f64 / n_z as f64;
        for j in 0..=n_rad {
            let rho = j as f64 / n_rad as f64;
            for p in perimeter {
                let dx = p.xy[0] - center[0];
                let dy = p.xy[1] - center[1];
                let d = (dx * dx + dy * dy).sqrt();
                let hole = [center[0] + radius * dx / d, center[1] + radius * dy / d];
                let xy = if j == n_rad {
                    p.xy
                } else {
                    [
                        (1.0 - rho) * hole[0] + rho * p.xy[0],
                        (1.0 - rho) * hole[1] + rho * p.xy[1],
                    ]
                };
                nodes.push(Vector3::new(xy[0], xy[1], z));
            }
        }
    }

    let mut elements = Vec::with_capacity(n_perim * n_rad * n_z);
    for k in 0..n_z {
        for j in 0..n_rad {
            for i in 0..n_perim {
                // radial then circumferential keeps the bottom face counterclockwise
                elements.push([
                    id(i, j, k),
                    id(i, j + 1, k),
                    id(i + 1, j + 1, k),
                    id(i + 1, j, k),
                    id(i, j, k + 1),
                    id(i, j + 1, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i + 1, j, k + 1),
                ]);
            }
        }
    }
    for (e, conn) in elements.iter().enumerate() {
        let coords = conn.map(|n| nodes[n]);
        if element_jacobian_dets(&coords).iter().any(|d| !(*d > 0.0)) {
            return Err(Error::GenerationFailure { element: e });
        }
    }

    let mut node_sets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let outer = |j: usize| j == n_rad;
    for (n, p) in nodes.iter().enumerate() {
        let j = (n / n_perim) % (n_rad + 1);
        let mut add = |name: &str| node_sets.entry(name.to_string()).or_default().push(n);
        if outer(j) {
            if p.x == 0.0 {
                add("xmin");
            }
            if p.x == width {
                add("xmax");
            }
            if p.y == 0.0 {
                add("ymin");
            }
            if p.y == height {
                add("ymax");
            }
        }
        if j == 0 {
            add("hole");
        }
        if p.z == 0.0 {
            add("zmin");
        }
        if p.z == thickness {
            add("zmax");
        }
    }

    let mut side_sets: BTreeMap<String, Vec<(usize, u8)>> = BTreeMap::new();
    for (e, conn) in elements.iter().enumerate() {
        let k = e / (n_perim * n_rad);
        let j = (e / n_perim) % n_rad;
        if k == 0 {
            side_sets.entry("zmin".into()).or_default().push((e, 0));
        }
        if k + 1 == n_z {
            side_sets.entry("zmax".into()).or_default().push((e, 1));
        }
        if j == 0 {
            side_sets.entry("hole".into()).or_default().push((e, 5));
        }
        if j + 1 == n_rad {
            // outer face: nodes 1, 2, 6, 5 (xi = +1)
            let face = [conn[1], conn[2]].map(|n| nodes[n]);
            for (name, hit) in [
                ("xmin", face.iter().all(|p| p.x == 0.0)),
                ("xmax", face.iter().all(|p| p.x == width)),
                ("ymin", face.iter().all(|p| p.y == 0.0)),
                ("ymax", face.iter().all(|p| p.y == height)),
            ] {
                if hit {
                    side_sets.entry(name.into()).or_default().push((e, 3));
                }
            }
        }
    }

    HexMesh::new(nodes, elements, node_sets, side_sets)
}
