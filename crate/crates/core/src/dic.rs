//! Synthetic digital image correlation data.
//!
//! Samples are surface node displacements of a reference solution, taken on
//! a data mesh that may be finer than the computational grid. Nodes on the
//! exterior edges of the surface patch are found topologically and can be
//! dropped, and random subsets and Gaussian noise emulate imperfect
//! correlation.
//!
//! ```text
//! caliper-dic v1
//! provenance <source> <surface> <fraction> <sigma> <seed>
//! forces <N_t>
//! <t> <f_net>
//! samples <N_u>
//! <x> <y> <z> <t> <ux> <uy> <uz>
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::fem::FemSolution;
use crate::mesh::HexMesh;

pub const DIC_HEADER: &str = "caliper-dic v1";

/// One measured displacement at a reference point and normalized time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicSample {
    pub x: Vector3<f64>,
    pub t: f64,
    pub u: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub surface: String,
    pub fraction: f64,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicDataset {
    pub samples: Vec<DicSample>,
    /// `(t_n, f_net)` per load step.
    pub forces: Vec<(f64, f64)>,
    pub provenance: Provenance,
}

/// Nodes of `surface` that lie on an exterior edge of the surface patch.
///
/// The patch is the set of boundary faces whose four nodes all belong to
/// the node set. An edge used by exactly one patch face is exterior.
pub fn surface_edge_nodes(mesh: &HexMesh, surface: &[usize]) -> BTreeSet<usize> {
    let members: BTreeSet<usize> = surface.iter().copied().collect();
    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    for face in mesh.boundary_faces() {
        if !face.iter().all(|n| members.contains(n)) {
            continue;
        }
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            *edge_use.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    edge_use
        .into_iter()
        .filter(|&(_, n)| n == 1)
        .flat_map(|((a, b), _)| [a, b])
        .collect()
}

/// Samples every surviving surface node of `data_mesh` at every step of
/// `solution`, which must have been computed on `data_mesh`.
pub fn extract(solution: &FemSolution, data_mesh: &HexMesh, surface: &str, remove_edges: bool) -> Result<DicDataset> {
    let nodes = data_mesh.node_set(surface)?;
    if solution.displacements.iter().any(|u| u.len() != data_mesh.node_count()) {
        return Err(invalid("solution does not match the data mesh"));
    }
    let excluded = if remove_edges {
        surface_edge_nodes(data_mesh, nodes)
    } else {
        BTreeSet::new()
    };
    let kept: Vec<usize> = nodes.iter().copied().filter(|n| !excluded.contains(n)).collect();
    if kept.is_empty() {
        return Err(invalid(format!("no nodes of surface `{surface}` survive edge removal")));
    }
    let mut samples = Vec::with_capacity(kept.len() * solution.steps());
    for (k, u) in solution.displacements.iter().enumerate() {
        let t = solution.time(k + 1);
        samples.extend(kept.iter().map(|&n| DicSample {
            x: data_mesh.nodes()[n],
            t,
            u: u[n],
        }));
    }
    let forces = solution
        .net_force
        .iter()
        .enumerate()
        .map(|(k, f)| (solution.time(k + 1), *f))
        .collect();
    Ok(DicDataset {
        samples,
        forces,
        provenance: Provenance {
            source: "fem".into(),
            surface: surface.into(),
            fraction: 1.0,
            sigma: 0.0,
            seed: 0,
        },
    })
}

impl DicDataset {
    /// Keeps a uniformly random subset of `round(fraction * N)` samples,
    /// in their original order.
    pub fn dropout(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(invalid(format!("dropout fraction must lie in (0, 1], got {fraction}")));
        }
        let n = self.samples.len();
        let keep = (fraction * n as f64).round() as usize;
        if keep == 0 {
            return Err(invalid(format!("fraction {fraction} of {n} samples leaves none")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, keep).into_vec();
        idx.sort_unstable();
        let mut out = self.clone();
        out.samples = idx.into_iter().map(|i| self.samples[i]).collect();
        out.provenance.fraction = self.provenance.fraction * fraction;
        out.provenance.seed = seed;
        Ok(out)
    }

    /// Adds i.i.d. zero-mean Gaussian noise to every displacement component.
    pub fn add_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
        }
        let mut out = self.clone();
        out.provenance.sigma = sigma;
        out.provenance.seed = seed;
        if sigma == 0.0 {
            return Ok(out);
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut out.samples {
            for c in 0..3 {
                s.u[c] += normal.sample(&mut rng);
            }
        }
        Ok(out)
    }

    pub fn steps(&self) -> usize {
        self.forces.len()
    }

    /// Measured force series without the time column.
    pub fn force_values(&self) -> Vec<f64> {
        self.forces.iter().map(|f| f.1).collect()
    }

    pub fn to_text(&self) -> String {
        let p = &self.provenance;
        let mut out = String::new();
        writeln!(out, "{DIC_HEADER}").unwrap();
        writeln!(out, "provenance {} {} {} {} {}", p.source, p.surface, p.fraction, p.sigma, p.seed).unwrap();
        writeln!(out, "forces {}", self.forces.len()).unwrap();
        for (t, f) in &self.forces {
            writeln!(out, "{t} {f}").unwrap();
        }
        writeln!(out, "samples {}", self.samples.len()).unwrap();
        for s in &self.samples {
            writeln!(out, "{} {} {} {} {} {} {}", s.x[0], s.x[1], s.x[2], s.t, s.u[0], s.u[1], s.u[2]).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (i, l) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("unexpected end of dataset, expected {what}"),
            })?;
            Ok((i, l.split_whitespace().collect()))
        };
        let err = |line: usize, message: String| Error::Parse { line, message };
        let num = |line: usize, s: &str| -> Result<f64> { s.parse().map_err(|_| err(line, format!("invalid number `{s}`"))) };
        let (i, head) = next("header")?;
        if head.join(" ") != DIC_HEADER {
            return Err(err(i, format!("expected header `{DIC_HEADER}`")));
        }
        let (i, prov) = next("provenance")?;
        if prov.len() != 6 || prov[0] != "provenance" {
            return Err(err(i, "expected `provenance <source> <surface> <fraction> <sigma> <seed>`".into()));
        }
        let provenance = Provenance {
            source: prov[1].into(),
            surface: prov[2].into(),
            fraction: num(i, prov[3])?,
            sigma: num(i, prov[4])?,
            seed: prov[5].parse().map_err(|_| err(i, format!("invalid seed `{}`", prov[5])))?,
        };
        let count = |i: usize, t: &[&str], key: &str| -> Result<usize> {
            if t.len() != 2 || t[0] != key {
                return Err(err(i, format!("expected `{key} <count>`")));
            }
            t[1].parse().map_err(|_| err(i, format!("invalid count `{}`", t[1])))
        };
        let (i, t) = next("forces")?;
        let n_f = count(i, &t, "forces")?;
        let mut forces = Vec::with_capacity(n_f);
        for _ in 0..n_f {
            let (i, t) = next("force line")?;
            if t.len() != 2 {
                return Err(err(i, "expected `<t> <f_net>`".into()));
            }
            forces.push((num(i, t[0])?, num(i, t[1])?));
        }
        let (i, t) = next("samples")?;
        let n_s = count(i, &t, "samples")?;
        let mut samples = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            let (i, t) = next("sample line")?;
            if t.len() != 7 {
                return Err(err(i, "expected `<x> <y> <z> <t> <ux> <uy> <uz>`".into()));
            }
            let v: Vec<f64> = t.iter().map(|s| num(i, s)).collect::<Result<_>>()?;
            samples.push(DicSample {
                x: Vector3::new(v[0], v[1], v[2]),
                t: v[3],
                u: Vector3::new(v[4], v[5], v[6]),
            });
        }
        Ok(Self {
            samples,
            forces,
            provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box;

    fn fake_solution(mesh: &HexMesh, steps: usize) -> FemSolution {
        FemSolution {
            displacements: (1..=steps)
                .map(|n| mesh.nodes().iter().map(|x| x * (0.01 * n as f64)).collect())
                .collect(),
            net_force: (1..=steps).map(|n| 2.0 * n as f64).collect(),
            history: vec![Default::default(); steps],
        }
    }

    #[test]
    fn front_face_counts() {
        let mesh = generate_box([1.0, 1.0, 1.0], [10, 10, 2]).unwrap();
        let sol = fake_solution(&mesh, 3);
        let with = extract(&sol, &mesh, "zmax", true).unwrap();
        let without = extract(&sol, &mesh, "zmax", false).unwrap();
        assert_eq!(with.samples.len(), 81 * 3);
        assert_eq!(without.samples.len(), 121 * 3);
        assert_eq!(with.forces, vec![(1.0 / 3.0, 2.0), (2.0 / 3.0, 4.0), (1.0, 6.0)]);
        assert!(with.samples.iter().all(|s| s.x[2] == 1.0 && s.x[0] > 0.0 && s.x[0] < 1.0 && s.x[1] > 0.0 && s.x[1] < 1.0));
    }

    #[test]
    fn surviving_set_must_be_nonempty() {
        let mesh = generate_box([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        let sol = fake_solution(&mesh, 1);
        assert!(extract(&sol, &mesh, "zmax", true).is_err());
        assert!(extract(&sol, &mesh, "nope", false).is_err());
    }

    fn dataset(n: usize) -> DicDataset {
        DicDataset {
            samples: (0..n)
                .map(|k| DicSample {
                    x: Vector3::new(k as f64 * 0.1, 0.3, 1.0 / 3.0),
                    t: 0.5,
                    u: Vector3::new(1e-17 * k as f64, -0.25, std::f64::consts::PI),
                })
                .collect(),
            forces: vec![(0.5, 1.25), (1.0, 2.5)],
            provenance: Provenance {
                source: "fem".into(),
                surface: "zmax".into(),
                fraction: 1.0,
                sigma: 0.0,
                seed: 0,
            },
        }
    }

    #[test]
    fn dropout_sizes_and_determinism() {
        let d = dataset(200);
        assert_eq!(d.dropout(1.0, 3).unwrap().samples, d.samples);
        let half = d.dropout(0.5, 3).unwrap();
        assert_eq!(half.samples.len(), 100);
        assert_eq!(half.forces, d.forces);
        assert_eq!(half, d.dropout(0.5, 3).unwrap());
        assert_ne!(half.samples, d.dropout(0.5, 4).unwrap().samples);
        assert!(d.dropout(0.0, 1).is_err());
        assert!(dataset(1).dropout(0.1, 1).is_err());
    }

    #[test]
    fn noise_statistics() {
        let d = dataset(3);
        assert_eq!(d.add_noise(0.0, 1).unwrap().samples, d.samples);
        let big = dataset(100_000 / 3 + 1);
        let sigma = 0.01;
        let noisy = big.add_noise(sigma, 9).unwrap();
        assert_eq!(noisy, big.add_noise(sigma, 9).unwrap());
        let diffs: Vec<f64> = noisy.samples.iter().zip(&big.samples).flat_map(|(a, b)| (0..3).map(move |c| a.u[c] - b.u[c])).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "{mean}");
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
        assert!(d.add_noise(-1.0, 0).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let d = dataset(5).add_noise(0.1, 2).unwrap();
        let back = DicDataset::parse(&d.to_text()).unwrap();
        assert_eq!(back, d);
        assert!(DicDataset::parse("caliper-dic v2\n").is_err());
    }
}
