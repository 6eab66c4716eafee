//! Random strongly connected scale-free instance generation.
//!
//! Degrees are drawn i.i.d. from a truncated power law, realized with a
//! configuration-model pairing (multi-edges and self-pairs discarded), and
//! the result is repaired to meet the degree bounds and connectivity. Every
//! undirected adjacency becomes two directed edges with independent
//! Uniform(0,1) rates.

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{Edge, NetworkInstance};

#[derive(Debug, Clone, Copy)]
pub struct ScaleFreeConfig {
    pub n: usize,
    /// Power-law exponent for the degree distribution (weights k^-power).
    pub power: f64,
    pub dmin: usize,
    pub dmax: usize,
    /// Scale of the degree-proportional part of the infection costs:
    /// `c = nu * Bᵀ1 + 2 * c_rand`.
    pub nu: f64,
    pub seed: u64,
}

impl ScaleFreeConfig {
    /// Degree cap used throughout the experiments: `ceil(3 ln n)`.
    pub fn auto_dmax(n: usize) -> usize {
        (3.0 * (n as f64).ln()).ceil() as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("n must be >= 2 and dmax >= dmin >= 1")]
    BadParameters,
    #[error("could not realize a connected degree sequence in {0} attempts")]
    GenerationFailed(usize),
}

const MAX_ATTEMPTS: usize = 50;

/// Generates a strongly connected scale-free instance with the default
/// per-node parameters: alpha = 1, delta = 0.1 (kappa = 10), lambda ~ U(0,1),
/// w = 1 and c = nu * Bᵀ1 + 2 * c_rand.
pub fn generate_scale_free(cfg: &ScaleFreeConfig) -> Result<NetworkInstance, GenerationError> {
    if cfg.n < 2 || cfg.dmin < 1 || cfg.dmax < cfg.dmin || cfg.dmax >= cfg.n {
        return Err(GenerationError::BadParameters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(pairs) = try_topology(cfg, &mut rng) {
            return Ok(build_instance(cfg, pairs, &mut rng));
        }
    }
    Err(GenerationError::GenerationFailed(MAX_ATTEMPTS))
}

/// One attempt at an undirected topology with degrees in [dmin, dmax] and a
/// single connected component. Returns sorted undirected pairs (i < j).
fn try_topology(cfg: &ScaleFreeConfig, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let n = cfg.n;
    let mut degrees = sample_degrees(cfg, rng);
    if degrees.iter().sum::<usize>() % 2 == 1 {
        // fix parity inside the bounds
        let i = rng.random_range(0..n);
        if degrees[i] < cfg.dmax {
            degrees[i] += 1;
        } else {
            degrees[i] -= 1;
        }
    }

    let mut stubs: Vec<usize> = Vec::with_capacity(degrees.iter().sum());
    for (i, &d) in degrees.iter().enumerate() {
        stubs.extend(std::iter::repeat(i).take(d));
    }
    stubs.shuffle(rng);

    let mut present: HashSet<(usize, usize)> = HashSet::new();
    let mut deg = vec![0usize; n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for chunk in stubs.chunks_exact(2) {
        let (a, b) = (chunk[0].min(chunk[1]), chunk[0].max(chunk[1]));
        if a == b || present.contains(&(a, b)) {
            continue;
        }
        present.insert((a, b));
        deg[a] += 1;
        deg[b] += 1;
        pairs.push((a, b));
    }

    // repair nodes that fell short of dmin (dropped self-pairs / multi-edges)
    for i in 0..n {
        while deg[i] < cfg.dmin {
            let candidates: Vec<usize> = (0..n)
                .filter(|&j| j != i && deg[j] < cfg.dmax && !present.contains(&key(i, j)))
                .collect();
            let &j = candidates.choose(rng)?;
            present.insert(key(i, j));
            deg[i] += 1;
            deg[j] += 1;
            pairs.push(key(i, j));
        }
    }

    // connect the undirected components; both edge directions are added
    // later, so undirected connectivity gives strong connectivity
    let comps = components(n, &pairs);
    if comps.len() > 1 {
        let mut anchors = Vec::with_capacity(comps.len());
        for comp in &comps {
            // lowest-degree node of the component with room to grow
            let anchor = comp
                .iter()
                .copied()
                .filter(|&v| deg[v] < cfg.dmax)
                .min_by_key(|&v| (deg[v], v))?;
            anchors.push(anchor);
        }
        for w in anchors.windows(2) {
            let (a, b) = key(w[0], w[1]);
            if present.insert((a, b)) {
                deg[a] += 1;
                deg[b] += 1;
                pairs.push((a, b));
            }
        }
    }

    if deg.iter().any(|&d| d < cfg.dmin || d > cfg.dmax) {
        return None;
    }
    if components(n, &pairs).len() != 1 {
        return None;
    }
    pairs.sort_unstable();
    Some(pairs)
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

fn sample_degrees(cfg: &ScaleFreeConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let weights: Vec<f64> = (cfg.dmin..=cfg.dmax).map(|k| (k as f64).powf(-cfg.power)).collect();
    let total: f64 = weights.iter().sum();
    (0..cfg.n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            for (offset, &w) in weights.iter().enumerate() {
                if u < w {
                    return cfg.dmin + offset;
                }
                u -= w;
            }
            cfg.dmax
        })
        .collect()
}

fn components(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        let r = find(&mut parent, v);
        buckets[r].push(v);
    }
    buckets.into_iter().filter(|c| !c.is_empty()).collect()
}

fn build_instance(
    cfg: &ScaleFreeConfig,
    pairs: Vec<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> NetworkInstance {
    let n = cfg.n;
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for (a, b) in pairs {
        edges.push(Edge { src: a, dst: b, beta: rng.random::<f64>() });
        edges.push(Edge { src: b, dst: a, beta: rng.random::<f64>() });
    }
    let lambda: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let delta = vec![0.1; n];
    let kappa = vec![10.0; n]; // alpha = kappa * delta = 1
    let w = vec![1.0; n];
    let inst = NetworkInstance::new(n, edges, lambda, delta, kappa, vec![1.0; n], w).unwrap();
    let out_rates = inst.bt().row_sums(); // (Bᵀ1)_i: total rate node i emits
    let cost: Vec<f64> =
        out_rates.iter().map(|&r| cfg.nu * r + 2.0 * rng.random::<f64>()).collect();
    NetworkInstance::new(
        inst.n,
        inst.edges.clone(),
        inst.lambda.clone(),
        inst.delta.clone(),
        inst.kappa.clone(),
        cost,
        inst.w.clone(),
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_instance_is_valid_and_connected() {
        let cfg = ScaleFreeConfig {
            n: 100,
            power: 1.5,
            dmin: 2,
            dmax: ScaleFreeConfig::auto_dmax(100),
            nu: 1.0,
            seed: 1,
        };
        assert_eq!(cfg.dmax, 14);
        let inst = generate_scale_free(&cfg).unwrap();
        assert_eq!(inst.n(), 100);
        assert!(inst.is_strongly_connected());
        let report = inst.validate();
        assert!(report.ok, "{:?}", report.violations);
    }

    #[test]
    fn two_node_forced_topology() {
        let cfg = ScaleFreeConfig { n: 2, power: 1.5, dmin: 1, dmax: 1, nu: 0.5, seed: 7 };
        let inst = generate_scale_free(&cfg).unwrap();
        assert_eq!(inst.edges().len(), 2);
        assert!(inst.is_strongly_connected());
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = ScaleFreeConfig { n: 60, power: 1.5, dmin: 2, dmax: 13, nu: 0.5, seed: 42 };
        let a = generate_scale_free(&cfg).unwrap();
        let b = generate_scale_free(&cfg).unwrap();
        assert_eq!(super::super::serialize_instance(&a), super::super::serialize_instance(&b));
    }

    #[test]
    fn degrees_within_bounds() {
        let cfg = ScaleFreeConfig { n: 200, power: 1.5, dmin: 2, dmax: 16, nu: 0.0, seed: 3 };
        let inst = generate_scale_free(&cfg).unwrap();
        let mut deg = vec![0usize; inst.n()];
        for e in inst.edges() {
            if e.src < e.dst {
                deg[e.src] += 1;
                deg[e.dst] += 1;
            }
        }
        assert!(deg.iter().all(|&d| (2..=16).contains(&d)), "degrees {:?}", deg);
    }
}
