//! Seeded random connected topologies.

use rand::Rng;

/// Degree cap for generated graphs.
pub const MAX_DEGREE: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub nodes: usize,
    /// Undirected edges `(i, j)` with `i < j`, no duplicates.
    pub edges: Vec<(usize, usize)>,
    pub subscribed: Vec<bool>,
}

impl Topology {
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == i {
                Some(b)
            } else if b == i {
                Some(a)
            } else {
                None
            }
        })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours(i).count()
    }
}

/// A random spanning tree plus up to `extra_edges` more edges, every degree
/// at most [`MAX_DEGREE`]. Each node is subscribed with `subscribe_prob`.
pub fn random_topology<R: Rng>(
    nodes: usize,
    extra_edges: usize,
    subscribe_prob: f64,
    rng: &mut R,
) -> Topology {
    let mut degree = vec![0usize; nodes];
    let mut edges = Vec::new();
    for i in 1..nodes {
        let open: Vec<usize> = (0..i).filter(|&j| degree[j] < MAX_DEGREE).collect();
        let j = open[rng.random_range(0..open.len())];
        edges.push((j, i));
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut added = 0;
    let mut attempts = 0;
    while added < extra_edges && attempts < extra_edges * 20 && nodes > 1 {
        attempts += 1;
        let a = rng.random_range(0..nodes);
        let b = rng.random_range(0..nodes);
        let e = (a.min(b), a.max(b));
        if a == b || degree[a] >= MAX_DEGREE || degree[b] >= MAX_DEGREE || edges.contains(&e) {
            continue;
        }
        edges.push(e);
        degree[a] += 1;
        degree[b] += 1;
        added += 1;
    }
    let subscribed = (0..nodes).map(|_| rng.random_bool(subscribe_prob)).collect();
    Topology {
        nodes,
        edges,
        subscribed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn connected(t: &Topology) -> bool {
        let mut seen = vec![false; t.nodes];
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            stack.extend(t.neighbours(i));
        }
        seen.iter().all(|s| *s)
    }

    proptest! {
        #[test]
        fn connected_simple_and_degree_bounded(seed: u64, n in 1usize..40, extra in 0usize..60) {
            let t = random_topology(n, extra, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(connected(&t));
            prop_assert!(t.edges.len() >= n - 1);
            for i in 0..n {
                prop_assert!(t.degree(i) <= MAX_DEGREE);
            }
            let mut sorted = t.edges.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), t.edges.len());
            prop_assert!(t.edges.iter().all(|(a, b)| a < b));
        }
    }
}
