use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinning gain given to the leader DG when none is configured.
pub const DEFAULT_PINNING_GAIN: f64 = 1.0;

/// Largest DG count accepted by [`enumerate_topologies`] (8^6 = 262 144 trees).
pub const MAX_ENUMERATED_DGS: usize = 8;

/// A bidirectional secondary-control communication graph with its pinning gains.
#[derive(Debug, Clone, PartialEq)]
pub struct CommTopology {
    /// Stable index into the enumerated topology set.
    pub id: usize,
    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Adjacency matrix `S`, entries in {0, 1}.
    pub adjacency: DMatrix<f64>,
    /// Diagonal of the pinning matrix `G`.
    pub pinning: Vec<f64>,
    pub laplacian: DMatrix<f64>,
    /// Smallest eigenvalue of `L + G`.
    pub lambda2: f64,
}

impl CommTopology {
    pub fn from_edges(id: usize, n: usize, edges: &[(usize, usize)], pinning: &[f64]) -> Result<Self> {
        if pinning.len() != n {
            return Err(Error::InvalidTopology(format!("{} pinning gains for {n} nodes", pinning.len())));
        }
        let mut adjacency = DMatrix::zeros(n, n);
        let mut sorted = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidTopology(format!("bad edge ({a}, {b}) for {n} nodes")));
            }
            adjacency[(a, b)] = 1.0;
            adjacency[(b, a)] = 1.0;
            sorted.push((a.min(b), a.max(b)));
        }
        sorted.sort_unstable();
        sorted.dedup();
        let laplacian = build_laplacian(&adjacency)?;
        let lambda2 = lambda2(&laplacian, pinning)?;
        Ok(Self { id, edges: sorted, adjacency, pinning: pinning.to_vec(), laplacian, lambda2 })
    }

    pub fn complete(n: usize, pinning: &[f64]) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        Self::from_edges(usize::MAX, n, &edges, pinning)
    }

    pub fn node_count(&self) -> usize {
        self.pinning.len()
    }

    pub fn is_link(&self, from: usize, to: usize) -> bool {
        self.adjacency[(from, to)] != 0.0
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).iter().filter(|&&s| s != 0.0).count()
    }

    /// Number of active directed links (each undirected edge is a pair).
    pub fn directed_links(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&l| self.is_link(node, l))
    }
}

/// Serializable audit record of one topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyRecord {
    pub id: usize,
    pub edges: Vec<(usize, usize)>,
    pub pinning: Vec<f64>,
    pub lambda2: f64,
    pub k_min: f64,
}

impl TryFrom<&CommTopology> for TopologyRecord {
    type Error = Error;

    fn try_from(t: &CommTopology) -> Result<Self> {
        Ok(Self {
            id: t.id,
            edges: t.edges.clone(),
            pinning: t.pinning.clone(),
            lambda2: t.lambda2,
            k_min: min_consensus_gain(t)?,
        })
    }
}

fn check_adjacency(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::InvalidTopology(format!("adjacency is {}x{}", s.nrows(), s.ncols())));
    }
    let n = s.nrows();
    for i in 0..n {
        if s[(i, i)] != 0.0 {
            return Err(Error::InvalidTopology(format!("self link on node {i}")));
        }
        for j in 0..n {
            let v = s[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidTopology(format!("entry ({i}, {j}) = {v} is not binary")));
            }
            if v != s[(j, i)] {
                return Err(Error::InvalidTopology(format!("link ({i}, {j}) is not bidirectional")));
            }
        }
    }
    Ok(())
}

/// Graph Laplacian `L = D − S` of a symmetric binary adjacency matrix.
pub fn build_laplacian(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_adjacency(s)?;
    let n = s.nrows();
    let mut l = -s.clone();
    for i in 0..n {
        l[(i, i)] = s.row(i).sum();
    }
    Ok(l)
}

/// Smallest eigenvalue of `L + diag(g)`, checked against its eigenvector residual.
pub fn lambda2(l: &DMatrix<f64>, g: &[f64]) -> Result<f64> {
    let n = l.nrows();
    if !l.is_square() || g.len() != n {
        return Err(Error::InvalidTopology("Laplacian and pinning gains disagree in size".into()));
    }
    let mut m = l.clone();
    for (i, gi) in g.iter().enumerate() {
        m[(i, i)] += gi;
    }
    if (0..n).any(|i| (0..n).any(|j| m[(i, j)] != m[(j, i)])) {
        return Err(Error::InvalidTopology("L + G is not symmetric".into()));
    }
    if n == 0 {
        return Err(Error::InvalidTopology("empty graph".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let (idx, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let v = eig.eigenvectors.column(idx);
    let residual = (&m * v - v * lambda).norm();
    if residual >= 1e-9 {
        return Err(Error::Numerical(format!("eigenpair residual {residual:e} exceeds 1e-9")));
    }
    Ok(lambda)
}

/// Lower bound on `K1 = K2` for a topology: `1 / (2 λ₂(L + G))`.
pub fn min_consensus_gain(topology: &CommTopology) -> Result<f64> {
    if !(topology.lambda2 > 1e-12) {
        return Err(Error::InvalidTopology(format!(
            "λ₂(L + G) = {:e}: graph is disconnected or unpinned",
            topology.lambda2
        )));
    }
    Ok(1.0 / (2.0 * topology.lambda2))
}

/// True iff `S` is symmetric, connected and at least one node is pinned.
pub fn validate_topology(s: &DMatrix<f64>, g: &[f64]) -> bool {
    if check_adjacency(s).is_err() || g.len() != s.nrows() || s.nrows() == 0 {
        return false;
    }
    if !g.iter().any(|&gk| gk > 0.0) || g.iter().any(|&gk| gk < 0.0) {
        return false;
    }
    let n = s.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(a) = stack.pop() {
        for b in 0..n {
            if s[(a, b)] != 0.0 && !seen[b] {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen.into_iter().all(|x| x)
}

/// Leader-only pinning on DG1.
pub fn leader_pinning(n: usize, gain: f64) -> Vec<f64> {
    let mut g = vec![0.0; n];
    if n > 0 {
        g[0] = gain;
    }
    g
}

/// Every labeled spanning tree of the complete graph on `n` nodes, pinned on DG1.
///
/// Trees are ordered lexicographically by their sorted edge lists, so ids are stable.
pub fn enumerate_topologies(n: usize) -> Result<Vec<CommTopology>> {
    enumerate_topologies_with_pinning(&leader_pinning(n, DEFAULT_PINNING_GAIN))
}

pub fn enumerate_topologies_with_pinning(pinning: &[f64]) -> Result<Vec<CommTopology>> {
    let n = pinning.len();
    if !(2..=MAX_ENUMERATED_DGS).contains(&n) {
        return Err(Error::Config(format!(
            "topology enumeration supports 2..={MAX_ENUMERATED_DGS} DGs, got {n}"
        )));
    }
    let all_edges: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let k = n - 1;
    let mut out = Vec::new();
    // lexicographic k-combinations of edge indices
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        if is_acyclic(n, pick.iter().map(|&i| all_edges[i])) {
            let edges: Vec<_> = pick.iter().map(|&i| all_edges[i]).collect();
            out.push(CommTopology::from_edges(out.len(), n, &edges, pinning)?);
        }
        if !next_combination(&mut pick, all_edges.len()) {
            return Ok(out);
        }
    }
}

fn next_combination(pick: &mut [usize], m: usize) -> bool {
    let k = pick.len();
    for i in (0..k).rev() {
        if pick[i] < m - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn is_acyclic(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}

/// Consensus gain used when none is configured.
pub const DEFAULT_CONSENSUS_GAIN: f64 = 20.0;

/// Smallest gain accepted as a safe fleet-wide setting for `topologies`.
///
/// Twice the bound of the fully connected graph, raised to twice the largest
/// per-tree bound when some tree in `topologies` would violate it.
pub fn safe_consensus_gain(topologies: &[CommTopology]) -> Result<f64> {
    let first = topologies
        .first()
        .ok_or_else(|| Error::InvalidTopology("empty topology set".into()))?;
    let complete = CommTopology::complete(first.node_count(), &first.pinning)?;
    let mut k = 2.0 * min_consensus_gain(&complete)?;
    let mut worst: f64 = 0.0;
    for t in topologies {
        worst = worst.max(min_consensus_gain(t)?);
    }
    if k < worst {
        k = 2.0 * worst;
    }
    Ok(k)
}

/// [`DEFAULT_CONSENSUS_GAIN`], or the safe gain if that is larger.
pub fn default_consensus_gain(topologies: &[CommTopology]) -> Result<f64> {
    Ok(DEFAULT_CONSENSUS_GAIN.max(safe_consensus_gain(topologies)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn laplacian_of_small_graphs() {
        assert_eq!(build_laplacian(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::zeros(3, 3));
        let l = build_laplacian(&mat(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(l, mat(&[&[1.0, -1.0], &[-1.0, 1.0]]));
        let k4 = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let l = build_laplacian(&k4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l[(i, j)], if i == j { 3.0 } else { -1.0 });
            }
            assert_eq!(l.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn asymmetric_adjacency_is_rejected() {
        assert!(build_laplacian(&mat(&[&[0.0, 1.0], &[0.0, 0.0]])).is_err());
        assert!(build_laplacian(&mat(&[&[1.0, 0.0], &[0.0, 0.0]])).is_err());
    }

    #[test]
    fn spectra_of_small_graphs() {
        let l = build_laplacian(&mat(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!(lambda2(&l, &[0.0, 0.0]).unwrap().abs() < 1e-12);
        let k4 = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let l = build_laplacian(&k4).unwrap();
        let eig = SymmetricEigen::new(l.clone());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([0.0, 4.0, 4.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(lambda2(&l, &[0.0; 4]).unwrap().abs() < 1e-12);
        assert!(lambda2(&l, &[1.0, 0.0, 0.0, 0.0]).unwrap() > 0.1);
    }

    #[test]
    fn gain_bound() {
        let mut t = CommTopology::from_edges(0, 2, &[(0, 1)], &[1.0, 0.0]).unwrap();
        t.lambda2 = 4.0;
        assert_eq!(min_consensus_gain(&t).unwrap(), 0.125);
        t.lambda2 = 0.5;
        assert_eq!(min_consensus_gain(&t).unwrap(), 1.0);
        let disconnected = CommTopology::from_edges(0, 3, &[(0, 1)], &[0.0; 3]).unwrap();
        assert!(min_consensus_gain(&disconnected).is_err());
    }

    #[test]
    fn validation() {
        let star = CommTopology::from_edges(0, 4, &[(0, 1), (0, 2), (0, 3)], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(validate_topology(&star.adjacency, &star.pinning));
        assert!(!validate_topology(&DMatrix::zeros(4, 4), &[1.0, 0.0, 0.0, 0.0]));
        let split = CommTopology::from_edges(0, 4, &[(0, 1), (2, 3)], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(!validate_topology(&split.adjacency, &split.pinning));
        assert!(!validate_topology(&star.adjacency, &[0.0; 4]));
    }

    #[test]
    fn enumeration_counts_and_order() {
        assert_eq!(enumerate_topologies(2).unwrap().len(), 1);
        assert_eq!(enumerate_topologies(3).unwrap().len(), 3);
        let four = enumerate_topologies(4).unwrap();
        assert_eq!(four.len(), 16);
        assert_eq!(four[0].edges, vec![(0, 1), (0, 2), (0, 3)]);
        for (i, t) in four.iter().enumerate() {
            assert_eq!(t.id, i);
            assert!(validate_topology(&t.adjacency, &t.pinning));
            assert!(t.lambda2 > 0.0);
        }
        assert!(four.windows(2).all(|w| w[0].edges < w[1].edges));
        assert!(enumerate_topologies(1).is_err());
        assert!(enumerate_topologies(9).is_err());
    }

    #[test]
    fn default_gain_covers_every_tree() {
        let trees = enumerate_topologies(4).unwrap();
        let k = safe_consensus_gain(&trees).unwrap();
        assert!(default_consensus_gain(&trees).unwrap() >= k);
        for t in &trees {
            assert!(k >= min_consensus_gain(t).unwrap());
        }
    }
}
