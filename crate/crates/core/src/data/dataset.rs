use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary road-network mask over `n` nodes, always symmetric with self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    mask: Vec<bool>,
}

impl Adjacency {
    /// Builds the mask from undirected edges; both directions and every
    /// self-loop are set regardless of how the edges are listed.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("adjacency needs at least one node".into()));
        }
        let mut mask = vec![false; n * n];
        for i in 0..n {
            mask[i * n + i] = true;
        }
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Invalid(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            mask[a * n + b] = true;
            mask[b * n + a] = true;
        }
        Ok(Self { n, mask })
    }

    pub fn fully_connected(n: usize) -> Self {
        Self {
            n,
            mask: vec![true; n * n],
        }
    }

    /// Cycle 0-1-...-(n-1)-0.
    pub fn ring(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges).expect("ring edges are in range")
    }

    /// Chain 0-1-...-(n-1).
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path edges are in range")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n + j]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_fully_connected(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Number of true entries off the diagonal (each undirected edge counts twice).
    pub fn off_diagonal_count(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.contains(i, j))
            .count()
    }

    /// Undirected edge list with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.contains(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The mask as a 0/1 matrix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.n, self.n],
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// A single-channel traffic signal over a road network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficDataset {
    pub name: String,
    /// `T_total × N`, native units.
    pub signal: Tensor,
    pub steps_per_day: usize,
    pub start_tod: usize,
    /// 0 = Monday.
    pub start_dow: usize,
    pub adjacency: Adjacency,
}

impl TrafficDataset {
    pub fn new(
        name: impl Into<String>,
        signal: Tensor,
        steps_per_day: usize,
        start_tod: usize,
        start_dow: usize,
        adjacency: Adjacency,
    ) -> Result<Self> {
        let (_, n) = signal.expect_matrix("dataset signal")?;
        if steps_per_day == 0 || start_tod >= steps_per_day || start_dow >= 7 {
            return Err(Error::Invalid(format!(
                "calendar metadata out of range: steps_per_day={steps_per_day}, \
                 start_tod={start_tod}, start_dow={start_dow}"
            )));
        }
        if adjacency.n() != n {
            return Err(Error::Invalid(format!(
                "adjacency covers {} nodes but the signal has {n}",
                adjacency.n()
            )));
        }
        if let Some(k) = signal.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite signal value at step {}, node {}",
                k / n,
                k % n
            )));
        }
        Ok(Self {
            name: name.into(),
            signal,
            steps_per_day,
            start_tod,
            start_dow,
            adjacency,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.signal.rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.signal.cols()
    }

    /// Time-of-day slot of global step `t`.
    pub fn tod(&self, t: usize) -> usize {
        (self.start_tod + t) % self.steps_per_day
    }

    /// Day of week of global step `t`.
    pub fn dow(&self, t: usize) -> usize {
        (self.start_dow + (self.start_tod + t) / self.steps_per_day) % 7
    }

    /// Rows `start..start + len` of the signal.
    pub fn rows(&self, start: usize, len: usize) -> Tensor {
        let n = self.n_nodes();
        Tensor::from_parts(
            vec![len, n],
            self.signal.data()[start * n..(start + len) * n].to_vec(),
        )
    }
}
