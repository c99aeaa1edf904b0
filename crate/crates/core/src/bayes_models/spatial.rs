//! Area adjacency structure for spatial priors.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected 0/1 adjacency over `n` areas, stored as an edge list with
/// i < j and no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::Data(format!("self-loop at area {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n {
                return Err(Error::Data(format!("edge {e:?} out of range for n = {n}")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Adjacency { n, edges })
    }

    /// Rook-neighbor grid over a near-square layout of `n` areas.
    pub fn grid(n: usize) -> Self {
        let cols = (n as f64).sqrt().ceil() as usize;
        let mut edges = Vec::new();
        for i in 0..n {
            let (r, c) = (i / cols, i % cols);
            if c + 1 < cols && i + 1 < n && (i + 1) / cols == r {
                edges.push((i, i + 1));
            }
            let down = (r + 1) * cols + c;
            if down < n {
                edges.push((i, down));
            }
        }
        Adjacency { n, edges }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    /// Connected-component label per node (labels are 0..k in first-seen
    /// order).
    pub fn components(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(v) = stack.pop() {
                for &u in &adj[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Read an edge-list CSV with header `from,to`.
    pub fn read_edge_csv<R: Read>(input: R, n: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut edges = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let row = idx + 2;
            let rec = rec?;
            let parse = |k: usize| -> Result<usize> {
                rec.get(k)
                    .ok_or_else(|| Error::Parse {
                        row,
                        msg: "missing column".to_string(),
                    })?
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse {
                        row,
                        msg: format!("bad area id: {e}"),
                    })
            };
            edges.push((parse(0)?, parse(1)?));
        }
        Adjacency::new(n, edges)
    }
}
