/// Disjoint-set forest with path compression and union by rank.
#[derive(Clone, Debug)]
pub(crate) struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != node {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns false when already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
        true
    }

    /// Attaches root `child` under root `parent` unconditionally.
    pub(crate) fn attach(&mut self, child: usize, parent: usize) {
        debug_assert_eq!(self.parent[child], child);
        debug_assert_eq!(self.parent[parent], parent);
        self.parent[child] = parent;
    }
}

/// Number of connected components of the graph on `0..n` with the given edges.
pub(crate) fn component_count(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut sets = DisjointSet::new(n);
    let merges = edges.iter().filter(|&&(u, v)| sets.union(u, v)).count();
    n - merges
}
