//! Combinatorics of a post-critically finite self-similar set: words,
//! vertex sets `V_m`, cells and canonical vertex addresses.
//!
//! Vertex ids are nested: the vertices of `V_m` are exactly the ids
//! `0..|V_m|`, so restriction from a finer level is truncation.

use std::fmt;

use crate::error::{Error, Result};

/// Identification `F_i(q_alpha) = F_j(q_beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gluing {
    pub i: usize,
    pub alpha: usize,
    pub j: usize,
    pub beta: usize,
}

impl Gluing {
    pub fn new(i: usize, alpha: usize, j: usize, beta: usize) -> Self {
        Gluing { i, alpha, j, beta }
    }
}

/// Alphabet, boundary and gluing data of a p.c.f. structure.
#[derive(Debug, Clone)]
pub struct SelfSimilarStructure {
    n_maps: usize,
    boundary_size: usize,
    gluing: Vec<Gluing>,
    /// `q_alpha = F_k(q_beta)` stored as `(k, beta)`.
    boundary_images: Vec<(usize, usize)>,
    /// Local id in `V_1` of the raw point `(j, alpha)` at index `j*B + alpha`.
    level_one: Vec<usize>,
    level_one_size: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

impl SelfSimilarStructure {
    /// Validates the gluing rules and computes the quotient `V_1`.
    ///
    /// `boundary_images` defaults to `q_alpha = F_alpha(q_alpha)`.
    pub fn new(
        n_maps: usize,
        boundary_size: usize,
        gluing: Vec<Gluing>,
        boundary_images: Option<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        if n_maps < 2 {
            return Err(Error::InvalidStructure("need at least two maps".into()));
        }
        if boundary_size < 2 {
            return Err(Error::InvalidStructure("need at least two boundary vertices".into()));
        }
        let (n, b) = (n_maps, boundary_size);
        for (idx, g) in gluing.iter().enumerate() {
            if g.i >= n || g.j >= n || g.alpha >= b || g.beta >= b {
                return Err(Error::InvalidGluing { index: idx, reason: "index out of range".into() });
            }
            if g.i == g.j {
                return Err(Error::InvalidGluing {
                    index: idx,
                    reason: format!("identifies two boundary points of cell {}", g.i),
                });
            }
        }
        let images = match boundary_images {
            Some(v) => v,
            None => {
                if b > n {
                    return Err(Error::InvalidStructure(
                        "default boundary images need boundary_size <= alphabet_size".into(),
                    ));
                }
                (0..b).map(|a| (a, a)).collect()
            }
        };
        if images.len() != b {
            return Err(Error::DimensionMismatch { expected: b, got: images.len() });
        }
        if images.iter().any(|&(k, beta)| k >= n || beta >= b) {
            return Err(Error::InvalidStructure("boundary image out of range".into()));
        }

        let mut uf = UnionFind::new(n * b);
        for g in &gluing {
            uf.union(g.i * b + g.alpha, g.j * b + g.beta);
        }
        // a cell may not have two of its own boundary points identified
        let roots: Vec<usize> = (0..n * b).map(|x| uf.find(x)).collect();
        for j in 0..n {
            for a1 in 0..b {
                for a2 in (a1 + 1)..b {
                    if roots[j * b + a1] == roots[j * b + a2] {
                        let idx = gluing
                            .iter()
                            .position(|g| g.i == j || g.j == j)
                            .unwrap_or(0);
                        return Err(Error::InvalidGluing {
                            index: idx,
                            reason: format!("rules identify q_{a1} and q_{a2} of cell {j}"),
                        });
                    }
                }
            }
        }
        let mut class_id = vec![usize::MAX; n * b];
        let mut root_id = std::collections::HashMap::new();
        for (alpha, &(k, beta)) in images.iter().enumerate() {
            let r = roots[k * b + beta];
            if root_id.insert(r, alpha).is_some() {
                return Err(Error::InvalidStructure(format!("boundary vertex q_{alpha} coincides with another")));
            }
        }
        let mut next = b;
        for x in 0..n * b {
            let r = roots[x];
            let id = *root_id.entry(r).or_insert_with(|| {
                next += 1;
                next - 1
            });
            class_id[x] = id;
        }
        let size = next;

        // connectivity of the level-1 graph: cells are cliques
        let mut cuf = UnionFind::new(size);
        for j in 0..n {
            for a in 1..b {
                cuf.union(class_id[j * b], class_id[j * b + a]);
            }
        }
        let components = (0..size).filter(|&x| cuf.find(x) == x).count();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }

        Ok(SelfSimilarStructure {
            n_maps,
            boundary_size,
            gluing,
            boundary_images: images,
            level_one: class_id,
            level_one_size: size,
        })
    }

    pub fn interval() -> Self {
        Self::new(2, 2, vec![Gluing::new(0, 1, 1, 0)], None).expect("interval preset")
    }

    pub fn sierpinski_gasket() -> Self {
        let glue = vec![Gluing::new(0, 1, 1, 0), Gluing::new(0, 2, 2, 0), Gluing::new(1, 2, 2, 1)];
        Self::new(3, 3, glue, None).expect("sg preset")
    }

    /// Vicsek cross: maps 0..3 fix the corners, map 4 is the centre.
    pub fn vicsek() -> Self {
        let glue = vec![
            Gluing::new(4, 0, 0, 2),
            Gluing::new(4, 1, 1, 3),
            Gluing::new(4, 2, 2, 0),
            Gluing::new(4, 3, 3, 1),
        ];
        Self::new(5, 4, glue, None).expect("vicsek preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "interval" => Ok(Self::interval()),
            "sg" | "sierpinski" => Ok(Self::sierpinski_gasket()),
            "vicsek" => Ok(Self::vicsek()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn n_maps(&self) -> usize {
        self.n_maps
    }

    pub fn boundary_size(&self) -> usize {
        self.boundary_size
    }

    pub fn gluing(&self) -> &[Gluing] {
        &self.gluing
    }

    pub fn boundary_images(&self) -> &[(usize, usize)] {
        &self.boundary_images
    }

    /// `|V_1|`.
    pub fn level_one_size(&self) -> usize {
        self.level_one_size
    }

    /// Local `V_1` id of `F_j(q_alpha)`. Ids `0..B` are `q_0..q_{B-1}`.
    pub fn level_one_vertex(&self, j: usize, alpha: usize) -> usize {
        self.level_one[j * self.boundary_size + alpha]
    }
}

/// Canonical address of a vertex: the lexicographically first pair
/// `(w, alpha)` with `|w|` equal to the level of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VertexId {
    pub level: usize,
    pub word: Vec<usize>,
    pub boundary_index: usize,
}

pub fn format_word(word: &[usize]) -> String {
    if word.iter().all(|&d| d < 10) {
        word.iter().map(|d| char::from(b'0' + *d as u8)).collect()
    } else {
        word.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(".")
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F_[{}](q_{})", format_word(&self.word), self.boundary_index)
    }
}

#[derive(Debug, Clone)]
pub struct VertexEntry {
    pub id: usize,
    pub address: VertexId,
    /// `(cell index, alpha)` for every level-m cell with `F_w(q_alpha) = p`.
    pub cells: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct VertexTable {
    pub level: usize,
    pub entries: Vec<VertexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub level: usize,
    pub index: usize,
    pub word: Vec<usize>,
    pub vertices: Vec<usize>,
}

/// All levels `0..=max_level` of the vertex and cell hierarchy.
#[derive(Debug, Clone)]
pub struct CellStructure {
    ss: SelfSimilarStructure,
    max_level: usize,
    vertex_counts: Vec<usize>,
    /// Per level, `N^m * B` vertex ids.
    cells: Vec<Vec<usize>>,
    /// Per level `k < max_level`, the ids of the new `V_1` points inside each cell.
    interior: Vec<Vec<usize>>,
    addresses: Vec<VertexId>,
}

/// Refuse to build hierarchies with more cells than this at the top level.
pub const MAX_CELLS: usize = 20_000_000;

impl CellStructure {
    pub fn new(ss: SelfSimilarStructure, max_level: usize) -> Result<Self> {
        let (n, b) = (ss.n_maps, ss.boundary_size);
        let top = (n as f64).powi(max_level as i32);
        if top * b as f64 > MAX_CELLS as f64 {
            return Err(Error::TooLarge { operation: "cell hierarchy", size: top as usize, limit: MAX_CELLS });
        }
        let n_int = ss.level_one_size - b;
        let mut cells = vec![(0..b).collect::<Vec<_>>()];
        let mut interior = Vec::new();
        let mut vertex_counts = vec![b];
        let mut addresses: Vec<VertexId> =
            (0..b).map(|a| VertexId { level: 0, word: vec![], boundary_index: a }).collect();
        for k in 0..max_level {
            let prev = &cells[k];
            let n_cells = prev.len() / b;
            let mut next_id = vertex_counts[k];
            let mut int_k = Vec::with_capacity(n_cells * n_int);
            let mut next = vec![0usize; n_cells * n * b];
            let mut local = vec![0usize; ss.level_one_size];
            for c in 0..n_cells {
                local[..b].copy_from_slice(&prev[c * b..(c + 1) * b]);
                for slot in local.iter_mut().skip(b) {
                    *slot = next_id;
                    int_k.push(next_id);
                    next_id += 1;
                }
                for j in 0..n {
                    for a in 0..b {
                        next[(c * n + j) * b + a] = local[ss.level_one_vertex(j, a)];
                    }
                }
            }
            // canonical addresses of the newly created vertices
            let level = k + 1;
            addresses.resize(next_id, VertexId { level, word: vec![], boundary_index: usize::MAX });
            for cell in 0..n_cells * n {
                for a in 0..b {
                    let v = next[cell * b + a];
                    if v >= vertex_counts[k] && addresses[v].boundary_index == usize::MAX {
                        addresses[v] = VertexId { level, word: word_of(cell, level, n), boundary_index: a };
                    }
                }
            }
            vertex_counts.push(next_id);
            cells.push(next);
            interior.push(int_k);
        }
        Ok(CellStructure { ss, max_level, vertex_counts, cells, interior, addresses })
    }

    pub fn structure(&self) -> &SelfSimilarStructure {
        &self.ss
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn check_level(&self, m: usize) -> Result<()> {
        if m > self.max_level {
            Err(Error::LevelNotBuilt { requested: m, built: self.max_level })
        } else {
            Ok(())
        }
    }

    /// `|V_m|`.
    pub fn num_vertices(&self, m: usize) -> usize {
        self.vertex_counts[m]
    }

    pub fn num_cells(&self, m: usize) -> usize {
        self.cells[m].len() / self.ss.boundary_size
    }

    /// `F_w(q_0), ..., F_w(q_{B-1})` for the cell with lexicographic index `c`.
    pub fn cell_vertices(&self, m: usize, c: usize) -> &[usize] {
        let b = self.ss.boundary_size;
        &self.cells[m][c * b..(c + 1) * b]
    }

    pub fn all_cell_vertices(&self, m: usize) -> &[usize] {
        &self.cells[m]
    }

    /// New `V_{k+1}` vertices in the interior of level-k cell `c`, in local `V_1` order.
    pub fn interior_vertices(&self, k: usize, c: usize) -> &[usize] {
        let n_int = self.ss.level_one_size - self.ss.boundary_size;
        &self.interior[k][c * n_int..(c + 1) * n_int]
    }

    pub fn cell_word(&self, m: usize, c: usize) -> Vec<usize> {
        word_of(c, m, self.ss.n_maps)
    }

    pub fn vertex_id(&self, v: usize) -> &VertexId {
        &self.addresses[v]
    }

    /// Level at which vertex `v` first appears.
    pub fn vertex_level(&self, v: usize) -> usize {
        self.addresses[v].level
    }

    pub fn cells_at_level(&self, m: usize) -> Result<Vec<Cell>> {
        self.check_level(m)?;
        Ok((0..self.num_cells(m))
            .map(|c| Cell { level: m, index: c, word: self.cell_word(m, c), vertices: self.cell_vertices(m, c).to_vec() })
            .collect())
    }

    /// For each vertex of `V_m`, the `(cell, alpha)` incidences at level m.
    pub fn incidence(&self, m: usize) -> Vec<Vec<(usize, usize)>> {
        let b = self.ss.boundary_size;
        let mut inc = vec![Vec::new(); self.num_vertices(m)];
        for (k, &v) in self.cells[m].iter().enumerate() {
            inc[v].push((k / b, k % b));
        }
        inc
    }

    pub fn build_vertices(&self, m: usize) -> Result<VertexTable> {
        self.check_level(m)?;
        let inc = self.incidence(m);
        let entries = inc
            .into_iter()
            .enumerate()
            .map(|(v, cells)| VertexEntry { id: v, address: self.addresses[v].clone(), cells })
            .collect();
        Ok(VertexTable { level: m, entries })
    }

    /// Vertex of `V_m` at the address `(w, alpha)` with `|w| = m`.
    pub fn locate(&self, word: &[usize], alpha: usize) -> Result<usize> {
        let m = word.len();
        self.check_level(m)?;
        let n = self.ss.n_maps;
        if word.iter().any(|&d| d >= n) || alpha >= self.ss.boundary_size {
            return Err(Error::InvalidArgument("address out of range".into()));
        }
        let c = word.iter().fold(0usize, |acc, &d| acc * n + d);
        Ok(self.cell_vertices(m, c)[alpha])
    }
}

pub fn word_of(mut c: usize, m: usize, n: usize) -> Vec<usize> {
    let mut w = vec![0; m];
    for slot in w.iter_mut().rev() {
        *slot = c % n;
        c /= n;
    }
    w
}
