//! Large-scene handling: a uniform grid over the scene AABB, overlap-aware
//! sample assignment, variance-driven merging of adjacent cells into
//! clusters, one small MLP per cluster, and deterministic spatial routing
//! at prediction time.

use serde::{Deserialize, Serialize};

use crate::bake::{Normalization, TransferDataset};
use crate::error::{Error, Result};
use crate::math::{vec3, Aabb, Vec3};
use crate::mlp::{model_from_json, model_to_json, MlpConfig, MlpModel};
use crate::sh::SHVector;
use crate::train::{train, TrainConfig, TrainReport};

/// Uniform grid over the scene bounds. Cell (ix, iy, iz) linearizes as
/// `ix + nx * (iy + ny * iz)`. `delta` is the overlap margin each cell's
/// training region extends past its faces, as a fraction of the cell extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionGrid {
    pub aabb: Aabb,
    pub dims: [usize; 3],
    pub delta: f64,
}

impl PartitionGrid {
    pub fn new(aabb: Aabb, dims: [usize; 3], delta: f64) -> Result<PartitionGrid> {
        let extent = aabb.extent();
        if !(extent.x > 0.0 && extent.y > 0.0 && extent.z > 0.0) {
            return Err(Error::input(format!("degenerate grid bounds, extent {extent:?}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::input(format!("grid dims {dims:?} must all be >= 1")));
        }
        if dims.iter().product::<usize>() > 4096 {
            return Err(Error::input(format!("grid dims {dims:?} exceed 4096 cells")));
        }
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::input(format!("overlap delta {delta} outside [0, 0.5)")));
        }
        Ok(PartitionGrid { aabb, dims, delta })
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cell_extent(&self) -> Vec3 {
        let e = self.aabb.extent();
        vec3(e.x / self.dims[0] as f64, e.y / self.dims[1] as f64, e.z / self.dims[2] as f64)
    }

    fn unlinearize(&self, cell: usize) -> [usize; 3] {
        let ix = cell % self.dims[0];
        let iy = (cell / self.dims[0]) % self.dims[1];
        let iz = cell / (self.dims[0] * self.dims[1]);
        [ix, iy, iz]
    }

    fn linearize(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Exact tile of cell `cell` (no overlap).
    pub fn cell_aabb(&self, cell: usize) -> Aabb {
        let [ix, iy, iz] = self.unlinearize(cell);
        let e = self.cell_extent();
        let min = self.aabb.min + vec3(ix as f64 * e.x, iy as f64 * e.y, iz as f64 * e.z);
        Aabb::new(min, min + e)
    }

    /// Cell tile grown by `delta` times the cell extent on every face: the
    /// region whose samples join this cell's training set.
    pub fn expanded_aabb(&self, cell: usize) -> Aabb {
        let tile = self.cell_aabb(cell);
        let e = self.cell_extent() * self.delta;
        Aabb::new(tile.min - e, tile.max + e)
    }

    /// Containing cell under half-open intervals [min, max) per axis; the
    /// scene's outer max faces fold into the last cell so routing is total
    /// over the closed AABB. Points outside error.
    pub fn cell_of(&self, p: Vec3) -> Result<usize> {
        if !self.aabb.contains(p) {
            return Err(Error::input(format!(
                "point ({}, {}, {}) outside the partition bounds",
                p.x, p.y, p.z
            )));
        }
        let e = self.cell_extent();
        let rel = p - self.aabb.min;
        let idx = |v: f64, ext: f64, n: usize| ((v / ext) as usize).min(n - 1);
        Ok(self.linearize([
            idx(rel.x, e.x, self.dims[0]),
            idx(rel.y, e.y, self.dims[1]),
            idx(rel.z, e.z, self.dims[2]),
        ]))
    }

    /// Cells whose face-adjacent neighbor relation drives clustering.
    fn face_neighbors(&self, cell: usize) -> Vec<usize> {
        let c = self.unlinearize(cell);
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            if c[axis] > 0 {
                let mut n = c;
                n[axis] -= 1;
                out.push(self.linearize(n));
            }
            if c[axis] + 1 < self.dims[axis] {
                let mut n = c;
                n[axis] += 1;
                out.push(self.linearize(n));
            }
        }
        out
    }
}

/// Sufficient statistics of a cell's transfer vectors: enough to compute the
/// total variance (trace of the coefficient covariance) of any merged set.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub count: usize,
    /// Per-coefficient sums.
    pub sum: Vec<f64>,
    /// Sum of squared norms, sum_r |T_r|^2.
    pub sum_sq: f64,
}

impl CellStats {
    fn empty(n_coeffs: usize) -> CellStats {
        CellStats { count: 0, sum: vec![0.0; n_coeffs], sum_sq: 0.0 }
    }

    fn add_vector(&mut self, t: &SHVector) {
        self.count += 1;
        for (s, c) in self.sum.iter_mut().zip(&t.coeffs) {
            *s += c;
        }
        self.sum_sq += t.coeffs.iter().map(|c| c * c).sum::<f64>();
    }

    fn merged(&self, other: &CellStats) -> CellStats {
        CellStats {
            count: self.count + other.count,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a + b).collect(),
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    /// Trace of the covariance: mean squared norm minus squared mean norm.
    pub fn total_variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean_sq: f64 = self.sum.iter().map(|s| (s / n) * (s / n)).sum();
        (self.sum_sq / n - mean_sq).max(0.0)
    }
}

/// Split a dataset into per-cell datasets. Every record lands in its
/// containing cell and in each neighboring cell whose delta-expanded region
/// covers it; each cell re-normalizes positions against its own expanded
/// tile while transfer values stay exactly as baked against the full scene.
pub fn assign_samples(dataset: &TransferDataset, grid: &PartitionGrid) -> Result<Vec<TransferDataset>> {
    let n_coeffs = dataset.order * dataset.order;
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); grid.n_cells()];
    for (r_idx, rec) in dataset.records.iter().enumerate() {
        if rec.transfer.coeffs.len() != n_coeffs {
            return Err(Error::data(format!("record {r_idx} transfer length mismatch")));
        }
        let home = grid.cell_of(rec.position)?;
        let hc = grid.unlinearize(home);
        // delta < 0.5 bounds the expanded region inside the 3x3x3 window.
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = hc[0] as i64 + dx;
                    let ny = hc[1] as i64 + dy;
                    let nz = hc[2] as i64 + dz;
                    if nx < 0
                        || ny < 0
                        || nz < 0
                        || nx >= grid.dims[0] as i64
                        || ny >= grid.dims[1] as i64
                        || nz >= grid.dims[2] as i64
                    {
                        continue;
                    }
                    let cell = grid.linearize([nx as usize, ny as usize, nz as usize]);
                    if cell == home || grid.expanded_aabb(cell).contains(rec.position) {
                        cells[cell].push(r_idx);
                    }
                }
            }
        }
    }
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(cell, record_ids)| {
            let records: Vec<_> = record_ids.iter().map(|&i| dataset.records[i].clone()).collect();
            let norm = normalization_for(grid.expanded_aabb(cell));
            let scale = records
                .iter()
                .flat_map(|r| r.transfer.coeffs.iter())
                .fold(0.0f64, |m, c| m.max(c.abs()))
                .max(1e-6);
            TransferDataset {
                records,
                scene_id: dataset.scene_id.clone(),
                norm,
                scale,
                order: dataset.order,
            }
        })
        .collect())
}

fn normalization_for(aabb: Aabb) -> Normalization {
    let e = aabb.extent();
    Normalization { center: aabb.center(), half_extent: 0.5 * e.x.max(e.y).max(e.z).max(1e-12) }
}

/// Per-cell statistics feeding the merge loop.
pub fn cell_statistics(cell_datasets: &[TransferDataset], order: usize) -> Vec<CellStats> {
    let n_coeffs = order * order;
    cell_datasets
        .iter()
        .map(|ds| {
            let mut s = CellStats::empty(n_coeffs);
            for r in &ds.records {
                s.add_vector(&r.transfer);
            }
            s
        })
        .collect()
}

/// Greedy variance-bounded clustering. Empty cells first dissolve into an
/// adjacent non-empty cluster (breadth-first, so connectivity survives),
/// then the face-adjacent cluster pair with the smallest merged total
/// variance merges while that variance stays within `theta` and more than
/// `min_clusters` clusters remain. Ties break toward the lowest cell index.
/// Returns the cell -> cluster map with clusters numbered by their lowest
/// member cell.
pub fn cluster_cells(
    stats: &[CellStats],
    grid: &PartitionGrid,
    theta: f64,
    min_clusters: usize,
) -> Result<Vec<usize>> {
    if stats.len() != grid.n_cells() {
        return Err(Error::input(format!(
            "{} stat entries for a grid of {} cells",
            stats.len(),
            grid.n_cells()
        )));
    }
    if theta < 0.0 || theta.is_nan() {
        return Err(Error::input(format!("variance threshold {theta} must be >= 0")));
    }
    let min_clusters = min_clusters.max(1);
    let n = grid.n_cells();
    // Union-find over cells.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut cluster_stats: Vec<CellStats> = stats.to_vec();

    // Dissolve empty cells layer by layer into adjacent occupied clusters.
    let mut empty: Vec<usize> = (0..n).filter(|&c| stats[c].count == 0).collect();
    if empty.len() == n {
        return Err(Error::input("every grid cell is empty"));
    }
    while !empty.is_empty() {
        let mut attached = Vec::new();
        for &cell in &empty {
            let root = find(&mut parent, cell);
            // Lowest-indexed face neighbor belonging to an occupied cluster.
            let target = grid
                .face_neighbors(cell)
                .into_iter()
                .map(|nb| find(&mut parent, nb))
                .filter(|&r| cluster_stats[r].count > 0)
                .min();
            if let Some(t) = target {
                let merged = cluster_stats[t].merged(&cluster_stats[root]);
                let keep = t.min(root);
                let drop = t.max(root);
                parent[drop] = keep;
                cluster_stats[keep] = merged;
                attached.push(cell);
            }
        }
        if attached.is_empty() {
            // Unreachable for a connected grid: every empty region borders
            // an occupied cell somewhere along a face path.
            return Err(Error::input("isolated empty cells could not be attached"));
        }
        empty.retain(|c| {
            let r = find(&mut parent, *c);
            cluster_stats[r].count == 0
        });
    }

    let mut n_clusters = {
        let mut roots: Vec<usize> = (0..n).map(|c| find(&mut parent, c)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    };

    // Greedy merging of face-adjacent clusters.
    while n_clusters > min_clusters {
        let mut best: Option<(f64, usize, usize)> = None;
        for cell in 0..n {
            let ra = find(&mut parent, cell);
            for nb in grid.face_neighbors(cell) {
                let rb = find(&mut parent, nb);
                if ra == rb {
                    continue;
                }
                let (lo, hi) = (ra.min(rb), ra.max(rb));
                let var = cluster_stats[lo].merged(&cluster_stats[hi]).total_variance();
                let cand = (var, lo, hi);
                if best.map_or(true, |b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        match best {
            Some((var, lo, hi)) if var <= theta => {
                cluster_stats[lo] = cluster_stats[lo].merged(&cluster_stats[hi]);
                parent[hi] = lo;
                n_clusters -= 1;
            }
            _ => break,
        }
    }

    // Renumber clusters by lowest member cell.
    let roots: Vec<usize> = (0..n).map(|c| find(&mut parent, c)).collect();
    let mut order: Vec<usize> = roots.clone();
    order.sort_unstable();
    order.dedup();
    Ok(roots.iter().map(|r| order.binary_search(r).unwrap()).collect())
}

/// Member cells per cluster, ascending, from a cell -> cluster map.
pub fn cluster_members(map: &[usize]) -> Vec<Vec<usize>> {
    let n_clusters = map.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_clusters];
    for (cell, &cl) in map.iter().enumerate() {
        members[cl].push(cell);
    }
    members
}

/// Assemble one training dataset per cluster: the union of its member
/// cells' records (duplicates from intra-cluster overlap collapsed),
/// normalized against the union of the member cells' expanded tiles.
pub fn cluster_datasets(
    dataset: &TransferDataset,
    grid: &PartitionGrid,
    map: &[usize],
) -> Result<Vec<TransferDataset>> {
    let cell_sets = assign_samples(dataset, grid)?;
    let members = cluster_members(map);
    members
        .iter()
        .map(|cells| {
            let mut records: Vec<crate::bake::TransferRecord> = Vec::new();
            let mut region = Aabb::EMPTY;
            for &cell in cells {
                records.extend(cell_sets[cell].records.iter().cloned());
                region = region.union(grid.expanded_aabb(cell));
            }
            records.sort_by(|a, b| {
                let ka = [a.position.x, a.position.y, a.position.z, a.normal.x, a.normal.y, a.normal.z];
                let kb = [b.position.x, b.position.y, b.position.z, b.normal.x, b.normal.y, b.normal.z];
                ka.iter().zip(&kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            });
            records.dedup_by(|a, b| a.position == b.position && a.normal == b.normal);
            if records.is_empty() {
                return Err(Error::input("cluster with no training samples"));
            }
            let scale = records
                .iter()
                .flat_map(|r| r.transfer.coeffs.iter())
                .fold(0.0f64, |m, c| m.max(c.abs()))
                .max(1e-6);
            Ok(TransferDataset {
                records,
                scene_id: dataset.scene_id.clone(),
                norm: normalization_for(region),
                scale,
                order: dataset.order,
            })
        })
        .collect()
}

/// A partitioned scene: the grid, the cell -> cluster map, and one trained
/// model per cluster.
#[derive(Debug, Clone)]
pub struct ClusteredModel {
    pub grid: PartitionGrid,
    pub cell_to_cluster: Vec<usize>,
    pub models: Vec<MlpModel>,
}

impl ClusteredModel {
    pub fn validate(&self) -> Result<()> {
        if self.cell_to_cluster.len() != self.grid.n_cells() {
            return Err(Error::data(format!(
                "cell map covers {} cells, grid has {}",
                self.cell_to_cluster.len(),
                self.grid.n_cells()
            )));
        }
        let n_clusters = self.models.len();
        if n_clusters == 0 {
            return Err(Error::data("clustered model holds no models"));
        }
        if let Some(&bad) = self.cell_to_cluster.iter().find(|&&c| c >= n_clusters) {
            return Err(Error::data(format!(
                "cell maps to cluster {bad}, only {n_clusters} models present"
            )));
        }
        let members = cluster_members(&self.cell_to_cluster);
        if members.iter().any(|m| m.is_empty()) {
            return Err(Error::data("cluster with no member cells"));
        }
        // Face-adjacency connectivity per cluster.
        for (cl, cells) in members.iter().enumerate() {
            let mut seen = vec![false; cells.len()];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for nb in self.grid.face_neighbors(cells[i]) {
                    if let Ok(j) = cells.binary_search(&nb) {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::data(format!("cluster {cl} is not face-connected")));
            }
        }
        let order = self.models[0].sh_order;
        if self.models.iter().any(|m| m.sh_order != order) {
            return Err(Error::data("clusters disagree on SH order"));
        }
        Ok(())
    }

    pub fn sh_order(&self) -> usize {
        self.models[0].sh_order
    }

    /// Route a point to its cell's cluster and evaluate that cluster's model.
    pub fn predict(&self, p: Vec3, n: Vec3) -> Result<SHVector> {
        let cell = self.grid.cell_of(p)?;
        self.models[self.cell_to_cluster[cell]].forward(p, n)
    }
}

/// Per-cluster training reports alongside the assembled model.
#[derive(Debug, Clone)]
pub struct ClusterTrainOutput {
    pub model: ClusteredModel,
    pub reports: Vec<TrainReport>,
}

/// Partition, cluster, and train one MLP per cluster.
pub fn train_clustered(
    dataset: &TransferDataset,
    grid: &PartitionGrid,
    theta: f64,
    min_clusters: usize,
    mlp_cfg: &MlpConfig,
    train_cfg: &TrainConfig,
) -> Result<ClusterTrainOutput> {
    let cell_sets = assign_samples(dataset, grid)?;
    let stats = cell_statistics(&cell_sets, dataset.order);
    let map = cluster_cells(&stats, grid, theta, min_clusters)?;
    let datasets = cluster_datasets(dataset, grid, &map)?;
    let mut models = Vec::with_capacity(datasets.len());
    let mut reports = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let (model, report) = train(ds, mlp_cfg, train_cfg)?;
        models.push(model);
        reports.push(report);
    }
    let model = ClusteredModel { grid: *grid, cell_to_cluster: map, models };
    model.validate()?;
    Ok(ClusterTrainOutput { model, reports })
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    aabb: AabbJson,
    dims: [usize; 3],
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct AabbJson {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ClusterJson {
    cells: Vec<usize>,
    model: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ClusteredJson {
    version: u32,
    grid: GridJson,
    clusters: Vec<ClusterJson>,
}

pub fn clustered_to_json(cm: &ClusteredModel) -> Result<String> {
    cm.validate()?;
    let members = cluster_members(&cm.cell_to_cluster);
    let clusters = members
        .iter()
        .zip(&cm.models)
        .map(|(cells, model)| {
            let value: serde_json::Value = serde_json::from_str(&model_to_json(model)?)?;
            Ok(ClusterJson { cells: cells.clone(), model: value })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = ClusteredJson {
        version: 1,
        grid: GridJson {
            aabb: AabbJson {
                min: [cm.grid.aabb.min.x, cm.grid.aabb.min.y, cm.grid.aabb.min.z],
                max: [cm.grid.aabb.max.x, cm.grid.aabb.max.y, cm.grid.aabb.max.z],
            },
            dims: cm.grid.dims,
            delta: cm.grid.delta,
        },
        clusters,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn clustered_from_json(text: &str) -> Result<ClusteredModel> {
    let doc: ClusteredJson = serde_json::from_str(text)?;
    if doc.version != 1 {
        return Err(Error::format(format!("unsupported clustered model version {}", doc.version)));
    }
    let aabb = Aabb::new(
        vec3(doc.grid.aabb.min[0], doc.grid.aabb.min[1], doc.grid.aabb.min[2]),
        vec3(doc.grid.aabb.max[0], doc.grid.aabb.max[1], doc.grid.aabb.max[2]),
    );
    let grid = PartitionGrid::new(aabb, doc.grid.dims, doc.grid.delta)?;
    let mut cell_to_cluster = vec![usize::MAX; grid.n_cells()];
    let mut models = Vec::with_capacity(doc.clusters.len());
    for (cl, cluster) in doc.clusters.iter().enumerate() {
        if cluster.cells.is_empty() {
            return Err(Error::format(format!("cluster {cl} lists no cells")));
        }
        for &cell in &cluster.cells {
            if cell >= grid.n_cells() {
                return Err(Error::format(format!("cluster {cl} references cell {cell} outside the grid")));
            }
            if cell_to_cluster[cell] != usize::MAX {
                return Err(Error::format(format!("cell {cell} claimed by two clusters")));
            }
            cell_to_cluster[cell] = cl;
        }
        models.push(model_from_json(&serde_json::to_string(&cluster.model)?)?);
    }
    if let Some(cell) = cell_to_cluster.iter().position(|&c| c == usize::MAX) {
        return Err(Error::format(format!("cell {cell} not claimed by any cluster")));
    }
    let cm = ClusteredModel { grid, cell_to_cluster, models };
    cm.validate()?;
    Ok(cm)
}

pub fn save_clustered(cm: &ClusteredModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, clustered_to_json(cm)?).map_err(|e| Error::io(path, e))
}

pub fn load_clustered(path: &std::path::Path) -> Result<ClusteredModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    clustered_from_json(&text)
}
