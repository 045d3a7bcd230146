use serde::{Deserialize, Serialize};

use super::{GridMeta, Mask, Volume};
use crate::error::{Error, Result};

/// Voxel neighborhood used to grow clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Shared faces only.
    Face6,
    /// Faces and edges.
    Edge18,
    /// Faces, edges and corners.
    #[default]
    Vertex26,
}

impl Connectivity {
    pub fn count(self) -> u8 {
        match self {
            Connectivity::Face6 => 6,
            Connectivity::Edge18 => 18,
            Connectivity::Vertex26 => 26,
        }
    }

    fn offsets(self) -> Vec<[isize; 3]> {
        let max_nonzero = match self {
            Connectivity::Face6 => 1,
            Connectivity::Edge18 => 2,
            Connectivity::Vertex26 => 3,
        };
        let mut out = Vec::with_capacity(26);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nz = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nz > 0 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            6 => Ok(Connectivity::Face6),
            18 => Ok(Connectivity::Edge18),
            26 => Ok(Connectivity::Vertex26),
            other => Err(format!("connectivity must be 6, 18 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.count()
    }
}

/// Which side(s) of the threshold form clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub size: usize,
    pub peak_value: f64,
    /// Linear index of the peak voxel.
    pub peak_index: usize,
    pub sign: Sign,
    /// Linear indices of member voxels, ascending.
    pub voxels: Vec<usize>,
    pub p_fwe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTable {
    pub cdt_p: Option<f64>,
    pub threshold_u: f64,
    pub connectivity: Connectivity,
    pub tail: Tail,
    /// Sorted by decreasing size, ties broken by peak index.
    pub clusters: Vec<Cluster>,
}

impl ClusterTable {
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    pub fn max_size(&self) -> usize {
        self.clusters.iter().map(|c| c.size).max().unwrap_or(0)
    }

    /// Smallest assigned FWE p-value, 1 when there are no clusters.
    pub fn min_p_fwe(&self) -> f64 {
        self.clusters
            .iter()
            .filter_map(|c| c.p_fwe)
            .fold(1.0, f64::min)
    }

    /// CSV rows `cluster_id,size,peak_t,peak_x,peak_y,peak_z,p_fwe`.
    pub fn to_csv(&self, meta: &GridMeta) -> String {
        let mut out = String::from("cluster_id,size,peak_t,peak_x,peak_y,peak_z,p_fwe\n");
        for (i, c) in self.clusters.iter().enumerate() {
            let [x, y, z] = meta.coords(c.peak_index);
            let p = c.p_fwe.map(|p| format!("{p}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                i + 1,
                c.size,
                c.peak_value,
                x,
                y,
                z,
                p
            ));
        }
        out
    }
}

/// In-mask adjacency in compressed-row form.
///
/// Statistic maps are handled as compact vectors over in-mask voxels
/// (in ascending linear order), which is what the resampling loops work on.
#[derive(Debug, Clone)]
pub struct MaskGraph {
    meta: GridMeta,
    connectivity: Connectivity,
    voxels: Vec<usize>,
    row_start: Vec<u32>,
    neighbors: Vec<u32>,
}

/// Reusable buffers for repeated clustering on the same graph.
#[derive(Debug, Clone, Default)]
pub struct ClusterScratch {
    stamp: Vec<u32>,
    generation: u32,
    stack: Vec<u32>,
}

impl ClusterScratch {
    fn begin(&mut self, n: usize) -> u32 {
        if self.stamp.len() != n {
            self.stamp = vec![0; n];
            self.generation = 0;
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        self.generation
    }
}

impl MaskGraph {
    pub fn new(mask: &Mask, connectivity: Connectivity) -> Result<Self> {
        mask.require_nonempty()?;
        let meta = *mask.meta();
        let voxels = mask.indices();
        let mut compact = vec![u32::MAX; meta.len()];
        for (c, &v) in voxels.iter().enumerate() {
            compact[v] = c as u32;
        }
        let offsets = connectivity.offsets();
        let mut row_start = Vec::with_capacity(voxels.len() + 1);
        let mut neighbors = Vec::with_capacity(voxels.len() * offsets.len() / 2);
        row_start.push(0u32);
        let dims = [meta.nx as isize, meta.ny as isize, meta.nz as isize];
        for &v in &voxels {
            let [x, y, z] = meta.coords(v);
            for o in &offsets {
                let (nx, ny, nz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                if nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] || nz >= dims[2] {
                    continue;
                }
                let c = compact[meta.index(nx as usize, ny as usize, nz as usize)];
                if c != u32::MAX {
                    neighbors.push(c);
                }
            }
            row_start.push(neighbors.len() as u32);
        }
        Ok(MaskGraph {
            meta,
            connectivity,
            voxels,
            row_start,
            neighbors,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Linear index of each compact voxel.
    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    #[inline]
    fn neighbors_of(&self, c: usize) -> &[u32] {
        &self.neighbors[self.row_start[c] as usize..self.row_start[c + 1] as usize]
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.voxels.iter().map(|&v| full[v]).collect()
    }

    pub fn scatter(&self, compact: &[f64]) -> Volume {
        let mut data = vec![0.0; self.meta.len()];
        for (&v, &x) in self.voxels.iter().zip(compact) {
            data[v] = x;
        }
        Volume::from_vec_unchecked(self.meta, data)
    }

    fn grow<F: Fn(f64) -> bool>(
        &self,
        values: &[f64],
        supra: &F,
        seed: usize,
        scratch: &mut ClusterScratch,
        generation: u32,
        members: Option<&mut Vec<u32>>,
    ) -> usize {
        let mut size = 0usize;
        scratch.stack.clear();
        scratch.stack.push(seed as u32);
        scratch.stamp[seed] = generation;
        let mut members = members;
        while let Some(c) = scratch.stack.pop() {
            size += 1;
            if let Some(m) = members.as_deref_mut() {
                m.push(c);
            }
            for &n in self.neighbors_of(c as usize) {
                let n_us = n as usize;
                if scratch.stamp[n_us] != generation && supra(values[n_us]) {
                    scratch.stamp[n_us] = generation;
                    scratch.stack.push(n);
                }
            }
        }
        size
    }

    fn tail_clusters<F: Fn(f64) -> bool>(
        &self,
        values: &[f64],
        supra: F,
        sign: Sign,
        scratch: &mut ClusterScratch,
        generation: u32,
        out: &mut Vec<Cluster>,
    ) {
        let mut members = Vec::new();
        for c in 0..values.len() {
            if scratch.stamp[c] == generation || !supra(values[c]) {
                continue;
            }
            members.clear();
            let size = self.grow(values, &supra, c, scratch, generation, Some(&mut members));
            let mut voxels: Vec<usize> = members.iter().map(|&m| self.voxels[m as usize]).collect();
            voxels.sort_unstable();
            let peak = members
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let (va, vb) = (values[a as usize], values[b as usize]);
                    let (ka, kb) = match sign {
                        Sign::Positive => (va, vb),
                        Sign::Negative => (-va, -vb),
                    };
                    // prefer the lower index on ties
                    ka.total_cmp(&kb).then(b.cmp(&a))
                })
                .expect("cluster has at least one member") as usize;
            out.push(Cluster {
                size,
                peak_value: values[peak],
                peak_index: self.voxels[peak],
                sign,
                voxels,
                p_fwe: None,
            });
        }
    }

    /// Clusters of a compact statistic vector.
    pub fn clusters(&self, values: &[f64], threshold_u: f64, tail: Tail) -> Vec<Cluster> {
        assert_eq!(values.len(), self.len(), "compact vector length");
        let mut scratch = ClusterScratch::default();
        let mut out = Vec::new();
        if matches!(tail, Tail::Positive | Tail::Both) {
            let g = scratch.begin(self.len());
            self.tail_clusters(values, |v| v >= threshold_u, Sign::Positive, &mut scratch, g, &mut out);
        }
        if matches!(tail, Tail::Negative | Tail::Both) {
            let g = scratch.begin(self.len());
            self.tail_clusters(values, |v| v <= -threshold_u, Sign::Negative, &mut scratch, g, &mut out);
        }
        out.sort_by(|a, b| b.size.cmp(&a.size).then(a.peak_index.cmp(&b.peak_index)));
        out
    }

    fn tail_max<F: Fn(f64) -> bool>(&self, values: &[f64], supra: F, scratch: &mut ClusterScratch) -> usize {
        let g = scratch.begin(self.len());
        let mut best = 0;
        for c in 0..values.len() {
            if scratch.stamp[c] == g || !supra(values[c]) {
                continue;
            }
            best = best.max(self.grow(values, &supra, c, scratch, g, None));
        }
        best
    }

    /// Size of the largest cluster (0 when nothing exceeds the threshold).
    pub fn max_cluster_size(
        &self,
        values: &[f64],
        threshold_u: f64,
        tail: Tail,
        scratch: &mut ClusterScratch,
    ) -> usize {
        debug_assert_eq!(values.len(), self.len());
        let mut best = 0;
        if matches!(tail, Tail::Positive | Tail::Both) {
            best = best.max(self.tail_max(values, |v| v >= threshold_u, scratch));
        }
        if matches!(tail, Tail::Negative | Tail::Both) {
            best = best.max(self.tail_max(values, |v| v <= -threshold_u, scratch));
        }
        best
    }
}

/// Partition supra-threshold in-mask voxels into connected clusters.
///
/// With `Tail::Both`, clusters of `stat >= u` and `stat <= -u` are formed
/// independently and never merged.
pub fn connected_components(
    stat: &Volume,
    mask: &Mask,
    threshold_u: f64,
    connectivity: Connectivity,
    tail: Tail,
) -> Result<ClusterTable> {
    stat.meta().ensure_same(mask.meta(), "connected_components")?;
    if !threshold_u.is_finite() {
        return Err(Error::Domain(format!("threshold must be finite, got {threshold_u}")));
    }
    let graph = MaskGraph::new(mask, connectivity)?;
    let values = graph.gather(stat.data());
    Ok(ClusterTable {
        cdt_p: None,
        threshold_u,
        connectivity,
        tail,
        clusters: graph.clusters(&values, threshold_u, tail),
    })
}
