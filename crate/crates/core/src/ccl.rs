//! Two-pass connected-component labeling with union-find, plus an
//! independent flood-fill oracle, component statistics, and the
//! small-component (diacritic) stripping filter.
//!
//! Labels are deterministic: components are numbered 1..L by the row-major
//! position of their first pixel. Both implementations follow the same
//! numbering so partitions can be compared directly.

use crate::raster::Raster;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; 0 = background, 1..=L = component labels.
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn component_count(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub label: u32,
    pub area: usize,
    pub bbox: (usize, usize, usize, usize), // (min_x, min_y, max_x, max_y)
    pub centroid: (f64, f64),
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new() -> Self {
        // slot 0 reserved for background
        UnionFind {
            parent: vec![0],
            rank: vec![0],
        }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            // path compression (halving)
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        // union by rank
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
    }
}

/// Two-pass labeling. Pass 1 assigns provisional labels scanning row-major
/// and records equivalences; pass 2 relabels with union-find roots
/// compacted to 1..L by first occurrence and computes per-component stats.
pub fn two_pass_label(raster: &Raster, conn: Connectivity) -> (LabelMap, Vec<ComponentStats>) {
    let w = raster.width();
    let h = raster.height();
    let mut provisional = vec![0u32; w * h];
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            if !raster.is_foreground(x, y) {
                continue;
            }
            // previously scanned neighbors
            let mut neighbor_label = 0u32;
            let merge = |uf: &mut UnionFind, lbl: u32, acc: &mut u32| {
                if lbl != 0 {
                    if *acc == 0 {
                        *acc = lbl;
                    } else {
                        uf.union(*acc, lbl);
                    }
                }
            };
            if x > 0 {
                merge(&mut uf, provisional[y * w + x - 1], &mut neighbor_label);
            }
            if y > 0 {
                merge(&mut uf, provisional[(y - 1) * w + x], &mut neighbor_label);
                if let Connectivity::Eight = conn {
                    if x > 0 {
                        merge(&mut uf, provisional[(y - 1) * w + x - 1], &mut neighbor_label);
                    }
                    if x + 1 < w {
                        merge(&mut uf, provisional[(y - 1) * w + x + 1], &mut neighbor_label);
                    }
                }
            }
            provisional[y * w + x] = if neighbor_label != 0 {
                neighbor_label
            } else {
                uf.make()
            };
        }
    }

    // pass 2: compact roots to 1..L in first-occurrence order, gather stats
    let mut root_to_compact = vec![0u32; uf.parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut stats: Vec<ComponentStats> = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = uf.find(p) as usize;
            let mut compact = root_to_compact[root];
            if compact == 0 {
                compact = stats.len() as u32 + 1;
                root_to_compact[root] = compact;
                stats.push(ComponentStats {
                    label: compact,
                    area: 0,
                    bbox: (x, y, x, y),
                    centroid: (0.0, 0.0),
                });
                sums.push((0.0, 0.0));
            }
            labels[y * w + x] = compact;
            let st = &mut stats[(compact - 1) as usize];
            st.area += 1;
            st.bbox.0 = st.bbox.0.min(x);
            st.bbox.1 = st.bbox.1.min(y);
            st.bbox.2 = st.bbox.2.max(x);
            st.bbox.3 = st.bbox.3.max(y);
            let s = &mut sums[(compact - 1) as usize];
            s.0 += x as f64;
            s.1 += y as f64;
        }
    }
    for (st, s) in stats.iter_mut().zip(sums) {
        st.centroid = (s.0 / st.area as f64, s.1 / st.area as f64);
    }
    (
        LabelMap {
            width: w,
            height: h,
            labels,
        },
        stats,
    )
}

/// Breadth-first flood-fill labeling with the same numbering contract as
/// `two_pass_label`. Exists as an independent oracle.
pub fn flood_fill_label(raster: &Raster, conn: Connectivity) -> LabelMap {
    let w = raster.width();
    let h = raster.height();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !raster.is_foreground(x, y) || labels[y * w + x] != 0 {
                continue;
            }
            next += 1;
            labels[y * w + x] = next;
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                let neighbors: &[(i64, i64)] = match conn {
                    Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
                    Connectivity::Eight => &[
                        (1, 0),
                        (-1, 0),
                        (0, 1),
                        (0, -1),
                        (1, 1),
                        (1, -1),
                        (-1, 1),
                        (-1, -1),
                    ],
                };
                for &(dx, dy) in neighbors {
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if raster.is_foreground(nx, ny) && labels[ny * w + nx] == 0 {
                        labels[ny * w + nx] = next;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
    }
    LabelMap {
        width: w,
        height: h,
        labels,
    }
}

pub fn component_count(raster: &Raster, conn: Connectivity) -> usize {
    two_pass_label(raster, conn).1.len()
}

/// Sets every component with area < `area_fraction` x (largest component's
/// area) to background. Strict inequality, so equal-area components are
/// all kept. All-background input is returned unchanged.
pub fn strip_small_components(raster: &Raster, conn: Connectivity, area_fraction: f64) -> Raster {
    let (map, stats) = two_pass_label(raster, conn);
    let largest = match stats.iter().map(|s| s.area).max() {
        Some(a) => a,
        None => return raster.clone(),
    };
    let threshold = area_fraction * largest as f64;
    let keep: Vec<bool> = stats.iter().map(|s| s.area as f64 >= threshold).collect();
    let mut out = raster.clone();
    for y in 0..map.height {
        for x in 0..map.width {
            let l = map.labels[y * map.width + x];
            if l != 0 && !keep[(l - 1) as usize] {
                out.set(x, y, 0);
            }
        }
    }
    out
}

/// True iff the raster has exactly one connected component.
pub fn is_single_component(raster: &Raster, conn: Connectivity) -> bool {
    component_count(raster, conn) == 1
}
