//! Red-green refinement with conformity closure.
//!
//! Marked triangles are split into four (red). Neighbours that end up with a
//! single split edge are bisected (green) and remember their parent; a green
//! child that needs further refinement is first merged back into its parent,
//! which is then red-refined. This keeps the minimum angle bounded under
//! repeated adaptation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{AdaptationMarking, GreenTag, TriMesh};
use crate::error::{Error, Result};
use crate::math::Point;

type EdgeKey = (usize, usize);

fn key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Work {
    vertices: Vec<Point>,
    slots: Vec<Option<[usize; 3]>>,
    tags: Vec<Option<GreenTag>>,
    edge_slots: BTreeMap<EdgeKey, Vec<usize>>,
    midpoints: BTreeMap<EdgeKey, usize>,
    split: BTreeSet<EdgeKey>,
    queue: Vec<usize>,
}

impl Work {
    fn push_slot(&mut self, tri: [usize; 3], tag: Option<GreenTag>) -> usize {
        let s = self.slots.len();
        self.slots.push(Some(tri));
        self.tags.push(tag);
        for e in 0..3 {
            self.edge_slots
                .entry(key(tri[e], tri[(e + 1) % 3]))
                .or_default()
                .push(s);
        }
        s
    }

    fn kill_slot(&mut self, s: usize) -> [usize; 3] {
        let tri = self.slots[s].take().expect("live slot");
        for e in 0..3 {
            let k = key(tri[e], tri[(e + 1) % 3]);
            if let Some(list) = self.edge_slots.get_mut(&k) {
                list.retain(|&x| x != s);
                if list.is_empty() {
                    self.edge_slots.remove(&k);
                }
            }
        }
        tri
    }

    fn midpoint(&mut self, a: usize, b: usize) -> usize {
        let k = key(a, b);
        if let Some(&m) = self.midpoints.get(&k) {
            return m;
        }
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let m = self.vertices.len();
        self.vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        self.midpoints.insert(k, m);
        m
    }

    fn split_count(&self, tri: &[usize; 3]) -> usize {
        (0..3)
            .filter(|&e| self.split.contains(&key(tri[e], tri[(e + 1) % 3])))
            .count()
    }

    /// Replaces `tri` (already removed from the slots) by its four red children.
    fn red(&mut self, tri: [usize; 3]) {
        let [a, b, c] = tri;
        let mab = self.midpoint(a, b);
        let mbc = self.midpoint(b, c);
        let mca = self.midpoint(c, a);
        for (x, y) in [(a, b), (b, c), (c, a)] {
            let k = key(x, y);
            if self.split.insert(k) {
                if let Some(list) = self.edge_slots.get(&k) {
                    self.queue.extend(list.iter().copied());
                }
            }
        }
        for child in [[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]] {
            let s = self.push_slot(child, None);
            self.queue.push(s);
        }
    }

    fn refine_slot(&mut self, s: usize) {
        if self.slots[s].is_none() {
            return;
        }
        match self.tags[s] {
            Some(tag) => self.revert_and_refine(s, tag),
            None => {
                let tri = self.kill_slot(s);
                self.red(tri);
            }
        }
    }

    fn revert_and_refine(&mut self, s: usize, tag: GreenTag) {
        let child = self.kill_slot(s);
        let sib = tag.sibling;
        let paired = self.slots.get(sib).copied().flatten().is_some()
            && self.tags[sib].map(|t| t.sibling == s && t.parent == tag.parent) == Some(true);
        if paired {
            let other = self.kill_slot(sib);
            let parent = tag.parent;
            // the shared new vertex is the midpoint of the bisected parent edge
            if let Some(&m) = child.iter().find(|v| !parent.contains(v) && other.contains(v)) {
                let opp = *child
                    .iter()
                    .find(|v| parent.contains(v) && other.contains(v))
                    .expect("green pair shares an apex");
                let ends: Vec<usize> = parent.iter().copied().filter(|&v| v != opp).collect();
                self.midpoints.insert(key(ends[0], ends[1]), m);
            }
            self.red(parent);
        } else {
            // orphaned tag: treat the child as an ordinary triangle
            self.red(child);
        }
    }
}

/// Refines every triangle in `marking.refine_set` and closes the result to a
/// conforming mesh. `coarsen_set` is ignored; coarsening is done by rebuilding
/// from the base mesh (see [`super::adapt_to_field`]).
pub fn refine(mesh: &TriMesh, marking: &AdaptationMarking) -> Result<TriMesh> {
    let nt = mesh.num_triangles();
    if let Some(&bad) = marking.refine_set.iter().find(|&&t| t >= nt) {
        return Err(Error::InvalidInput(format!(
            "triangle index {bad} out of range ({nt} triangles)"
        )));
    }
    if marking.refine_set.is_empty() {
        return Ok(mesh.clone());
    }
    let mut w = Work {
        vertices: mesh.vertices().to_vec(),
        slots: Vec::with_capacity(nt * 2),
        tags: Vec::with_capacity(nt * 2),
        edge_slots: BTreeMap::new(),
        midpoints: BTreeMap::new(),
        split: BTreeSet::new(),
        queue: Vec::new(),
    };
    for (t, tri) in mesh.triangles().iter().enumerate() {
        w.push_slot(*tri, mesh.green_tags()[t]);
    }
    let mut marked: Vec<usize> = marking.refine_set.clone();
    marked.sort_unstable();
    marked.dedup();
    for t in marked {
        w.refine_slot(t);
    }
    while let Some(s) = w.queue.pop() {
        let Some(tri) = w.slots[s] else { continue };
        let n = w.split_count(&tri);
        if n >= 2 || (n == 1 && w.tags[s].is_some()) {
            w.refine_slot(s);
        }
    }

    let Work {
        vertices,
        slots,
        tags,
        midpoints,
        split,
        ..
    } = w;
    let mut triangles = Vec::new();
    let mut green: Vec<Option<GreenTag>> = Vec::new();
    let mut new_index = vec![usize::MAX; slots.len()];
    // first pass: untouched triangles keep their tags, remapped below
    let mut pending_tags = Vec::new();
    for (s, slot) in slots.iter().enumerate() {
        let Some(tri) = *slot else { continue };
        let n = (0..3)
            .filter(|&e| split.contains(&key(tri[e], tri[(e + 1) % 3])))
            .count();
        match n {
            0 => {
                new_index[s] = triangles.len();
                triangles.push(tri);
                green.push(None);
                pending_tags.push((triangles.len() - 1, tags[s]));
            }
            1 => {
                let e = (0..3)
                    .find(|&e| split.contains(&key(tri[e], tri[(e + 1) % 3])))
                    .expect("one split edge");
                let (a, b, o) = (tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]);
                let m = midpoints[&key(a, b)];
                let i0 = triangles.len();
                triangles.push([a, m, o]);
                triangles.push([m, b, o]);
                green.push(Some(GreenTag { sibling: i0 + 1, parent: tri }));
                green.push(Some(GreenTag { sibling: i0, parent: tri }));
            }
            _ => {
                return Err(Error::InvalidMesh(
                    "refinement closure left a triangle with several hanging nodes".into(),
                ))
            }
        }
    }
    for (i, tag) in pending_tags {
        if let Some(tag) = tag {
            let sib = new_index[tag.sibling];
            if sib != usize::MAX {
                green[i] = Some(GreenTag { sibling: sib, parent: tag.parent });
            }
        }
    }
    TriMesh::from_parts_tagged(vertices, triangles, green)
}
