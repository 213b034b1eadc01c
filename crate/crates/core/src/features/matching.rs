//! Nearest-neighbor and identity matching.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{Descriptor, Feature, Keypoint};

/// A proposed correspondence between a query and a reference feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Index into the query feature list.
    pub query: usize,
    /// Stable id of the reference feature.
    pub reference: usize,
    /// Image frame.
    pub query_keypoint: Keypoint,
    /// Map frame.
    pub reference_keypoint: Keypoint,
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f32, left: Box<Node>, right: Box<Node> },
}

/// Exact nearest-neighbor index over real descriptors (k-d tree).
#[derive(Debug, Clone)]
pub struct NnIndex {
    dim: usize,
    points: Vec<f32>,
    /// Reference ids in tree order.
    ids: Vec<usize>,
    keypoints: Vec<Keypoint>,
    root: Option<Node>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl NnIndex {
    /// Builds the index; reference ids are positions in `features`.
    pub fn build(features: &[Feature]) -> Result<Self> {
        let ids: Vec<usize> = (0..features.len()).collect();
        Self::build_with_ids(features, &ids)
    }

    pub fn build_with_ids(features: &[Feature], ids: &[usize]) -> Result<Self> {
        assert_eq!(features.len(), ids.len());
        let dim = match features.first().map(|f| &f.descriptor) {
            Some(Descriptor::Real(v)) => v.len(),
            Some(Descriptor::Binary(_)) => {
                return Err(Error::KindMismatch("nearest index needs real descriptors".into()))
            }
            None => 0,
        };
        let mut order: Vec<usize> = (0..features.len()).collect();
        for f in features {
            match f.descriptor.as_real() {
                Some(v) if v.len() == dim => {}
                _ => return Err(Error::KindMismatch("mixed descriptor kinds or lengths".into())),
            }
        }
        let desc = |i: usize| features[i].descriptor.as_real().unwrap();
        let root = if features.is_empty() {
            None
        } else {
            Some(build_node(&mut order, 0, &desc, dim))
        };
        let mut points = Vec::with_capacity(features.len() * dim);
        for &i in &order {
            points.extend_from_slice(desc(i));
        }
        Ok(Self {
            dim,
            points,
            ids: order.iter().map(|&i| ids[i]).collect(),
            keypoints: order.iter().map(|&i| features[i].keypoint).collect(),
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, slot: usize) -> &[f32] {
        &self.points[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Nearest reference as `(slot, squared distance)`; ties go to the
    /// lowest reference id.
    fn nearest_slot(&self, q: &[f32]) -> Option<(usize, f32)> {
        let root = self.root.as_ref()?;
        let mut best: Option<(usize, f32)> = None;
        self.search(root, q, &mut best);
        best
    }

    fn better(&self, cand: (usize, f32), best: Option<(usize, f32)>) -> bool {
        match best {
            None => true,
            Some((slot, d)) => cand.1 < d || (cand.1 == d && self.ids[cand.0] < self.ids[slot]),
        }
    }

    fn search(&self, node: &Node, q: &[f32], best: &mut Option<(usize, f32)>) {
        match node {
            Node::Leaf { start, end } => {
                for slot in *start..*end {
                    let cand = (slot, sq_dist(q, self.point(slot)));
                    if self.better(cand, *best) {
                        *best = Some(cand);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Equal bound still explored so lower-id ties are found.
                if best.is_none_or(|(_, d)| diff * diff <= d) {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Nearest reference `(id, squared distance)`.
    pub fn nearest(&self, q: &[f32]) -> Option<(usize, f32)> {
        self.nearest_slot(q).map(|(slot, d)| (self.ids[slot], d))
    }
}

fn build_node<'a>(
    order: &mut [usize],
    offset: usize,
    desc: &impl Fn(usize) -> &'a [f32],
    dim: usize,
) -> Node {
    if order.len() <= LEAF_SIZE || dim == 0 {
        return Node::Leaf {
            start: offset,
            end: offset + order.len(),
        };
    }
    // Split on the dimension of largest spread at the median.
    let mut split_dim = 0;
    let mut best_spread = f32::MIN;
    for d in 0..dim {
        let (lo, hi) = order.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &i| {
            let v = desc(i)[d];
            (lo.min(v), hi.max(v))
        });
        if hi - lo > best_spread {
            best_spread = hi - lo;
            split_dim = d;
        }
    }
    if best_spread <= 0.0 {
        return Node::Leaf {
            start: offset,
            end: offset + order.len(),
        };
    }
    order.sort_by(|&a, &b| desc(a)[split_dim].total_cmp(&desc(b)[split_dim]).then(a.cmp(&b)));
    let mid = order.len() / 2;
    let value = desc(order[mid])[split_dim];
    let (left, right) = order.split_at_mut(mid);
    Node::Split {
        dim: split_dim,
        value,
        left: Box::new(build_node(left, offset, desc, dim)),
        right: Box::new(build_node(right, offset + mid, desc, dim)),
    }
}

/// One match per query feature: its exact nearest reference.
pub fn match_nearest(query: &[Feature], index: &NnIndex) -> Result<Vec<Match>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    query
        .iter()
        .enumerate()
        .map(|(qi, f)| {
            let v = f
                .descriptor
                .as_real()
                .filter(|v| v.len() == index.dim())
                .ok_or_else(|| Error::KindMismatch("query descriptor does not fit index".into()))?;
            let (slot, _) = index.nearest_slot(v).expect("index not empty");
            Ok(Match {
                query: qi,
                reference: index.ids[slot],
                query_keypoint: f.keypoint,
                reference_keypoint: index.keypoints[slot],
            })
        })
        .collect()
}

/// Bucket index over binary descriptor values.
#[derive(Debug, Clone, Default)]
pub struct IdentityIndex {
    len: Option<u8>,
    buckets: HashMap<u32, Vec<usize>>,
}

impl IdentityIndex {
    /// Positions in `reference` are the bucket entries.
    pub fn build(reference: &[Feature]) -> Result<Self> {
        let mut index = IdentityIndex::default();
        for (i, f) in reference.iter().enumerate() {
            let d = f
                .descriptor
                .as_binary()
                .ok_or_else(|| Error::KindMismatch("identity matching needs binary descriptors".into()))?;
            match index.len {
                None => index.len = Some(d.len),
                Some(l) if l != d.len => {
                    return Err(Error::KindMismatch(format!(
                        "reference descriptors of {} and {} bits",
                        l, d.len
                    )))
                }
                _ => {}
            }
            index.buckets.entry(d.bits).or_default().push(i);
        }
        Ok(index)
    }

    pub fn bits(&self) -> Option<u8> {
        self.len
    }

    /// Positions of reference features equal to `bits`, ascending.
    pub fn lookup(&self, bits: u32) -> &[usize] {
        self.buckets.get(&bits).map_or(&[], Vec::as_slice)
    }
}

/// Every bit-identical `(query, reference)` pair, ordered by query then
/// reference position.
pub fn match_identity(query: &[Feature], reference: &[Feature]) -> Result<Vec<Match>> {
    let index = IdentityIndex::build(reference)?;
    let mut out = Vec::new();
    for (qi, f) in query.iter().enumerate() {
        let d = f
            .descriptor
            .as_binary()
            .ok_or_else(|| Error::KindMismatch("identity matching needs binary descriptors".into()))?;
        if let Some(l) = index.bits() {
            if l != d.len {
                return Err(Error::KindMismatch(format!(
                    "query has {} bits, reference {}",
                    d.len, l
                )));
            }
        }
        for &ri in index.lookup(d.bits) {
            out.push(Match {
                query: qi,
                reference: ri,
                query_keypoint: f.keypoint,
                reference_keypoint: reference[ri].keypoint,
            });
        }
    }
    Ok(out)
}
