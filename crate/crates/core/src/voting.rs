//! Hough voting over query positions and voting-peak extraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Match;
use crate::geometry::Pose2D;

/// Query image pose implied by a single match: the reference keypoint pose
/// composed with the inverse of the query keypoint pose.
pub fn vote_position(m: &Match) -> Pose2D {
    m.reference_keypoint
        .pose()
        .compose(&m.query_keypoint.pose().inverse())
}

pub type Cell = (i64, i64);

pub fn cell_of(x: f64, y: f64, cell_size: f64) -> Cell {
    ((x / cell_size).floor() as i64, (y / cell_size).floor() as i64)
}

/// Sparse 2D histogram of match votes keyed by integer cell coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteHistogram {
    cell_size: f64,
    cells: BTreeMap<Cell, Vec<usize>>,
    cell_of_match: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotingPeak {
    pub cell: Cell,
    pub vote_count: usize,
    pub match_ids: Vec<usize>,
}

/// Assigns every match to the cell containing its voted query position.
/// Match ids are positions in `matches`.
pub fn cast_votes(matches: &[Match], cell_size: f64) -> VoteHistogram {
    let positions: Vec<(f64, f64)> = matches
        .iter()
        .map(|m| {
            let p = vote_position(m);
            (p.x, p.y)
        })
        .collect();
    VoteHistogram::from_positions(&positions, cell_size)
}

impl VoteHistogram {
    pub fn from_positions(positions: &[(f64, f64)], cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let mut cells: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        let mut cell_of_match = Vec::with_capacity(positions.len());
        for (id, &(x, y)) in positions.iter().enumerate() {
            let c = cell_of(x, y, cell_size);
            cells.entry(c).or_default().push(id);
            cell_of_match.push(c);
        }
        Self {
            cell_size,
            cells,
            cell_of_match,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Number of cells with at least one vote, `|V|`.
    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_votes(&self) -> usize {
        self.cell_of_match.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Cell, &Vec<usize>)> {
        self.cells.iter()
    }

    pub fn votes_in(&self, cell: &Cell) -> &[usize] {
        self.cells.get(cell).map_or(&[], Vec::as_slice)
    }

    pub fn cell_of_match(&self, id: usize) -> Cell {
        self.cell_of_match[id]
    }

    /// Cell with the most votes; ties go to the lexicographically smallest
    /// `(cell_x, cell_y)`.
    pub fn find_peak(&self) -> Result<VotingPeak> {
        let (cell, ids) = self
            .cells
            .iter()
            .fold(None::<(&Cell, &Vec<usize>)>, |best, (c, ids)| match best {
                Some((_, b)) if b.len() >= ids.len() => best,
                _ => Some((c, ids)),
            })
            .ok_or(Error::EmptyHistogram)?;
        Ok(VotingPeak {
            cell: *cell,
            vote_count: ids.len(),
            match_ids: ids.clone(),
        })
    }

    /// `cell_x,cell_y,count` lines sorted by cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_x,cell_y,count\n");
        for (c, ids) in &self.cells {
            out.push_str(&format!("{},{},{}\n", c.0, c.1, ids.len()));
        }
        out
    }

    /// Vote counts of all occupied cells in cell order.
    pub fn counts(&self) -> Vec<usize> {
        self.cells.values().map(Vec::len).collect()
    }
}

pub fn find_peak(h: &VoteHistogram) -> Result<VotingPeak> {
    h.find_peak()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;
    use proptest::prelude::*;

    fn m(q: (f64, f64, f64), r: (f64, f64, f64)) -> Match {
        Match {
            query: 0,
            reference: 0,
            query_keypoint: Keypoint::new(q.0, q.1, q.2, 1.0),
            reference_keypoint: Keypoint::new(r.0, r.1, r.2, 1.0),
        }
    }

    #[test]
    fn vote_with_identity_offsets() {
        let v = vote_position(&m((0.0, 0.0, 0.0), (200.0, 300.0, 0.0)));
        assert!((v.x - 200.0).abs() < 1e-12 && (v.y - 300.0).abs() < 1e-12 && v.theta == 0.0);
    }

    #[test]
    fn vote_with_rotated_reference() {
        let mm = m((10.0, 0.0, 0.0), (100.0, 50.0, 90f64.to_radians()));
        let v = vote_position(&mm);
        assert!((v.x - 100.0).abs() < 1e-9 && (v.y - 40.0).abs() < 1e-9);
        assert!((v.theta - 90f64.to_radians()).abs() < 1e-12);
        // The voted pose maps the query keypoint onto the reference keypoint.
        let (x, y) = v.transform_point(10.0, 0.0);
        assert!((x - 100.0).abs() < 1e-9 && (y - 50.0).abs() < 1e-9);
    }

    #[test]
    fn cell_assignment_examples() {
        assert_eq!(cell_of(120.0, 260.0, 50.0), (2, 5));
        assert_eq!(cell_of(149.9, 0.0, 75.0), (1, 0));
        assert_eq!(cell_of(-0.1, -75.0, 75.0), (-1, -1));
        let h = cast_votes(&[], 50.0);
        assert_eq!(h.occupied_cells(), 0);
        assert!(matches!(h.find_peak(), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn peak_examples() {
        let mut pos = vec![];
        pos.extend(std::iter::repeat_n((10.0, 10.0), 3));
        pos.extend(std::iter::repeat_n((110.0, 10.0), 7));
        pos.extend(std::iter::repeat_n((10.0, 210.0), 2));
        let h = VoteHistogram::from_positions(&pos, 100.0);
        let p = h.find_peak().unwrap();
        assert_eq!((p.cell, p.vote_count), ((1, 0), 7));
        assert_eq!(p.match_ids, (3..10).collect::<Vec<_>>());

        let single = VoteHistogram::from_positions(&[(5.0, 5.0)], 10.0);
        assert_eq!(single.find_peak().unwrap().vote_count, 1);

        let mut tie = vec![(150.0, 20.0); 4];
        tie.extend(vec![(20.0, 20.0); 4]);
        let p = VoteHistogram::from_positions(&tie, 100.0).find_peak().unwrap();
        assert_eq!(p.cell, (0, 0));
    }

    #[test]
    fn csv_dump() {
        let h = VoteHistogram::from_positions(&[(1.0, 1.0), (1.0, 2.0), (-5.0, 1.0)], 10.0);
        assert_eq!(h.to_csv(), "cell_x,cell_y,count\n-1,0,1\n0,0,2\n");
    }

    fn positions() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..200)
    }

    proptest! {
        #[test]
        fn counts_sum_to_matches(pos in positions(), cell in 5.0f64..100.0) {
            let h = VoteHistogram::from_positions(&pos, cell);
            prop_assert_eq!(h.counts().iter().sum::<usize>(), pos.len());
            let mut seen = vec![0; pos.len()];
            for (_, ids) in h.cells() {
                for &i in ids { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }

        #[test]
        fn shifting_by_one_cell_shifts_indices(pos in positions(), k in 1i64..20) {
            let cell = k as f64 * 4.0;
            let h = VoteHistogram::from_positions(&pos, cell);
            let shifted: Vec<_> = pos.iter().map(|&(x, y)| (x + cell, y)).collect();
            let g = VoteHistogram::from_positions(&shifted, cell);
            let a: Vec<_> = h.cells().map(|(c, v)| ((c.0 + 1, c.1), v.len())).collect();
            let b: Vec<_> = g.cells().map(|(c, v)| (*c, v.len())).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn peak_ignores_permutation(pos in positions(), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let h = VoteHistogram::from_positions(&pos, 50.0);
            let mut perm = pos.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let g = VoteHistogram::from_positions(&perm, 50.0);
            let (p, q) = (h.find_peak().unwrap(), g.find_peak().unwrap());
            prop_assert_eq!((p.cell, p.vote_count), (q.cell, q.vote_count));
        }
    }
}
