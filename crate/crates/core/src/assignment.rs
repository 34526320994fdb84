//! Optimal and k-best 2-D assignment.
//!
//! Rows are measurement clusters, columns are existing tracks followed by one
//! new-target column per cluster. Costs are negative log-weights; entries that
//! must never be chosen carry a large finite sentinel so that dual variables
//! stay well-conditioned (true infinities break the potential updates).

use nalgebra::DMatrix;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Sentinel for non-assignable entries. Finite costs are clamped well below
/// this so that no sum of clamped costs can ever reach it.
pub const FORBIDDEN: f64 = 1e12;
const COST_CLAMP: f64 = 1e9;

pub fn is_forbidden(cost: f64) -> bool {
    cost >= 0.5 * FORBIDDEN
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignError {
    #[error("infeasible row {0}: no assignable column")]
    InfeasibleRow(usize),
    #[error("no feasible assignment")]
    Infeasible,
    #[error("more rows than columns")]
    Shape,
}

/// A full row-to-column map with its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `assignment[row] = column`.
    pub assignment: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column (rows <= columns),
/// by shortest augmenting paths over the reduced costs.
pub fn solve_optimal(cost: &DMatrix<f64>) -> Result<Assignment, AssignError> {
    let (nr, nc) = cost.shape();
    if nr == 0 {
        return Ok(Assignment {
            assignment: Vec::new(),
            cost: 0.0,
        });
    }
    if nr > nc {
        return Err(AssignError::Shape);
    }
    for i in 0..nr {
        if (0..nc).all(|j| is_forbidden(cost[(i, j)])) {
            return Err(AssignError::InfeasibleRow(i));
        }
    }

    let mut u = vec![0.0f64; nr];
    let mut v = vec![0.0f64; nc];
    let mut col4row = vec![usize::MAX; nr];
    let mut row4col = vec![usize::MAX; nc];

    for cur_row in 0..nr {
        let mut shortest = vec![f64::INFINITY; nc];
        let mut path = vec![usize::MAX; nc];
        let mut scanned_row = vec![false; nr];
        let mut scanned_col = vec![false; nc];
        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let sink = loop {
            scanned_row[i] = true;
            let mut lowest = f64::INFINITY;
            let mut j_low = usize::MAX;
            for j in 0..nc {
                if scanned_col[j] {
                    continue;
                }
                let reduced = min_val + cost[(i, j)] - u[i] - v[j];
                if reduced < shortest[j] {
                    shortest[j] = reduced;
                    path[j] = i;
                }
                if shortest[j] < lowest {
                    lowest = shortest[j];
                    j_low = j;
                }
            }
            if j_low == usize::MAX || !lowest.is_finite() {
                return Err(AssignError::Infeasible);
            }
            min_val = lowest;
            scanned_col[j_low] = true;
            if row4col[j_low] == usize::MAX {
                break j_low;
            }
            i = row4col[j_low];
        };

        u[cur_row] += min_val;
        for (i2, scanned) in scanned_row.iter().enumerate() {
            if *scanned && i2 != cur_row {
                u[i2] += min_val - shortest[col4row[i2]];
            }
        }
        for (j, scanned) in scanned_col.iter().enumerate() {
            if *scanned {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let i2 = path[j];
            row4col[j] = i2;
            let previous = col4row[i2];
            col4row[i2] = j;
            if i2 == cur_row {
                break;
            }
            j = previous;
        }
    }

    if (0..nr).any(|i| is_forbidden(cost[(i, col4row[i])])) {
        return Err(AssignError::Infeasible);
    }
    let total = (0..nr).map(|i| cost[(i, col4row[i])]).sum();
    Ok(Assignment {
        assignment: col4row,
        cost: total,
    })
}

fn solve_constrained(
    cost: &DMatrix<f64>,
    forced: &[(usize, usize)],
    forbidden: &[(usize, usize)],
) -> Result<Assignment, AssignError> {
    let mut m = cost.clone();
    for &(r, c) in forbidden {
        m[(r, c)] = FORBIDDEN;
    }
    for &(r, c) in forced {
        for j in 0..m.ncols() {
            if j != c {
                m[(r, j)] = FORBIDDEN;
            }
        }
        for i in 0..m.nrows() {
            if i != r {
                m[(i, c)] = FORBIDDEN;
            }
        }
    }
    solve_optimal(&m)
}

struct MurtyNode {
    solution: Assignment,
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
}

// min-heap ordering: lowest cost first, lexicographic assignment on ties
impl PartialEq for MurtyNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for MurtyNode {}
impl PartialOrd for MurtyNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MurtyNode {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .solution
            .cost
            .total_cmp(&self.solution.cost)
            .then_with(|| other.solution.assignment.cmp(&self.solution.assignment))
    }
}

/// The k lowest-cost distinct assignments, in nondecreasing cost order
/// (fewer if fewer feasible assignments exist). Ties are broken by
/// lexicographic order of the assignment vector.
pub fn murty_k_best(cost: &DMatrix<f64>, k: usize) -> Result<Vec<Assignment>, AssignError> {
    let nr = cost.nrows();
    let best = solve_optimal(cost)?;
    if nr == 0 {
        return Ok(vec![best]);
    }
    let mut heap = BinaryHeap::new();
    heap.push(MurtyNode {
        solution: best,
        forced: Vec::new(),
        forbidden: Vec::new(),
    });
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let Some(node) = heap.pop() else { break };
        out.push(node.solution.clone());

        // partition over the rows not already pinned in this node
        let mut forced = node.forced.clone();
        for row in 0..nr {
            if node.forced.iter().any(|&(r, _)| r == row) {
                continue;
            }
            let pinned_col = node.solution.assignment[row];
            let mut forbidden = node.forbidden.clone();
            forbidden.push((row, pinned_col));
            if let Ok(solution) = solve_constrained(cost, &forced, &forbidden) {
                heap.push(MurtyNode {
                    solution,
                    forced: forced.clone(),
                    forbidden,
                });
            }
            forced.push((row, pinned_col));
        }
    }
    Ok(out)
}

/// Assignment problem for one predecessor hypothesis, in cost form.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    /// M x (J + M): track columns first, then one new-target column per cluster.
    pub costs: DMatrix<f64>,
    /// Sum of misdetection log-weights; a hypothesis' log-weight is
    /// `constant - assignment cost`.
    pub constant: f64,
    pub num_tracks: usize,
}

fn clamp_cost(c: f64) -> f64 {
    if c.is_nan() {
        FORBIDDEN
    } else {
        c.clamp(-COST_CLAMP, COST_CLAMP)
    }
}

/// Map PMBM update weights (all in log form) to an assignment cost matrix.
///
/// `log_detect[(i, j)]` scores cluster i explained by track j, `log_misdetect[j]`
/// scores track j unseen this scan, and `log_new[i]` scores cluster i as a new
/// target or clutter.
pub fn build_cost_matrix(
    log_detect: &DMatrix<f64>,
    log_misdetect: &[f64],
    log_new: &[f64],
) -> CostMatrix {
    let m = log_new.len();
    let j_tracks = log_misdetect.len();
    debug_assert_eq!(log_detect.shape(), (m, j_tracks));
    // keep misdetection weights finite so detection ratios stay meaningful
    let log_mis: Vec<f64> = log_misdetect.iter().map(|&w| w.max(-700.0)).collect();

    let mut costs = DMatrix::from_element(m, j_tracks + m, FORBIDDEN);
    for i in 0..m {
        for j in 0..j_tracks {
            let ld = log_detect[(i, j)];
            costs[(i, j)] = if ld == f64::NEG_INFINITY {
                FORBIDDEN
            } else {
                clamp_cost(-(ld - log_mis[j]))
            };
        }
        costs[(i, j_tracks + i)] = if log_new[i] == f64::NEG_INFINITY {
            FORBIDDEN
        } else {
            clamp_cost(-log_new[i])
        };
    }
    CostMatrix {
        costs,
        constant: log_mis.iter().sum(),
        num_tracks: j_tracks,
    }
}
