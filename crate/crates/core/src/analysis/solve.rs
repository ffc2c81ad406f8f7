//! Solves for one per-channel transform on every value of a region.
//!
//! Each parameterless affine member constrains the transforms around it:
//! identity-like ops and pooling carry them through channel for channel,
//! `Flatten` broadcasts each input channel over its spatial positions,
//! `Concat` slices by channel range, and `Add` forces a common scale
//! while its output shift is the sum of its input shifts. Scales are
//! settled with union-find over `(value, channel)` slots. Shifts are a
//! small linear system per scale class, solved by Gauss-Jordan elimination
//! with columns in topological order and free columns set to zero. That
//! way the earliest producer feeding an `Add` carries the whole shift.

use std::collections::BTreeMap;

use crate::graph::{AffineOp, Graph, NodeKind};

use super::region::SideRegion;
use super::ChannelAffine;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SolveError {
    /// Two constraints demand different transforms on the same slot.
    Inconsistent { value: String },
}

struct Slots {
    offset: BTreeMap<String, usize>,
    width: BTreeMap<String, usize>,
    total: usize,
}

impl Slots {
    fn at(&self, value: &str, channel: usize) -> usize {
        self.offset[value] + channel
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index stays root so class ids are deterministic.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Linear equation `sum(coef * shift[slot]) = rhs`.
struct Equation {
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

pub(crate) fn solve_region(
    graph: &Graph,
    region: &SideRegion,
    root: &ChannelAffine,
    pin_halts: bool,
) -> Result<BTreeMap<String, ChannelAffine>, SolveError> {
    let mut ids: Vec<&String> = region.values.iter().collect();
    if region.pinned_touched && !region.values.contains(&region.pinned_value) {
        ids.push(&region.pinned_value);
    }
    ids.sort_by_key(|id| (graph.topo_rank(id), (*id).clone()));

    let mut slots = Slots {
        offset: BTreeMap::new(),
        width: BTreeMap::new(),
        total: 0,
    };
    for id in &ids {
        let width = graph.value_shape(id).channels();
        slots.offset.insert((*id).clone(), slots.total);
        slots.width.insert((*id).clone(), width);
        slots.total += width;
    }

    let mut uf = UnionFind::new(slots.total);
    let mut equations: Vec<Equation> = Vec::new();

    for link in &region.links {
        let node = graph.node(link).unwrap();
        let NodeKind::OtherAffine(op) = &node.kind else {
            unreachable!("links are parameterless affine nodes");
        };
        let out_w = slots.width[link.as_str()];
        match op {
            AffineOp::Identity | AffineOp::AvgPool2d { .. } => {
                let input = &node.inputs[0];
                for c in 0..out_w {
                    let (o, i) = (slots.at(link, c), slots.at(input, c));
                    uf.union(o, i);
                    equations.push(Equation {
                        terms: vec![(o, 1.0), (i, -1.0)],
                        rhs: 0.0,
                    });
                }
            }
            AffineOp::Flatten => {
                let input = &node.inputs[0];
                let spatial = graph.value_shape(input).spatial();
                for c in 0..slots.width[input.as_str()] {
                    let i = slots.at(input, c);
                    for j in 0..spatial {
                        let o = slots.at(link, c * spatial + j);
                        uf.union(o, i);
                        equations.push(Equation {
                            terms: vec![(o, 1.0), (i, -1.0)],
                            rhs: 0.0,
                        });
                    }
                }
            }
            AffineOp::Concat => {
                let mut base = 0;
                for input in &node.inputs {
                    let w = slots.width[input.as_str()];
                    for c in 0..w {
                        let (o, i) = (slots.at(link, base + c), slots.at(input, c));
                        uf.union(o, i);
                        equations.push(Equation {
                            terms: vec![(o, 1.0), (i, -1.0)],
                            rhs: 0.0,
                        });
                    }
                    base += w;
                }
            }
            AffineOp::Add => {
                for c in 0..out_w {
                    let o = slots.at(link, c);
                    let mut terms: BTreeMap<usize, f64> = BTreeMap::from([(o, 1.0)]);
                    for input in &node.inputs {
                        let i = slots.at(input, c);
                        uf.union(o, i);
                        *terms.entry(i).or_insert(0.0) -= 1.0;
                    }
                    equations.push(Equation {
                        terms: terms.into_iter().filter(|(_, v)| *v != 0.0).collect(),
                        rhs: 0.0,
                    });
                }
            }
        }
    }

    // Scales.
    let mut fixed_scale: BTreeMap<usize, f64> = BTreeMap::new();
    let mut fix = |uf: &mut UnionFind, slot: usize, s: f64, value: &str| {
        let class = uf.find(slot);
        match fixed_scale.get(&class) {
            Some(&prev) if prev != s => Err(SolveError::Inconsistent {
                value: value.to_string(),
            }),
            _ => {
                fixed_scale.insert(class, s);
                Ok(())
            }
        }
    };
    let mut pinned: Vec<&String> = Vec::new();
    if region.pinned_touched {
        pinned.push(&region.pinned_value);
    }
    if pin_halts {
        pinned.extend(
            region
                .halted_values
                .iter()
                .filter(|v| slots.offset.contains_key(*v)),
        );
    }

    for c in 0..root.channels() {
        fix(
            &mut uf,
            slots.at(&region.root_value, c),
            root.scale[c],
            &region.root_value,
        )?;
    }
    for value in &pinned {
        for c in 0..slots.width[value.as_str()] {
            fix(&mut uf, slots.at(value, c), 1.0, value)?;
        }
    }

    for c in 0..root.channels() {
        equations.push(Equation {
            terms: vec![(slots.at(&region.root_value, c), 1.0)],
            rhs: root.shift[c],
        });
    }
    for value in &pinned {
        for c in 0..slots.width[value.as_str()] {
            equations.push(Equation {
                terms: vec![(slots.at(value, c), 1.0)],
                rhs: 0.0,
            });
        }
    }

    // Shifts, one independent system per scale class.
    let class_of: Vec<usize> = (0..slots.total).map(|slot| uf.find(slot)).collect();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (slot, &class) in class_of.iter().enumerate() {
        members.entry(class).or_default().push(slot);
    }
    let mut by_class: BTreeMap<usize, Vec<&Equation>> = BTreeMap::new();
    for eq in &equations {
        by_class
            .entry(class_of[eq.terms[0].0])
            .or_default()
            .push(eq);
    }

    let slot_owner = |slot: usize| -> &str {
        slots
            .offset
            .iter()
            .filter(|(_, &off)| off <= slot)
            .max_by_key(|(_, &off)| off)
            .map(|(id, _)| id.as_str())
            .unwrap_or("")
    };

    let mut shift = vec![0.0; slots.total];
    for (class, vars) in &members {
        let eqs = by_class.get(class).map(Vec::as_slice).unwrap_or(&[]);
        let solution = gauss_jordan(vars, eqs).ok_or_else(|| SolveError::Inconsistent {
            value: slot_owner(vars[0]).to_string(),
        })?;
        for (v, x) in vars.iter().zip(solution) {
            shift[*v] = x;
        }
    }

    let mut scale = vec![1.0; slots.total];
    for slot in 0..slots.total {
        if let Some(&s) = fixed_scale.get(&class_of[slot]) {
            scale[slot] = s;
        }
    }

    Ok(ids
        .iter()
        .map(|id| {
            let off = slots.offset[id.as_str()];
            let w = slots.width[id.as_str()];
            (
                (*id).clone(),
                ChannelAffine::new(scale[off..off + w].to_vec(), shift[off..off + w].to_vec()),
            )
        })
        .collect())
}

/// Reduced row echelon solve over the columns `vars` (already in preferred
/// pivot order). Free columns are zero. `None` if the system is inconsistent.
fn gauss_jordan(vars: &[usize], eqs: &[&Equation]) -> Option<Vec<f64>> {
    let n = vars.len();
    let col: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut rows: Vec<Vec<f64>> = eqs
        .iter()
        .map(|eq| {
            let mut row = vec![0.0; n + 1];
            for (slot, coef) in &eq.terms {
                row[col[slot]] += coef;
            }
            row[n] = eq.rhs;
            row
        })
        .collect();
    let scale = rows.iter().map(|r| r[n].abs()).fold(1.0, f64::max);
    let eps = 1e-12;

    let mut pivot_of_col = vec![None; n];
    let mut next_row = 0;
    for c in 0..n {
        let best = (next_row..rows.len())
            .filter(|&r| rows[r][c].abs() > eps)
            .max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs()));
        let Some(r) = best else { continue };
        rows.swap(next_row, r);
        let p = rows[next_row][c];
        for v in rows[next_row].iter_mut() {
            *v /= p;
        }
        let pivot_row = rows[next_row].clone();
        for (ri, row) in rows.iter_mut().enumerate() {
            if ri != next_row && row[c].abs() > 0.0 {
                let f = row[c];
                for (x, pv) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        pivot_of_col[c] = Some(next_row);
        next_row += 1;
    }
    if rows[next_row..].iter().any(|r| r[n].abs() > 1e-10 * scale) {
        return None;
    }
    Some(
        pivot_of_col
            .iter()
            .map(|p| p.map_or(0.0, |r| rows[r][n]))
            .collect(),
    )
}
