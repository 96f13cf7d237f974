//! Knittability: which labels may sit next to each other.
//!
//! A [`TransitionMatrix`] lists the allowed left→right and top→bottom label
//! pairs. [`validate`] reports every disallowed adjacency in a grid, and
//! [`syntax_penalty`] is its differentiable relaxation over probability fields:
//! the expected number of disallowed adjacent pairs.

use std::fmt;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, LabelSpace, StitchGrid, COMPLETE_K, FRONT_K, GRID};
use crate::nn::{CustomOp, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Horizontal,
    Vertical,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Horizontal => "horizontal",
            Direction::Vertical => "vertical",
        })
    }
}

/// A disallowed adjacency. `(row, col)` is the left (horizontal) or top
/// (vertical) cell of the pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub direction: Direction,
    pub pair: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionMatrix {
    space: LabelSpace,
    k: usize,
    horiz: Vec<bool>,
    vert: Vec<bool>,
}

fn space_k(space: LabelSpace) -> usize {
    match space {
        LabelSpace::Front => FRONT_K,
        LabelSpace::Complete => COMPLETE_K,
    }
}

impl TransitionMatrix {
    /// Everything disallowed.
    pub fn empty(space: LabelSpace, k: usize) -> Self {
        TransitionMatrix {
            space,
            k,
            horiz: vec![false; k * k],
            vert: vec![false; k * k],
        }
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn allowed(&self, dir: Direction, a: usize, b: usize) -> bool {
        match dir {
            Direction::Horizontal => self.horiz[a * self.k + b],
            Direction::Vertical => self.vert[a * self.k + b],
        }
    }

    pub fn set(&mut self, dir: Direction, a: usize, b: usize, allowed: bool) {
        let k = self.k;
        match dir {
            Direction::Horizontal => self.horiz[a * k + b] = allowed,
            Direction::Vertical => self.vert[a * k + b] = allowed,
        }
    }

    pub fn allowed_count(&self) -> usize {
        self.horiz.iter().chain(&self.vert).filter(|&&a| a).count()
    }

    /// Element-wise OR of two matrices over the same space.
    pub fn union(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        if self.space != other.space || self.k != other.k {
            return Err(Error::SpaceMismatch("union of matrices over different spaces".into()));
        }
        let or = |a: &[bool], b: &[bool]| a.iter().zip(b).map(|(&x, &y)| x || y).collect();
        Ok(TransitionMatrix {
            space: self.space,
            k: self.k,
            horiz: or(&self.horiz, &other.horiz),
            vert: or(&self.vert, &other.vert),
        })
    }

    /// CSV lines `direction,a_name,b_name,allowed`; only allowed pairs are written.
    pub fn to_csv_string(&self, map: &LabelMap) -> Result<String> {
        self.check_map(map)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["direction", "a_name", "b_name", "allowed"])?;
        for dir in [Direction::Horizontal, Direction::Vertical] {
            for a in 0..self.k {
                for b in 0..self.k {
                    if self.allowed(dir, a, b) {
                        w.write_record([
                            dir.to_string().as_str(),
                            map.name(a).unwrap_or(""),
                            map.name(b).unwrap_or(""),
                            "1",
                        ])?;
                    }
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf8 csv"))
    }

    /// Parses the CSV form; pairs not listed stay disallowed.
    pub fn from_csv_str(text: &str, map: &LabelMap) -> Result<TransitionMatrix> {
        let mut t = TransitionMatrix::empty(map.space(), map.len());
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Config(format!("transition row needs 4 fields: {rec:?}")));
            }
            let dir = match &rec[0] {
                "horizontal" | "h" => Direction::Horizontal,
                "vertical" | "v" => Direction::Vertical,
                other => return Err(Error::Config(format!("unknown direction {other:?}"))),
            };
            let lookup = |name: &str| {
                map.index_of(name)
                    .ok_or_else(|| Error::SpaceMismatch(format!("label {name:?} not in {} map", map.space())))
            };
            let a = lookup(&rec[1])?;
            let b = lookup(&rec[2])?;
            let allowed = match &rec[3] {
                "1" => true,
                "0" => false,
                other => return Err(Error::Config(format!("allowed must be 0 or 1, got {other:?}"))),
            };
            t.set(dir, a, b, allowed);
        }
        Ok(t)
    }

    fn check_map(&self, map: &LabelMap) -> Result<()> {
        if map.space() != self.space || map.len() != self.k {
            return Err(Error::SpaceMismatch(format!(
                "matrix over {} ({} labels) vs {} map ({} labels)",
                self.space,
                self.k,
                map.space(),
                map.len()
            )));
        }
        Ok(())
    }
}

/// Allows exactly the adjacent pairs observed in `grids`.
pub fn build_transitions(grids: &[StitchGrid]) -> Result<TransitionMatrix> {
    let first = grids
        .first()
        .ok_or_else(|| Error::SpaceMismatch("cannot build transitions from zero grids".into()))?;
    let space = first.space();
    let mut t = TransitionMatrix::empty(space, space_k(space));
    for g in grids {
        if g.space() != space {
            return Err(Error::SpaceMismatch(format!(
                "corpus mixes {} and {} grids",
                space,
                g.space()
            )));
        }
        for r in 0..GRID {
            for c in 0..GRID {
                let a = g.get(r, c);
                if c + 1 < GRID {
                    t.set(Direction::Horizontal, a, g.get(r, c + 1), true);
                }
                if r + 1 < GRID {
                    t.set(Direction::Vertical, a, g.get(r + 1, c), true);
                }
            }
        }
    }
    Ok(t)
}

/// All disallowed adjacencies in row-major order (horizontal before vertical
/// for the same anchor cell).
pub fn validate(grid: &StitchGrid, t: &TransitionMatrix) -> Result<Vec<Violation>> {
    if grid.space() != t.space() {
        return Err(Error::SpaceMismatch(format!(
            "grid is {} but matrix is {}",
            grid.space(),
            t.space()
        )));
    }
    let mut out = Vec::new();
    for r in 0..GRID {
        for c in 0..GRID {
            let a = grid.get(r, c);
            if c + 1 < GRID {
                let b = grid.get(r, c + 1);
                if !t.allowed(Direction::Horizontal, a, b) {
                    out.push(Violation {
                        row: r,
                        col: c,
                        direction: Direction::Horizontal,
                        pair: (a, b),
                    });
                }
            }
            if r + 1 < GRID {
                let b = grid.get(r + 1, c);
                if !t.allowed(Direction::Vertical, a, b) {
                    out.push(Violation {
                        row: r,
                        col: c,
                        direction: Direction::Vertical,
                        pair: (a, b),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Number of adjacent pairs in an `h×w` field.
pub fn adjacent_pairs(h: usize, w: usize) -> usize {
    2 * h * w - h - w
}

/// Tolerance on per-cell probability sums.
pub const NORMALIZATION_TOL: f64 = 1e-5;

pub(crate) fn check_normalized<T: Scalar>(probs: &Tensor<T>) -> Result<()> {
    let (n, k, h, w) = probs.dims4();
    let hw = h * w;
    for b in 0..n {
        for p in 0..hw {
            let s: f64 = (0..k).map(|c| probs.data()[(b * k + c) * hw + p].f64()).sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Normalization(format!(
                    "cell {p} of sample {b} sums to {s}"
                )));
            }
        }
    }
    Ok(())
}

fn as_batch<T: Scalar>(probs: &Tensor<T>) -> Result<Tensor<T>> {
    match probs.shape().len() {
        4 => Ok(probs.clone()),
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(probs.shape());
            probs.clone().reshape(&s)
        }
        _ => Err(Error::Shape(format!("expected [K,H,W] or [N,K,H,W], got {:?}", probs.shape()))),
    }
}

/// Expected disallowed mass `Σ_(i,j adjacent) Σ_(a,b disallowed) pᵢ(a)·pⱼ(b)`,
/// summed over the batch. `probs` is `[K,H,W]` or `[N,K,H,W]`.
pub fn syntax_penalty<T: Scalar>(probs: &Tensor<T>, t: &TransitionMatrix) -> Result<T> {
    let probs = as_batch(probs)?;
    check_penalty_input(&probs, t)?;
    Ok(penalty_value(&probs, t))
}

/// Gradient of [`syntax_penalty`] with respect to `probs` (same shape as given).
pub fn syntax_penalty_grad<T: Scalar>(probs: &Tensor<T>, t: &TransitionMatrix) -> Result<Tensor<T>> {
    let batch = as_batch(probs)?;
    check_penalty_input(&batch, t)?;
    penalty_grad(&batch, t).reshape(probs.shape())
}

fn check_penalty_input<T: Scalar>(probs: &Tensor<T>, t: &TransitionMatrix) -> Result<()> {
    let k = probs.shape()[1];
    if k != t.k() {
        return Err(Error::SpaceMismatch(format!("{k}-class field vs {}-label matrix", t.k())));
    }
    check_normalized(probs)
}

/// Visits each adjacent pair as `(dir, anchor offset, neighbor offset)` within one sample.
fn for_each_pair(h: usize, w: usize, mut f: impl FnMut(Direction, usize, usize)) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                f(Direction::Horizontal, i, i + 1);
            }
            if r + 1 < h {
                f(Direction::Vertical, i, i + w);
            }
        }
    }
}

fn disallowed_dense<T: Scalar>(t: &TransitionMatrix, dir: Direction) -> Vec<T> {
    let k = t.k();
    (0..k * k)
        .map(|i| if t.allowed(dir, i / k, i % k) { T::zero() } else { T::one() })
        .collect()
}

fn penalty_value<T: Scalar>(probs: &Tensor<T>, t: &TransitionMatrix) -> T {
    let (n, k, h, w) = probs.dims4();
    let hw = h * w;
    let dh = disallowed_dense::<T>(t, Direction::Horizontal);
    let dv = disallowed_dense::<T>(t, Direction::Vertical);
    let pd = probs.data();
    let mut total = T::zero();
    for b in 0..n {
        let p = |cell: usize, c: usize| pd[(b * k + c) * hw + cell];
        for_each_pair(h, w, |dir, i, j| {
            let d = if dir == Direction::Horizontal { &dh } else { &dv };
            for a in 0..k {
                let pa = p(i, a);
                if pa == T::zero() {
                    continue;
                }
                let mut s = T::zero();
                for bb in 0..k {
                    s += d[a * k + bb] * p(j, bb);
                }
                total += pa * s;
            }
        });
    }
    total
}

fn penalty_grad<T: Scalar>(probs: &Tensor<T>, t: &TransitionMatrix) -> Tensor<T> {
    let (n, k, h, w) = probs.dims4();
    let hw = h * w;
    let dh = disallowed_dense::<T>(t, Direction::Horizontal);
    let dv = disallowed_dense::<T>(t, Direction::Vertical);
    let pd = probs.data();
    let mut grad = Tensor::zeros(probs.shape());
    let gd = grad.data_mut();
    for b in 0..n {
        let base = b * k * hw;
        for_each_pair(h, w, |dir, i, j| {
            let d = if dir == Direction::Horizontal { &dh } else { &dv };
            for a in 0..k {
                for bb in 0..k {
                    let m = d[a * k + bb];
                    if m == T::zero() {
                        continue;
                    }
                    gd[base + a * hw + i] += m * pd[base + bb * hw + j];
                    gd[base + bb * hw + j] += m * pd[base + a * hw + i];
                }
            }
        });
    }
    grad
}

struct PenaltyOp {
    matrix: TransitionMatrix,
    scale: f64,
}

impl<T: Scalar> CustomOp<T> for PenaltyOp {
    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad.item() * T::of(self.scale);
        vec![Some(penalty_grad(inputs[0], &self.matrix).map(|v| v * s))]
    }
}

/// Records `scale · syntax_penalty(probs)` on the graph.
pub fn syntax_penalty_node<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    t: &TransitionMatrix,
    scale: f64,
) -> Result<Var> {
    let value = syntax_penalty(g.value(probs), t)? * T::of(scale);
    Ok(g.custom(
        &[probs],
        Tensor::scalar(value),
        Box::new(PenaltyOp {
            matrix: t.clone(),
            scale,
        }),
    ))
}

/// One-hot `[1, K, 20, 20]` field of a grid.
pub fn one_hot<T: Scalar>(grid: &StitchGrid, k: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[1, k, GRID, GRID]);
    for (i, label) in grid.labels().enumerate() {
        t.data_mut()[label * GRID * GRID + i] = T::one();
    }
    t
}
