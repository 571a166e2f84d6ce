//! Sylvester–Hadamard codebooks and node assignment.
//!
//! Codes are rows of the order-N Sylvester matrix: H(1) = [+1] and
//! H(2N) = [[H, H], [H, -H]]. Distinct rows have dot product exactly zero,
//! which is what lets superimposed transmissions be pulled apart again.
//! Rows are stored bit-packed (set bit = +1 chip) so pairwise checks reduce
//! to XOR + popcount.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One spreading code: a row of a Sylvester–Hadamard matrix, chips in {+1, -1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeVector {
    words: Vec<u64>,
    len: usize,
}

impl CodeVector {
    /// Build from explicit chip values. Every entry must be +1 or -1.
    pub fn from_chips(chips: &[i8]) -> Result<Self> {
        let mut words = vec![0u64; chips.len().div_ceil(64)];
        for (i, &c) in chips.iter().enumerate() {
            match c {
                1 => words[i / 64] |= 1 << (i % 64),
                -1 => {}
                other => {
                    return Err(Error::Config(format!(
                        "chip {i} is {other}, expected +1 or -1"
                    )))
                }
            }
        }
        Ok(CodeVector { words, len: chips.len() })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Chip value at `i`: +1 or -1.
    #[inline]
    pub fn chip(&self, i: usize) -> i8 {
        debug_assert!(i < self.len);
        if self.words[i / 64] >> (i % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Materialize the chips as a plain vector.
    pub fn chips(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.chip(i)).collect()
    }

    /// Exact integer dot product. Equal chips contribute +1, differing -2
    /// relative to that, hence len - 2 * popcount(xor).
    pub fn dot(&self, other: &CodeVector) -> i64 {
        assert_eq!(self.len, other.len, "dot of unequal-length codes");
        let mut mismatches = 0u64;
        for (a, b) in self.words.iter().zip(&other.words) {
            mismatches += (a ^ b).count_ones() as u64;
        }
        self.len as i64 - 2 * mismatches as i64
    }

    /// Sum of all chips; zero for every Sylvester row except the all-ones one.
    pub fn chip_sum(&self) -> i64 {
        let ones: u64 = self.words.iter().map(|w| w.count_ones() as u64).sum();
        2 * ones as i64 - self.len as i64
    }

    /// Copy with one chip negated. Only used to demonstrate that tampering
    /// is caught by the orthogonality check.
    pub fn with_chip_flipped(&self, i: usize) -> CodeVector {
        assert!(i < self.len);
        let mut out = self.clone();
        out.words[i / 64] ^= 1 << (i % 64);
        out
    }

    fn all_ones(len: usize) -> CodeVector {
        let mut words = vec![u64::MAX; len.div_ceil(64)];
        mask_tail(&mut words, len);
        CodeVector { words, len }
    }
}

fn mask_tail(words: &mut [u64], len: usize) {
    let rem = len % 64;
    if rem != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << rem) - 1;
        }
    }
}

/// All rows of the Sylvester–Hadamard matrix of the given order, built by
/// the doubling construction. The order must be a power of two.
pub fn sylvester_hadamard(order: usize) -> Result<Vec<CodeVector>> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::InvalidOrder(order));
    }
    let mut rows = vec![CodeVector::all_ones(1)];
    let mut len = 1;
    while len < order {
        let mut next = Vec::with_capacity(2 * len);
        for row in &rows {
            next.push(concat(row, row, false));
        }
        for row in &rows {
            next.push(concat(row, row, true));
        }
        rows = next;
        len *= 2;
    }
    Ok(rows)
}

/// Append `b` (optionally negated) to `a`. Lengths here are always powers of
/// two, so blocks either share one word or align on word boundaries.
fn concat(a: &CodeVector, b: &CodeVector, negate_b: bool) -> CodeVector {
    let len = a.len + b.len;
    let mut words;
    if a.len < 64 {
        let bw = if negate_b { !b.words[0] } else { b.words[0] };
        words = vec![a.words[0] | (bw << a.len)];
        mask_tail(&mut words, len);
    } else {
        words = a.words.clone();
        words.extend(b.words.iter().map(|w| if negate_b { !w } else { *w }));
        mask_tail(&mut words, len);
    }
    CodeVector { words, len }
}

/// Smallest power-of-two order that can carry `n_nodes` codes, reserving the
/// all-ones row when `skip_dc_row` is set.
pub fn smallest_order(n_nodes: usize, skip_dc_row: bool) -> Result<usize> {
    if n_nodes == 0 {
        return Err(Error::Config("node count must be positive".into()));
    }
    let needed = if skip_dc_row { n_nodes + 1 } else { n_nodes };
    Ok(needed.next_power_of_two())
}

/// A generated codebook: the matrix order, the reserve-DC-row policy, and
/// the row index assigned to each node.
#[derive(Clone, Debug)]
pub struct CodeBook {
    order: usize,
    skip_dc_row: bool,
    assignment: Vec<usize>,
    rows: Vec<CodeVector>,
}

/// On-disk form: rows are regenerated, never stored.
#[derive(Serialize, Deserialize)]
struct CodeBookFile {
    order: usize,
    skip_dc_row: bool,
    assignment: Vec<usize>,
}

impl CodeBook {
    /// Assign codes to `n_nodes` nodes at the smallest adequate order.
    ///
    /// With `skip_dc_row` the all-ones row 0 is left unused and node i gets
    /// row i + 1; every assigned code is then zero-sum, so a constant offset
    /// on the wire correlates to exactly zero against any of them. Without
    /// it node i gets row i.
    pub fn assign(n_nodes: usize, skip_dc_row: bool) -> Result<CodeBook> {
        let order = smallest_order(n_nodes, skip_dc_row)?;
        CodeBook::assign_at_order(n_nodes, skip_dc_row, order)
    }

    /// Assign codes at an explicit order (must still fit).
    pub fn assign_at_order(n_nodes: usize, skip_dc_row: bool, order: usize) -> Result<CodeBook> {
        let rows = sylvester_hadamard(order)?;
        let capacity = if skip_dc_row { order - 1 } else { order };
        if n_nodes == 0 || n_nodes > capacity {
            return Err(Error::Capacity { requested: n_nodes, capacity, order });
        }
        let base = usize::from(skip_dc_row);
        let assignment = (0..n_nodes).map(|i| base + i).collect();
        Ok(CodeBook { order, skip_dc_row, assignment, rows })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn skip_dc_row(&self) -> bool {
        self.skip_dc_row
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    /// Row indices, position i holding node i's row.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// The code transmitted by node `node`.
    pub fn code_for(&self, node: usize) -> &CodeVector {
        &self.rows[self.assignment[node]]
    }

    /// Row `r` of the underlying matrix (assigned or not).
    pub fn row(&self, r: usize) -> &CodeVector {
        &self.rows[r]
    }

    /// Serialize as `{order, skip_dc_row, assignment}`.
    pub fn to_json(&self) -> String {
        let file = CodeBookFile {
            order: self.order,
            skip_dc_row: self.skip_dc_row,
            assignment: self.assignment.clone(),
        };
        serde_json::to_string_pretty(&file).expect("codebook serialization cannot fail")
    }

    /// Rebuild from the serialized form, regenerating rows and re-checking
    /// both the assignment and orthogonality, so a tampered file is refused.
    pub fn from_json(text: &str) -> Result<CodeBook> {
        let file: CodeBookFile = serde_json::from_str(text)?;
        let rows = sylvester_hadamard(file.order)?;
        let mut seen = vec![false; file.order];
        for &r in &file.assignment {
            if r >= file.order {
                return Err(Error::Config(format!(
                    "assignment references row {r}, order is {}",
                    file.order
                )));
            }
            if file.skip_dc_row && r == 0 {
                return Err(Error::Config(
                    "assignment uses row 0 but skip_dc_row is set".into(),
                ));
            }
            if seen[r] {
                return Err(Error::Config(format!("row {r} assigned twice")));
            }
            seen[r] = true;
        }
        if file.assignment.is_empty() {
            return Err(Error::Config("assignment is empty".into()));
        }
        let book = CodeBook {
            order: file.order,
            skip_dc_row: file.skip_dc_row,
            assignment: file.assignment,
            rows,
        };
        let report = verify_orthogonality(&book);
        if !report.is_orthogonal() {
            return Err(Error::Config(format!(
                "codebook failed orthogonality check: max cross-dot {}",
                report.max_cross_dot
            )));
        }
        Ok(book)
    }
}

/// Result of an exhaustive pairwise check over the assigned rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrthogonalityReport {
    /// Largest |dot| between two distinct assigned rows. Zero for intact books.
    pub max_cross_dot: i64,
    /// Smallest self dot product; equals the order for intact books.
    pub min_self_dot: i64,
    /// Largest |sum of chips| over assigned rows. Zero when the DC row is skipped.
    pub max_abs_chip_sum: i64,
}

impl OrthogonalityReport {
    pub fn is_orthogonal(&self) -> bool {
        self.max_cross_dot == 0
    }
}

/// Pairwise-verify a set of rows under a given assignment.
pub fn verify_rows(rows: &[CodeVector], assignment: &[usize]) -> OrthogonalityReport {
    #[cfg(feature = "parallel")]
    {
        let folded = assignment
            .par_iter()
            .enumerate()
            .map(|(i, &ri)| pair_stats(rows, assignment, i, ri))
            .reduce(
                || (0i64, i64::MAX, 0i64),
                |a, b| (a.0.max(b.0), a.1.min(b.1), a.2.max(b.2)),
            );
        report_from(folded)
    }
    #[cfg(not(feature = "parallel"))]
    {
        verify_rows_seq_inner(rows, assignment)
    }
}

/// Sequential variant of [`verify_rows`]; same result on the same inputs.
pub fn verify_rows_seq(rows: &[CodeVector], assignment: &[usize]) -> OrthogonalityReport {
    verify_rows_seq_inner(rows, assignment)
}

fn verify_rows_seq_inner(rows: &[CodeVector], assignment: &[usize]) -> OrthogonalityReport {
    let folded = assignment
        .iter()
        .enumerate()
        .map(|(i, &ri)| pair_stats(rows, assignment, i, ri))
        .fold(
            (0i64, i64::MAX, 0i64),
            |a, b| (a.0.max(b.0), a.1.min(b.1), a.2.max(b.2)),
        );
    report_from(folded)
}

fn pair_stats(
    rows: &[CodeVector],
    assignment: &[usize],
    i: usize,
    ri: usize,
) -> (i64, i64, i64) {
    let row = &rows[ri];
    let mut max_cross = 0i64;
    for &rj in &assignment[i + 1..] {
        max_cross = max_cross.max(row.dot(&rows[rj]).abs());
    }
    (max_cross, row.dot(row), row.chip_sum().abs())
}

fn report_from((max_cross_dot, min_self, max_sum): (i64, i64, i64)) -> OrthogonalityReport {
    OrthogonalityReport {
        max_cross_dot,
        min_self_dot: if min_self == i64::MAX { 0 } else { min_self },
        max_abs_chip_sum: max_sum,
    }
}

/// Verify all assigned rows of a codebook.
pub fn verify_orthogonality(book: &CodeBook) -> OrthogonalityReport {
    verify_rows(&book.rows, &book.assignment)
}

/// Sequential variant of [`verify_orthogonality`].
pub fn verify_orthogonality_seq(book: &CodeBook) -> OrthogonalityReport {
    verify_rows_seq(&book.rows, &book.assignment)
}
