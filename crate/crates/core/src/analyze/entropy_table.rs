use crate::error::{Error, Result};
use crate::model::BlockTrace;

/// Inclusive, 1-based block range reported as one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGroup {
    pub first: usize,
    pub last: usize,
}

impl BlockGroup {
    pub fn label(&self) -> String {
        if self.first == self.last {
            self.first.to_string()
        } else {
            format!("{}-{}", self.first, self.last)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrouping {
    pub n_blocks: usize,
    pub groups: Vec<BlockGroup>,
}

impl BlockGrouping {
    /// Everything before the last `singles` blocks averaged into one column,
    /// then one column per remaining block.
    pub fn trailing_singles(n_blocks: usize, singles: usize) -> Self {
        let singles = singles.min(n_blocks);
        let mut groups = Vec::new();
        if n_blocks > singles {
            groups.push(BlockGroup {
                first: 1,
                last: n_blocks - singles,
            });
        }
        groups.extend((n_blocks - singles + 1..=n_blocks).map(|b| BlockGroup { first: b, last: b }));
        BlockGrouping { n_blocks, groups }
    }

    /// The 32-block layout: 1-20, 21-25, then 26..32 singly.
    pub fn reference_layout() -> Self {
        let mut groups = vec![BlockGroup { first: 1, last: 20 }, BlockGroup { first: 21, last: 25 }];
        groups.extend((26..=32).map(|b| BlockGroup { first: b, last: b }));
        BlockGrouping { n_blocks: 32, groups }
    }

    /// Toy default: all but the last three blocks grouped.
    pub fn toy(n_blocks: usize) -> Self {
        Self::trailing_singles(n_blocks, 3)
    }
}

/// The traces of one eval record, one per block.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordTraces {
    pub id: String,
    pub traces: Vec<BlockTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub label: String,
    pub raw_diff: f64,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTable {
    /// Mean `H_E - H_N` per block, in block order.
    pub per_block: Vec<f64>,
    pub rows: Vec<EntropyRow>,
    /// Set when the penultimate raw difference is zero.
    pub normalization_undefined: bool,
}

/// Penultimate-block normalized entropy differences (explanation model minus
/// label-only model). Group means are taken over raw per-block diffs.
pub fn entropy_table(
    traces_e: &[RecordTraces],
    traces_n: &[RecordTraces],
    grouping: &BlockGrouping,
) -> Result<EntropyTable> {
    if traces_e.len() != traces_n.len() {
        return Err(Error::invalid(format!(
            "{} explanation-model records vs {} label-only records",
            traces_e.len(),
            traces_n.len()
        )));
    }
    let mismatched: Vec<String> = traces_e
        .iter()
        .zip(traces_n)
        .filter(|(e, n)| e.id != n.id)
        .map(|(e, n)| format!("{}/{}", e.id, n.id))
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::IdMismatch(mismatched));
    }
    let entropies = |rows: &[RecordTraces]| -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| {
                if r.traces.len() != grouping.n_blocks {
                    return Err(Error::Shape(format!(
                        "record {} has {} block traces, expected {}",
                        r.id,
                        r.traces.len(),
                        grouping.n_blocks
                    )));
                }
                Ok(r.traces.iter().map(|t| t.entropy).collect())
            })
            .collect()
    };
    let he = entropies(traces_e)?;
    let hn = entropies(traces_n)?;
    let per_record: Vec<Vec<f64>> = he
        .iter()
        .zip(&hn)
        .map(|(e, n)| e.iter().zip(n).map(|(a, b)| a - b).collect())
        .collect();
    entropy_table_from_diffs(&per_record, grouping)
}

/// As [`entropy_table`], from per-record per-block differences `H_E - H_N`.
pub fn entropy_table_from_diffs(per_record: &[Vec<f64>], grouping: &BlockGrouping) -> Result<EntropyTable> {
    if per_record.is_empty() {
        return Err(Error::Empty("trace set"));
    }
    let nb = grouping.n_blocks;
    if nb < 2 {
        return Err(Error::invalid("entropy table needs at least two blocks"));
    }
    let covered: usize = grouping.groups.iter().map(|g| g.last + 1 - g.first).sum();
    let contiguous = grouping.groups.first().map(|g| g.first) == Some(1)
        && grouping.groups.last().map(|g| g.last) == Some(nb)
        && grouping.groups.windows(2).all(|w| w[1].first == w[0].last + 1)
        && grouping.groups.iter().all(|g| g.first <= g.last);
    if !contiguous || covered != nb {
        return Err(Error::invalid("block grouping must tile 1..=n_blocks in order"));
    }
    let n = per_record.len() as f64;
    let mut per_block = vec![0.0; nb];
    for row in per_record {
        if row.len() != nb {
            return Err(Error::Shape(format!("diff row of {} blocks, expected {nb}", row.len())));
        }
        for (acc, d) in per_block.iter_mut().zip(row) {
            *acc += d;
        }
    }
    per_block.iter_mut().for_each(|v| *v /= n);

    let penultimate = per_block[nb - 2];
    let undefined = penultimate == 0.0;
    let rows = grouping
        .groups
        .iter()
        .map(|g| {
            let span = &per_block[g.first - 1..g.last];
            let raw_diff = span.iter().sum::<f64>() / span.len() as f64;
            EntropyRow {
                label: g.label(),
                raw_diff,
                normalized: (!undefined).then(|| raw_diff / penultimate),
            }
        })
        .collect();
    Ok(EntropyTable {
        per_block,
        rows,
        normalization_undefined: undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn toy_grouping_shapes() {
        let g = BlockGrouping::toy(4);
        let labels: Vec<String> = g.groups.iter().map(BlockGroup::label).collect();
        assert_eq!(labels, ["1", "2", "3", "4"]);
        let g = BlockGrouping::toy(6);
        let labels: Vec<String> = g.groups.iter().map(BlockGroup::label).collect();
        assert_eq!(labels, ["1-3", "4", "5", "6"]);
        let labels: Vec<String> = BlockGrouping::reference_layout()
            .groups
            .iter()
            .map(BlockGroup::label)
            .collect();
        assert_eq!(labels[..3], ["1-20", "21-25", "26"]);
        assert_eq!(labels.len(), 9);
    }

    #[test]
    fn self_difference_is_flagged() {
        let t = entropy_table_from_diffs(&vec![vec![0.0; 4]; 3], &BlockGrouping::toy(4)).unwrap();
        assert!(t.normalization_undefined);
        assert!(t.rows.iter().all(|r| r.raw_diff == 0.0 && r.normalized.is_none()));
    }

    #[test]
    fn arithmetic_case() {
        let t = entropy_table_from_diffs(&[vec![0.05, 0.1, 0.2, -0.01]], &BlockGrouping::toy(4)).unwrap();
        let norm: Vec<f64> = t.rows.iter().map(|r| r.normalized.unwrap()).collect();
        assert_eq!(norm[2], 1.0);
        assert!((norm[3] + 0.05).abs() < 1e-12);
    }

    #[test]
    fn groups_average_raw_diffs() {
        let t =
            entropy_table_from_diffs(&[vec![1.0, 3.0, 2.0, 4.0, 8.0]], &BlockGrouping::trailing_singles(5, 3)).unwrap();
        assert_eq!(t.rows[0].raw_diff, 2.0);
        assert_eq!(t.rows[0].normalized, Some(0.5));
    }

    proptest! {
        #[test]
        fn normalization_is_scale_invariant(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..6),
            c in 0.01f64..100.0,
        ) {
            let g = BlockGrouping::toy(5);
            let a = entropy_table_from_diffs(&rows, &g).unwrap();
            prop_assume!(!a.normalization_undefined && a.per_block[3].abs() > 1e-6);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
            let b = entropy_table_from_diffs(&scaled, &g).unwrap();
            for (x, y) in a.rows.iter().zip(&b.rows) {
                let (x, y) = (x.normalized.unwrap(), y.normalized.unwrap());
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
            let pen = a.rows.iter().find(|r| r.label == "4").unwrap();
            prop_assert_eq!(pen.normalized, Some(1.0));
        }
    }
}
