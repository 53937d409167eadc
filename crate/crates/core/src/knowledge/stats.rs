use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::table::{canonical_decimal, Table, Value};

/// Share of non-empty cells that must be numeric for a column to count as numeric.
pub const NUMERIC_SHARE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub min: Decimal,
    pub max: Decimal,
    pub mean: Decimal,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatBlock {
    pub columns: Vec<ColumnStats>,
}

impl StatBlock {
    pub fn get(&self, column: &str) -> Option<&ColumnStats> {
        let key = crate::table::column_key(column);
        self.columns
            .iter()
            .find(|c| crate::table::column_key(&c.column) == key)
    }

    /// One line per column: `Price: min 1, max 9, mean 5 over 3 values.`
    pub fn render(&self) -> String {
        if self.columns.is_empty() {
            return "No numeric columns to summarize.".to_string();
        }
        self.columns
            .iter()
            .map(|c| {
                format!(
                    "{}: min {}, max {}, mean {} over {} value{}.",
                    c.column,
                    canonical_decimal(c.min),
                    canonical_decimal(c.max),
                    canonical_decimal(c.mean),
                    c.count,
                    if c.count == 1 { "" } else { "s" }
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// True when at least one cell is a number and numbers make up at least
/// [`NUMERIC_SHARE`] of the non-empty cells.
pub fn is_numeric_column(table: &Table, index: usize) -> bool {
    let (mut numbers, mut non_empty) = (0usize, 0usize);
    for v in table.column_values(index) {
        match v {
            Value::Empty => {}
            Value::Number(_) => {
                numbers += 1;
                non_empty += 1;
            }
            Value::Text(_) => non_empty += 1,
        }
    }
    numbers > 0 && numbers as f64 >= NUMERIC_SHARE * non_empty as f64
}

/// Min, max and mean over the numeric cells of every numeric column.
/// Empty and text cells are ignored.
pub fn compute_statistics(table: &Table) -> StatBlock {
    let columns = (0..table.column_count())
        .filter(|&i| is_numeric_column(table, i))
        .filter_map(|i| {
            let values: Vec<Decimal> = table.column_values(i).filter_map(Value::as_number).collect();
            column_stats(&table.columns()[i], &values)
        })
        .collect();
    StatBlock { columns }
}

fn column_stats(name: &str, values: &[Decimal]) -> Option<ColumnStats> {
    let (&first, rest) = values.split_first()?;
    let (mut min, mut max) = (first, first);
    for &v in rest {
        min = min.min(v);
        max = max.max(v);
    }
    let n = Decimal::from(values.len());
    let mean = match values.iter().try_fold(Decimal::ZERO, |acc, v| acc.checked_add(*v)) {
        Some(sum) => sum / n,
        None => values.iter().map(|v| *v / n).sum(),
    };
    Some(ColumnStats {
        column: name.to_string(),
        min,
        max,
        mean: mean.clamp(min, max).normalize(),
        count: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: &[&[&str]]) -> Table {
        Table::from_strings(cols, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn simple_column() {
        let s = compute_statistics(&table(&["V"], &[&["1"], &["2"], &["3"]]));
        let c = s.get("v").unwrap();
        assert_eq!((c.min, c.max, c.mean, c.count), (1.into(), 3.into(), 2.into(), 3));
    }

    #[test]
    fn single_value_and_empty_columns() {
        let s = compute_statistics(&table(&["V", "E", "T"], &[&["7", "", "x"], &["", "", "y"]]));
        let c = s.get("V").unwrap();
        assert_eq!((c.min, c.max, c.mean), (7.into(), 7.into(), 7.into()));
        assert!(s.get("E").is_none());
        assert!(s.get("T").is_none());
        assert_eq!(s.columns.len(), 1);
    }

    #[test]
    fn render_template() {
        let s = compute_statistics(&table(&["Price"], &[&["1"], &["9"], &["5"]]));
        assert_eq!(s.render(), "Price: min 1, max 9, mean 5 over 3 values.");
        assert_eq!(StatBlock::default().render(), "No numeric columns to summarize.");
    }

    #[test]
    fn repeating_thirds_stay_within_bounds() {
        let s = compute_statistics(&table(&["V"], &[&["0.1"], &["0.1"], &["0.1"]]));
        let c = s.get("V").unwrap();
        assert_eq!(c.mean, "0.1".parse().unwrap());
        let s = compute_statistics(&table(&["V"], &[&["1"], &["1"], &["2"]]));
        let c = s.get("V").unwrap();
        assert!(c.min <= c.mean && c.mean <= c.max);
    }

    #[test]
    fn mostly_numeric_columns_qualify() {
        let rows: Vec<Vec<&str>> = vec![vec!["1"], vec!["2"], vec!["3"], vec!["4"], vec!["n/a"]];
        let t = Table::from_strings(&["V"], &rows).unwrap();
        let c = compute_statistics(&t);
        assert_eq!(c.get("V").unwrap().count, 4);
        let rows: Vec<Vec<&str>> = vec![vec!["1"], vec!["x"], vec!["y"]];
        let t = Table::from_strings(&["V"], &rows).unwrap();
        assert!(compute_statistics(&t).columns.is_empty());
    }
}
