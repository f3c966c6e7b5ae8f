//! Artifact writers. Every file is written to a temporary sibling first and
//! renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mfvi_core::ProductMeasure;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.root.join(name);
        let mut tmp = NamedTempFile::new_in(&self.root)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| CliError::Output(e.to_string()))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_csv(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    /// Wall-clock metadata lives here and nowhere else, so that every other
    /// artifact is reproducible byte for byte.
    pub fn write_run_meta(&self, command: &str) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Meta<'a> {
            command: &'a str,
            version: &'a str,
            unix_time: u64,
        }
        let unix_time = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.write_json(
            "run_meta.json",
            &Meta {
                command,
                version: env!("CARGO_PKG_VERSION"),
                unix_time,
            },
        )
    }
}

/// A CSV table held as formatted strings.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip representation, stable across runs and platforms.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn nums(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|&x| num(x))
}

/// `prefix_1, …, prefix_d`.
pub fn indexed(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

/// Marginal densities at cell centers: `x, rho_1, …, rho_d` when all
/// coordinates share a grid, otherwise `x_i, rho_i` pairs padded with empty
/// cells.
pub fn marginals_table(nu: &ProductMeasure) -> Table {
    let grids = nu.grids();
    let d = nu.dim();
    if grids.windows(2).all(|w| w[0] == w[1]) {
        let mut t = Table::new(std::iter::once("x".to_string()).chain(indexed("rho", d)).collect());
        for (j, x) in grids[0].centers().into_iter().enumerate() {
            let mut row = vec![num(x)];
            row.extend(nu.marginals().iter().map(|m| num(m.density()[j])));
            t.push(row);
        }
        return t;
    }
    let header = (1..=d)
        .flat_map(|i| [format!("x_{i}"), format!("rho_{i}")])
        .collect();
    let mut t = Table::new(header);
    let rows = grids.iter().map(|g| g.len()).max().unwrap_or(0);
    for j in 0..rows {
        let mut row = Vec::with_capacity(2 * d);
        for m in nu.marginals() {
            if j < m.grid().len() {
                row.push(num(m.grid().center(j)));
                row.push(num(m.density()[j]));
            } else {
                row.extend([String::new(), String::new()]);
            }
        }
        t.push(row);
    }
    t
}

/// File-name form of a time: `20`, `0.5`, `1.25`.
pub fn time_label(t: f64) -> String {
    num(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfvi_core::Grid1D;

    #[test]
    fn shared_grid_table_has_one_x_column() {
        let g = Grid1D::new(-1.0, 1.0, 8).unwrap();
        let nu = ProductMeasure::gaussian(&[g, g], &[(0.0, 1.0), (0.0, 0.5)]).unwrap();
        let t = marginals_table(&nu);
        assert_eq!(t.header, ["x", "rho_1", "rho_2"]);
        assert_eq!(t.rows.len(), 8);
    }

    #[test]
    fn mixed_grids_pad_short_columns() {
        let a = Grid1D::new(-1.0, 1.0, 8).unwrap();
        let b = Grid1D::new(-1.0, 1.0, 10).unwrap();
        let nu = ProductMeasure::gaussian(&[a, b], &[(0.0, 1.0), (0.0, 0.5)]).unwrap();
        let t = marginals_table(&nu);
        assert_eq!(t.header, ["x_1", "rho_1", "x_2", "rho_2"]);
        assert_eq!(t.rows.len(), 10);
        assert_eq!(t.rows[9][0], "");
    }

    #[test]
    fn files_land_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path()).unwrap();
        out.write_bytes("a.txt", b"one").unwrap();
        out.write_bytes("a.txt", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn time_labels_are_short() {
        assert_eq!(time_label(20.0), "20");
        assert_eq!(time_label(0.5), "0.5");
    }
}
