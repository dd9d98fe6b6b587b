//! Flat-file formats: field snapshots, run directories and report rendering.
//!
//! Snapshot layout:
//!
//! ```text
//! skt-field v1, d=2, N=4, h=0.25
//! <u row 0> ... <u row N-1>
//! <v row 0> ... <v row N-1>
//! ```
//!
//! Values are written with 17 significant digits, so parsing restores
//! every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adjoint::AdjointRun;
use crate::config::{parse_config_str, RunConfig};
use crate::error::{Result, SktError};
use crate::forward::{Diagnostics, Trajectory, DIAGNOSTICS_HEADER};
use crate::grid::{FieldPair, Grid};

pub const SNAPSHOT_MAGIC: &str = "skt-field v1";
pub const CONFIG_FILE: &str = "config.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const ADJOINT_FILE: &str = "adjoint.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const INDEX_FILE: &str = "index.csv";

pub fn format_snapshot(f: &FieldPair) -> String {
    let g = &f.grid;
    let mut out = format!(
        "{SNAPSHOT_MAGIC}, d={}, N={}, h={}\n",
        g.dim(),
        g.n(),
        g.h()
    );
    let row_len = g.n();
    for block in [&f.u, &f.v] {
        for row in block.chunks(row_len) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

fn header_field<'a>(part: &'a str, key: &str) -> Result<&'a str> {
    part.trim()
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| {
            SktError::Format(format!(
                "expected `{key}=` in snapshot header, found `{}`",
                part.trim()
            ))
        })
}

pub fn parse_snapshot(text: &str) -> Result<FieldPair> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SktError::Format("empty snapshot".to_string()))?;
    let parts: Vec<&str> = header.split(',').collect();
    if parts.len() != 4 || parts[0].trim() != SNAPSHOT_MAGIC {
        return Err(SktError::Format(format!("bad snapshot header `{header}`")));
    }
    let bad = |what: &str| SktError::Format(format!("bad {what} in snapshot header `{header}`"));
    let dim: usize = header_field(parts[1], "d")?.parse().map_err(|_| bad("d"))?;
    let n: usize = header_field(parts[2], "N")?.parse().map_err(|_| bad("N"))?;
    let h: f64 = header_field(parts[3], "h")?.parse().map_err(|_| bad("h"))?;
    let grid = Grid::with_spacing(dim, n, h)?;
    let values: Vec<f64> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| SktError::Format(format!("bad value `{tok}`")))
        })
        .collect::<Result<_>>()?;
    let len = grid.len();
    if values.len() != 2 * len {
        return Err(SktError::Format(format!(
            "expected {} values, found {}",
            2 * len,
            values.len()
        )));
    }
    FieldPair::new(grid, values[..len].to_vec(), values[len..].to_vec())
}

pub fn write_snapshot(path: &Path, f: &FieldPair) -> Result<()> {
    fs::write(path, format_snapshot(f))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<FieldPair> {
    parse_snapshot(&fs::read_to_string(path)?)
}

fn snapshot_name(prefix: &str, step: usize) -> String {
    format!("{prefix}_{step:08}.txt")
}

/// Writes `config.txt`, `diagnostics.csv` and `snapshots/` (with
/// `index.csv`) under `dir`.
pub fn write_forward_outputs(dir: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<()> {
    let snaps = dir.join(SNAPSHOT_DIR);
    fs::create_dir_all(&snaps)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_config_string())?;
    fs::write(dir.join(DIAGNOSTICS_FILE), traj.diagnostics_csv())?;
    let mut index = String::from("step,t,file\n");
    for (step, f) in traj.steps.iter().zip(&traj.snapshots) {
        let name = snapshot_name("u", *step);
        write_snapshot(&snaps.join(&name), f)?;
        let _ = writeln!(index, "{},{:e},{}", step, traj.time.time(*step), name);
    }
    fs::write(snaps.join(INDEX_FILE), index)?;
    Ok(())
}

/// Writes `adjoint.csv` and the adjoint snapshots `phi_*.txt`.
pub fn write_adjoint_outputs(dir: &Path, run: &AdjointRun) -> Result<()> {
    let snaps = dir.join(SNAPSHOT_DIR);
    fs::create_dir_all(&snaps)?;
    fs::write(dir.join(ADJOINT_FILE), run.phi.diagnostics_csv(&run.report))?;
    for (step, f) in run.phi.steps.iter().zip(&run.phi.levels) {
        write_snapshot(&snaps.join(snapshot_name("phi", *step)), f)?;
    }
    Ok(())
}

/// A parsed CSV file: header, numeric rows and trailing `key = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub trailer: Vec<(String, String)>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn trailer_value(&self, key: &str) -> Option<&str> {
        self.trailer
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Parses numeric CSV text. Empty cells read as NaN; rows after the table
/// of the form `key = value` are collected separately.
pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| SktError::Format("empty csv".to_string()))?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut table = CsvTable {
        columns,
        ..Default::default()
    };
    for (i, line) in lines.enumerate() {
        if let Some((k, v)) = line.split_once('=') {
            if !line.contains(',') {
                table
                    .trailer
                    .push((k.trim().to_string(), v.trim().to_string()));
                continue;
            }
        }
        if !table.trailer.is_empty() {
            return Err(SktError::Format(format!(
                "data row {} after the key = value block",
                i + 2
            )));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != table.columns.len() {
            return Err(SktError::Format(format!(
                "row {} has {} cells, header has {}",
                i + 2,
                cells.len(),
                table.columns.len()
            )));
        }
        let row = cells
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(f64::NAN)
                } else {
                    c.parse::<f64>()
                        .map_err(|_| SktError::Format(format!("bad number `{c}` in row {}", i + 2)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        table.rows.push(row);
    }
    Ok(table)
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    parse_csv(&fs::read_to_string(path)?)
}

fn diagnostics_from_csv(table: &CsvTable) -> Result<Vec<Diagnostics>> {
    let expected: Vec<&str> = DIAGNOSTICS_HEADER.split(',').collect();
    if table.columns != expected {
        return Err(SktError::Format(format!(
            "unexpected diagnostics columns {:?}",
            table.columns
        )));
    }
    Ok(table
        .rows
        .iter()
        .map(|r| Diagnostics {
            step: r[0] as usize,
            t: r[1],
            mass_u: r[2],
            mass_v: r[3],
            min_u: r[4],
            min_v: r[5],
            l2_u: r[6],
            l2_v: r[7],
            h1_u: r[8],
            h1_v: r[9],
            l4_pair: r[10],
            gradp_l2: r[11],
            lapp_l2: r[12],
            wtd_dtu_l2: r[13],
        })
        .collect())
}

/// Reloads a run directory written by [`write_forward_outputs`].
pub fn read_forward_outputs(dir: &Path) -> Result<(RunConfig, Trajectory)> {
    let cfg = parse_config_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let time = cfg.time_grid()?;
    let index = read_index(dir)?;
    let mut steps = Vec::with_capacity(index.len());
    let mut snapshots = Vec::with_capacity(index.len());
    for (step, path) in index {
        let f = read_snapshot(&path)?;
        if f.grid != cfg.grid()? {
            return Err(SktError::Mismatch(format!(
                "{} does not match the configured grid",
                path.display()
            )));
        }
        steps.push(step);
        snapshots.push(f);
    }
    if steps.first() != Some(&0) || steps.last() != Some(&time.steps) {
        return Err(SktError::Format(
            "snapshot index must cover the first and last step".to_string(),
        ));
    }
    let diagnostics = diagnostics_from_csv(&read_csv(&dir.join(DIAGNOSTICS_FILE))?)?;
    if diagnostics.len() != time.steps + 1 {
        return Err(SktError::Format(format!(
            "{} diagnostics rows for {} steps",
            diagnostics.len(),
            time.steps
        )));
    }
    let traj = Trajectory {
        grid: cfg.grid()?,
        bc: cfg.bc,
        time,
        scheme: cfg.scheme,
        stride: cfg.stride,
        clamped: cfg.clamp,
        steps,
        snapshots,
        diagnostics,
    };
    Ok((cfg, traj))
}

fn read_index(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let snaps = dir.join(SNAPSHOT_DIR);
    let text = fs::read_to_string(snaps.join(INDEX_FILE))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(SktError::Format(format!("bad index row {}", i + 1)));
        }
        let step = cells[0]
            .parse()
            .map_err(|_| SktError::Format(format!("bad step in index row {}", i + 1)))?;
        out.push((step, snaps.join(cells[2])));
    }
    Ok(out)
}

/// Renders every CSV under `dir` into `dir/report/`: a text summary
/// (returned and written to `summary.txt`), one two-column `.dat` file per
/// numeric column against `t` (the first column when there is no `t`), and a
/// gnuplot script.
pub fn render_report(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SktError::Format(format!(
            "no csv files in {}",
            dir.display()
        )));
    }
    let out_dir = dir.join("report");
    fs::create_dir_all(&out_dir)?;
    let mut summary = String::new();
    let mut script = String::from("set terminal pngcairo size 800,500\nset key left top\n");
    for path in &files {
        let table = read_csv(path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("table")
            .to_string();
        let _ = writeln!(
            summary,
            "== {} ({} rows)",
            path.file_name().unwrap().to_string_lossy(),
            table.rows.len()
        );
        let x_name = table.columns.iter().position(|c| c == "t").unwrap_or(0);
        for (j, name) in table.columns.iter().enumerate() {
            let col: Vec<f64> = table
                .rows
                .iter()
                .map(|r| r[j])
                .filter(|x| x.is_finite())
                .collect();
            if col.is_empty() {
                continue;
            }
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let last = *col.last().unwrap();
            let _ = writeln!(
                summary,
                "{name:>22}  min {min:>13.6e}  max {max:>13.6e}  last {last:>13.6e}"
            );
            if j == x_name {
                continue;
            }
            let dat_name = format!("{stem}_{name}.dat");
            let mut dat = format!("# {} {}\n", table.columns[x_name], name);
            for r in &table.rows {
                if r[x_name].is_finite() && r[j].is_finite() {
                    let _ = writeln!(dat, "{:e} {:e}", r[x_name], r[j]);
                }
            }
            fs::write(out_dir.join(&dat_name), dat)?;
            let _ = writeln!(
                script,
                "set output '{stem}_{name}.png'\nset xlabel '{}'\nplot '{dat_name}' using 1:2 with lines title '{name}'",
                table.columns[x_name]
            );
        }
        for (k, v) in &table.trailer {
            let _ = writeln!(summary, "{k:>22}  {v}");
        }
    }
    fs::write(out_dir.join("summary.txt"), &summary)?;
    fs::write(out_dir.join("plot.gp"), script)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Coefficients, SpeciesPair};
    use crate::config::Preset;
    use crate::forward::run_forward;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let g = Grid::new(2, 5, 3.0).unwrap();
        let f = FieldPair::from_fn(g, |x| {
            SpeciesPair::new((x[0] * 7.1).sin() / 3.0, 1e-300 + x[1].exp())
        });
        let back = parse_snapshot(&format_snapshot(&f)).unwrap();
        assert_eq!(back.grid, f.grid);
        for (a, b) in f.u.iter().chain(&f.v).zip(back.u.iter().chain(&back.v)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn snapshot_header_format() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let text = format_snapshot(&FieldPair::constant(g, 1.0, 2.0));
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "skt-field v1, d=1, N=4, h=0.25");
        assert_eq!(lines.next().unwrap().split_whitespace().count(), 4);
    }

    #[test]
    fn malformed_snapshots_are_rejected() {
        assert!(parse_snapshot("").is_err());
        assert!(parse_snapshot("skt-field v2, d=1, N=4, h=0.25\n").is_err());
        assert!(parse_snapshot("skt-field v1, d=1, N=2, h=0.5\n1 2 3\n").is_err());
        assert!(parse_snapshot("skt-field v1, d=1, N=2, h=0.5\n1 2 x 4\n").is_err());
        assert!(parse_snapshot("skt-field v1, d=1, N=3, h=0.5\n1 2 3\n4 5 6\n").is_ok());
    }

    #[test]
    fn csv_with_trailer() {
        let t = parse_csv("a,b\n1,2\n3,\nx = 4\ny = true\n").unwrap();
        assert_eq!(t.column("a").unwrap(), vec![1.0, 3.0]);
        assert!(t.column("b").unwrap()[1].is_nan());
        assert_eq!(t.trailer_value("y"), Some("true"));
        assert!(parse_csv("a,b\n1\n").is_err());
    }

    #[test]
    fn forward_outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(1, 8, 1.0, 0.01, 0.001, Coefficients::unit());
        cfg.initial_u = Preset::Cosine {
            k: 1,
            amplitude: 0.5,
            offset: 1.0,
        };
        cfg.stride = 3;
        let traj = run_forward(&cfg).unwrap();
        write_forward_outputs(dir.path(), &cfg, &traj).unwrap();
        let (cfg2, back) = read_forward_outputs(dir.path()).unwrap();
        assert_eq!(cfg2.n, cfg.n);
        assert_eq!(back.steps, traj.steps);
        assert_eq!(back.snapshots, traj.snapshots);
        assert_eq!(back.diagnostics, traj.diagnostics);
        let summary = render_report(dir.path()).unwrap();
        assert!(summary.contains("diagnostics.csv"));
        assert!(dir.path().join("report/diagnostics_mass_u.dat").exists());
        assert!(dir.path().join("report/plot.gp").exists());
    }
}
