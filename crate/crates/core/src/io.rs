//! CSV formatting and atomic file output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::estimate::{FisherSeries, MleSeries};
use crate::simulate::Path;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &FsPath, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => FsPath::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// `t,value,dB`; the increment on row i is ΔB over [t_i, t_{i+1}] and the last
/// row has none.
pub fn path_csv(path: &Path) -> String {
    let mut out = String::from("t,value,dB\n");
    for (i, (t, v)) in path.times().iter().zip(&path.values).enumerate() {
        let db = path.increments.get(i).filter(|_| i + 1 < path.values.len()).copied();
        let _ = writeln!(out, "{},{},{}", fmt17(*t), fmt17(*v), opt17(db));
    }
    out
}

pub fn mle_csv(s: &MleSeries) -> String {
    let mut out = String::from("t,numerator,denominator,alpha_hat,defined\n");
    for k in 0..s.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt17(s.grid.nodes[k]),
            fmt17(s.numerator[k]),
            fmt17(s.denominator[k]),
            opt17(s.alpha_hat[k]),
            s.alpha_hat[k].is_some()
        );
    }
    out
}

pub fn fisher_csv(f: &FisherSeries) -> String {
    let mut out = String::from("t,I,stderr\n");
    for (k, v) in f.values.iter().enumerate() {
        let se = f.stderr.as_ref().map(|s| s[k]);
        let _ = writeln!(out, "{},{},{}", fmt17(f.grid.nodes[k]), fmt17(*v), opt17(se));
    }
    out
}

/// Reads `t,value[,dB]` rows back. Returns the nodes, values and increments
/// (empty when the file has no dB column).
pub fn read_path_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty path file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_db = match cols.as_slice() {
        ["t", "value"] => false,
        ["t", "value", "dB"] => true,
        _ => return Err(Error::InvalidParameter(format!("unexpected path header '{header}'"))),
    };
    let (mut ts, mut vs, mut dbs) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::InvalidParameter(format!("path file line {}: '{line}'", n + 2));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(bad());
        }
        ts.push(fields[0].parse::<f64>().map_err(|_| bad())?);
        vs.push(fields[1].parse::<f64>().map_err(|_| bad())?);
        if with_db && !fields[2].is_empty() {
            dbs.push(fields[2].parse::<f64>().map_err(|_| bad())?);
        }
    }
    Ok((ts, vs, dbs))
}
