#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use tidiff::limitlaws::ZetaOracle;

pub const ORACLE_N: usize = 100_000;
pub const ORACLE_STEPS: usize = 1 << 14;
pub const ORACLE_SEED: u64 = 7_340_033;

fn oracle_path() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("zeta-oracle-{ORACLE_N}-{ORACLE_STEPS}-{ORACLE_SEED}.csv"))
}

/// The reference ζ sample, generated once and cached under the target
/// directory. A cached file that fails its checksum is regenerated.
pub fn oracle() -> Arc<ZetaOracle> {
    static ORACLE: OnceLock<Arc<ZetaOracle>> = OnceLock::new();
    Arc::clone(ORACLE.get_or_init(|| {
        let path = oracle_path();
        if let Ok(o) = ZetaOracle::load(&path) {
            if o.n == ORACLE_N && o.steps == ORACLE_STEPS && o.base_seed == ORACLE_SEED {
                return Arc::new(o);
            }
        }
        let o = ZetaOracle::generate(ORACLE_N, ORACLE_STEPS, ORACLE_SEED).expect("oracle generation");
        o.write(&path).expect("oracle cache write");
        Arc::new(o)
    }))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}
