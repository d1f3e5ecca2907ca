use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Common;

/// Exit code 2 for bad input, 3 when a numerical guard stops the run.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Numerical(m) => write!(f, "numerical guard: {m}"),
        }
    }
}

impl From<bohmlab::Error> for Failure {
    fn from(e: bohmlab::Error) -> Self {
        use bohmlab::Error::*;
        match e {
            Dimension(_) | SizeCap { .. } | Validation(_) | Io { .. } | Json(_) | Parse(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

pub type Outcome = Result<bool, Failure>;

/// Reads a JSON config; missing keys take defaults, unknown keys fail.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn init_threads(threads: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `<= 0.02`.
    pub bound: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound: format!("<= {bound}"), pass: value <= bound }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound: format!(">= {bound}"), pass: value >= bound }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, bound: format!("in [{lo}, {hi}]"), pass: (lo..=hi).contains(&value) }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, bound: "true".into(), pass: ok }
    }
}

#[derive(Serialize)]
struct Summary<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    n: Option<usize>,
    config: &'a C,
    results: &'a R,
    checks: &'a [Check],
    pass: bool,
    wall_time_s: f64,
}

/// Writes `<out>/<command>.json` (and `.csv` when given), prints the
/// summary and returns whether every check passed.
#[allow(clippy::too_many_arguments)]
pub fn emit<C: Serialize, R: Serialize>(
    common: &Common,
    command: &str,
    n: Option<usize>,
    config: &C,
    results: &R,
    checks: Vec<Check>,
    csv: Option<String>,
    started: Instant,
) -> Outcome {
    let pass = checks.iter().all(|c| c.pass);
    let summary = Summary {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: common.seed,
        n,
        config,
        results,
        checks: &checks,
        pass,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Config(e.to_string()))?;
    let io = |p: &Path, e: std::io::Error| Failure::Config(format!("{}: {e}", p.display()));
    fs::create_dir_all(&common.out).map_err(|e| io(&common.out, e))?;
    let jp = common.out.join(format!("{command}.json"));
    fs::write(&jp, format!("{json}\n")).map_err(|e| io(&jp, e))?;
    if let Some(csv) = csv {
        let cp = common.out.join(format!("{command}.csv"));
        fs::write(&cp, csv).map_err(|e| io(&cp, e))?;
    }
    println!("{json}");
    for c in &checks {
        eprintln!("[{}] {} = {:.6e} ({})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    Ok(pass)
}
