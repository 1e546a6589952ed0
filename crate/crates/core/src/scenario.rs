//! Dataset generation: seeded topographies and initial conditions, reference
//! rollouts, and a line-oriented manifest describing every sequence.
//!
//! Everything is a pure function of `(master_seed, config)`. Per-sequence
//! randomness comes from streams derived as `hash(master_seed, tag, index)`
//! (see `rng`), so regenerating a dataset yields byte-identical files. The
//! inference and test roles draw their shared topography from a
//! role-independent stream: generating both roles from the same master seed
//! produces the same H, which is what lets a held-out test set be evaluated
//! against an H inferred from the inference set.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::field::Field2D;
use crate::format::{self, FormatError, Sequence};
use crate::grid::{Grid, SimConfig};
use crate::rng::Rng;
use crate::solver::{self, SolverError};
use crate::topography::{self, ArctanParams, TopoKind, TopoSpec};

pub const DEFAULT_SIGMA_M: f64 = 5.0e4;
pub const DEFAULT_TRAIN_COUNT: usize = 512;
pub const DEFAULT_INFER_COUNT: usize = 256;

const TAG_TOPO_TRAIN: u64 = 1;
const TAG_TOPO_SHARED: u64 = 2;
const TAG_IC_BASE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Infer,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Infer => "infer",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "infer" => Some(Role::Infer),
            "test" => Some(Role::Test),
            _ => None,
        }
    }

    fn ic_tag(&self) -> u64 {
        TAG_IC_BASE
            + match self {
                Role::Train => 0,
                Role::Infer => 1,
                Role::Test => 2,
            }
    }
}

#[derive(Debug)]
pub enum ScenarioError {
    BadCount(usize),
    CenterOutsideDomain { x0_m: f64, y0_m: f64, side_m: f64 },
    BadSigma(f64),
    Sequence { index: usize, source: SolverError },
    Format(FormatError),
    Io(std::io::Error),
    Manifest { line: usize, detail: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::BadCount(n) => write!(f, "sequence count must be >= 1, got {n}"),
            ScenarioError::CenterOutsideDomain { x0_m, y0_m, side_m } => write!(
                f,
                "initial-condition center ({x0_m}, {y0_m}) outside the {side_m} m domain"
            ),
            ScenarioError::BadSigma(s) => write!(f, "sigma must be positive, got {s}"),
            ScenarioError::Sequence { index, source } => {
                write!(f, "sequence {index}: {source}")
            }
            ScenarioError::Format(e) => write!(f, "{e}"),
            ScenarioError::Io(e) => write!(f, "io error: {e}"),
            ScenarioError::Manifest { line, detail } => {
                write!(f, "manifest line {line}: {detail}")
            }
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<FormatError> for ScenarioError {
    fn from(e: FormatError) -> Self {
        ScenarioError::Format(e)
    }
}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e)
    }
}

/// Gaussian surface bump evaluated at cell centers; peak value 1 when the
/// center coincides with a cell center.
pub fn gaussian_ic(
    grid: &Grid,
    x0_m: f64,
    y0_m: f64,
    sigma_m: f64,
) -> Result<Field2D, ScenarioError> {
    if !grid.contains_point(x0_m, y0_m) {
        return Err(ScenarioError::CenterOutsideDomain {
            x0_m,
            y0_m,
            side_m: grid.side_length_m,
        });
    }
    if sigma_m <= 0.0 || sigma_m.is_nan() {
        return Err(ScenarioError::BadSigma(sigma_m));
    }
    let two_sigma_sq = 2.0 * sigma_m * sigma_m;
    Ok(Field2D::from_fn(grid.nx, grid.ny, |ix, iy| {
        let (x, y) = grid.cell_center(ix, iy);
        (-((x - x0_m) * (x - x0_m) / two_sigma_sq + (y - y0_m) * (y - y0_m) / two_sigma_sq)).exp()
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub topo: TopoSpec,
    pub x0_m: f64,
    pub y0_m: f64,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub role: Role,
    pub count: usize,
    pub master_seed: u64,
    pub sim: SimConfig,
    pub sigma_m: f64,
    pub arctan: ArctanParams,
    pub entries: Vec<ManifestEntry>,
    /// Directory the manifest was written to or read from.
    pub dir: PathBuf,
}

impl DatasetManifest {
    pub fn sequence_path(&self, index: usize) -> PathBuf {
        self.dir.join(&self.entries[index].file)
    }
}

/// Draws the per-sequence topography specs for a role.
fn draw_topo_specs(role: Role, count: usize, master_seed: u64) -> Vec<TopoSpec> {
    match role {
        Role::Train => (0..count)
            .map(|index| {
                let mut r = Rng::derive(master_seed, TAG_TOPO_TRAIN, index as u64);
                TopoSpec {
                    kind: TopoKind::ArctanSlope,
                    rotation_rad: r.range_f64(0.0, 2.0 * std::f64::consts::PI),
                    depth_scale: r.range_f64(0.5, 1.0),
                    seed: r.next_u64(),
                }
            })
            .collect(),
        Role::Infer | Role::Test => {
            // One shared topography for the whole role, independent of the
            // role tag so infer and test sets of the same master seed agree.
            let mut r = Rng::derive(master_seed, TAG_TOPO_SHARED, 0);
            let shared = TopoSpec {
                kind: TopoKind::Bumpy,
                rotation_rad: 0.0,
                depth_scale: r.range_f64(0.5, 1.0),
                seed: r.next_u64(),
            };
            vec![shared; count]
        }
    }
}

fn draw_ic_center(grid: &Grid, role: Role, master_seed: u64, index: usize) -> (f64, f64) {
    let mut r = Rng::derive(master_seed, role.ic_tag(), index as u64);
    let ix = r.below(grid.nx);
    let iy = r.below(grid.ny);
    grid.cell_center(ix, iy)
}

/// Generates `count` sequences under `out_dir` plus a `manifest.txt`.
///
/// Train sequences get a fresh rotated and scaled arctan topography each;
/// infer/test sequences share one bumpy topography. Sequences are simulated
/// and written in parallel; the manifest is written last.
pub fn generate_dataset(
    role: Role,
    count: usize,
    master_seed: u64,
    sim: &SimConfig,
    sigma_m: f64,
    arctan: &ArctanParams,
    out_dir: &Path,
) -> Result<DatasetManifest, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::BadCount(count));
    }
    if sigma_m <= 0.0 || sigma_m.is_nan() {
        return Err(ScenarioError::BadSigma(sigma_m));
    }
    fs::create_dir_all(out_dir)?;

    let specs = draw_topo_specs(role, count, master_seed);
    let entries: Vec<ManifestEntry> = specs
        .iter()
        .enumerate()
        .map(|(index, topo)| {
            let (x0_m, y0_m) = draw_ic_center(&sim.grid, role, master_seed, index);
            ManifestEntry {
                index,
                file: format!("seq_{index:05}.swe"),
                topo: *topo,
                x0_m,
                y0_m,
                sigma_m,
            }
        })
        .collect();

    entries
        .par_iter()
        .try_for_each(|entry| -> Result<(), ScenarioError> {
            let h = topography::generate(&sim.grid, &entry.topo, arctan);
            let eta0 = gaussian_ic(&sim.grid, entry.x0_m, entry.y0_m, entry.sigma_m)?;
            let rollout = solver::reference_rollout(&eta0, &h, sim).map_err(|source| {
                ScenarioError::Sequence {
                    index: entry.index,
                    source,
                }
            })?;
            let seq = Sequence {
                h,
                eta_frames: rollout.eta_frames,
                u_frames: rollout.u_frames,
                v_frames: rollout.v_frames,
                dx_m: sim.grid.dx_m(),
                dt_s: sim.dt_s,
                g_m_s2: sim.g_m_s2,
                x0_m: entry.x0_m,
                y0_m: entry.y0_m,
                sigma_m: entry.sigma_m,
                phi: entry.topo.rotation_rad,
                beta: entry.topo.depth_scale,
            };
            format::write_sequence(&out_dir.join(&entry.file), &seq)?;
            Ok(())
        })?;

    let manifest = DatasetManifest {
        role,
        count,
        master_seed,
        sim: *sim,
        sigma_m,
        arctan: *arctan,
        entries,
        dir: out_dir.to_path_buf(),
    };
    write_manifest(&manifest)?;
    Ok(manifest)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}

fn write_manifest(m: &DatasetManifest) -> Result<(), ScenarioError> {
    let mut out = String::new();
    out.push_str("format = swetopo-dataset-v1\n");
    out.push_str(&format!("role = {}\n", m.role.as_str()));
    out.push_str(&format!("count = {}\n", m.count));
    out.push_str(&format!("master_seed = {}\n", m.master_seed));
    out.push_str(&format!("nx = {}\n", m.sim.grid.nx));
    out.push_str(&format!("ny = {}\n", m.sim.grid.ny));
    out.push_str(&format!("side_length_m = {}\n", m.sim.grid.side_length_m));
    out.push_str(&format!("g_m_s2 = {}\n", m.sim.g_m_s2));
    out.push_str(&format!("cfl = {}\n", m.sim.cfl));
    out.push_str(&format!("h_ref_m = {}\n", m.sim.h_ref_m));
    out.push_str(&format!("dt_s = {}\n", m.sim.dt_s));
    out.push_str(&format!("steps = {}\n", m.sim.steps));
    out.push_str(&format!("sigma_m = {}\n", m.sigma_m));
    out.push_str(&format!("arctan_amplitude_m = {}\n", m.arctan.amplitude_m));
    out.push_str(&format!("arctan_steepness = {}\n", m.arctan.steepness));
    out.push_str(&format!("arctan_base_depth_m = {}\n", m.arctan.base_depth_m));
    for e in &m.entries {
        out.push_str("\n[sequence]\n");
        out.push_str(&format!("index = {}\n", e.index));
        out.push_str(&format!("file = {}\n", e.file));
        out.push_str(&format!("kind = {}\n", e.topo.kind.as_str()));
        out.push_str(&format!("phi = {}\n", e.topo.rotation_rad));
        out.push_str(&format!("beta = {}\n", e.topo.depth_scale));
        out.push_str(&format!("topo_seed = {}\n", e.topo.seed));
        out.push_str(&format!("x0_m = {}\n", e.x0_m));
        out.push_str(&format!("y0_m = {}\n", e.y0_m));
        out.push_str(&format!("ic_sigma_m = {}\n", e.sigma_m));
    }
    fs::write(manifest_path(&m.dir), out)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, ScenarioError> {
    let text = fs::read_to_string(manifest_path(dir))?;
    let bad = |line: usize, detail: String| ScenarioError::Manifest { line, detail };

    let mut header: Vec<(usize, String, String)> = Vec::new();
    let mut sequences: Vec<Vec<(usize, String, String)>> = Vec::new();
    let mut in_sequence = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "[sequence]" {
            sequences.push(Vec::new());
            in_sequence = true;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(i + 1, format!("expected key = value, got {line:?}")))?;
        let pair = (i + 1, key.trim().to_string(), value.trim().to_string());
        if in_sequence {
            sequences.last_mut().unwrap().push(pair);
        } else {
            header.push(pair);
        }
    }

    let mut role = None;
    let mut count = None;
    let mut master_seed = None;
    let mut nx = None;
    let mut ny = None;
    let mut side = None;
    let mut g = None;
    let mut cfl = None;
    let mut h_ref = None;
    let mut dt = None;
    let mut steps = None;
    let mut sigma = None;
    let mut amp = None;
    let mut steep = None;
    let mut base_depth = None;
    for (line, key, value) in header {
        let parse_f64 = || -> Result<f64, ScenarioError> {
            value
                .parse()
                .map_err(|_| bad(line, format!("bad float for {key}: {value:?}")))
        };
        let parse_usize = || -> Result<usize, ScenarioError> {
            value
                .parse()
                .map_err(|_| bad(line, format!("bad integer for {key}: {value:?}")))
        };
        match key.as_str() {
            "format" => {
                if value != "swetopo-dataset-v1" {
                    return Err(bad(line, format!("unknown manifest format {value:?}")));
                }
            }
            "role" => {
                role = Some(
                    Role::parse(&value).ok_or_else(|| bad(line, format!("bad role {value:?}")))?,
                )
            }
            "count" => count = Some(parse_usize()?),
            "master_seed" => {
                master_seed = Some(
                    value
                        .parse()
                        .map_err(|_| bad(line, format!("bad seed {value:?}")))?,
                )
            }
            "nx" => nx = Some(parse_usize()?),
            "ny" => ny = Some(parse_usize()?),
            "side_length_m" => side = Some(parse_f64()?),
            "g_m_s2" => g = Some(parse_f64()?),
            "cfl" => cfl = Some(parse_f64()?),
            "h_ref_m" => h_ref = Some(parse_f64()?),
            "dt_s" => dt = Some(parse_f64()?),
            "steps" => steps = Some(parse_usize()?),
            "sigma_m" => sigma = Some(parse_f64()?),
            "arctan_amplitude_m" => amp = Some(parse_f64()?),
            "arctan_steepness" => steep = Some(parse_f64()?),
            "arctan_base_depth_m" => base_depth = Some(parse_f64()?),
            other => return Err(bad(line, format!("unknown manifest key {other:?}"))),
        }
    }
    let missing = |what: &str| bad(0, format!("missing manifest key {what}"));
    let grid = Grid::new(
        nx.ok_or_else(|| missing("nx"))?,
        ny.ok_or_else(|| missing("ny"))?,
        side.ok_or_else(|| missing("side_length_m"))?,
    )
    .map_err(|e| bad(0, e.to_string()))?;
    let sim = SimConfig {
        grid,
        g_m_s2: g.ok_or_else(|| missing("g_m_s2"))?,
        cfl: cfl.ok_or_else(|| missing("cfl"))?,
        h_ref_m: h_ref.ok_or_else(|| missing("h_ref_m"))?,
        dt_s: dt.ok_or_else(|| missing("dt_s"))?,
        steps: steps.ok_or_else(|| missing("steps"))?,
    };

    let mut entries = Vec::with_capacity(sequences.len());
    for pairs in sequences {
        let mut index = None;
        let mut file = None;
        let mut kind = None;
        let mut phi = None;
        let mut beta = None;
        let mut topo_seed = None;
        let mut x0 = None;
        let mut y0 = None;
        let mut ic_sigma = None;
        for (line, key, value) in pairs {
            match key.as_str() {
                "index" => {
                    index = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad index {value:?}")))?,
                    )
                }
                "file" => file = Some(value),
                "kind" => {
                    kind = Some(
                        TopoKind::parse(&value)
                            .ok_or_else(|| bad(line, format!("bad kind {value:?}")))?,
                    )
                }
                "phi" => {
                    phi = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad phi {value:?}")))?,
                    )
                }
                "beta" => {
                    beta = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad beta {value:?}")))?,
                    )
                }
                "topo_seed" => {
                    topo_seed = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad topo_seed {value:?}")))?,
                    )
                }
                "x0_m" => {
                    x0 = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad x0_m {value:?}")))?,
                    )
                }
                "y0_m" => {
                    y0 = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad y0_m {value:?}")))?,
                    )
                }
                "ic_sigma_m" => {
                    ic_sigma = Some(
                        value
                            .parse()
                            .map_err(|_| bad(line, format!("bad ic_sigma_m {value:?}")))?,
                    )
                }
                other => return Err(bad(line, format!("unknown sequence key {other:?}"))),
            }
        }
        entries.push(ManifestEntry {
            index: index.ok_or_else(|| missing("index"))?,
            file: file.ok_or_else(|| missing("file"))?,
            topo: TopoSpec {
                kind: kind.ok_or_else(|| missing("kind"))?,
                rotation_rad: phi.ok_or_else(|| missing("phi"))?,
                depth_scale: beta.ok_or_else(|| missing("beta"))?,
                seed: topo_seed.ok_or_else(|| missing("topo_seed"))?,
            },
            x0_m: x0.ok_or_else(|| missing("x0_m"))?,
            y0_m: y0.ok_or_else(|| missing("y0_m"))?,
            sigma_m: ic_sigma.ok_or_else(|| missing("ic_sigma_m"))?,
        });
    }

    Ok(DatasetManifest {
        role: role.ok_or_else(|| missing("role"))?,
        count: count.ok_or_else(|| missing("count"))?,
        master_seed: master_seed.ok_or_else(|| missing("master_seed"))?,
        sim,
        sigma_m: sigma.ok_or_else(|| missing("sigma_m"))?,
        arctan: ArctanParams {
            base_depth_m: base_depth.ok_or_else(|| missing("arctan_base_depth_m"))?,
            amplitude_m: amp.ok_or_else(|| missing("arctan_amplitude_m"))?,
            steepness: steep.ok_or_else(|| missing("arctan_steepness"))?,
        },
        entries,
        dir: dir.to_path_buf(),
    })
}
