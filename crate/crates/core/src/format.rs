//! Bit-exact binary containers for simulated sequences and model
//! checkpoints.
//!
//! Sequence container ("SWE1"), all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "SWE1"
//! version  u32      1; high bit set => field-only (no eta/u/v payloads)
//! nx, ny   u32 x2
//! T        u32      rollout steps (frames stored = T + 1)
//! dx_m, dt_s, g     f64 x3
//! x0, y0, sigma     f64 x3
//! phi, beta         f64 x2
//! H        nx*ny f64, row-major
//! eta      (T+1)*nx*ny f64     | absent in field-only containers
//! u, v     same as eta         |
//! ```
//!
//! Checkpoint container ("FNN1"):
//!
//! ```text
//! magic        4 bytes "FNN1"
//! version      u32     1; high bit set => learnable H payload appended
//! hidden       u32
//! activation   u32     0 = tanh, 1 = relu
//! param_count  u32
//! nx, ny       u32 x2  0, 0 when no H payload
//! params       param_count f64, flat order (see FinnParams::to_flat)
//! H            nx*ny f64 when flagged
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::field::Field2D;
use crate::finn::{Activation, FinnParams, StencilMlp};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"SWE1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNN1";
pub const FORMAT_VERSION: u32 = 1;
/// High bit of the version word marks a payload-reduced container.
pub const FLAG_FIELD_ONLY: u32 = 0x8000_0000;

#[derive(Debug)]
pub enum FormatError {
    Io(std::io::Error),
    BadMagic { got: [u8; 4] },
    VersionMismatch { got: u32 },
    Truncated {
        offset: usize,
        expected_len: usize,
        actual_len: usize,
    },
    ParamCount { expected: usize, got: usize },
    HShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    BadActivation { got: u32 },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::Io(e) => write!(f, "io error: {e}"),
            FormatError::BadMagic { got } => {
                write!(f, "bad magic bytes {:?}", String::from_utf8_lossy(got))
            }
            FormatError::VersionMismatch { got } => {
                write!(f, "unsupported container version {got}")
            }
            FormatError::Truncated {
                offset,
                expected_len,
                actual_len,
            } => write!(
                f,
                "truncated payload at byte offset {offset}: expected {expected_len} bytes, file has {actual_len}"
            ),
            FormatError::ParamCount { expected, got } => {
                write!(f, "checkpoint parameter count {got} does not match architecture ({expected})")
            }
            FormatError::HShape { expected, got } => write!(
                f,
                "stored H has shape {}x{}, expected {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            FormatError::BadActivation { got } => {
                write!(f, "unknown activation tag {got}")
            }
        }
    }
}

impl std::error::Error for FormatError {}

impl From<std::io::Error> for FormatError {
    fn from(e: std::io::Error) -> Self {
        FormatError::Io(e)
    }
}

/// One simulated episode with everything needed to replay or supervise it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub h: Field2D,
    pub eta_frames: Vec<Field2D>,
    pub u_frames: Vec<Field2D>,
    pub v_frames: Vec<Field2D>,
    pub dx_m: f64,
    pub dt_s: f64,
    pub g_m_s2: f64,
    pub x0_m: f64,
    pub y0_m: f64,
    pub sigma_m: f64,
    pub phi: f64,
    pub beta: f64,
}

impl Sequence {
    pub fn nx(&self) -> usize {
        self.h.nx()
    }

    pub fn ny(&self) -> usize {
        self.h.ny()
    }

    pub fn steps(&self) -> usize {
        self.eta_frames.len() - 1
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn need(&self, n: usize) -> Result<(), FormatError> {
        if self.offset + n > self.data.len() {
            Err(FormatError::Truncated {
                offset: self.offset,
                expected_len: self.offset + n,
                actual_len: self.data.len(),
            })
        } else {
            Ok(())
        }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        self.need(n)?;
        let s = &self.data[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        self.need(n * 8)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn sequence_header(seq: &Sequence, version: u32, steps: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SEQUENCE_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(seq.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.ny() as u32).to_le_bytes());
    out.extend_from_slice(&steps.to_le_bytes());
    write_f64s(
        &mut out,
        &[
            seq.dx_m, seq.dt_s, seq.g_m_s2, seq.x0_m, seq.y0_m, seq.sigma_m, seq.phi, seq.beta,
        ],
    );
    out
}

pub fn write_sequence(path: &Path, seq: &Sequence) -> Result<(), FormatError> {
    let steps = seq.steps() as u32;
    let mut out = sequence_header(seq, FORMAT_VERSION, steps);
    write_f64s(&mut out, seq.h.values());
    for frames in [&seq.eta_frames, &seq.u_frames, &seq.v_frames] {
        for frame in frames.iter() {
            write_f64s(&mut out, frame.values());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Writes a single field (e.g. an inferred topography) as a field-only
/// sequence container: T = 0, flag bit set, only the H payload present.
pub fn write_field_only(path: &Path, h: &Field2D) -> Result<(), FormatError> {
    let seq = Sequence {
        h: h.clone(),
        eta_frames: vec![Field2D::zeros(h.nx(), h.ny())],
        u_frames: vec![],
        v_frames: vec![],
        dx_m: 0.0,
        dt_s: 0.0,
        g_m_s2: 0.0,
        x0_m: 0.0,
        y0_m: 0.0,
        sigma_m: 0.0,
        phi: 0.0,
        beta: 0.0,
    };
    let mut out = sequence_header(&seq, FORMAT_VERSION | FLAG_FIELD_ONLY, 0);
    write_f64s(&mut out, h.values());
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_sequence(path: &Path) -> Result<Sequence, FormatError> {
    let data = fs::read(path)?;
    let mut cur = Cursor {
        data: &data,
        offset: 0,
    };
    let magic = cur.bytes(4)?;
    if magic != SEQUENCE_MAGIC {
        return Err(FormatError::BadMagic {
            got: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = cur.u32()?;
    let field_only = version & FLAG_FIELD_ONLY != 0;
    if version & !FLAG_FIELD_ONLY != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch { got: version });
    }
    let nx = cur.u32()? as usize;
    let ny = cur.u32()? as usize;
    let steps = cur.u32()? as usize;
    let dx_m = cur.f64()?;
    let dt_s = cur.f64()?;
    let g_m_s2 = cur.f64()?;
    let x0_m = cur.f64()?;
    let y0_m = cur.f64()?;
    let sigma_m = cur.f64()?;
    let phi = cur.f64()?;
    let beta = cur.f64()?;

    let cells = nx * ny;
    let h = Field2D::from_vec(nx, ny, cur.f64_vec(cells)?);
    let mut eta_frames = Vec::new();
    let mut u_frames = Vec::new();
    let mut v_frames = Vec::new();
    if !field_only {
        for frames in [&mut eta_frames, &mut u_frames, &mut v_frames] {
            for _ in 0..=steps {
                frames.push(Field2D::from_vec(nx, ny, cur.f64_vec(cells)?));
            }
        }
    }
    Ok(Sequence {
        h,
        eta_frames,
        u_frames,
        v_frames,
        dx_m,
        dt_s,
        g_m_s2,
        x0_m,
        y0_m,
        sigma_m,
        phi,
        beta,
    })
}

/// Reads just the H field and the eta frames, skipping velocity payloads.
/// Training and inversion supervise eta only, so this halves the load work.
pub fn read_sequence_eta(path: &Path) -> Result<(Field2D, Vec<Field2D>), FormatError> {
    let seq = read_sequence(path)?;
    Ok((seq.h, seq.eta_frames))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FinnParams,
    pub h: Option<Field2D>,
}

impl Checkpoint {
    /// Fails when a stored learnable H does not match the expected grid.
    pub fn expect_h_shape(&self, nx: usize, ny: usize) -> Result<(), FormatError> {
        match &self.h {
            Some(h) if h.shape() != (nx, ny) => Err(FormatError::HShape {
                expected: (nx, ny),
                got: h.shape(),
            }),
            _ => Ok(()),
        }
    }
}

pub fn write_checkpoint(
    path: &Path,
    params: &FinnParams,
    h: Option<&Field2D>,
) -> Result<(), FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let version = FORMAT_VERSION | if h.is_some() { FLAG_FIELD_ONLY } else { 0 };
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(params.hidden_width as u32).to_le_bytes());
    let activation = match params.activation() {
        Activation::Tanh => 0u32,
        Activation::Relu => 1u32,
    };
    out.extend_from_slice(&activation.to_le_bytes());
    let flat = params.to_flat();
    out.extend_from_slice(&(flat.len() as u32).to_le_bytes());
    let (nx, ny) = h.map(|f| f.shape()).unwrap_or((0, 0));
    out.extend_from_slice(&(nx as u32).to_le_bytes());
    out.extend_from_slice(&(ny as u32).to_le_bytes());
    write_f64s(&mut out, &flat);
    if let Some(h) = h {
        write_f64s(&mut out, h.values());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let data = fs::read(path)?;
    let mut cur = Cursor {
        data: &data,
        offset: 0,
    };
    let magic = cur.bytes(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            got: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = cur.u32()?;
    let has_h = version & FLAG_FIELD_ONLY != 0;
    if version & !FLAG_FIELD_ONLY != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch { got: version });
    }
    let hidden = cur.u32()? as usize;
    let activation = match cur.u32()? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        got => return Err(FormatError::BadActivation { got }),
    };
    let param_count = cur.u32()? as usize;
    let expected = 4 * StencilMlp::param_count(hidden);
    if param_count != expected {
        return Err(FormatError::ParamCount {
            expected,
            got: param_count,
        });
    }
    let nx = cur.u32()? as usize;
    let ny = cur.u32()? as usize;
    let flat = cur.f64_vec(param_count)?;
    let params = FinnParams::from_flat(hidden, activation, &flat)
        .expect("length already validated against the header");
    let h = if has_h {
        Some(Field2D::from_vec(nx, ny, cur.f64_vec(nx * ny)?))
    } else {
        None
    };
    Ok(Checkpoint { params, h })
}
