//! Binary field and checkpoint containers, CSV export and PGM images.
//!
//! Field file (`ALPSF1`), all integers little-endian:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 6     | magic `ALPSF1`                   |
//! | 1     | dtype code, `1` = f64            |
//! | 1     | ndim                             |
//! | 8·ndim| extents as u64                   |
//! | 8·len | values as f64                    |
//!
//! Checkpoint file (`ALPSM1`):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 6     | magic `ALPSM1`                            |
//! | 4     | arch descriptor length `a` (u32)          |
//! | a     | arch descriptor, UTF-8                    |
//! | 8     | σ_data (f64)                              |
//! | 1     | input ndim, then 8·ndim input extents     |
//! | 4     | number of layer sizes `s` (u32)           |
//! | 8·s   | layer sizes (u64), input width first      |
//! |       | per layer: weight field `[out, in]`, bias field `[out]` |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use alps_core::energy::{Mlp, NeuralEBM};
use alps_core::{EnergyModel, Field};

use crate::error::{AppError, AppResult};

pub const FIELD_MAGIC: &[u8; 6] = b"ALPSF1";
pub const MODEL_MAGIC: &[u8; 6] = b"ALPSM1";
const DTYPE_F64: u8 = 1;
const MAX_NDIM: u8 = 8;

fn bad(context: &str, reason: impl Into<String>) -> AppError {
    AppError::Format {
        context: context.to_string(),
        reason: reason.into(),
        path: None,
    }
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn write_shape(w: &mut impl Write, shape: &[usize]) -> io::Result<()> {
    w.write_all(&[shape.len() as u8])?;
    for &n in shape {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_shape(r: &mut impl Read, context: &str) -> AppResult<Vec<usize>> {
    let ndim = read_u8(r)?;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(bad(context, format!("unsupported ndim {ndim}")));
    }
    (0..ndim)
        .map(|_| {
            let n = read_u64(r)?;
            usize::try_from(n).map_err(|_| bad(context, "extent overflows usize"))
        })
        .collect()
}

pub fn write_field(w: &mut impl Write, field: &Field) -> AppResult<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&[DTYPE_F64])?;
    write_shape(w, field.shape())?;
    for v in field.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> AppResult<Field> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(bad("field", "bad magic"));
    }
    let dtype = read_u8(r)?;
    if dtype != DTYPE_F64 {
        return Err(bad("field", format!("unsupported dtype code {dtype}")));
    }
    let shape = read_shape(r, "field")?;
    let len = shape
        .iter()
        .try_fold(1usize, |a, &n| a.checked_mul(n))
        .ok_or_else(|| bad("field", "element count overflows"))?;
    let mut bytes = vec![
        0u8;
        len.checked_mul(8)
            .ok_or_else(|| bad("field", "size overflows"))?
    ];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Field::new(&shape, data)?)
}

pub fn field_bytes(field: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * (field.shape().len() + field.len()));
    write_field(&mut out, field).expect("writing to a Vec cannot fail");
    out
}

pub fn save_field(path: &Path, field: &Field) -> AppResult<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| AppError::io(path, e))?);
    write_field(&mut w, field)?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn load_field(path: &Path) -> AppResult<Field> {
    let mut r = BufReader::new(File::open(path).map_err(|e| AppError::io(path, e))?);
    read_field(&mut r).map_err(|e| e.with_path(path))
}

/// CSV export of a 1-D field (one value per line) or a 2-D field (one row
/// per line). Values use Rust's shortest round-trip formatting.
pub fn field_to_csv(field: &Field) -> AppResult<String> {
    let (rows, cols) = match *field.shape() {
        [n] => (n, 1),
        [h, w] => (h, w),
        _ => return Err(bad("csv", "only 1-D and 2-D fields export to CSV")),
    };
    let mut s = String::new();
    for r in 0..rows {
        let line: Vec<String> = field.as_slice()[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_checkpoint(w: &mut impl Write, model: &NeuralEBM) -> AppResult<()> {
    let mlp = model.mlp();
    w.write_all(MODEL_MAGIC)?;
    let arch = NeuralEBM::ARCH.as_bytes();
    w.write_all(&(arch.len() as u32).to_le_bytes())?;
    w.write_all(arch)?;
    w.write_all(&model.sigma_data().to_le_bytes())?;
    write_shape(w, model.shape())?;
    w.write_all(&(mlp.sizes().len() as u32).to_le_bytes())?;
    for &s in mlp.sizes() {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    for j in 0..mlp.num_layers() {
        let (n_in, n_out) = (mlp.sizes()[j], mlp.sizes()[j + 1]);
        write_field(w, &Field::new(&[n_out, n_in], mlp.weight(j).to_vec())?)?;
        write_field(w, &Field::new(&[n_out], mlp.bias(j).to_vec())?)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> AppResult<NeuralEBM> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(bad("checkpoint", "bad magic"));
    }
    let alen = read_u32(r)? as usize;
    if alen > 256 {
        return Err(bad("checkpoint", "arch descriptor too long"));
    }
    let mut arch = vec![0u8; alen];
    r.read_exact(&mut arch)?;
    let arch =
        String::from_utf8(arch).map_err(|_| bad("checkpoint", "arch descriptor is not UTF-8"))?;
    if arch != NeuralEBM::ARCH {
        return Err(bad("checkpoint", format!("unknown architecture `{arch}`")));
    }
    let sigma_data = read_f64(r)?;
    let shape = read_shape(r, "checkpoint")?;
    let nsizes = read_u32(r)? as usize;
    if !(2..=64).contains(&nsizes) {
        return Err(bad(
            "checkpoint",
            format!("implausible layer count {nsizes}"),
        ));
    }
    let sizes = (0..nsizes)
        .map(|_| Ok(read_u64(r)? as usize))
        .collect::<AppResult<Vec<usize>>>()?;
    let mut params = Vec::new();
    for j in 0..nsizes - 1 {
        let w = read_field(r)?;
        let b = read_field(r)?;
        if w.shape() != [sizes[j + 1], sizes[j]] || b.shape() != [sizes[j + 1]] {
            return Err(bad(
                "checkpoint",
                format!("layer {j} arrays do not match the declared sizes"),
            ));
        }
        params.extend_from_slice(w.as_slice());
        params.extend_from_slice(b.as_slice());
    }
    let mlp = Mlp::from_params(&sizes, params)?;
    Ok(NeuralEBM::new(&shape, mlp, sigma_data)?)
}

pub fn checkpoint_bytes(model: &NeuralEBM) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, model).expect("writing to a Vec cannot fail");
    out
}

pub fn load_checkpoint(path: &Path) -> AppResult<NeuralEBM> {
    let mut r = BufReader::new(File::open(path).map_err(|e| AppError::io(path, e))?);
    read_checkpoint(&mut r).map_err(|e| e.with_path(path))
}

/// Reads a binary or ASCII PGM as a `[H, W]` field scaled to `[0, 1]`.
pub fn load_pgm(path: &Path) -> AppResult<Field> {
    let img = image::ImageReader::open(path)
        .map_err(|e| AppError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| AppError::io(path, e))?
        .decode()
        .map_err(|e| bad("pgm", e.to_string()).with_path(path))?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    let data = gray
        .pixels()
        .map(|p| p.0[0] as f64 / u16::MAX as f64)
        .collect();
    Ok(Field::new(&[h as usize, w as usize], data)?)
}

/// Writes a `[H, W]` field as an 8-bit binary PGM, clamping to `[lo, hi]`.
pub fn pgm_bytes(field: &Field, lo: f64, hi: f64) -> AppResult<Vec<u8>> {
    let (h, w) = match *field.shape() {
        [h, w] => (h, w),
        _ => return Err(bad("pgm", "PGM export needs a 2-D field")),
    };
    if !(hi > lo) {
        return Err(bad("pgm", "display range must have hi > lo"));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(field.as_slice().iter().map(|&v| {
        let s = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        (s * 255.0).round() as u8
    }));
    Ok(out)
}
