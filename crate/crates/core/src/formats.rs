//! On-disk formats. All integers and floats are little-endian.
//!
//! | file | layout |
//! |------|--------|
//! | weights | `EETW`, u32 version = 1, u32 count; per tensor u16 name length, UTF-8 name, u8 ndim, ndim × u32 dims, f32 data |
//! | codes | `EETB`, u32 version = 1, u32 k, u64 n, n × ceil(k/8) packed bytes, n × u32 labels |
//! | matrices | `EETC`, u32 cols, u32 rows, row-major f32 |
//! | manifest | CSV `relative_path,label_id`, no header |
//!
//! Float tensors are rounded to f32 on write.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{EetError, Result};
use crate::linalg::Matrix;
use crate::retrieval::{bytes_per_code, BinaryCodeSet};
use crate::vit::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EETW";
pub const CODES_MAGIC: &[u8; 4] = b"EETB";
pub const MATRIX_MAGIC: &[u8; 4] = b"EETC";
pub const VERSION: u32 = 1;

fn bad(format: &'static str, reason: impl Into<String>) -> EetError {
    EetError::Format {
        format,
        reason: reason.into(),
    }
}

fn read_exact<R: Read, const N: usize>(r: &mut R, format: &'static str, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad(format, format!("truncated {what}")),
        _ => EetError::Io(e),
    })?;
    Ok(buf)
}

fn read_vec<R: Read>(r: &mut R, len: usize, format: &'static str, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(bad(format, format!("truncated {what}")));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, format: &'static str, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, format, what)?))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], format: &'static str) -> Result<()> {
    let got: [u8; 4] = read_exact(r, format, "magic")?;
    if &got != magic {
        return Err(bad(format, format!("bad magic {got:?}")));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R, format: &'static str) -> Result<()> {
    let mut one = [0u8; 1];
    match r.read(&mut one)? {
        0 => Ok(()),
        _ => Err(bad(format, "trailing bytes")),
    }
}

fn read_f32s<R: Read>(r: &mut R, count: usize, format: &'static str) -> Result<Vec<f64>> {
    let bytes = read_vec(r, count * 4, format, "float data")?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn write_f32s<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_weights<W: Write>(mut w: W, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| bad("EETW", format!("name too long: {name}")))?;
        let ndim = u8::try_from(t.dims.len()).map_err(|_| bad("EETW", format!("too many dims in {name}")))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(bad("EETW", format!("{name}: dims {:?} do not match {} values", t.dims, t.data.len())));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[ndim])?;
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| bad("EETW", format!("dimension too large in {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        write_f32s(&mut w, &t.data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor>> {
    expect_magic(&mut r, WEIGHTS_MAGIC, "EETW")?;
    let version = read_u32(&mut r, "EETW", "version")?;
    if version != VERSION {
        return Err(bad("EETW", format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r, "EETW", "tensor count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r, "EETW", "name length")?) as usize;
        let name = String::from_utf8(read_vec(&mut r, name_len, "EETW", "name")?)
            .map_err(|_| bad("EETW", "tensor name is not UTF-8"))?;
        let [ndim] = read_exact::<_, 1>(&mut r, "EETW", "ndim")?;
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r, "EETW", "dims")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("EETW", format!("{name}: size overflow")))?;
        let data = read_f32s(&mut r, len, "EETW")?;
        if out.insert(name.clone(), Tensor { dims, data }).is_some() {
            return Err(bad("EETW", format!("duplicate tensor {name}")));
        }
    }
    expect_eof(&mut r, "EETW")?;
    Ok(out)
}

pub fn write_codes<W: Write>(mut w: W, codes: &BinaryCodeSet) -> Result<()> {
    w.write_all(CODES_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(codes.k() as u32).to_le_bytes())?;
    w.write_all(&(codes.len() as u64).to_le_bytes())?;
    w.write_all(codes.bytes())?;
    for &l in codes.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_codes<R: Read>(mut r: R) -> Result<BinaryCodeSet> {
    expect_magic(&mut r, CODES_MAGIC, "EETB")?;
    let version = read_u32(&mut r, "EETB", "version")?;
    if version != VERSION {
        return Err(bad("EETB", format!("unsupported version {version}")));
    }
    let k = read_u32(&mut r, "EETB", "k")? as usize;
    let n = usize::try_from(u64::from_le_bytes(read_exact(&mut r, "EETB", "n")?))
        .map_err(|_| bad("EETB", "item count too large"))?;
    let len = n
        .checked_mul(bytes_per_code(k))
        .ok_or_else(|| bad("EETB", "size overflow"))?;
    let bits = read_vec(&mut r, len, "EETB", "codes")?;
    let labels = read_vec(&mut r, n * 4, "EETB", "labels")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    expect_eof(&mut r, "EETB")?;
    BinaryCodeSet::from_packed(k, bits, labels)
}

/// Writes an n×k matrix as `EETC` (k, n, row-major).
pub fn write_matrix<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.cols() as u32).to_le_bytes())?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    write_f32s(&mut w, m.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Matrix> {
    expect_magic(&mut r, MATRIX_MAGIC, "EETC")?;
    let k = read_u32(&mut r, "EETC", "k")? as usize;
    let n = read_u32(&mut r, "EETC", "n")? as usize;
    let data = read_f32s(&mut r, n * k, "EETC")?;
    expect_eof(&mut r, "EETC")?;
    Matrix::from_vec(n, k, data)
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn labels(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|e| e.label as usize + 1).max().unwrap_or(0)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Checks that labels are dense in `[0, C)` and paths stay under the root.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let mut seen = vec![false; c];
        for e in &self.entries {
            seen[e.label as usize] = true;
            if e.path.is_absolute() || e.path.components().any(|p| matches!(p, std::path::Component::ParentDir)) {
                return Err(bad("manifest", format!("path {} escapes the manifest root", e.path.display())));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(bad("manifest", format!("labels are not dense: class {missing} has no entries")));
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = File::open(path)?;
    parse_manifest(BufReader::new(file), root)
}

pub fn parse_manifest<R: Read>(r: R, root: PathBuf) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut entries = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad("manifest", e.to_string()))?;
        if rec.len() != 2 {
            return Err(bad("manifest", format!("line {}: expected 2 fields, got {}", line + 1, rec.len())));
        }
        let label = rec[1]
            .parse()
            .map_err(|_| bad("manifest", format!("line {}: bad label '{}'", line + 1, &rec[1])))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(&rec[0]),
            label,
        });
    }
    let m = Manifest { root, entries };
    m.validate()?;
    Ok(m)
}

pub fn write_manifest<W: Write>(w: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for e in entries {
        let path = e.path.to_str().ok_or_else(|| bad("manifest", "path is not UTF-8"))?;
        wr.write_record([path, &e.label.to_string()])
            .map_err(|e| bad("manifest", e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a two-column CSV with a header row.
pub fn write_pairs_csv<W: Write>(mut w: W, header: (&str, &str), rows: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    writeln!(w, "{},{}", header.0, header.1)?;
    for (a, b) in rows {
        writeln!(w, "{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Opens `path` for writing, creating parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}
