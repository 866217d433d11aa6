//! On-disk formats.
//!
//! * Environments: binary `TWK1` header, the packed open mask, then a CRC32 of
//!   everything before it.
//! * Survival fields and site-valued fields (X, λ): raw little-endian f64
//!   data plus a JSON header next to it (`<file>.json`) carrying shape,
//!   metadata and the CRC32 of the data.
//! * Site sets: text, one site per line as `x,y`.
//! * Hierarchies: JSON with a format tag and version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bitvec::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::lattice::{BoundaryRule, BoxSpec, Environment, Site, SiteSet, SiteValues};
use crate::spectral::LambdaField;
use crate::survival::{Kernel, SurvivalField, SurvivalQuery};

pub const ENV_MAGIC: &[u8; 4] = b"TWK1";
pub const ENV_VERSION: u16 = 1;
pub const JSON_VERSION: u32 = 1;

fn truncated(expected: usize, found: usize) -> Error {
    FormatError::Truncated { expected, found }.into()
}

fn invalid(msg: impl Into<String>) -> Error {
    FormatError::Invalid(msg.into()).into()
}

/// Encodes an environment. Only boxes centered at the origin are
/// representable.
pub fn encode_environment(env: &Environment) -> Result<Vec<u8>> {
    let bx = env.box_spec();
    if bx.origin != Site::origin(bx.dim) {
        return Err(Error::domain("only origin-centered boxes can be saved"));
    }
    let mut out = Vec::with_capacity(32 + env.mask_bytes().len());
    out.extend_from_slice(ENV_MAGIC);
    out.extend_from_slice(&ENV_VERSION.to_le_bytes());
    out.push(bx.dim as u8);
    for _ in 0..bx.dim {
        out.extend_from_slice(&bx.half_width.to_le_bytes());
    }
    out.extend_from_slice(&env.p().to_le_bytes());
    out.extend_from_slice(&env.seed().to_le_bytes());
    out.push(env.boundary().code());
    let mut mask = env.mask().to_bitvec();
    mask.set_uninitialized(false);
    out.extend_from_slice(mask.as_raw_slice());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(truncated(self.pos + n, self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

pub fn decode_environment(buf: &[u8]) -> Result<Environment> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4.min(buf.len()))?;
    if magic != ENV_MAGIC {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(ENV_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        }
        .into());
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != ENV_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version as u32,
            supported: ENV_VERSION as u32,
        }
        .into());
    }
    let dim = r.array::<1>()?[0] as usize;
    if !(1..=3).contains(&dim) {
        return Err(invalid(format!("dimension {dim}")));
    }
    let mut widths = Vec::with_capacity(dim);
    for _ in 0..dim {
        widths.push(i32::from_le_bytes(r.array()?));
    }
    if widths.iter().any(|&w| w != widths[0]) {
        return Err(invalid("per-axis half widths differ"));
    }
    let p = f64::from_le_bytes(r.array()?);
    let seed = u64::from_le_bytes(r.array()?);
    let code = r.array::<1>()?[0];
    let boundary =
        BoundaryRule::from_code(code).ok_or_else(|| invalid(format!("boundary code {code}")))?;
    let bx = BoxSpec::new(dim, widths[0]).map_err(|e| invalid(e.to_string()))?;
    let nbytes = bx.volume().div_ceil(8);
    let body_end = r.pos + nbytes;
    if buf.len() < body_end + 4 {
        return Err(truncated(body_end + 4, buf.len()));
    }
    let mask_bytes = r.take(nbytes)?;
    let stored = u32::from_le_bytes(r.array()?);
    let computed = crc32fast::hash(&buf[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    if r.pos != buf.len() {
        return Err(invalid(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let mut open = BitVec::<u8, Lsb0>::from_slice(mask_bytes);
    open.truncate(bx.volume());
    Environment::from_parts(bx, open, p, seed, boundary)
}

pub fn save_environment(env: &Environment, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_environment(env)?)?;
    Ok(())
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    decode_environment(&fs::read(path)?)
}

/// Path of the JSON header belonging to a data file.
pub fn header_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn f64_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn read_f64s(bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(truncated(expected * 8, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn check_tag(format: &str, version: u32, want: &str) -> Result<()> {
    if format != want {
        return Err(FormatError::BadMagic {
            expected: want.into(),
            found: format.into(),
        }
        .into());
    }
    if version != JSON_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: JSON_VERSION,
        }
        .into());
    }
    Ok(())
}

fn write_pair(path: &Path, data: &[u8], header: &impl Serialize) -> Result<()> {
    fs::write(path, data)?;
    let mut f = fs::File::create(header_path(path))?;
    serde_json::to_writer_pretty(&mut f, header).map_err(FormatError::from)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_header<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(header_path(path))?;
    Ok(serde_json::from_slice(&text).map_err(FormatError::from)?)
}

fn check_crc(data: &[u8], stored: u32) -> Result<()> {
    let computed = crc32fast::hash(data);
    if computed != stored {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    Ok(())
}

const FIELD_FORMAT: &str = "trapwalk-survival-field";

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    format: String,
    version: u32,
    #[serde(rename = "box")]
    bx: BoxSpec,
    horizon: usize,
    /// Entries per layer (box volume); layers are stored in time order.
    volume: usize,
    /// Stored values are `h_t / exp(log_scale[t])`.
    log_scale: Vec<f64>,
    log_domain: bool,
    query: SurvivalQuery,
    crc32: u32,
}

/// Writes every layer densely over the box, row-major with axis 0 fastest.
pub fn save_survival_field(field: &SurvivalField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bx = *field.box_spec();
    let mut data = Vec::with_capacity((field.horizon() + 1) * bx.volume() * 8);
    for t in 0..=field.horizon() {
        data.extend(f64_bytes(field.dense_scaled(t)));
    }
    let header = FieldHeader {
        format: FIELD_FORMAT.into(),
        version: JSON_VERSION,
        bx,
        horizon: field.horizon(),
        volume: bx.volume(),
        log_scale: field.log_scales().to_vec(),
        log_domain: field.is_log_domain(),
        query: field.query().clone(),
        crc32: crc32fast::hash(&data),
    };
    write_pair(path, &data, &header)
}

pub fn load_survival_field(path: impl AsRef<Path>) -> Result<SurvivalField> {
    let path = path.as_ref();
    let h: FieldHeader = read_header(path)?;
    check_tag(&h.format, h.version, FIELD_FORMAT)?;
    if h.volume != h.bx.volume() || h.log_scale.len() != h.horizon + 1 {
        return Err(invalid("field header shape mismatch"));
    }
    let data = fs::read(path)?;
    let all = read_f64s(&data, (h.horizon + 1) * h.volume)?;
    check_crc(&data, h.crc32)?;
    // Admissible sites are exactly those with h_0 > 0.
    let nodes: Vec<usize> = (0..h.volume).filter(|&i| all[i] > 0.0).collect();
    let kernel = Kernel::from_nodes(&h.bx, nodes.clone(), |_| false);
    let layers = all
        .chunks_exact(h.volume)
        .map(|l| nodes.iter().map(|&i| l[i]).collect())
        .collect();
    SurvivalField::from_parts(h.query, kernel, layers, h.log_scale)
}

const VALUES_FORMAT: &str = "trapwalk-site-values";

#[derive(Serialize, Deserialize)]
struct ValuesHeader {
    format: String,
    version: u32,
    kind: String,
    count: usize,
    sites: Vec<Site>,
    #[serde(default)]
    meta: serde_json::Value,
    crc32: u32,
}

/// Values in site order as raw f64, sites and metadata in the header.
pub fn save_site_values(
    values: &SiteValues,
    kind: &str,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let data = f64_bytes(values.values().iter().copied());
    let header = ValuesHeader {
        format: VALUES_FORMAT.into(),
        version: JSON_VERSION,
        kind: kind.into(),
        count: values.len(),
        sites: values.sites().iter().copied().collect(),
        meta,
        crc32: crc32fast::hash(&data),
    };
    write_pair(path.as_ref(), &data, &header)
}

/// Returns the values, their kind tag and metadata.
pub fn load_site_values(path: impl AsRef<Path>) -> Result<(SiteValues, String, serde_json::Value)> {
    let path = path.as_ref();
    let h: ValuesHeader = read_header(path)?;
    check_tag(&h.format, h.version, VALUES_FORMAT)?;
    if h.sites.len() != h.count {
        return Err(invalid("site count mismatch"));
    }
    let data = fs::read(path)?;
    let vals = read_f64s(&data, h.count)?;
    check_crc(&data, h.crc32)?;
    if h.sites.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("sites not strictly sorted"));
    }
    let sites: SiteSet = h.sites.into_iter().collect();
    Ok((SiteValues::new(sites, vals)?, h.kind, h.meta))
}

pub fn save_lambda_field(field: &LambdaField, path: impl AsRef<Path>) -> Result<()> {
    let meta = serde_json::json!({ "radius": field.radius(), "tol": field.tol() });
    save_site_values(field.values(), "lambda", meta, path)
}

pub fn load_lambda_field(path: impl AsRef<Path>) -> Result<LambdaField> {
    let (values, kind, meta) = load_site_values(path)?;
    if kind != "lambda" {
        return Err(invalid(format!("expected a lambda field, found {kind:?}")));
    }
    let num = |k: &str| {
        meta.get(k)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| invalid(format!("missing {k}")))
    };
    Ok(LambdaField::from_values(
        values,
        num("radius")?,
        num("tol")?,
    ))
}

pub fn format_site_set(set: &SiteSet) -> String {
    let mut s = String::new();
    for x in set {
        let coords: Vec<String> = x.coords().iter().map(i32::to_string).collect();
        s.push_str(&coords.join(","));
        s.push('\n');
    }
    s
}

/// Blank lines and lines starting with `#` are skipped.
pub fn parse_site_set(text: &str) -> Result<SiteSet> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<Site>()
                .map_err(|e| invalid(format!("{l:?}: {e}")))
        })
        .collect()
}

pub fn save_site_set(set: &SiteSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_site_set(set))?;
    Ok(())
}

pub fn load_site_set(path: impl AsRef<Path>) -> Result<SiteSet> {
    parse_site_set(&fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct Tagged<T> {
    format: String,
    version: u32,
    body: T,
}

/// Any serde value as tagged JSON.
pub fn save_json<T: Serialize>(value: &T, format: &str, path: impl AsRef<Path>) -> Result<()> {
    let tagged = Tagged {
        format: format.into(),
        version: JSON_VERSION,
        body: value,
    };
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &tagged).map_err(FormatError::from)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(format: &str, path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read(path)?;
    let tagged: Tagged<serde_json::Value> =
        serde_json::from_slice(&text).map_err(FormatError::from)?;
    check_tag(&tagged.format, tagged.version, format)?;
    Ok(serde_json::from_value(tagged.body).map_err(FormatError::from)?)
}
