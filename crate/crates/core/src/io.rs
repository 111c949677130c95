//! File codecs: PGM and raw-f64 images, and the manifest + blob format used
//! for network weights, optimizer state and coefficient dumps.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ndtensor::Tensor;
use crate::tfunet::{ArchConfig, CoeffPyramid, LevelStacks, NetworkParams, ParamRole};

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit)
// ---------------------------------------------------------------------------

/// Write an image as binary PGM. Pixels are clamped to [0, 1] and quantized
/// with round-half-away-from-zero, so 0.5 maps to byte 128.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut pos = 0usize;
    let err = |offset: usize, detail: &str| Error::Codec {
        format: "pgm",
        offset,
        detail: detail.to_string(),
    };
    let token = |pos: &mut usize| -> Result<String> {
        // Skip whitespace and '#' comment lines.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err(start, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(err(0, "expected magic P5"));
    }
    let width: usize = token(&mut pos)?.parse().map_err(|_| err(pos, "bad width"))?;
    let height: usize = token(&mut pos)?.parse().map_err(|_| err(pos, "bad height"))?;
    let maxval: usize = token(&mut pos)?.parse().map_err(|_| err(pos, "bad maxval"))?;
    if maxval != 255 {
        return Err(err(pos, "only 8-bit maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + width * height {
        return Err(err(bytes.len(), "truncated pixel data"));
    }
    let data = bytes[pos..pos + width * height].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, data)
}

// ---------------------------------------------------------------------------
// Raw f64 (one text header line, then little-endian payload)
// ---------------------------------------------------------------------------

/// Write the exact f64 pixels: header line `f64 H W`, then H·W little-endian
/// doubles. Round-trips bit-exactly.
pub fn write_raw_f64(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("f64 {} {}\n", img.height, img.width).into_bytes();
    bytes.reserve(img.data.len() * 8);
    for v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_raw_f64(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::Codec { format: "raw-f64", offset: bytes.len(), detail: "missing header newline".into() })?;
    let header = String::from_utf8_lossy(&bytes[..header_end]);
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "f64" {
        return Err(Error::Codec { format: "raw-f64", offset: 0, detail: format!("bad header `{header}`") });
    }
    let height: usize = parts[1]
        .parse()
        .map_err(|_| Error::Codec { format: "raw-f64", offset: 4, detail: "bad height".into() })?;
    let width: usize = parts[2]
        .parse()
        .map_err(|_| Error::Codec { format: "raw-f64", offset: 4, detail: "bad width".into() })?;
    let payload = &bytes[header_end + 1..];
    let expected = height * width * 8;
    if payload.len() != expected {
        return Err(Error::Codec {
            format: "raw-f64",
            offset: header_end + 1 + payload.len(),
            detail: format!("expected {expected} payload bytes, got {}", payload.len()),
        });
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Image::new(height, width, data)
}

/// Load an image by extension: `.pgm` or `.f64`.
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("f64") => read_raw_f64(path),
        other => Err(Error::arg("load_image", format!("unsupported extension {other:?}"))),
    }
}

/// Load every `*.f64` image in a directory, sorted by file name.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading dataset dir {}", dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("f64"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::arg("load_dataset_dir", format!("no .f64 images in {}", dir.display())));
    }
    paths.iter().map(|p| read_raw_f64(p)).collect()
}

// ---------------------------------------------------------------------------
// Manifest + blob tensor container
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub struct TensorRecord {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Write a manifest + little-endian f64 blob pair.
pub fn save_tensor_blob(
    manifest_path: &Path,
    blob_path: &Path,
    kind: &str,
    meta: serde_json::Value,
    records: &[(String, String, Tensor)],
) -> Result<()> {
    let mut tensors = Vec::with_capacity(records.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, role, t) in records {
        tensors.push(TensorEntry {
            name: name.clone(),
            role: role.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".to_string(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { format: "tfsynth-tensors".into(), version: 1, kind: kind.into(), meta, tensors };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Codec { format: "manifest", offset: 0, detail: e.to_string() })?;
    let mut f = fs::File::create(manifest_path)
        .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
    f.write_all(json.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
    fs::write(blob_path, blob).map_err(|e| Error::io(format!("writing {}", blob_path.display()), e))
}

/// Read a manifest + blob pair, validating that the entries tile the blob
/// exactly (every tensor listed once, no orphan bytes).
pub fn load_tensor_blob(manifest_path: &Path, blob_path: &Path, expect_kind: &str) -> Result<(Manifest, Vec<TensorRecord>)> {
    let mut json = String::new();
    fs::File::open(manifest_path)
        .and_then(|mut f| f.read_to_string(&mut json))
        .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::Codec { format: "manifest", offset: 0, detail: e.to_string() })?;
    if manifest.format != "tfsynth-tensors" || manifest.kind != expect_kind {
        return Err(Error::Codec {
            format: "manifest",
            offset: 0,
            detail: format!("expected kind `{expect_kind}`, got `{}/{}`", manifest.format, manifest.kind),
        });
    }
    let blob = fs::read(blob_path).map_err(|e| Error::io(format!("reading {}", blob_path.display()), e))?;

    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(manifest.tensors.len());
    let mut records = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.dtype != "f64" {
            return Err(Error::Codec {
                format: "manifest",
                offset: entry.offset,
                detail: format!("tensor {}: unsupported dtype {}", entry.name, entry.dtype),
            });
        }
        let len: usize = entry.shape.iter().product::<usize>() * 8;
        let end = entry.offset + len;
        if end > blob.len() {
            return Err(Error::Codec {
                format: "blob",
                offset: entry.offset,
                detail: format!("tensor {} extends past blob end", entry.name),
            });
        }
        spans.push((entry.offset, end));
        let data = blob[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(TensorRecord {
            name: entry.name.clone(),
            role: entry.role.clone(),
            shape: entry.shape.clone(),
            data,
        });
    }
    spans.sort();
    let mut cursor = 0;
    for (start, end) in spans {
        if start != cursor {
            return Err(Error::Codec {
                format: "blob",
                offset: cursor,
                detail: "blob bytes not covered exactly once by the manifest".into(),
            });
        }
        cursor = end;
    }
    if cursor != blob.len() {
        return Err(Error::Codec {
            format: "blob",
            offset: cursor,
            detail: format!("{} orphan bytes after the last tensor", blob.len() - cursor),
        });
    }
    Ok((manifest, records))
}

// ---------------------------------------------------------------------------
// Weights persistence
// ---------------------------------------------------------------------------

pub const WEIGHTS_MANIFEST: &str = "manifest.json";
pub const WEIGHTS_BLOB: &str = "weights.bin";

fn role_str(role: ParamRole) -> &'static str {
    match role {
        ParamRole::Encoder => "encoder",
        ParamRole::Decoder => "decoder",
        ParamRole::Output => "output",
    }
}

/// Save all parameters and batch-norm state into `dir`.
pub fn save_weights(dir: &Path, params: &NetworkParams) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut records = Vec::new();
    params.visit_state(|name, role, t| {
        records.push((name.to_string(), role_str(role).to_string(), t.clone()));
    });
    let meta = serde_json::json!({ "arch": params.arch });
    save_tensor_blob(&dir.join(WEIGHTS_MANIFEST), &dir.join(WEIGHTS_BLOB), "weights", meta, &records)
}

/// Load weights from `dir`, validating every tensor name and shape against
/// the architecture recorded in the manifest.
pub fn load_weights(dir: &Path) -> Result<NetworkParams> {
    let (manifest, records) =
        load_tensor_blob(&dir.join(WEIGHTS_MANIFEST), &dir.join(WEIGHTS_BLOB), "weights")?;
    let arch: ArchConfig = serde_json::from_value(
        manifest.meta.get("arch").cloned().unwrap_or(serde_json::Value::Null),
    )
    .map_err(|e| Error::Codec { format: "manifest", offset: 0, detail: format!("bad arch: {e}") })?;
    load_params_from_records(&arch, records)
}

pub(crate) fn load_params_from_records(arch: &ArchConfig, records: Vec<TensorRecord>) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(arch)?;
    let mut by_name: std::collections::HashMap<String, TensorRecord> = std::collections::HashMap::new();
    for r in records {
        if by_name.insert(r.name.clone(), r).is_some() {
            return Err(Error::WeightsMismatch { detail: "duplicate tensor in manifest".into() });
        }
    }
    let mut missing = Vec::new();
    let mut error: Option<Error> = None;
    params.visit_state_mut(|name, t| {
        match by_name.remove(name) {
            None => missing.push(name.to_string()),
            Some(rec) => {
                if rec.shape != t.shape() {
                    error.get_or_insert(Error::WeightsMismatch {
                        detail: format!("tensor {name}: shape {:?} does not match expected {:?}", rec.shape, t.shape()),
                    });
                } else {
                    match Tensor::new(rec.shape, rec.data) {
                        Ok(new) => *t = new,
                        Err(e) => {
                            error.get_or_insert(e);
                        }
                    }
                }
            }
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::WeightsMismatch { detail: format!("missing tensors: {missing:?}") });
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::WeightsMismatch { detail: format!("unexpected tensor `{extra}` for this architecture") });
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// Coefficient pyramid persistence
// ---------------------------------------------------------------------------

pub const COEFFS_MANIFEST: &str = "coefficients.json";
pub const COEFFS_BLOB: &str = "coefficients.bin";

/// Save a coefficient pyramid into `dir` using the manifest + blob format.
pub fn save_pyramid(dir: &Path, pyr: &CoeffPyramid) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut records: Vec<(String, String, Tensor)> = Vec::new();
    for (i, l) in pyr.levels.iter().enumerate() {
        records.push((format!("level{}.h", i + 1), "highpass".into(), l.h.clone()));
        records.push((format!("level{}.v", i + 1), "highpass".into(), l.v.clone()));
        records.push((format!("level{}.d", i + 1), "highpass".into(), l.d.clone()));
    }
    records.push(("coarse".into(), "coarse".into(), pyr.coarse.clone()));
    if let Some(bp) = &pyr.bypass {
        for (i, b) in bp.iter().enumerate() {
            records.push((format!("bypass{}", i + 1), "bypass".into(), b.clone()));
        }
    }
    let meta = serde_json::json!({ "levels": pyr.levels.len(), "bypass": pyr.bypass.is_some() });
    save_tensor_blob(&dir.join(COEFFS_MANIFEST), &dir.join(COEFFS_BLOB), "pyramid", meta, &records)
}

pub fn load_pyramid(dir: &Path) -> Result<CoeffPyramid> {
    let (manifest, records) =
        load_tensor_blob(&dir.join(COEFFS_MANIFEST), &dir.join(COEFFS_BLOB), "pyramid")?;
    let levels = manifest.meta.get("levels").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let has_bypass = manifest.meta.get("bypass").and_then(|v| v.as_bool()).unwrap_or(false);
    let mut by_name: std::collections::HashMap<String, TensorRecord> =
        records.into_iter().map(|r| (r.name.clone(), r)).collect();
    let mut take = |name: String| -> Result<Tensor> {
        let rec = by_name
            .remove(&name)
            .ok_or(Error::Codec { format: "manifest", offset: 0, detail: format!("missing tensor {name}") })?;
        Tensor::new(rec.shape, rec.data)
    };
    let mut stacks = Vec::with_capacity(levels);
    for i in 0..levels {
        stacks.push(LevelStacks {
            h: take(format!("level{}.h", i + 1))?,
            v: take(format!("level{}.v", i + 1))?,
            d: take(format!("level{}.d", i + 1))?,
        });
    }
    let coarse = take("coarse".into())?;
    let bypass = if has_bypass {
        let mut bp = Vec::with_capacity(levels);
        for i in 0..levels {
            bp.push(take(format!("bypass{}", i + 1))?);
        }
        Some(bp)
    } else {
        None
    };
    Ok(CoeffPyramid { levels: stacks, coarse, bypass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::BnMode;
    use crate::tfunet;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("tfsynth-io-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn rand_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn raw_f64_roundtrip_is_bit_exact() {
        let dir = tmpdir("raw");
        let img = rand_image(1, 7, 5);
        let path = dir.join("img.f64");
        write_raw_f64(&path, &img).unwrap();
        let back = read_raw_f64(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_of_half_gray_is_byte_128() {
        let dir = tmpdir("pgm");
        let img = Image::new(2, 2, vec![0.5; 4]).unwrap();
        let path = dir.join("img.pgm");
        write_pgm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        let pixels = &bytes[bytes.len() - 4..];
        assert_eq!(pixels, &[128, 128, 128, 128]);
        let back = read_pgm(&path).unwrap();
        for v in back.data {
            assert!((v - 128.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_roundtrip_after_quantization() {
        let dir = tmpdir("pgmq");
        let img = rand_image(3, 9, 4);
        let path = dir.join("img.pgm");
        write_pgm(&path, &img).unwrap();
        let once = read_pgm(&path).unwrap();
        write_pgm(&path, &once).unwrap();
        let twice = read_pgm(&path).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn truncated_raw_file_is_a_clean_error() {
        let dir = tmpdir("trunc");
        let img = rand_image(5, 4, 4);
        let path = dir.join("img.f64");
        write_raw_f64(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match read_raw_f64(&path) {
            Err(Error::Codec { format: "raw-f64", .. }) => {}
            other => panic!("expected codec error, got {other:?}"),
        }
    }

    #[test]
    fn weights_roundtrip_bit_exact() {
        let dir = tmpdir("weights");
        let arch = tfunet::ArchConfig { levels: 2, base_channels: 3, channel_growth: 2, kernel_size: 3, bypass: true };
        let mut params = tfunet::init_params(&arch, 77).unwrap();
        // Give the running stats non-default values so the roundtrip covers them.
        params.encoder[0].running_mean = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        save_weights(&dir, &params).unwrap();
        let back = load_weights(&dir).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn bypass_weights_rejected_by_no_bypass_arch() {
        let dir = tmpdir("mismatch");
        let arch = tfunet::ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: true };
        let params = tfunet::init_params(&arch, 7).unwrap();
        save_weights(&dir, &params).unwrap();
        // Claim a no-bypass architecture in the manifest.
        let manifest_path = dir.join(WEIGHTS_MANIFEST);
        let text = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, text.replace("\"bypass\": true", "\"bypass\": false")).unwrap();
        match load_weights(&dir) {
            Err(Error::WeightsMismatch { detail }) => {
                assert!(detail.contains("shape") || detail.contains("tensor"), "{detail}");
            }
            other => panic!("expected mismatch error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_orphan_bytes_detected() {
        let dir = tmpdir("orphan");
        let arch = tfunet::ArchConfig { levels: 1, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: false };
        let params = tfunet::init_params(&arch, 7).unwrap();
        save_weights(&dir, &params).unwrap();
        let blob_path = dir.join(WEIGHTS_BLOB);
        let mut blob = fs::read(&blob_path).unwrap();
        blob.extend_from_slice(&[0u8; 8]);
        fs::write(&blob_path, blob).unwrap();
        match load_weights(&dir) {
            Err(Error::Codec { detail, .. }) => assert!(detail.contains("orphan"), "{detail}"),
            other => panic!("expected orphan error, got {other:?}"),
        }
    }

    #[test]
    fn pyramid_roundtrip() {
        let dir = tmpdir("pyr");
        let arch = tfunet::ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: true };
        let params = tfunet::init_params(&arch, 9).unwrap();
        let img = rand_image(11, 16, 16);
        let pyr = tfunet::encode(&params, &img.to_tensor(), BnMode::Eval).unwrap();
        save_pyramid(&dir, &pyr).unwrap();
        let back = load_pyramid(&dir).unwrap();
        assert_eq!(pyr, back);
    }
}
