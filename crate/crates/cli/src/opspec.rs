//! Forward-operator construction from `--operator` / `--operator-args` and
//! the measurement file.

use std::collections::BTreeMap;
use std::path::Path;

use tfsynth_core::error::{Error, Result};
use tfsynth_core::image::Image;
use tfsynth_core::io;
use tfsynth_core::solver::{BlurOp, ForwardOperator, IdentityOp, MaskOp};

pub struct OperatorSetup {
    pub op: Box<dyn ForwardOperator>,
    /// Measurement vector in the operator's data space.
    pub y: Vec<f64>,
    /// Resolved description for the config snapshot.
    pub resolved: BTreeMap<String, String>,
}

fn parse_args(args: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for part in args.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part.split_once('=').ok_or(Error::ConfigValue {
            key: "operator-args".into(),
            detail: format!("expected key=value, got `{part}`"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::ConfigValue { key: key.into(), detail: format!("cannot parse `{v}`") }),
    }
}

/// The measurement file either matches the operator's data space directly
/// (a `f64 1 m` vector for mask) or holds the full image domain, in which
/// case the operator is applied to produce the measurement.
fn extract_measurement(op: &dyn ForwardOperator, data: &Image) -> Result<Vec<f64>> {
    let (h, w) = op.image_shape();
    if (data.height, data.width) == (h, w) {
        return Ok(op.apply(data));
    }
    if data.height == 1 && data.width == op.data_len() {
        return Ok(data.data.clone());
    }
    Err(Error::ShapeMismatch {
        op: "solve",
        detail: format!(
            "data is {}x{}, expected the {h}x{w} image domain or a 1x{} measurement vector",
            data.height,
            data.width,
            op.data_len()
        ),
    })
}

pub fn build(kind: &str, args: &str, data_path: &Path) -> Result<OperatorSetup> {
    let map = parse_args(args)?;
    let data = io::load_image(data_path)?;
    let mut resolved = BTreeMap::new();
    resolved.insert("operator".to_string(), kind.to_string());
    resolved.insert("data".to_string(), data_path.display().to_string());

    let op: Box<dyn ForwardOperator> = match kind {
        "identity" => {
            reject_unknown(&map, &[])?;
            Box::new(IdentityOp { height: data.height, width: data.width })
        }
        "mask" => {
            if let Some(file) = map.get("file") {
                reject_unknown(&map, &["file"])?;
                let bitmap_img = io::load_image(Path::new(file))?;
                let bitmap: Vec<bool> = bitmap_img.data.iter().map(|&v| v > 0.0).collect();
                resolved.insert("mask_file".to_string(), file.clone());
                Box::new(MaskOp::from_bitmap(bitmap_img.height, bitmap_img.width, bitmap)?)
            } else {
                reject_unknown(&map, &["fraction", "seed", "height", "width"])?;
                let fraction: f64 = get(&map, "fraction")?.ok_or(Error::ConfigValue {
                    key: "operator-args".into(),
                    detail: "mask needs fraction=... or file=...".into(),
                })?;
                let seed: u64 = get(&map, "seed")?.unwrap_or(0);
                let height: usize = get(&map, "height")?.unwrap_or(data.height);
                let width: usize = get(&map, "width")?.unwrap_or(data.width);
                resolved.insert("mask_fraction".to_string(), fraction.to_string());
                resolved.insert("mask_seed".to_string(), seed.to_string());
                Box::new(MaskOp::random(height, width, fraction, seed)?)
            }
        }
        "blur" => {
            reject_unknown(&map, &["ksize", "sigma"])?;
            let ksize: usize = get(&map, "ksize")?.unwrap_or(5);
            let sigma: f64 = get(&map, "sigma")?.unwrap_or(1.0);
            resolved.insert("blur_ksize".to_string(), ksize.to_string());
            resolved.insert("blur_sigma".to_string(), sigma.to_string());
            Box::new(BlurOp::gaussian(data.height, data.width, ksize, sigma)?)
        }
        other => {
            return Err(Error::InvalidArg {
                op: "solve",
                detail: format!("unknown operator `{other}` (expected identity, mask or blur)"),
            })
        }
    };

    let y = extract_measurement(op.as_ref(), &data)?;
    Ok(OperatorSetup { op, y, resolved })
}

fn reject_unknown(map: &BTreeMap<String, String>, allowed: &[&str]) -> Result<()> {
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::UnknownConfigKey { key: format!("operator-args: {key}") });
        }
    }
    Ok(())
}
