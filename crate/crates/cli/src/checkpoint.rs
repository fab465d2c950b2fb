//! Model checkpoints: a structured-text header followed by the raw 64-bit
//! parameter array, little-endian. Byte-exact round trip.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use longtail_core::model::{Model, ModelKind, ModelSpec};
use longtail_core::ParamVector;

const MAGIC: &[u8; 8] = b"LTCKPT1\n";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    kind: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<usize>,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug)]
pub struct CheckpointError(String);

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError(format!("io error: {e}"))
    }
}

fn header_from_spec(
    spec: &ModelSpec,
    param_count: usize,
    config_hash: Option<&str>,
    seed: Option<u64>,
) -> Header {
    let (kind, hidden, channels, kernel) = match &spec.kind {
        ModelKind::Mlp { hidden } => ("mlp".to_string(), Some(hidden.clone()), None, None),
        ModelKind::SmallCnn { channels, kernel } => (
            "small_cnn".to_string(),
            None,
            Some(channels.clone()),
            Some(*kernel),
        ),
    };
    Header {
        kind,
        input_shape: spec.input_shape.clone(),
        num_classes: spec.num_classes,
        init_seed: spec.init_seed,
        hidden,
        channels,
        kernel,
        param_count,
        config_hash: config_hash.map(str::to_string),
        seed,
    }
}

fn spec_from_header(h: &Header) -> Result<ModelSpec, CheckpointError> {
    let kind = match h.kind.as_str() {
        "mlp" => ModelKind::Mlp {
            hidden: h.hidden.clone().unwrap_or_default(),
        },
        "small_cnn" => ModelKind::SmallCnn {
            channels: h
                .channels
                .clone()
                .ok_or_else(|| CheckpointError("small_cnn header missing channels".into()))?,
            kernel: h
                .kernel
                .ok_or_else(|| CheckpointError("small_cnn header missing kernel".into()))?,
        },
        other => return Err(CheckpointError(format!("unknown model kind '{other}'"))),
    };
    Ok(ModelSpec {
        kind,
        input_shape: h.input_shape.clone(),
        num_classes: h.num_classes,
        init_seed: h.init_seed,
    })
}

/// Write `spec` + `params` to `path`.
pub fn save(
    path: &Path,
    spec: &ModelSpec,
    params: &ParamVector,
    config_hash: Option<&str>,
    seed: Option<u64>,
) -> Result<(), CheckpointError> {
    let header = header_from_spec(spec, params.len(), config_hash, seed);
    let header_toml =
        toml::to_string(&header).map_err(|e| CheckpointError(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header_toml.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_toml.len() as u32).to_le_bytes());
    out.extend_from_slice(header_toml.as_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Provenance stored alongside the parameters.
#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

/// Read a checkpoint back into a model with its trained parameters set,
/// plus the stored provenance.
pub fn load(path: &Path) -> Result<(Model, CheckpointMeta), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| CheckpointError(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let len_off = MAGIC.len();
    let header_len = u32::from_le_bytes([
        bytes[len_off],
        bytes[len_off + 1],
        bytes[len_off + 2],
        bytes[len_off + 3],
    ]) as usize;
    let header_start = len_off + 4;
    let body_start = header_start + header_len;
    if bytes.len() < body_start {
        return Err(CheckpointError(format!(
            "{}: truncated header ({} bytes, header wants {})",
            path.display(),
            bytes.len(),
            header_len
        )));
    }
    let header: Header = toml::from_str(
        std::str::from_utf8(&bytes[header_start..body_start])
            .map_err(|e| CheckpointError(format!("header is not utf-8: {e}")))?,
    )
    .map_err(|e| CheckpointError(format!("header decode: {e}")))?;

    let body = &bytes[body_start..];
    if body.len() != 8 * header.param_count {
        return Err(CheckpointError(format!(
            "{}: parameter block is {} bytes, header wants {}",
            path.display(),
            body.len(),
            8 * header.param_count
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();

    let spec = spec_from_header(&header)?;
    let mut model =
        Model::new(spec).map_err(|e| CheckpointError(format!("rebuilding model: {e}")))?;
    model
        .set_params(ParamVector::from_vec(params))
        .map_err(|e| CheckpointError(format!("restoring parameters: {e}")))?;
    let meta = CheckpointMeta {
        config_hash: header.config_hash,
        seed: header.seed,
    };
    Ok((model, meta))
}

/// `write_atomic` for checkpoints: save to a temp name, rename on success.
pub fn save_atomic(
    path: &Path,
    spec: &ModelSpec,
    params: &ParamVector,
    config_hash: Option<&str>,
    seed: Option<u64>,
) -> Result<(), CheckpointError> {
    let tmp = crate::outputs::temp_name(path);
    save(&tmp, spec, params, config_hash, seed)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use longtail_core::model::ModelSpec;

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::new(ModelSpec::mlp(4, vec![5], 3, 11)).unwrap();
        let mut params = model.get_params();
        params.as_mut_slice()[0] = -0.123456789012345;
        save(&path, model.spec(), &params, Some("deadbeef"), Some(11)).unwrap();

        let (loaded, meta) = load(&path).unwrap();
        assert_eq!(meta.config_hash.as_deref(), Some("deadbeef"));
        assert_eq!(meta.seed, Some(11));
        assert_eq!(loaded.get_params().as_slice(), params.as_slice());
        assert_eq!(loaded.spec(), model.spec());

        // Save the loaded model again: identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save(
            &path2,
            loaded.spec(),
            &loaded.get_params(),
            Some("deadbeef"),
            Some(11),
        )
        .unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn cnn_specs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.ckpt");
        let model = Model::new(ModelSpec::small_cnn([4, 4, 1], vec![2, 3], 3, 2, 5)).unwrap();
        save(&path, model.spec(), &model.get_params(), None, None).unwrap();
        let (loaded, meta) = load(&path).unwrap();
        assert!(meta.config_hash.is_none());
        assert_eq!(loaded.spec(), model.spec());
        assert_eq!(loaded.param_count(), model.param_count());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("magic"));

        let model = Model::new(ModelSpec::mlp(2, vec![], 2, 0)).unwrap();
        save(&path, model.spec(), &model.get_params(), None, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path)
            .unwrap_err()
            .to_string()
            .contains("parameter block"));
    }
}
