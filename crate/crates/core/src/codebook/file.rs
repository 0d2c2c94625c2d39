//! Codebook persistence as one JSON object.

use std::fs;
use std::path::Path;

use crate::scene::RisConfig;

use super::{all_buckets, Codebook, CodebookError};

pub(crate) const FORMAT_TAG: &str = "ris-lab-codebook";

pub fn codebook_bytes(cb: &Codebook) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(cb).expect("codebook serializes");
    out.push(b'\n');
    out
}

pub fn save_codebook(cb: &Codebook, path: &Path) -> Result<(), CodebookError> {
    fs::write(path, codebook_bytes(cb))?;
    Ok(())
}

fn validate(cb: &Codebook) -> Result<(), CodebookError> {
    let bad = |m: String| Err(CodebookError::Format(m));
    if cb.format != FORMAT_TAG {
        return bad(format!("unexpected format tag '{}'", cb.format));
    }
    if cb.resolution == 0 {
        return Err(CodebookError::Resolution);
    }
    let probe = RisConfig::from_bitstring(&cb.probe_config);
    let n_ris = match probe {
        Some(p) => p.len(),
        None => return bad("probe configuration is not a bit string".into()),
    };
    if cb.configs.is_empty() {
        return Err(CodebookError::NoCandidates);
    }
    if cb
        .configs
        .iter()
        .any(|c| RisConfig::from_bitstring(c).map(|c| c.len()) != Some(n_ris))
    {
        return bad("candidate configurations must be bit strings of equal length".into());
    }
    let keys = all_buckets(cb.n_obj, cb.resolution);
    if cb.entries.len() != keys.len() || cb.entries.iter().zip(&keys).any(|(e, k)| &e.key != k) {
        return bad("entries must cover every bucket exactly once, in key order".into());
    }
    for e in &cb.entries {
        if e.k_index >= cb.configs.len() || cb.configs[e.k_index] != e.config {
            return bad(format!(
                "entry {:?} references an unknown configuration",
                e.key
            ));
        }
    }
    let width = 2 * cb.sense_shape[0] * cb.sense_shape[1];
    if cb.fingerprints.iter().any(|f| f.features.len() != width) {
        return bad(format!("fingerprints must hold {width} reals"));
    }
    Ok(())
}

pub fn parse_codebook(bytes: &[u8]) -> Result<Codebook, CodebookError> {
    let cb: Codebook =
        serde_json::from_slice(bytes).map_err(|e| CodebookError::Format(e.to_string()))?;
    validate(&cb)?;
    Ok(cb)
}

pub fn load_codebook(path: &Path) -> Result<Codebook, CodebookError> {
    parse_codebook(&fs::read(path)?)
}
