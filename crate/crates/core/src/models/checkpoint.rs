use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::GnnParams;
use crate::error::{Error, Result};
use crate::graphdata::io::{read_matrix, write_atomic, write_matrix};

const MANIFEST: &str = "manifest.txt";

/// Writes one binary matrix per tensor plus `manifest.txt` listing
/// `name rows cols` lines in parameter order.
pub fn save_checkpoint(params: &GnnParams, dir: &Path) -> Result<()> {
    let mut manifest = String::new();
    for (name, t) in params.tensor_names().iter().zip(params.tensors()) {
        write_matrix(&dir.join(format!("{name}.bin")), t)?;
        writeln!(manifest, "{name} {} {}", t.rows(), t.cols()).expect("string write");
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Loads tensors saved by [`save_checkpoint`] into a parameter set of the
/// same configuration, checking every shape against the manifest.
pub fn load_checkpoint(template: &GnnParams, dir: &Path) -> Result<GnnParams> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut params = template.clone();
    let names = params.tensor_names();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != names.len() {
        return Err(Error::Parse {
            path,
            line: lines.len(),
            msg: format!("manifest lists {} tensors, model has {}", lines.len(), names.len()),
        });
    }
    for (i, (slot, name)) in params.tensors_mut().into_iter().zip(&names).enumerate() {
        let expected = format!("{name} {} {}", slot.rows(), slot.cols());
        if lines[i].trim() != expected {
            return Err(Error::Parse {
                path: path.clone(),
                line: i + 1,
                msg: format!("expected `{expected}`, found `{}`", lines[i].trim()),
            });
        }
        let t = read_matrix(&dir.join(format!("{name}.bin")))?;
        *slot = t.reshape(slot.shape())?;
    }
    Ok(params)
}
