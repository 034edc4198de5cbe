//! Flat binary tensor files: magic `WTGRID01`, a little-endian u32 rank,
//! the dimensions as little-endian u64, then the payload as little-endian
//! f64 in row-major order. Each tensor ships with a text manifest naming
//! the axes and their grid values.

use std::io::Write;
use std::path::Path;

use crate::CliError;

pub const MAGIC: &[u8; 8] = b"WTGRID01";

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<(), CliError> {
    let expected: usize = dims.iter().product();
    assert_eq!(data.len(), expected, "tensor payload does not match dims");
    let mut buf = Vec::with_capacity(8 + 4 + dims.len() * 8 + data.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Parse(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(&buf)
        .map_err(|e| CliError::Parse(format!("write {}: {e}", path.display())))?;
    Ok(())
}

/// Manifest path for a tensor file: the same name with `.manifest.txt`
/// appended.
pub fn manifest_path(tensor_path: &Path) -> std::path::PathBuf {
    let mut name = tensor_path.as_os_str().to_os_string();
    name.push(".manifest.txt");
    std::path::PathBuf::from(name)
}

pub fn write_manifest(
    tensor_path: &Path,
    quantity: &str,
    axes: &[(&str, &[f64])],
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("quantity: {quantity}\n"));
    out.push_str("layout: row-major, f64 little-endian, header WTGRID01 + u32 rank + u64 dims\n");
    out.push_str(&format!(
        "dims: {}\n",
        axes.iter()
            .map(|(name, g)| format!("{name}={}", g.len()))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    for (name, grid) in axes {
        out.push_str(&format!(
            "axis {name}: {}\n",
            grid.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    let path = manifest_path(tensor_path);
    std::fs::write(&path, out)
        .map_err(|e| CliError::Parse(format!("write {}: {e}", path.display())))?;
    Ok(())
}
