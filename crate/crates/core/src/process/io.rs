//! Trajectory files: a flat little-endian binary with a fixed header, a TOML
//! sidecar naming the problem, and an optional CSV dump.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrajectorySet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OSWTRAJ\0";
const VERSION: u32 = 1;

/// Contents of the `.meta.toml` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub spec_id: String,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

/// Writes the binary file at `path` and its sidecar at `path.meta.toml`.
pub fn write_trajectories(set: &TrajectorySet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [set.n_paths as u64, set.n_steps as u64, set.dim as u64, set.seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &set.states {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;

    let meta = TrajectoryMeta {
        spec_id: set.spec_id.clone(),
        seed: set.seed,
        n_paths: set.n_paths,
        n_steps: set.n_steps,
        dim: set.dim,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar(path), text)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a file written by [`write_trajectories`]. The sidecar is optional;
/// without it the problem id is empty.
pub fn read_trajectories(path: &Path) -> Result<TrajectorySet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated trajectory header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a trajectory file", path.display())));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trajectory file version {version}")));
    }
    let n_paths = read_u64(&mut r)? as usize;
    let n_steps = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let count = n_paths
        .checked_mul(n_steps + 1)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Format("trajectory header overflows".into()))?;

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "trajectory payload has {} bytes, header implies {}",
            bytes.len(),
            count * 8
        )));
    }
    let states = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let spec_id = match std::fs::read_to_string(sidecar(path)) {
        Ok(text) => {
            let meta: TrajectoryMeta = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
            if (meta.n_paths, meta.n_steps, meta.dim, meta.seed) != (n_paths, n_steps, dim, seed) {
                return Err(Error::Format("trajectory sidecar disagrees with binary header".into()));
            }
            meta.spec_id
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    TrajectorySet::from_raw(spec_id, seed, n_paths, n_steps, dim, states)
}

/// Long-format CSV: one row per `(path, step)` with columns `path, step, t, x0, ..`.
pub fn write_trajectories_csv(set: &TrajectorySet, times: &[f64], path: &Path) -> Result<()> {
    if times.len() != set.n_steps + 1 {
        return Err(Error::DimensionMismatch { expected: set.n_steps + 1, got: times.len() });
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["path".to_string(), "step".into(), "t".into()];
    header.extend((0..set.dim).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for s in 0..set.n_paths {
        for (n, t) in times.iter().enumerate() {
            let mut row = vec![s.to_string(), n.to_string(), t.to_string()];
            row.extend(set.state(s, n).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_bsp, simulate_paths};

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("paths.bin");
        let set = simulate_paths(&make_bsp(), 12, 4).unwrap();
        write_trajectories(&set, &file).unwrap();
        assert_eq!(read_trajectories(&file).unwrap(), set);
        let bytes = std::fs::read(&file).unwrap();
        assert_eq!(bytes.len(), 8 + 4 + 32 + 12 * 37 * 8);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("paths.bin");
        let set = simulate_paths(&make_bsp(), 3, 4).unwrap();
        write_trajectories(&set, &file).unwrap();
        let mut bytes = std::fs::read(&file).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&file, &bytes).unwrap();
        assert!(matches!(read_trajectories(&file), Err(Error::Format(_))));
        bytes[0] = b'X';
        std::fs::write(&file, &bytes).unwrap();
        assert!(matches!(read_trajectories(&file), Err(Error::Format(_))));
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("paths.csv");
        let spec = make_bsp();
        let set = simulate_paths(&spec, 2, 1).unwrap();
        let times: Vec<f64> = (0..=36).map(|n| spec.grid().time(n)).collect();
        write_trajectories_csv(&set, &times, &file).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 37);
        assert!(text.starts_with("path,step,t,x0\n"));
    }
}
