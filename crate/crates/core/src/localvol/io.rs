//! Surface dump/load: node CSV plus a JSON header with the interpolation
//! spec. Node values round-trip bit-exactly (shortest round-trip float
//! formatting).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

use super::LocalVolSurface;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct InterpolationSpec {
    time: String,
    strike: String,
    extrapolation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurfaceHeader {
    interpolation: InterpolationSpec,
}

fn expected_header() -> SurfaceHeader {
    SurfaceHeader {
        interpolation: InterpolationSpec {
            time: "piecewise_constant".into(),
            strike: "monotone_cubic_spline".into(),
            extrapolation: "constant".into(),
        },
    }
}

fn io_err(path: &Path, reason: impl std::fmt::Display) -> EngineError {
    EngineError::Load {
        file: path.display().to_string(),
        row: None,
        reason: reason.to_string(),
    }
}

/// Writes `<path>` as CSV (`maturity_yf,moneyness,local_vol`) and the
/// interpolation header next to it as `<path>.json`.
pub fn dump_surface(surface: &LocalVolSurface, path: &Path) -> Result<()> {
    let mut out = String::from("maturity_yf,moneyness,local_vol\n");
    for (i, &t) in surface.maturities().iter().enumerate() {
        for (k, v) in surface.node_strikes(i).iter().zip(surface.node_values(i)) {
            out.push_str(&format!("{t},{k},{v}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))?;

    let header_path = header_path(path);
    let header = serde_json::to_string_pretty(&expected_header()).expect("static header");
    std::fs::write(&header_path, header).map_err(|e| io_err(&header_path, e))
}

/// Loads a surface written by [`dump_surface`], validating the header.
pub fn load_surface(path: &Path) -> Result<LocalVolSurface> {
    let header_path = header_path(path);
    let raw = std::fs::read_to_string(&header_path).map_err(|e| io_err(&header_path, e))?;
    let header: SurfaceHeader =
        serde_json::from_str(&raw).map_err(|e| io_err(&header_path, e))?;
    if header.interpolation != expected_header().interpolation {
        return Err(io_err(
            &header_path,
            format!("unsupported interpolation spec {:?}", header.interpolation),
        ));
    }

    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("maturity_yf,moneyness,local_vol") => {}
        other => {
            return Err(io_err(
                path,
                format!("expected surface CSV header, got {other:?}"),
            ))
        }
    }
    let mut rows: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| io_err(path, format!("row {} missing {name}", i + 1)))?
                .parse()
                .map_err(|e| io_err(path, format!("row {}: {e}", i + 1)))
        };
        let t = field("maturity")?;
        let k = field("moneyness")?;
        let v = field("local_vol")?;
        match rows.last_mut() {
            Some((last_t, nodes)) if *last_t == t => nodes.push((k, v)),
            _ => rows.push((t, vec![(k, v)])),
        }
    }
    LocalVolSurface::new(rows).map_err(|e| io_err(path, e))
}

fn header_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        // Awkward decimals on purpose: Display formatting must round-trip.
        let surface = LocalVolSurface::new(vec![
            (0.25, vec![(0.8, 0.264_351_234_567_891), (1.0, 0.2 + 1e-16), (1.2, 0.19)]),
            (1.0 / 3.0, vec![(0.85, 0.25), (1.0, 0.21), (1.15, 0.2)]),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.csv");
        dump_surface(&surface, &path).unwrap();
        let back = load_surface(&path).unwrap();
        assert_eq!(surface.maturities(), back.maturities());
        for i in 0..surface.maturities().len() {
            assert_eq!(surface.node_strikes(i), back.node_strikes(i));
            assert_eq!(surface.node_values(i), back.node_values(i));
        }
    }

    #[test]
    fn rejects_foreign_interpolation_spec() {
        let surface = LocalVolSurface::flat(0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.csv");
        dump_surface(&surface, &path).unwrap();
        std::fs::write(
            header_path(&path),
            r#"{"interpolation":{"time":"linear","strike":"linear","extrapolation":"linear"}}"#,
        )
        .unwrap();
        assert!(matches!(load_surface(&path), Err(EngineError::Load { .. })));
    }

    #[test]
    fn missing_header_file_is_a_load_error() {
        let surface = LocalVolSurface::flat(0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.csv");
        dump_surface(&surface, &path).unwrap();
        std::fs::remove_file(header_path(&path)).unwrap();
        assert!(matches!(load_surface(&path), Err(EngineError::Load { .. })));
    }
}
