//! Point-cloud files: CSV with header `x0,...,x{D-1}[,segment]` and JSON
//! arrays of coordinate arrays.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{invalid, Result};

/// Formats a float with 17 significant digits so that parsing it back is
/// bit-exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn read_csv<R: Read>(reader: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let has_segment = headers.iter().last() == Some("segment");
    let dim = headers.len() - usize::from(has_segment);
    for (k, h) in headers.iter().take(dim).enumerate() {
        if h != format!("x{k}") {
            return invalid(format!("unexpected CSV column {h:?}, expected \"x{k}\""));
        }
    }
    let mut coords = Vec::new();
    let mut segments = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return invalid(format!("row {} has {} fields", row + 1, rec.len()));
        }
        for (k, field) in rec.iter().take(dim).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| crate::Error::InvalidInput(format!("row {}, column x{k}: {field:?}", row + 1)))?;
            coords.push(v);
        }
        if has_segment {
            segments.push(rec[dim].to_string());
        }
    }
    let cloud = PointCloud::from_flat(dim, coords)?;
    if has_segment {
        cloud.with_segments(segments)
    } else {
        Ok(cloud)
    }
}

pub fn write_csv<W: Write>(cloud: &PointCloud, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..cloud.dim()).map(|k| format!("x{k}")).collect();
    if cloud.segments().is_some() {
        header.push("segment".into());
    }
    wtr.write_record(&header)?;
    for (i, p) in cloud.points().enumerate() {
        let mut row: Vec<String> = p.iter().map(|&v| fmt_f64(v)).collect();
        if let Some(seg) = cloud.segments() {
            row.push(seg[i].clone());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_json<R: Read>(reader: R) -> Result<PointCloud> {
    let rows: Vec<Vec<f64>> = serde_json::from_reader(reader)?;
    PointCloud::new(rows)
}

pub fn write_json<W: Write>(cloud: &PointCloud, writer: W) -> Result<()> {
    let rows: Vec<&[f64]> = cloud.points().collect();
    serde_json::to_writer(writer, &rows)?;
    Ok(())
}

/// Reads a cloud, choosing the format from the extension (`.json` or CSV).
/// The file stem becomes the cloud id.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let file = File::open(path)?;
    let cloud = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_json(file)?,
        _ => read_csv(file)?,
    };
    Ok(match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => cloud.with_id(stem),
        None => cloud,
    })
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => write_json(cloud, file),
        _ => write_csv(cloud, file),
    }
}
