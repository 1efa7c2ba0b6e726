//! Dataset directory layout and annotation grammar.
//!
//! Per receipt: `NNNNNN.pgm` and `NNNNNN.txt`, each annotation being one line
//! `x1,y1,x2,y2,x3,y3,x4,y4,transcript`. Coordinates are the first eight
//! comma-separated fields; everything after the eighth comma is the
//! transcript, commas included. Synthetic files mark handwriting by the
//! transcript prefix `###HW###`; the parser treats that prefix as ordinary
//! text unless `synthetic` is set. `manifest.txt` lists receipt ids per
//! split.

use std::path::Path;

use crate::error::Error;
use crate::raster::Raster;
use crate::rng::Rng;
use crate::Result;

use super::{Annotation, TextStyle};

pub const HW_MARKER: &str = "###HW###";

/// One receipt on disk: id, image, annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub image: Raster,
    pub annotations: Vec<Annotation>,
}

fn annotation_line(a: &Annotation) -> String {
    let coords: Vec<String> = a.quad.iter().map(|v| v.to_string()).collect();
    let marker = if a.style == TextStyle::Handwriting {
        HW_MARKER
    } else {
        ""
    };
    format!("{},{}{}", coords.join(","), marker, a.transcript)
}

fn parse_annotation_line(line: &str, synthetic: bool) -> Option<Annotation> {
    let mut fields = line.splitn(9, ',');
    let mut quad = [0i64; 8];
    for q in quad.iter_mut() {
        *q = fields.next()?.trim().parse::<i64>().ok()?;
    }
    let rest = fields.next()?;
    let (style, transcript) = if synthetic {
        match rest.strip_prefix(HW_MARKER) {
            Some(stripped) => (TextStyle::Handwriting, stripped.to_string()),
            None => (TextStyle::Printed, rest.to_string()),
        }
    } else {
        (TextStyle::Printed, rest.to_string())
    };
    Some(Annotation {
        quad,
        transcript,
        style,
    })
}

/// Atomic write: temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write every item as `<id>.pgm` + `<id>.txt` under `dir`.
pub fn save_dataset(dir: &Path, items: &[DatasetItem]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for item in items {
        write_atomic(&dir.join(format!("{}.pgm", item.id)), &item.image.save_pgm())?;
        let mut text = String::new();
        for a in &item.annotations {
            text.push_str(&annotation_line(a));
            text.push('\n');
        }
        write_atomic(&dir.join(format!("{}.txt", item.id)), text.as_bytes())?;
    }
    Ok(())
}

/// Load every `<id>.pgm` + `<id>.txt` pair under `dir`, sorted by id.
/// `synthetic` enables the handwriting marker.
pub fn load_dataset(dir: &Path, synthetic: bool) -> Result<Vec<DatasetItem>> {
    let mut ids: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    let mut items = Vec::with_capacity(ids.len());
    for id in ids {
        let image = Raster::load_pgm(&std::fs::read(dir.join(format!("{id}.pgm")))?)?;
        let txt_path = dir.join(format!("{id}.txt"));
        let text = std::fs::read_to_string(&txt_path)?;
        let mut annotations = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ann =
                parse_annotation_line(line, synthetic).ok_or_else(|| Error::DatasetParse {
                    path: txt_path.display().to_string(),
                    line: ln + 1,
                    reason: "expected 8 integer coordinates then a transcript".into(),
                })?;
            annotations.push(ann);
        }
        items.push(DatasetItem {
            id,
            image,
            annotations,
        });
    }
    Ok(items)
}

/// Seeded shuffle then partition. train gets floor(r_train * n); the rest is
/// split between validation and test in proportion to their ratios, with
/// validation taking the ceiling (so 80/10/10 gives val = ceil(rest/2)).
pub fn split_dataset<T>(
    mut items: Vec<T>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
    }
    let n = items.len();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut items);
    // epsilon guards keep exact fractions exact (0.1/0.2 must be 0.5)
    let n_train = (ratios.0 * n as f64 + 1e-9).floor() as usize;
    let rest = n - n_train;
    let n_val = if ratios.1 + ratios.2 > 0.0 {
        (rest as f64 * ratios.1 / (ratios.1 + ratios.2) - 1e-9).ceil() as usize
    } else {
        0
    };
    let mut train = items;
    let mut val = train.split_off(n_train);
    let test = val.split_off(n_val.min(val.len()));
    Ok((train, val, test))
}

/// Write `manifest.txt`: one `<split> <id>` line per receipt.
pub fn write_manifest(dir: &Path, splits: &[(&str, Vec<String>)]) -> Result<()> {
    let mut text = String::new();
    for (name, ids) in splits {
        for id in ids {
            text.push_str(&format!("{name} {id}\n"));
        }
    }
    write_atomic(&dir.join("manifest.txt"), text.as_bytes())
}

/// Ids listed in `manifest.txt` for one split.
pub fn read_manifest(dir: &Path, split: &str) -> Result<Vec<String>> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path)?;
    let mut ids = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, id) = line.split_once(' ').ok_or_else(|| Error::DatasetParse {
            path: path.display().to_string(),
            line: ln + 1,
            reason: "expected `<split> <id>`".into(),
        })?;
        if name == split {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}
