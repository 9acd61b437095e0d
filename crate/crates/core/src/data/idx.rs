//! IDX reader and writer (plain or gzip-compressed).
//!
//! Images: magic `0x00000803`, then count, rows, cols (all big-endian u32),
//! then `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format("IDX", format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(data: &[u8], at: usize, path: &Path) -> Result<u32> {
    data.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format("IDX", format!("{}: truncated header", path.display())))
}

fn check_magic(data: &[u8], expect: u32, path: &Path) -> Result<()> {
    let magic = be_u32(data, 0, path)?;
    if magic != expect {
        return Err(Error::format(
            "IDX",
            format!("{}: magic {magic:#010x}, expected {expect:#010x}", path.display()),
        ));
    }
    Ok(())
}

fn payload<'a>(data: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let body = &data[offset.min(data.len())..];
    if body.len() < len {
        return Err(Error::format(
            "IDX",
            format!("{}: truncated payload ({} of {len} bytes)", path.display(), body.len()),
        ));
    }
    if body.len() > len {
        return Err(Error::format(
            "IDX",
            format!("{}: {} trailing bytes", path.display(), body.len() - len),
        ));
    }
    Ok(body)
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    let data = read_bytes(path)?;
    check_magic(&data, IMAGES_MAGIC, path)?;
    let count = be_u32(&data, 4, path)? as usize;
    let rows = be_u32(&data, 8, path)? as usize;
    let cols = be_u32(&data, 12, path)? as usize;
    let pixels = payload(&data, 16, count * rows * cols, path)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let data = read_bytes(path)?;
    check_magic(&data, LABELS_MAGIC, path)?;
    let count = be_u32(&data, 4, path)? as usize;
    Ok(payload(&data, 8, count, path)?.to_vec())
}

/// Load an image/label pair; pixels are scaled by `1/255` and the class
/// count is `max label + 1`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img = read_idx_images(&images)?;
    let lab = read_idx_labels(&labels)?;
    if img.count != lab.len() {
        return Err(Error::format(
            "IDX",
            format!("{} images but {} labels", img.count, lab.len()),
        ));
    }
    let entries = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Matrix::new(img.count, img.rows * img.cols, entries)?;
    let k = lab.iter().map(|&y| y as usize + 1).max().unwrap_or(0);
    let name = images
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(inputs, lab.into_iter().map(usize::from).collect(), name, k)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Write `data` as an image/label pair of `rows × cols` images (gzip when a
/// path ends in `.gz`). Pixels are rounded from `x·255`.
pub fn write_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    data: &Dataset,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::Dimension(format!(
            "{rows}×{cols} images need {} features, data has {}",
            rows * cols,
            data.dim()
        )));
    }
    if data.labels().iter().any(|&y| y > 255) {
        return Err(Error::InvalidArgument("IDX labels must fit in a byte".into()));
    }
    let n = data.len() as u32;
    let mut img = Vec::with_capacity(16 + data.len() * data.dim());
    for word in [IMAGES_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(
        data.inputs()
            .entries()
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + data.len());
    for word in [LABELS_MAGIC, n] {
        lab.extend_from_slice(&word.to_be_bytes());
    }
    lab.extend(data.labels().iter().map(|&y| y as u8));
    write_bytes(images.as_ref(), &img)?;
    write_bytes(labels.as_ref(), &lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        for w in [IMAGES_MAGIC, 2, 2, 2] {
            img.extend_from_slice(&w.to_be_bytes());
        }
        img.extend_from_slice(&[0, 255, 255, 0, 0, 0, 0, 255]);
        let mut lab = Vec::new();
        for w in [LABELS_MAGIC, 2] {
            lab.extend_from_slice(&w.to_be_bytes());
        }
        lab.extend_from_slice(&[3, 1]);
        let (ip, lp) = (dir.join("img"), dir.join("lab"));
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes()), (2, 4, 4));
        assert_eq!(d.input(0), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(d.input(1), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.labels(), &[3, 1]);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        // Swapped files: wrong magic.
        assert!(matches!(load_idx(&lp, &ip), Err(Error::Format { .. })));
        // Truncated payload.
        let mut bytes = fs::read(&ip).unwrap();
        bytes.pop();
        let bad = dir.path().join("short");
        fs::write(&bad, &bytes).unwrap();
        let err = read_idx_images(&bad).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        // Count mismatch.
        let mut lab = Vec::new();
        for w in [LABELS_MAGIC, 3] {
            lab.extend_from_slice(&w.to_be_bytes());
        }
        lab.extend_from_slice(&[0, 1, 2]);
        let three = dir.path().join("three");
        fs::write(&three, lab).unwrap();
        assert!(load_idx(&ip, &three).is_err());
        assert!(matches!(load_idx(dir.path().join("missing"), &lp), Err(Error::Io(_))));
    }

    #[test]
    fn write_then_read_round_trips_including_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<f64> = (0..3 * 6).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let data = Dataset::new(Matrix::new(3, 6, pixels).unwrap(), vec![0, 2, 1], "x", 3).unwrap();
        for ext in ["", ".gz"] {
            let ip = dir.path().join(format!("i{ext}"));
            let lp = dir.path().join(format!("l{ext}"));
            write_idx(&ip, &lp, &data, 2, 3).unwrap();
            let back = load_idx(&ip, &lp).unwrap();
            assert_eq!(back.inputs(), data.inputs());
            assert_eq!(back.labels(), data.labels());
        }
    }
}
