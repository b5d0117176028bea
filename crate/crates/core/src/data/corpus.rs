//! Grayscale corpus on disk: one binary PGM file per impression, named
//! `<subject>_<impression>.<ext>`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageReader};

use super::{DataError, Subject};
use crate::nn::Tensor;
use crate::Scalar;

/// Ingested subjects plus the per-file problems that were skipped.
#[derive(Debug)]
pub struct Corpus<T> {
    pub subjects: Vec<Subject<T>>,
    pub errors: Vec<DataError>,
}

/// Loads every `<subject>_<impression>` image under `root`, resizes it to
/// `size`×`size` and scales pixels to [0, 1]. Files that fail are reported
/// in [`Corpus::errors`]; zero valid subjects is an error.
pub fn ingest_corpus<T: Scalar>(root: &Path, size: usize) -> Result<Corpus<T>, DataError> {
    let io_err = |source| DataError::Io {
        path: root.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()).map_err(io_err))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();

    let mut grouped: BTreeMap<u32, BTreeMap<u32, Arc<Tensor<T>>>> = BTreeMap::new();
    let mut errors = Vec::new();
    for path in paths {
        match load_one(&path, size) {
            Ok((subject, impression, image)) => {
                grouped.entry(subject).or_default().insert(impression, Arc::new(image));
            }
            Err(e) => {
                log::warn!("skipping {e}");
                errors.push(e);
            }
        }
    }
    if grouped.is_empty() {
        return Err(DataError::NoSubjects {
            root: root.to_path_buf(),
            failures: errors.len(),
        });
    }
    let subjects = grouped
        .into_iter()
        .map(|(id, imps)| Subject {
            id,
            impressions: imps.into_values().collect(),
        })
        .collect();
    Ok(Corpus { subjects, errors })
}

fn parse_name(path: &Path) -> Option<(u32, u32)> {
    let stem = path.file_stem()?.to_str()?;
    let (s, i) = stem.split_once('_')?;
    Some((s.parse().ok()?, i.parse().ok()?))
}

fn load_one<T: Scalar>(path: &Path, size: usize) -> Result<(u32, u32, Tensor<T>), DataError> {
    let fail = |reason: String| DataError::File {
        path: path.to_path_buf(),
        reason,
    };
    let (subject, impression) =
        parse_name(path).ok_or_else(|| fail("file name is not <subject>_<impression>.<ext>".into()))?;
    let image = ImageReader::open(path)
        .map_err(|e| fail(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?
        .decode()
        .map_err(|e| fail(e.to_string()))?;
    if image.color() != ColorType::L8 {
        return Err(fail(format!("expected 8-bit grayscale, found {:?}", image.color())));
    }
    let gray = image.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let raw = Tensor::from_parts_unchecked(
        vec![h, w],
        gray.as_raw().iter().map(|&p| T::of(f64::from(p) / 255.0)).collect(),
    );
    Ok((subject, impression, resize_bilinear(&raw, size, size)))
}

/// Bilinear resize of an `[h, w]` image with corner alignment: the output
/// corners sample the input corners exactly.
pub fn resize_bilinear<T: Scalar>(src: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w) = match *src.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => panic!("resize_bilinear expects a 2-D image, got {:?}", src.shape()),
    };
    if (h, w) == (out_h, out_w) {
        return Tensor::from_parts_unchecked(vec![h, w], src.data().to_vec());
    }
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, T) {
        if out <= 1 || inp <= 1 {
            return (0, 0, T::zero());
        }
        let pos = (o * (inp - 1)) as f64 / (out - 1) as f64;
        let lo = (pos.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, T::of(pos - lo as f64))
    };
    let data = src.data();
    Tensor::from_fn(vec![out_h, out_w], |i| {
        let (y0, y1, fy) = coord(i / out_w, out_h, h);
        let (x0, x1, fx) = coord(i % out_w, out_w, w);
        let one = T::one();
        let top = data[y0 * w + x0] * (one - fx) + data[y0 * w + x1] * fx;
        let bottom = data[y1 * w + x0] * (one - fx) + data[y1 * w + x1] * fx;
        top * (one - fy) + bottom * fy
    })
}

/// Writes every impression as `<id>_<n>.pgm` (1-based `n`), 8-bit binary PGM.
pub fn write_corpus<T: Scalar>(subjects: &[Subject<T>], dir: &Path) -> Result<usize, DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = 0;
    for subject in subjects {
        for (n, image) in subject.impressions.iter().enumerate() {
            let path = dir.join(format!("{}_{}.pgm", subject.id, n + 1));
            let (h, w) = match *image.shape() {
                [h, w] | [1, h, w] => (h, w),
                _ => {
                    return Err(DataError::InvalidArgument(format!(
                        "subject {} impression {} is not a 2-D image",
                        subject.id,
                        n + 1
                    )))
                }
            };
            let bytes: Vec<u8> = image
                .data()
                .iter()
                .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let file = File::create(&path).map_err(|source| DataError::Io {
                path: path.clone(),
                source,
            })?;
            PnmEncoder::new(BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(&bytes, w as u32, h as u32, ExtendedColorType::L8)
                .map_err(|e| DataError::File {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            written += 1;
        }
    }
    Ok(written)
}
