//! On-disk dataset format.
//!
//! A dataset directory holds `annotations.jsonl` plus an `images/`
//! subdirectory of 8-bit binary PGM files. Each annotation line is a JSON
//! object `{frame, u, v, d, led, pose?}` where `frame` names the image file
//! and `pose` optionally carries the world position the frame was rendered
//! from. Parse errors report 1-based line numbers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::codec::{synth_gt_maps, Annotation, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::model::image_to_input;
use crate::train::TrainSample;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";

/// One dataset row: image file name, target annotation, optional world pose.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: String,
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub led: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 3]>,
}

impl FrameRecord {
    pub fn annotation(&self) -> Annotation {
        Annotation { u: self.u, v: self.v, d: self.d, led: self.led }
    }
}

/// Reads an annotation file. An empty (or whitespace-only) file is a valid
/// empty dataset; malformed or out-of-range lines fail with their line
/// number.
pub fn read_annotations(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Annotation { line: idx + 1, reason: e.to_string() })?;
        record
            .annotation()
            .validate()
            .map_err(|e| Error::Annotation { line: idx + 1, reason: e.to_string() })?;
        if record.frame.is_empty() {
            return Err(Error::Annotation { line: idx + 1, reason: "empty frame name".into() });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_annotations(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::Dataset(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: vec![0; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }
}

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image { path: path.display().to_string(), reason: reason.into() }
}

/// Writes a binary (P5) PGM with maxval 255.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    if image.pixels.len() != image.width * image.height {
        return Err(image_err(path, "pixel buffer does not match dimensions"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    out.write_all(&image.pixels)?;
    out.flush()?;
    Ok(())
}

/// Reads a binary (P5) PGM. Header comments (`#`) are honored; only
/// maxval 255 is accepted.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;

    // Header: "P5", width, height, maxval as whitespace-separated tokens,
    // then a single whitespace byte before the raster.
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image { path: String::new(), reason: "truncated header".into() });
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes).map_err(|_| image_err(path, "truncated header"))?;
    if magic != "P5" {
        return Err(image_err(path, format!("not a binary PGM (magic {magic:?})")));
    }
    let mut dims = [0usize; 3];
    for slot in dims.iter_mut() {
        let token = next_token(&bytes).map_err(|_| image_err(path, "truncated header"))?;
        *slot = token
            .parse()
            .map_err(|_| image_err(path, format!("bad header token {token:?}")))?;
    }
    let [width, height, maxval] = dims;
    if maxval != 255 {
        return Err(image_err(path, format!("maxval {maxval} unsupported, expected 255")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(image_err(path, "missing raster separator"));
    }
    pos += 1;
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(image_err(path, format!("raster has {} bytes, expected {expected}", raster.len())));
    }
    Ok(GrayImage { width, height, pixels: raster[..expected].to_vec() })
}

/// A loaded dataset: records plus the directory that resolves frame names.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    records: Vec<FrameRecord>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset> {
        if !root.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", root.display())));
        }
        let ann = root.join(ANNOTATIONS_FILE);
        if !ann.is_file() {
            return Err(Error::Dataset(format!("{} not found", ann.display())));
        }
        let records = read_annotations(&ann)?;
        Ok(Dataset { root: root.to_path_buf(), records })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &FrameRecord) -> PathBuf {
        self.root.join(IMAGES_DIR).join(&record.frame)
    }

    /// Loads one frame's image, validating the fixed input size.
    pub fn load_image(&self, record: &FrameRecord) -> Result<GrayImage> {
        let path = self.image_path(record);
        let image = read_pgm(&path)?;
        if image.width != IMAGE_SIZE || image.height != IMAGE_SIZE {
            return Err(image_err(
                &path,
                format!("{}x{} image, expected {IMAGE_SIZE}x{IMAGE_SIZE}", image.width, image.height),
            ));
        }
        Ok(image)
    }

    /// Materializes the full training set: normalized inputs paired with
    /// synthesized target maps.
    pub fn training_samples(&self) -> Result<Vec<TrainSample>> {
        self.records
            .iter()
            .map(|record| {
                let image = self.load_image(record)?;
                Ok(TrainSample {
                    image: image_to_input(&image.pixels)?,
                    target: synth_gt_maps(&record.annotation())?,
                })
            })
            .collect()
    }
}

/// Incremental dataset writer used by the renderer: images are written as
/// they are added, annotations on `finish`.
pub struct DatasetWriter {
    root: PathBuf,
    records: Vec<FrameRecord>,
}

impl DatasetWriter {
    pub fn create(root: &Path) -> Result<DatasetWriter> {
        fs::create_dir_all(root.join(IMAGES_DIR))?;
        Ok(DatasetWriter { root: root.to_path_buf(), records: Vec::new() })
    }

    pub fn add_frame(&mut self, record: FrameRecord, image: &GrayImage) -> Result<()> {
        record
            .annotation()
            .validate()
            .map_err(|e| Error::Dataset(format!("frame {}: {e}", record.frame)))?;
        write_pgm(&self.root.join(IMAGES_DIR).join(&record.frame), image)?;
        self.records.push(record);
        Ok(())
    }

    pub fn finish(self) -> Result<usize> {
        write_annotations(&self.root.join(ANNOTATIONS_FILE), &self.records)?;
        Ok(self.records.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(frame: &str, u: f64, v: f64) -> FrameRecord {
        FrameRecord { frame: frame.into(), u, v, d: 0.8, led: true, pose: None }
    }

    #[test]
    fn annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let records = vec![
            record("a.pgm", 80.0, 80.0),
            FrameRecord { frame: "b.pgm".into(), u: 10.5, v: 150.25, d: 1.4, led: false, pose: Some([0.8, -0.1, 0.05]) },
        ];
        write_annotations(&path, &records).unwrap();
        assert_eq!(read_annotations(&path).unwrap(), records);
    }

    #[test]
    fn pose_is_optional_on_the_wire() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(
            &path,
            "{\"frame\":\"f.pgm\",\"u\":1.0,\"v\":2.0,\"d\":0.5,\"led\":true}\n",
        )
        .unwrap();
        let records = read_annotations(&path).unwrap();
        assert_eq!(records[0].pose, None);
    }

    #[test]
    fn malformed_line_reports_its_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(
            &path,
            "{\"frame\":\"a.pgm\",\"u\":1.0,\"v\":2.0,\"d\":0.5,\"led\":true}\nnot json\n",
        )
        .unwrap();
        match read_annotations(&path) {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected annotation error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_coordinates_are_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(
            &path,
            "{\"frame\":\"a.pgm\",\"u\":200.0,\"v\":2.0,\"d\":0.5,\"led\":true}\n",
        )
        .unwrap();
        match read_annotations(&path) {
            Err(Error::Annotation { line, reason }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("200"), "{reason}");
            }
            other => panic!("expected annotation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(
            &path,
            "{\"frame\":\"a.pgm\",\"u\":1.0,\"v\":2.0,\"d\":0.5,\"led\":true,\"extra\":1}\n",
        )
        .unwrap();
        assert!(matches!(read_annotations(&path), Err(Error::Annotation { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(&path, "\n  \n").unwrap();
        assert_eq!(read_annotations(&path).unwrap(), Vec::<FrameRecord>::new());
    }

    #[test]
    fn pgm_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut image = GrayImage::new(160, 160);
        for (i, p) in image.pixels.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        write_pgm(&path, &image).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), image);
        let raw = fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P5\n160 160\n255\n"));
        assert_eq!(raw.len(), 15 + 160 * 160);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        fs::write(&path, bytes).unwrap();
        let image = read_pgm(&path).unwrap();
        assert_eq!((image.width, image.height), (2, 2));
        assert_eq!(image.pixels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn pgm_rejects_truncation_and_wrong_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.pgm");
        fs::write(&short, b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(read_pgm(&short), Err(Error::Image { .. })));

        let deep = dir.path().join("deep.pgm");
        fs::write(&deep, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        match read_pgm(&deep) {
            Err(Error::Image { reason, .. }) => assert!(reason.contains("65535"), "{reason}"),
            other => panic!("expected image error, got {other:?}"),
        }

        let plain = dir.path().join("plain.pgm");
        fs::write(&plain, b"P2\n1 1\n255\n7\n").unwrap();
        assert!(matches!(read_pgm(&plain), Err(Error::Image { .. })));
    }

    #[test]
    fn dataset_loads_and_builds_training_samples() {
        let dir = tempfile::tempdir().unwrap();
        let mut writer = DatasetWriter::create(dir.path()).unwrap();
        let mut image = GrayImage::new(160, 160);
        image.set(60, 44, 255);
        writer.add_frame(record("f0.pgm", 60.0, 44.0), &image).unwrap();
        writer.add_frame(record("f1.pgm", 100.0, 20.0), &image).unwrap();
        assert_eq!(writer.finish().unwrap(), 2);

        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        let samples = ds.training_samples().unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].image.shape(), (1, 160, 160));
        assert!((samples[0].image.at(0, 44, 60) - 1.0).abs() < 1e-6);
        // Target peaks at the annotated cell.
        assert!((samples[0].target.position[5 * 20 + 7] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn missing_image_file_names_its_path() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(IMAGES_DIR)).unwrap();
        write_annotations(&dir.path().join(ANNOTATIONS_FILE), &[record("gone.pgm", 1.0, 1.0)]).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert!(ds.load_image(&ds.records()[0]).is_err());
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(IMAGES_DIR)).unwrap();
        write_pgm(&dir.path().join(IMAGES_DIR).join("small.pgm"), &GrayImage::new(80, 80)).unwrap();
        write_annotations(&dir.path().join(ANNOTATIONS_FILE), &[record("small.pgm", 1.0, 1.0)]).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        match ds.load_image(&ds.records()[0]) {
            Err(Error::Image { reason, .. }) => assert!(reason.contains("80x80"), "{reason}"),
            other => panic!("expected image error, got {other:?}"),
        }
    }
}
