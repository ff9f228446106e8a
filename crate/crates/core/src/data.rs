//! Datasets: IDX image files, block-average downsampling, a synthetic
//! concept/attribute generator, and feature-norm tables.
//!
//! Images are flattened rows of a `[N × D]` tensor with pixels in `[0, 1]`.
//! Every image carries a concept label, and a dataset may carry a
//! [`FeatureNorms`] table giving each concept a vector of attribute strengths
//! — the reference geometry that representational-similarity scoring compares
//! latents against. The synthetic generator builds images whose pixel
//! structure mirrors a random binary concept×attribute matrix exactly, so the
//! ground-truth norms are known by construction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::Tensor;

/// Class count convention for IDX digit files: label bytes must be 0–9.
pub const IDX_CLASSES: usize = 10;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Errors raised while loading, generating, or transforming datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: byte {offset}: {detail}")]
    Idx {
        path: String,
        offset: u64,
        detail: String,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: row {row}: {detail}")]
    Norms {
        path: String,
        row: usize,
        detail: String,
    },
    #[error("invalid {param}: {detail}")]
    InvalidParam {
        param: &'static str,
        detail: String,
    },
    #[error("image dimension {dim} is not a perfect square")]
    NotSquare { dim: usize },
    #[error("image side {side} is not divisible by downsample factor {factor}")]
    NotDivisible { side: usize, factor: usize },
    #[error("{0}")]
    Validation(String),
}

/// Per-concept attribute strengths in `[0, 1]`: one row per concept.
///
/// Rows are never all-zero and names on both axes are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorms {
    concept_names: Vec<String>,
    attribute_names: Vec<String>,
    matrix: Tensor,
}

impl FeatureNorms {
    /// Validates and wraps a `[concepts × attributes]` matrix.
    pub fn new(
        concept_names: Vec<String>,
        attribute_names: Vec<String>,
        matrix: Tensor,
    ) -> Result<Self, DataError> {
        let (c, a) = (concept_names.len(), attribute_names.len());
        if matrix.shape() != [c, a] {
            return Err(DataError::Validation(format!(
                "norms matrix shape {:?} does not match {c} concepts × {a} attributes",
                matrix.shape()
            )));
        }
        if a == 0 {
            return Err(DataError::Validation("norms need at least one attribute".into()));
        }
        for (axis, names) in [("concept", &concept_names), ("attribute", &attribute_names)] {
            let mut seen = names.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != names.len() {
                return Err(DataError::Validation(format!("duplicate {axis} name")));
            }
        }
        for (i, row) in matrix.data().chunks(a).enumerate() {
            if let Some(&v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DataError::Validation(format!(
                    "norm value {v} for concept {:?} outside [0, 1]",
                    concept_names[i]
                )));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(DataError::Validation(format!(
                    "concept {:?} has an all-zero norm row",
                    concept_names[i]
                )));
            }
        }
        Ok(Self {
            concept_names,
            attribute_names,
            matrix,
        })
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concept_names
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    /// `[concepts × attributes]` strengths.
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn concept_count(&self) -> usize {
        self.concept_names.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    /// Attribute row of one concept.
    pub fn row(&self, concept: usize) -> &[f64] {
        let a = self.attribute_count();
        &self.matrix.data()[concept * a..(concept + 1) * a]
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concept_names.iter().position(|n| n == name)
    }

    /// Writes the table as CSV with a `concept,attr…` header.
    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["concept".to_string()];
        header.extend(self.attribute_names.iter().cloned());
        writer.write_record(&header).map_err(|e| csv_io(path, e))?;
        for (i, name) in self.concept_names.iter().enumerate() {
            let mut record = vec![name.clone()];
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            writer.write_record(&record).map_err(|e| csv_io(path, e))?;
        }
        writer.flush().map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.display().to_string(),
            source,
        },
        other => DataError::Norms {
            path: path.display().to_string(),
            row: 0,
            detail: format!("{other:?}"),
        },
    }
}

/// Reads a feature-norm CSV: header `concept,attr1,…`, then one row per
/// concept with values in `[0, 1]`. Row numbers in errors are 1-based and
/// count the header.
pub fn load_feature_norms(path: &Path) -> Result<FeatureNorms, DataError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;

    let mut rows = reader.records();
    let header = match rows.next() {
        Some(Ok(rec)) => rec,
        Some(Err(e)) => return Err(csv_io(path, e)),
        None => {
            return Err(DataError::Norms {
                path: display,
                row: 1,
                detail: "empty file".into(),
            })
        }
    };
    if header.get(0) != Some("concept") {
        return Err(DataError::Norms {
            path: display,
            row: 1,
            detail: format!(
                "header must start with \"concept\", got {:?}",
                header.get(0).unwrap_or("")
            ),
        });
    }
    let attribute_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if attribute_names.is_empty() {
        return Err(DataError::Norms {
            path: display,
            row: 1,
            detail: "header names no attributes".into(),
        });
    }

    let mut concept_names: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, rec) in rows.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_io(path, e))?;
        if rec.len() != attribute_names.len() + 1 {
            return Err(DataError::Norms {
                path: display,
                row,
                detail: format!(
                    "expected {} fields, got {}",
                    attribute_names.len() + 1,
                    rec.len()
                ),
            });
        }
        let name = rec.get(0).unwrap_or("").to_string();
        if concept_names.contains(&name) {
            return Err(DataError::Norms {
                path: display,
                row,
                detail: format!("duplicate concept {name:?}"),
            });
        }
        for (col, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| DataError::Norms {
                path: display.clone(),
                row,
                detail: format!("column {}: non-numeric value {field:?}", col + 1),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::Norms {
                    path: display,
                    row,
                    detail: format!("column {}: value {v} outside [0, 1]", col + 1),
                });
            }
            values.push(v);
        }
        concept_names.push(name);
    }
    let matrix = Tensor::new(vec![concept_names.len(), attribute_names.len()], values)
        .expect("row lengths checked above");
    FeatureNorms::new(concept_names, attribute_names, matrix)
}

/// Labeled image collection with optional ground-truth feature norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    concept_names: Vec<String>,
    attributes: Option<FeatureNorms>,
}

impl Dataset {
    /// Validates and wraps `[N × D]` images with their labels.
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        concept_names: Vec<String>,
        attributes: Option<FeatureNorms>,
    ) -> Result<Self, DataError> {
        if images.shape().len() != 2 {
            return Err(DataError::Validation(format!(
                "images must be [N × D], got shape {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if n == 0 {
            return Err(DataError::Validation("dataset holds no images".into()));
        }
        if labels.len() != n {
            return Err(DataError::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= concept_names.len()) {
            return Err(DataError::Validation(format!(
                "label {bad} out of range for {} concepts",
                concept_names.len()
            )));
        }
        if let Some(&v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Validation(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            images,
            labels,
            concept_names,
            attributes,
        })
    }

    /// `[N × D]` pixel matrix.
    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concept_names
    }

    pub fn attributes(&self) -> Option<&FeatureNorms> {
        self.attributes.as_ref()
    }

    /// Number of images.
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened pixels per image.
    pub fn dim(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn concept_count(&self) -> usize {
        self.concept_names.len()
    }

    /// Pixel row of one image.
    pub fn image(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.images.data()[index * d..(index + 1) * d]
    }

    /// Gathers the given rows into a `[len × D]` batch tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), d], data).expect("sized above")
    }

    /// Labels of the given rows.
    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Attaches a feature-norm table, aligning its rows to this dataset's
    /// concept order by name. Every dataset concept must appear in the
    /// table; extra table concepts are an error too, since similarity
    /// structure over absent concepts is meaningless.
    pub fn with_attributes(self, norms: FeatureNorms) -> Result<Dataset, DataError> {
        if norms.concept_count() != self.concept_names.len() {
            return Err(DataError::Validation(format!(
                "norms cover {} concepts, dataset has {}",
                norms.concept_count(),
                self.concept_names.len()
            )));
        }
        let rows: Vec<usize> = self
            .concept_names
            .iter()
            .map(|name| {
                norms.concept_index(name).ok_or_else(|| {
                    DataError::Validation(format!("norms table is missing concept {name:?}"))
                })
            })
            .collect::<Result<_, _>>()?;
        let a = norms.attribute_count();
        let matrix = Tensor::new(
            vec![rows.len(), a],
            rows.iter().flat_map(|&r| norms.row(r).to_vec()).collect(),
        )
        .expect("sized above");
        let aligned = FeatureNorms::new(
            self.concept_names.clone(),
            norms.attribute_names().to_vec(),
            matrix,
        )?;
        Ok(Dataset {
            attributes: Some(aligned),
            ..self
        })
    }

    /// First `count` images as a new dataset.
    pub fn subset(&self, count: usize) -> Result<Dataset, DataError> {
        if count == 0 || count > self.len() {
            return Err(DataError::InvalidParam {
                param: "subset",
                detail: format!("count {count} outside 1..={}", self.len()),
            });
        }
        let d = self.dim();
        let images = Tensor::new(
            vec![count, d],
            self.images.data()[..count * d].to_vec(),
        )
        .expect("sized above");
        Dataset::new(
            images,
            self.labels[..count].to_vec(),
            self.concept_names.clone(),
            self.attributes.clone(),
        )
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &str, what: &str) -> Result<u32, DataError> {
    let slice = bytes.get(offset..offset + 4).ok_or_else(|| DataError::Idx {
        path: path.to_string(),
        offset: bytes.len() as u64,
        detail: format!("truncated before {what} (need 4 bytes at offset {offset})"),
    })?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

/// Parses a big-endian IDX image/label file pair into a 10-class dataset.
///
/// Image files start with magic `0x00000803` and `count, rows, cols` words;
/// label files with `0x00000801` and `count`. Counts must agree, label bytes
/// must be 0–9, and pixels are scaled from `0–255` to `[0, 1]` by `/255`.
/// Malformed input is reported with the byte offset of the problem.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img_bytes = fs::read(images_path).map_err(|source| DataError::Io {
        path: img_name.clone(),
        source,
    })?;
    let lbl_bytes = fs::read(labels_path).map_err(|source| DataError::Io {
        path: lbl_name.clone(),
        source,
    })?;

    let magic = read_u32_be(&img_bytes, 0, &img_name, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::Idx {
            path: img_name,
            offset: 0,
            detail: format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        });
    }
    let count = read_u32_be(&img_bytes, 4, &img_name, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, &img_name, "row count")? as usize;
    let cols = read_u32_be(&img_bytes, 12, &img_name, "column count")? as usize;
    let pixel_bytes = &img_bytes[16.min(img_bytes.len())..];
    let expected = count * rows * cols;
    if pixel_bytes.len() != expected {
        return Err(DataError::Idx {
            path: img_name,
            offset: (16 + pixel_bytes.len()) as u64,
            detail: format!(
                "pixel payload holds {} bytes, header promises {expected}",
                pixel_bytes.len()
            ),
        });
    }

    let magic = read_u32_be(&lbl_bytes, 0, &lbl_name, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::Idx {
            path: lbl_name,
            offset: 0,
            detail: format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"),
        });
    }
    let label_count = read_u32_be(&lbl_bytes, 4, &lbl_name, "label count")? as usize;
    let label_bytes = &lbl_bytes[8.min(lbl_bytes.len())..];
    if label_bytes.len() != label_count {
        return Err(DataError::Idx {
            path: lbl_name,
            offset: (8 + label_bytes.len()) as u64,
            detail: format!(
                "label payload holds {} bytes, header promises {label_count}",
                label_bytes.len()
            ),
        });
    }
    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let mut labels = Vec::with_capacity(label_count);
    for (i, &b) in label_bytes.iter().enumerate() {
        if (b as usize) >= IDX_CLASSES {
            return Err(DataError::Idx {
                path: lbl_name,
                offset: (8 + i) as u64,
                detail: format!("label {b} out of range (labels must be < {IDX_CLASSES})"),
            });
        }
        labels.push(b as usize);
    }

    let pixels: Vec<f64> = pixel_bytes.iter().map(|&b| b as f64 / 255.0).collect();
    let images = Tensor::new(vec![count, rows * cols], pixels).expect("sized above");
    let concept_names = (0..IDX_CLASSES).map(|c| c.to_string()).collect();
    Dataset::new(images, labels, concept_names, None)
}

/// Writes the dataset as an IDX image/label file pair, quantizing pixels to
/// `round(p·255)`. Images must be square. Reloading through [`load_idx`]
/// reproduces the dataset up to that quantization (exactly, if the pixels
/// were already multiples of `1/255`).
pub fn write_idx(
    dataset: &Dataset,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let side = image_side(dataset.dim())?;
    let n = dataset.len();

    let mut img = Vec::with_capacity(16 + n * dataset.dim());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(side as u32).to_be_bytes());
    img.extend_from_slice(&(side as u32).to_be_bytes());
    img.extend(
        dataset
            .images()
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(images_path, img).map_err(|source| DataError::Io {
        path: images_path.display().to_string(),
        source,
    })?;

    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend(dataset.labels().iter().map(|&l| l as u8));
    fs::write(labels_path, lbl).map_err(|source| DataError::Io {
        path: labels_path.display().to_string(),
        source,
    })
}

fn image_side(dim: usize) -> Result<usize, DataError> {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(DataError::NotSquare { dim });
    }
    Ok(side)
}

/// Shrinks every image by averaging non-overlapping `factor × factor` blocks.
///
/// The (square) image side must be divisible by `factor`; `factor == 1`
/// returns the dataset unchanged.
pub fn downsample(dataset: &Dataset, factor: usize) -> Result<Dataset, DataError> {
    if factor == 0 {
        return Err(DataError::InvalidParam {
            param: "factor",
            detail: "downsample factor must be at least 1".into(),
        });
    }
    if factor == 1 {
        return Ok(dataset.clone());
    }
    let side = image_side(dataset.dim())?;
    if side % factor != 0 {
        return Err(DataError::NotDivisible { side, factor });
    }
    let new_side = side / factor;
    let block = (factor * factor) as f64;
    let mut data = Vec::with_capacity(dataset.len() * new_side * new_side);
    for i in 0..dataset.len() {
        let img = dataset.image(i);
        for br in 0..new_side {
            for bc in 0..new_side {
                let mut sum = 0.0;
                for r in 0..factor {
                    let row = br * factor + r;
                    let start = row * side + bc * factor;
                    for &p in &img[start..start + factor] {
                        sum += p;
                    }
                }
                data.push(sum / block);
            }
        }
    }
    let images = Tensor::new(vec![dataset.len(), new_side * new_side], data).expect("sized above");
    Dataset::new(
        images,
        dataset.labels().to_vec(),
        dataset.concept_names().to_vec(),
        dataset.attributes().cloned(),
    )
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub concepts: usize,
    pub attributes: usize,
    pub per_concept: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

/// Generates a synthetic dataset whose concepts are built from attributes.
///
/// Each attribute owns one disjoint pixel template (a full row of an
/// `attributes × attributes` image). A random binary concept×attribute matrix
/// — rows redrawn until distinct and non-zero — decides which templates a
/// concept's prototype sums (clamped to `[0, 1]`). Instances add Gaussian
/// noise to the prototype and clamp again. Because templates are disjoint and
/// equally sized, the pairwise cosine structure of the prototypes equals that
/// of the matrix rows, which are returned as the dataset's ground-truth
/// feature norms.
///
/// Requires `concepts ≥ 3`, `attributes ≥ 2`, and `concepts ≤ 2^attributes - 1`
/// (the number of distinct non-zero rows available).
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let SyntheticSpec {
        concepts,
        attributes,
        per_concept,
        noise,
        seed,
    } = *spec;
    if concepts < 3 {
        return Err(DataError::InvalidParam {
            param: "concepts",
            detail: format!("need at least 3, got {concepts}"),
        });
    }
    if attributes < 2 {
        return Err(DataError::InvalidParam {
            param: "attributes",
            detail: format!("need at least 2, got {attributes}"),
        });
    }
    if per_concept == 0 {
        return Err(DataError::InvalidParam {
            param: "per_concept",
            detail: "need at least 1 image per concept".into(),
        });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DataError::InvalidParam {
            param: "noise",
            detail: format!("must be finite and non-negative, got {noise}"),
        });
    }
    if attributes < 63 && concepts as u64 > (1u64 << attributes) - 1 {
        return Err(DataError::InvalidParam {
            param: "concepts",
            detail: format!(
                "{concepts} distinct non-zero rows impossible with {attributes} attributes (max {})",
                (1u64 << attributes) - 1
            ),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Concept × attribute matrix: rows redrawn until distinct and non-zero.
    let mut matrix_rows: Vec<Vec<f64>> = Vec::with_capacity(concepts);
    while matrix_rows.len() < concepts {
        let row: Vec<f64> = (0..attributes)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        if row.iter().any(|&v| v != 0.0) && !matrix_rows.contains(&row) {
            matrix_rows.push(row);
        }
    }

    let side = attributes;
    let dim = side * side;
    let prototypes: Vec<Vec<f64>> = matrix_rows
        .iter()
        .map(|row| {
            let mut proto: Vec<f64> = vec![0.0; dim];
            for (a, &on) in row.iter().enumerate() {
                if on != 0.0 {
                    // Attribute `a` owns row `a` of the image.
                    for p in &mut proto[a * side..(a + 1) * side] {
                        *p += 1.0;
                    }
                }
            }
            for p in &mut proto {
                *p = p.clamp(0.0, 1.0);
            }
            proto
        })
        .collect();

    let gaussian = if noise > 0.0 {
        Some(Normal::new(0.0, noise).expect("validated above"))
    } else {
        None
    };
    let mut images = Vec::with_capacity(concepts * per_concept * dim);
    let mut labels = Vec::with_capacity(concepts * per_concept);
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_concept {
            match &gaussian {
                Some(dist) => images.extend(
                    proto
                        .iter()
                        .map(|&p| (p + dist.sample(&mut rng)).clamp(0.0, 1.0)),
                ),
                None => images.extend_from_slice(proto),
            }
            labels.push(c);
        }
    }

    let name_width = (concepts - 1).to_string().len().max(2);
    let concept_names: Vec<String> = (0..concepts)
        .map(|c| {
            let mut s = String::from("concept_");
            write!(s, "{c:0name_width$}").expect("write to string");
            s
        })
        .collect();
    let attr_width = (attributes - 1).to_string().len().max(2);
    let attribute_names: Vec<String> = (0..attributes)
        .map(|a| {
            let mut s = String::from("attr_");
            write!(s, "{a:0attr_width$}").expect("write to string");
            s
        })
        .collect();

    let matrix = Tensor::new(
        vec![concepts, attributes],
        matrix_rows.into_iter().flatten().collect(),
    )
    .expect("sized above");
    let norms = FeatureNorms::new(concept_names.clone(), attribute_names, matrix)?;
    let images = Tensor::new(vec![concepts * per_concept, dim], images).expect("sized above");
    Dataset::new(images, labels, concept_names, Some(norms))
}
