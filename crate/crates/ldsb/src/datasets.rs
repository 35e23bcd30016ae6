//! Synthetic dataset families.
//!
//! Three generators cover the experiments in this crate:
//!
//! - [`gen_ifm`]: conditionally independent features with one linearly
//!   separable coordinate of margin `γ`, a block of non-linear coordinates
//!   that separate the classes on their own, and optional pure-noise
//!   coordinates.
//! - [`gen_pointmass`]: the finite point-mass dataset behind the kernel
//!   analysis — one coordinate at `γy`, the rest `±1` for the positive
//!   class and `0` for the negative class.
//! - [`gen_collage`]: a two-block analogue of concatenated-image datasets,
//!   where a simple margin block and a complex (xor or sphere) block are
//!   each 100% predictive.
//!
//! Datasets persist as UTF-8 CSV with a single `#` header line; floats are
//! written with 17 significant digits so save/load round-trips bit-exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState};

/// Role a coordinate plays in the generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordRole {
    Linear,
    Nonlinear,
    Noise,
}

impl CoordRole {
    fn code(self) -> char {
        match self {
            CoordRole::Linear => 'l',
            CoordRole::Nonlinear => 'n',
            CoordRole::Noise => 'z',
        }
    }

    fn from_code(c: char) -> Option<Self> {
        match c {
            'l' => Some(CoordRole::Linear),
            'n' => Some(CoordRole::Nonlinear),
            'z' => Some(CoordRole::Noise),
            _ => None,
        }
    }
}

/// Feature-role metadata carried alongside the raw matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMeta {
    /// Index of the linearly separable coordinate, if one exists.
    pub linear_coord: Option<usize>,
    /// Margin of that coordinate; set whenever `linear_coord` is.
    pub margin_gamma: Option<f64>,
    pub coord_roles: Vec<CoordRole>,
}

/// Dense feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// n×d feature rows.
    pub x: Matrix,
    /// Class indices in `[0, num_classes)`. For binary data, class 1 is the
    /// positive class (`y = +1`) and class 0 the negative.
    pub y: Vec<usize>,
    pub num_classes: usize,
    pub meta: FeatureMeta,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Signed label `2·class − 1` for binary datasets.
    pub fn signed_label(&self, i: usize) -> f64 {
        2.0 * self.y[i] as f64 - 1.0
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() {
            return Err(Error::Shape(format!(
                "{} rows vs {} labels",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite feature".into()));
        }
        if let Some(&bad) = self.y.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::InvalidSpec(format!("label {bad} out of range")));
        }
        if self.meta.coord_roles.len() != self.d() {
            return Err(Error::Shape("coord_roles length != d".into()));
        }
        Ok(())
    }
}

/// Parameters of the conditionally-independent-features generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfmSpec {
    pub d: usize,
    /// Margin of the linear coordinate; the rich-regime theory needs γ ≥ 1.
    pub gamma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub num_nonlinear: usize,
    pub num_noise: usize,
    pub seed: u64,
}

impl IfmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d != 1 + self.num_nonlinear + self.num_noise {
            return Err(Error::InvalidSpec(format!(
                "d = {} but 1 + num_nonlinear + num_noise = {}",
                self.d,
                1 + self.num_nonlinear + self.num_noise
            )));
        }
        if self.gamma < 1.0 {
            return Err(Error::InvalidSpec(format!("gamma = {} must be >= 1", self.gamma)));
        }
        if self.num_nonlinear < 1 {
            return Err(Error::InvalidSpec("need at least one non-linear coordinate".into()));
        }
        if self.n_train < 2 || self.n_val < 2 || self.n_test < 2 {
            return Err(Error::InvalidSpec("each split needs at least 2 examples".into()));
        }
        Ok(())
    }

    fn roles(&self) -> Vec<CoordRole> {
        let mut roles = vec![CoordRole::Linear];
        roles.extend(std::iter::repeat_n(CoordRole::Nonlinear, self.num_nonlinear));
        roles.extend(std::iter::repeat_n(CoordRole::Noise, self.num_noise));
        roles
    }

    fn meta(&self) -> FeatureMeta {
        FeatureMeta {
            linear_coord: Some(0),
            margin_gamma: Some(self.gamma),
            coord_roles: self.roles(),
        }
    }
}

/// Train/validation/test triple produced by one generator call.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Balanced label sequence (|#pos − #neg| ≤ 1), order shuffled.
fn balanced_labels(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    // Fisher–Yates so class runs do not align with batch boundaries.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

fn gen_ifm_split(spec: &IfmSpec, n: usize, rng: &mut impl Rng) -> LabeledDataset {
    let y = balanced_labels(n, rng);
    let mut x = Array2::zeros((n, spec.d));
    for (i, &label) in y.iter().enumerate() {
        let sign = 2.0 * label as f64 - 1.0;
        // Linear coordinate: margin γ plus label-directed jitter keeps the
        // population margin exactly γ without a point mass.
        x[[i, 0]] = sign * (spec.gamma + rng.gen_range(0.0..0.25));
        for j in 0..spec.num_nonlinear {
            x[[i, 1 + j]] = if label == 1 {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            };
        }
        for j in 0..spec.num_noise {
            x[[i, 1 + spec.num_nonlinear + j]] = rng.sample(StandardNormal);
        }
    }
    LabeledDataset { x, y, num_classes: 2, meta: spec.meta() }
}

/// Generates the train/val/test splits of an IFM dataset.
///
/// Coordinate 0 carries the linear margin, coordinates
/// `1..=num_nonlinear` take values `±1` for the positive class and `0`
/// for the negative class (so they separate the classes on their own with
/// a non-linear rule), and the remaining coordinates are standard normal
/// regardless of label.
pub fn gen_ifm(spec: &IfmSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let state = RngState::new(spec.seed);
    Ok(DatasetSplits {
        train: gen_ifm_split(spec, spec.n_train, &mut state.stream("ifm.train")),
        val: gen_ifm_split(spec, spec.n_val, &mut state.stream("ifm.val")),
        test: gen_ifm_split(spec, spec.n_test, &mut state.stream("ifm.test")),
    })
}

/// Materializes the point-mass dataset: all `2^{d−1}` positive sign
/// patterns `(γ, ±1, …, ±1)` plus the single negative point `(−γ, 0, …, 0)`.
///
/// With `include_bias_coord` a constant-1 coordinate is appended, the usual
/// device for analyzing an unbiased kernel SVM.
pub fn gen_pointmass(d: usize, gamma: f64, include_bias_coord: bool) -> Result<LabeledDataset> {
    if d < 2 {
        return Err(Error::InvalidSpec(format!("d = {d} must be >= 2")));
    }
    if d > 21 {
        return Err(Error::TooLarge(format!(
            "d = {d} would materialize 2^{} + 1 rows; use the closed-form kernel routines instead",
            d - 1
        )));
    }
    if gamma <= 0.0 {
        return Err(Error::InvalidSpec(format!("gamma = {gamma} must be > 0")));
    }
    let patterns = 1usize << (d - 1);
    let cols = if include_bias_coord { d + 1 } else { d };
    let mut x = Array2::zeros((patterns + 1, cols));
    let mut y = Vec::with_capacity(patterns + 1);
    for p in 0..patterns {
        x[[p, 0]] = gamma;
        for j in 0..d - 1 {
            x[[p, 1 + j]] = if (p >> j) & 1 == 1 { -1.0 } else { 1.0 };
        }
        if include_bias_coord {
            x[[p, d]] = 1.0;
        }
        y.push(1);
    }
    x[[patterns, 0]] = -gamma;
    if include_bias_coord {
        x[[patterns, d]] = 1.0;
    }
    y.push(0);

    let mut roles = vec![CoordRole::Linear];
    roles.extend(std::iter::repeat_n(CoordRole::Nonlinear, d - 1));
    if include_bias_coord {
        roles.push(CoordRole::Noise);
    }
    Ok(LabeledDataset {
        x,
        y,
        num_classes: 2,
        meta: FeatureMeta {
            linear_coord: Some(0),
            margin_gamma: Some(gamma),
            coord_roles: roles,
        },
    })
}

/// Shape of the complex block in [`gen_collage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollagePattern {
    /// Label is the sign parity of the first two non-linear coordinates.
    Xor,
    /// Label is whether the non-linear block lies inside the unit sphere.
    Sphere,
}

/// Collage nuisance coordinates are heavy-tailed (Student-t, 3 degrees of
/// freedom, at this scale) and the simple coordinate's magnitude is
/// bimodal: half the rows carry a faint cue in [γ, γ+0.25], half a strong
/// one shifted by COLLAGE_STRONG_SHIFT. Pretrained-feature statistics look
/// like this — the class-aligned direction varies widely in strength and
/// nuisance directions occasionally spike — and a model leaning on one
/// pathway then shows a small, pathway-specific test error.
const COLLAGE_NOISE_SCALE: f64 = 2.4;
const COLLAGE_STRONG_SHIFT: f64 = 5.0;

fn gen_collage_split(
    spec: &IfmSpec,
    pattern: CollagePattern,
    n: usize,
    rng: &mut impl Rng,
) -> LabeledDataset {
    let y = balanced_labels(n, rng);
    let mut x = Array2::zeros((n, spec.d));
    for (i, &label) in y.iter().enumerate() {
        let sign = 2.0 * label as f64 - 1.0;
        let strong = if rng.gen::<bool>() { COLLAGE_STRONG_SHIFT } else { 0.0 };
        x[[i, 0]] = sign * (spec.gamma + strong + rng.gen_range(0.0..0.25));
        match pattern {
            CollagePattern::Xor => {
                // The label is +1 exactly when the signs of the designated
                // pair (the first two block coordinates) agree. Remaining
                // coordinates repeat the parity in independent pairs —
                // redundant copies of the same complex feature, the way a
                // real image block carries the class many times over — with
                // a trailing odd coordinate left uninformative.
                let mut j = 0;
                while j + 1 < spec.num_nonlinear {
                    let s1: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    let s2 = if label == 1 { s1 } else { -s1 };
                    x[[i, 1 + j]] = s1 * rng.gen_range(0.5..1.5);
                    x[[i, 2 + j]] = s2 * rng.gen_range(0.5..1.5);
                    j += 2;
                }
                if j < spec.num_nonlinear {
                    let s: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    x[[i, 1 + j]] = s * rng.gen_range(0.5..1.5);
                }
            }
            CollagePattern::Sphere => {
                let dir =
                    crate::linalg::sample_unit_sphere(spec.num_nonlinear, rng).expect("dim >= 2");
                let radius = if label == 1 {
                    rng.gen_range(0.5..0.9)
                } else {
                    rng.gen_range(1.1..1.5)
                };
                for j in 0..spec.num_nonlinear {
                    x[[i, 1 + j]] = radius * dir[j];
                }
            }
        }
        for j in 0..spec.num_noise {
            x[[i, 1 + spec.num_nonlinear + j]] =
                rng.sample::<f64, _>(StudentT::new(3.0).expect("valid dof"))
                    * COLLAGE_NOISE_SCALE;
        }
    }
    LabeledDataset { x, y, num_classes: 2, meta: spec.meta() }
}

/// Two-block dataset where both the margin coordinate and the non-linear
/// block are individually 100% predictive.
pub fn gen_collage(spec: &IfmSpec, pattern: CollagePattern) -> Result<DatasetSplits> {
    spec.validate()?;
    if spec.num_nonlinear < 2 {
        return Err(Error::InvalidSpec("collage needs num_nonlinear >= 2".into()));
    }
    let state = RngState::new(spec.seed);
    Ok(DatasetSplits {
        train: gen_collage_split(spec, pattern, spec.n_train, &mut state.stream("collage.train")),
        val: gen_collage_split(spec, pattern, spec.n_val, &mut state.stream("collage.val")),
        test: gen_collage_split(spec, pattern, spec.n_test, &mut state.stream("collage.test")),
    })
}

fn fmt_float(v: f64) -> String {
    // 17 significant digits round-trips every f64 exactly.
    format!("{v:.16e}")
}

/// Writes the dataset CSV: one `#`-header line, then `d` floats and the
/// integer label per row.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut out = String::new();
    let linear = match ds.meta.linear_coord {
        Some(i) => i.to_string(),
        None => "none".into(),
    };
    let gamma = match ds.meta.margin_gamma {
        Some(g) => fmt_float(g),
        None => "none".into(),
    };
    let roles: String = ds.meta.coord_roles.iter().map(|r| r.code()).collect();
    writeln!(
        out,
        "# ldsb-dataset v1 d={} L={} linear_coord={} gamma={} roles={}",
        ds.d(),
        ds.num_classes,
        linear,
        gamma,
        roles
    )
    .expect("write to string");
    for (row, &label) in ds.x.rows().into_iter().zip(ds.y.iter()) {
        for v in row.iter() {
            out.push_str(&fmt_float(*v));
            out.push(',');
        }
        writeln!(out, "{label}").expect("write to string");
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads a dataset CSV written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?
        .map_err(Error::Io)?;
    if !header.starts_with("# ldsb-dataset v1 ") {
        return Err(parse_err(1, "missing `# ldsb-dataset v1` header"));
    }
    let mut d: Option<usize> = None;
    let mut num_classes: Option<usize> = None;
    let mut linear_coord: Option<usize> = None;
    let mut margin_gamma: Option<f64> = None;
    let mut roles: Option<Vec<CoordRole>> = None;
    for field in header.trim_start_matches("# ldsb-dataset v1 ").split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header field `{field}`")))?;
        match key {
            "d" => d = Some(value.parse().map_err(|_| parse_err(1, "bad d"))?),
            "L" => num_classes = Some(value.parse().map_err(|_| parse_err(1, "bad L"))?),
            "linear_coord" => {
                if value != "none" {
                    linear_coord =
                        Some(value.parse().map_err(|_| parse_err(1, "bad linear_coord"))?);
                }
            }
            "gamma" => {
                if value != "none" {
                    margin_gamma = Some(value.parse().map_err(|_| parse_err(1, "bad gamma"))?);
                }
            }
            "roles" => {
                let parsed: Option<Vec<CoordRole>> =
                    value.chars().map(CoordRole::from_code).collect();
                roles = Some(parsed.ok_or_else(|| parse_err(1, "bad roles string"))?);
            }
            other => return Err(parse_err(1, format!("unknown header key `{other}`"))),
        }
    }
    let d = d.ok_or_else(|| parse_err(1, "header missing d"))?;
    let num_classes = num_classes.ok_or_else(|| parse_err(1, "header missing L"))?;

    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", d + 1, fields.len()),
            ));
        }
        for f in &fields[..d] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad float `{f}`")))?,
            );
        }
        let label: usize = fields[d]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad label `{}`", fields[d])))?;
        if label >= num_classes {
            return Err(parse_err(line_no, format!("label {label} out of range")));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    let n = labels.len();
    let x = Array2::from_shape_vec((n, d), values).expect("length checked per row");
    let meta = FeatureMeta {
        linear_coord,
        margin_gamma,
        coord_roles: roles.unwrap_or_else(|| {
            (0..d)
                .map(|i| {
                    if Some(i) == linear_coord {
                        CoordRole::Linear
                    } else {
                        CoordRole::Nonlinear
                    }
                })
                .collect()
        }),
    };
    let ds = LabeledDataset { x, y: labels, num_classes, meta };
    ds.validate()?;
    Ok(ds)
}

/// Deterministic check that the non-linear coordinates alone classify the
/// dataset perfectly; generators guarantee this by construction.
pub fn nonlinear_rule_accuracy(ds: &LabeledDataset, pattern: Option<CollagePattern>) -> f64 {
    let block: Vec<usize> = ds
        .meta
        .coord_roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == CoordRole::Nonlinear)
        .map(|(i, _)| i)
        .collect();
    let mut correct = 0usize;
    for (i, row) in ds.x.rows().into_iter().enumerate() {
        let pred = match pattern {
            None => {
                // IFM / point-mass rule: any non-linear coordinate away from 0
                // marks the positive class.
                let max_abs = block.iter().map(|&j| row[j].abs()).fold(0.0, f64::max);
                usize::from(max_abs > 0.5)
            }
            Some(CollagePattern::Xor) => usize::from(row[block[0]] * row[block[1]] > 0.0),
            Some(CollagePattern::Sphere) => {
                let norm2: f64 = block.iter().map(|&j| row[j] * row[j]).sum();
                usize::from(norm2 < 1.0)
            }
        };
        if pred == ds.y[i] {
            correct += 1;
        }
    }
    correct as f64 / ds.n() as f64
}
