//! Training diverse models by projecting out what the first model used.
//!
//! Given a trained model `f`, take `P` = its dominant input subspace and
//! train a second model `f_proj` on `(P⊥x, y)`. Because `f` essentially
//! reads only `range(P)` and `f_proj` never sees it, the two models rely on
//! different features; their logit-averaged ensemble degrades more
//! gracefully under input noise than an ensemble of two independently
//! trained models. Diversity is measured by mistake overlap and by
//! class-conditioned logit correlation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::{auto_rank, top_subspace, Projector};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{argmax_rows, forward, Mlp};
use crate::training::{init_and_train, TrainConfig, TrainLog};

/// Requested projector rank: fixed, or smallest rank capturing 99% of the
/// squared spectrum of the first layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSpec {
    Fixed(usize),
    Auto,
}

impl std::str::FromStr for RankSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(RankSpec::Auto);
        }
        s.parse::<usize>()
            .map(RankSpec::Fixed)
            .map_err(|_| Error::InvalidInput(format!("rank must be an integer or `auto`, got `{s}`")))
    }
}

/// A model as evaluated at test time: either the raw network, or a network
/// whose input pipeline projects onto the complement of a subspace (the
/// way a sequentially trained model is used).
#[derive(Clone, Copy)]
pub struct EvalModel<'a> {
    net: &'a Mlp,
    perp_of: Option<&'a Projector>,
}

impl<'a> EvalModel<'a> {
    pub fn plain(net: &'a Mlp) -> Self {
        Self { net, perp_of: None }
    }

    /// Evaluate `net` on `P⊥x`.
    pub fn perp_projected(net: &'a Mlp, p: &'a Projector) -> Self {
        Self { net, perp_of: Some(p) }
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        match self.perp_of {
            Some(p) => forward(self.net, &p.apply_perp_rows(x)),
            None => forward(self.net, x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let preds = self.predict(&data.x)?;
        Ok(preds.iter().zip(data.y.iter()).filter(|(a, b)| a == b).count() as f64
            / data.n() as f64)
    }
}

/// Output of one sequential-training round.
#[derive(Debug, Clone)]
pub struct OrthopOutcome {
    pub f_proj: Mlp,
    pub projector: Projector,
    pub log: TrainLog,
}

/// Projects the dataset rows through `P⊥` (labels and metadata unchanged).
pub fn project_perp_dataset(data: &LabeledDataset, p: &Projector) -> LabeledDataset {
    LabeledDataset {
        x: p.apply_perp_rows(&data.x),
        y: data.y.clone(),
        num_classes: data.num_classes,
        meta: data.meta.clone(),
    }
}

/// Sequential training: `P` spans the top singular directions of `f`'s
/// first layer (rank per `rank`), and a fresh model of the same regime is
/// trained on `(P⊥x, y)` with `config`. `f` itself is untouched.
pub fn orthop_train(
    f: &Mlp,
    train_data: &LabeledDataset,
    val_data: Option<&LabeledDataset>,
    rank: RankSpec,
    config: &TrainConfig,
) -> Result<OrthopOutcome> {
    let k = match rank {
        RankSpec::Fixed(k) => k,
        RankSpec::Auto => auto_rank(f, 0.99)?,
    };
    let projector = top_subspace(f, k)?;
    let projected_train = project_perp_dataset(train_data, &projector);
    let projected_val = val_data.map(|v| project_perp_dataset(v, &projector));
    let (f_proj, log) =
        init_and_train(f.regime, f.m(), &projected_train, projected_val.as_ref(), config)?;
    Ok(OrthopOutcome { f_proj, projector, log })
}

/// Mistake diversity `1 − |both wrong| / min(|f wrong|, |g wrong|)`.
///
/// A model with zero mistakes makes the ratio undefined; that case returns
/// 0 with `degenerate` set instead of erroring, so sweep tables stay total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MistakeDiversity {
    pub value: f64,
    pub degenerate: bool,
}

pub fn mistake_diversity(
    f: &EvalModel<'_>,
    g: &EvalModel<'_>,
    data: &LabeledDataset,
) -> Result<MistakeDiversity> {
    let pf = f.predict(&data.x)?;
    let pg = g.predict(&data.x)?;
    let mut wrong_f = 0usize;
    let mut wrong_g = 0usize;
    let mut both = 0usize;
    for i in 0..data.n() {
        let wf = pf[i] != data.y[i];
        let wg = pg[i] != data.y[i];
        wrong_f += wf as usize;
        wrong_g += wg as usize;
        both += (wf && wg) as usize;
    }
    let min_wrong = wrong_f.min(wrong_g);
    if min_wrong == 0 {
        return Ok(MistakeDiversity { value: 0.0, degenerate: true });
    }
    Ok(MistakeDiversity { value: 1.0 - both as f64 / min_wrong as f64, degenerate: false })
}

/// Class-conditioned logit correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitCorrelation {
    pub value: f64,
    pub degenerate: bool,
}

/// For each class, the Pearson correlation between the two models' logits
/// is computed per output coordinate over that class's rows and averaged;
/// the class values are then averaged. Coordinates with zero variance in
/// either model are skipped; if everything is skipped the result is
/// degenerate.
pub fn cc_logit_corr(
    f: &EvalModel<'_>,
    g: &EvalModel<'_>,
    data: &LabeledDataset,
) -> Result<LogitCorrelation> {
    let lf = f.logits(&data.x)?;
    let lg = g.logits(&data.x)?;
    let c = lf.ncols();
    if lg.ncols() != c {
        return Err(Error::Shape("models disagree on the number of outputs".into()));
    }
    let mut class_values = Vec::new();
    for class in 0..data.num_classes {
        let rows: Vec<usize> =
            (0..data.n()).filter(|&i| data.y[i] == class).collect();
        if rows.len() < 3 {
            return Err(Error::InsufficientData { class, count: rows.len() });
        }
        let n = rows.len() as f64;
        let mut coord_corrs = Vec::new();
        for j in 0..c {
            let mut mf = 0.0;
            let mut mg = 0.0;
            for &i in &rows {
                mf += lf[[i, j]];
                mg += lg[[i, j]];
            }
            mf /= n;
            mg /= n;
            let (mut vf, mut vg, mut cov) = (0.0, 0.0, 0.0);
            for &i in &rows {
                let df = lf[[i, j]] - mf;
                let dg = lg[[i, j]] - mg;
                vf += df * df;
                vg += dg * dg;
                cov += df * dg;
            }
            if vf == 0.0 || vg == 0.0 {
                continue;
            }
            coord_corrs.push(cov / (vf.sqrt() * vg.sqrt()));
        }
        if !coord_corrs.is_empty() {
            class_values.push(coord_corrs.iter().sum::<f64>() / coord_corrs.len() as f64);
        }
    }
    if class_values.is_empty() {
        return Ok(LogitCorrelation { value: 0.0, degenerate: true });
    }
    Ok(LogitCorrelation {
        value: class_values.iter().sum::<f64>() / class_values.len() as f64,
        degenerate: false,
    })
}

/// Both diversity metrics for a model pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityReport {
    pub mist_div: f64,
    pub cc_logit_corr: f64,
    pub degenerate_flag: bool,
}

pub fn diversity_report(
    f: &EvalModel<'_>,
    g: &EvalModel<'_>,
    data: &LabeledDataset,
) -> Result<DiversityReport> {
    let md = mistake_diversity(f, g, data)?;
    let lc = cc_logit_corr(f, g, data)?;
    Ok(DiversityReport {
        mist_div: md.value,
        cc_logit_corr: lc.value,
        degenerate_flag: md.degenerate || lc.degenerate,
    })
}

impl DiversityReport {
    /// JSON with ×100 percentage renderings alongside the raw values.
    pub fn to_json(&self) -> serde_json::Value {
        let pct = |v: f64| (v * 10_000.0).round() / 100.0;
        serde_json::json!({
            "mist_div": pct(self.mist_div),
            "cc_logit_corr": pct(self.cc_logit_corr),
            "degenerate_flag": self.degenerate_flag,
            "raw": { "mist_div": self.mist_div, "cc_logit_corr": self.cc_logit_corr },
        })
    }
}

/// Argmax of the averaged logits of two models, ties toward the smaller
/// class index.
pub fn ensemble_predict(
    f: &EvalModel<'_>,
    g: &EvalModel<'_>,
    x: &Matrix,
) -> Result<Vec<usize>> {
    let lf = f.logits(x)?;
    let lg = g.logits(x)?;
    if lf.raw_dim() != lg.raw_dim() {
        return Err(Error::Shape("ensemble members disagree on logit shape".into()));
    }
    let avg = (&lf + &lg) * 0.5;
    Ok(argmax_rows(&avg))
}

/// The trio of models a robustness sweep compares. `f_proj` is always
/// evaluated through `P⊥`.
pub struct ModelTriple<'a> {
    pub f: &'a Mlp,
    pub f_ind: &'a Mlp,
    pub f_proj: &'a Mlp,
    pub projector: &'a Projector,
}

/// Accuracies under additive Gaussian input noise for the three models and
/// the two ensembles, averaged over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCurve {
    pub sigmas: Vec<f64>,
    pub f: Vec<f64>,
    pub f_ind: Vec<f64>,
    pub f_proj: Vec<f64>,
    pub ens_f_ind: Vec<f64>,
    pub ens_f_proj: Vec<f64>,
}

impl RobustnessCurve {
    pub const MODEL_NAMES: [&'static str; 5] = ["f", "f_ind", "f_proj", "ens_f_ind", "ens_f_proj"];

    /// CSV rendering: `sigma,model,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,model,accuracy\n");
        for (i, &sigma) in self.sigmas.iter().enumerate() {
            for (name, series) in Self::MODEL_NAMES.iter().zip([
                &self.f,
                &self.f_ind,
                &self.f_proj,
                &self.ens_f_ind,
                &self.ens_f_proj,
            ]) {
                out.push_str(&format!("{sigma},{name},{}\n", series[i]));
            }
        }
        out
    }
}

/// Evaluates every model and ensemble on `X + σ·N(0, I)` for each σ,
/// averaging accuracies over `trials` independent noise draws.
pub fn robustness_sweep(
    models: &ModelTriple<'_>,
    data: &LabeledDataset,
    sigmas: &[f64],
    trials: usize,
    rng: &mut impl Rng,
) -> Result<RobustnessCurve> {
    if sigmas.is_empty() || trials == 0 {
        return Err(Error::InvalidInput("need at least one sigma and one trial".into()));
    }
    if sigmas.iter().any(|&s| s < 0.0) || sigmas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("sigmas must be nonnegative and nondecreasing".into()));
    }
    let f = EvalModel::plain(models.f);
    let f_ind = EvalModel::plain(models.f_ind);
    let f_proj = EvalModel::perp_projected(models.f_proj, models.projector);

    let mut curve = RobustnessCurve {
        sigmas: sigmas.to_vec(),
        f: vec![0.0; sigmas.len()],
        f_ind: vec![0.0; sigmas.len()],
        f_proj: vec![0.0; sigmas.len()],
        ens_f_ind: vec![0.0; sigmas.len()],
        ens_f_proj: vec![0.0; sigmas.len()],
    };
    let accuracy = |preds: &[usize]| {
        preds.iter().zip(data.y.iter()).filter(|(a, b)| a == b).count() as f64
            / data.n() as f64
    };
    for (si, &sigma) in sigmas.iter().enumerate() {
        for _ in 0..trials {
            let noise = Matrix::from_shape_fn(data.x.raw_dim(), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let noisy = &data.x + &(noise * sigma);
            let lf = f.logits(&noisy)?;
            let lind = f_ind.logits(&noisy)?;
            let lproj = f_proj.logits(&noisy)?;
            curve.f[si] += accuracy(&argmax_rows(&lf));
            curve.f_ind[si] += accuracy(&argmax_rows(&lind));
            curve.f_proj[si] += accuracy(&argmax_rows(&lproj));
            curve.ens_f_ind[si] += accuracy(&argmax_rows(&((&lf + &lind) * 0.5)));
            curve.ens_f_proj[si] += accuracy(&argmax_rows(&((&lf + &lproj) * 0.5)));
        }
    }
    let t = trials as f64;
    for series in [
        &mut curve.f,
        &mut curve.f_ind,
        &mut curve.f_proj,
        &mut curve.ens_f_ind,
        &mut curve.ens_f_proj,
    ] {
        for v in series.iter_mut() {
            *v /= t;
        }
    }
    Ok(curve)
}
