//! Quantifying low-dimensional input dependence of a trained network.
//!
//! Two routes discover the bias subspace. In the rich regime the first
//! layer itself collapses, so [`top_subspace`] takes the top right singular
//! vectors of `W`. In the lazy regime the weights stay high rank and the
//! subspace is found by [`optimize_projector`], which minimizes
//!
//! ```text
//! (1/n) Σᵢ [ CE(f(P xᵢ), yᵢ) + λ · CE(f(P⊥ xᵢ), uniform) ]
//! ```
//!
//! over rank-k projectors `P = QQᵀ`, with an orthonormalization retraction
//! after every gradient step. The model parameters are never touched.
//!
//! [`mixing_metrics`] then scores how much the projector explains the
//! model: mix i.i.d. pairs as `x̃ = Px₁ + P⊥x₂` and measure accuracy of
//! `f(x̃)` against `y₁` and `y₂` plus the relative logit changes against
//! `f(x₁)` and `f(x₂)`.

use ndarray::{Array1, ArrayView2, Axis, CowArray};
use rand::Rng;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, svd, vec_norm, Matrix};
use crate::model::{argmax_rows, forward, softmax, Mlp};

/// Orthonormal basis of a rank-k subspace of input space.
///
/// `P x = Q Qᵀ x` and `P⊥ x = x − P x`. A rank-0 projector is permitted for
/// test harnesses (it maps everything to zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// d×k with orthonormal columns.
    pub q: Matrix,
}

impl Projector {
    /// Wraps an orthonormal basis; re-orthonormalizes to guard drift.
    pub fn new(q: Matrix) -> Result<Self> {
        if q.ncols() == 0 {
            return Ok(Self { q });
        }
        Ok(Self { q: orthonormalize(&q)? })
    }

    /// Identity projector (`k = d`): `P⊥` is exactly zero.
    pub fn identity(d: usize) -> Self {
        Self { q: Matrix::eye(d) }
    }

    /// Rank-0 projector; accepted only by analysis helpers, not the CLI.
    pub fn rank_zero(d: usize) -> Self {
        Self { q: Matrix::zeros((d, 0)) }
    }

    pub fn d(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    /// `P` applied to the rows of `x`: `(XQ)Qᵀ`.
    pub fn apply_rows(&self, x: &Matrix) -> Matrix {
        if self.k() == 0 {
            return Matrix::zeros(x.raw_dim());
        }
        x.dot(&self.q).dot(&self.q.t())
    }

    /// `P⊥` applied to the rows of `x`.
    pub fn apply_perp_rows(&self, x: &Matrix) -> Matrix {
        x - &self.apply_rows(x)
    }

    pub fn apply_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        if self.k() == 0 {
            return Array1::zeros(x.raw_dim());
        }
        self.q.dot(&self.q.t().dot(x))
    }
}

/// Exponential of the entropy of the normalized squared singular values.
/// Equals k exactly for a rank-k orthogonal projection matrix.
pub fn effective_rank(m: &Matrix) -> Result<f64> {
    let s = svd(m)?.s;
    effective_rank_of_singular_values(&s)
}

pub(crate) fn effective_rank_of_singular_values(s: &[f64]) -> Result<f64> {
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::UndefinedRank);
    }
    let mut entropy = 0.0;
    for &sv in s {
        let p = sv * sv / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Projector onto the span of the top-k right singular vectors of the
/// first layer weight matrix.
pub fn top_subspace(net: &Mlp, k: usize) -> Result<Projector> {
    let d = net.d();
    if k == 0 || k > d {
        return Err(Error::InvalidRank { requested: k, dim: d });
    }
    let decomp = svd(&net.w)?;
    let available = decomp.vt.nrows().min(k);
    let mut q = Matrix::zeros((d, k));
    for j in 0..available {
        for i in 0..d {
            q[[i, j]] = decomp.vt[[j, i]];
        }
    }
    // A wide W (m < d ≤ k) has fewer right singular vectors than k; the
    // remaining directions all carry zero singular value, so extend with a
    // deterministic orthonormal completion.
    for j in available..k {
        let mut best: Option<(f64, Array1<f64>)> = None;
        for e in 0..d {
            let mut cand = Array1::zeros(d);
            cand[e] = 1.0;
            for prev in 0..j {
                let proj = q.column(prev).dot(&cand);
                let col = q.column(prev).to_owned();
                cand.scaled_add(-proj, &col);
            }
            let norm = cand.dot(&cand).sqrt();
            if best.as_ref().is_none_or(|(bn, _)| norm > *bn) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.unwrap();
        q.column_mut(j).assign(&(&cand / norm));
    }
    Ok(Projector { q })
}

/// Smallest k whose top singular values capture `energy` of the squared
/// spectrum of `W`.
pub fn auto_rank(net: &Mlp, energy: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&energy) || energy == 0.0 {
        return Err(Error::InvalidInput(format!("energy = {energy} must be in (0, 1)")));
    }
    let s = svd(&net.w)?.s;
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::UndefinedRank);
    }
    let mut cum = 0.0;
    for (i, &sv) in s.iter().enumerate() {
        cum += sv * sv;
        if cum >= energy * total {
            return Ok(i + 1);
        }
    }
    Ok(s.len())
}

/// Normalized squared singular values of `W`, nonincreasing, summing to 1.
pub fn singular_decay(net: &Mlp) -> Result<Vec<f64>> {
    let s = svd(&net.w)?.s;
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::UndefinedRank);
    }
    Ok(s.iter().map(|v| v * v / total).collect())
}

/// Options for [`optimize_projector`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectorOptConfig {
    pub steps: usize,
    pub lr: f64,
    /// Minibatch size; `None` runs full batch.
    pub batch: Option<usize>,
    pub seed: u64,
    /// Start from the top-k right singular vectors of `W` (warm start) or
    /// from a random orthonormal basis.
    pub warm_start: bool,
}

impl Default for ProjectorOptConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 0.1, batch: None, seed: 0, warm_start: true }
    }
}

/// Result of a projector fit. `warned` is set when the objective never
/// improved over its initial value (the projector is still the best seen).
#[derive(Debug, Clone)]
pub struct ProjectorFit {
    pub projector: Projector,
    pub initial_objective: f64,
    pub best_objective: f64,
    pub warned: bool,
}

/// Gradient of the mean cross-entropy w.r.t. the network *inputs* `z`,
/// where `targets` are per-row label distributions. Includes the `1/n`.
fn input_gradient(net: &Mlp, z: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> (f64, Matrix) {
    let n = z.nrows() as f64;
    let mut pre = z.dot(&net.w.t());
    pre += &net.b;
    let hidden = pre.mapv(|v| v.max(0.0));
    let logits = hidden.dot(&net.a) * net.out_scale;
    let probs = softmax(&logits);

    let mut loss = 0.0;
    for (prow, trow) in probs.rows().into_iter().zip(targets.rows()) {
        for (p, t) in prow.iter().zip(trow.iter()) {
            if *t > 0.0 {
                loss -= t * p.max(f64::MIN_POSITIVE).ln();
            }
        }
    }
    loss /= n;

    let mut dlogits = probs;
    dlogits -= &targets;
    dlogits /= n;
    let mut dhidden = dlogits.dot(&net.a.t()) * net.out_scale;
    ndarray::Zip::from(&mut dhidden).and(&pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    (loss, dhidden.dot(&net.w))
}

fn opt_objective(net: &Mlp, x: &Matrix, onehot: &Matrix, uniform: &Matrix, lambda: f64, q: &Matrix) -> f64 {
    let xp = x.dot(q).dot(&q.t());
    let xperp = x - &xp;
    let (l1, _) = input_gradient(net, xp.view(), onehot.view());
    let (l2, _) = input_gradient(net, xperp.view(), uniform.view());
    l1 + lambda * l2
}

/// Finds a rank-k projector under which the fixed model `net` predicts the
/// labels, while its complement yields uninformative predictions.
///
/// Minimizes `(1/n)Σ CE(f(Px), y) + λ·CE(f(P⊥x), uniform)` by gradient
/// descent on `Q` (with `P = QQᵀ`), orthonormalizing after every step, and
/// returns the best iterate. `net` is never mutated.
pub fn optimize_projector(
    net: &Mlp,
    data: &LabeledDataset,
    k: usize,
    lambda: f64,
    opt: &ProjectorOptConfig,
) -> Result<ProjectorFit> {
    let d = net.d();
    if k == 0 || k >= d {
        return Err(Error::InvalidRank { requested: k, dim: d });
    }
    if data.d() != d {
        return Err(Error::Shape(format!("dataset d={} vs network d={}", data.d(), d)));
    }
    let n = data.n();
    let c = net.c();

    let mut onehot = Matrix::zeros((n, c));
    for (i, &label) in data.y.iter().enumerate() {
        onehot[[i, label]] = 1.0;
    }
    let uniform = Matrix::from_elem((n, c), 1.0 / c as f64);

    let mut q = if opt.warm_start {
        top_subspace(net, k)?.q
    } else {
        let mut rng = crate::linalg::RngState::new(opt.seed).stream("projopt.init");
        let raw = Matrix::from_shape_fn((d, k), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        orthonormalize(&raw)?
    };

    let full_objective =
        |q: &Matrix| opt_objective(net, &data.x, &onehot, &uniform, lambda, q);

    let full_batch = opt.batch.is_none_or(|b| b >= n);
    let initial = full_objective(&q);
    let mut best = initial;
    let mut best_q = q.clone();
    let mut batch_rng = crate::linalg::RngState::new(opt.seed).stream("projopt.batch");

    for step in 0..opt.steps {
        // Cosine decay of the step size over the run.
        let t = if opt.steps > 1 { step as f64 / (opt.steps - 1) as f64 } else { 0.0 };
        let lr = opt.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());

        let (x, oh, un): (CowArray<'_, f64, _>, CowArray<'_, f64, _>, CowArray<'_, f64, _>) =
            if full_batch {
                (data.x.view().into(), onehot.view().into(), uniform.view().into())
            } else {
                let b = opt.batch.expect("minibatch mode");
                let idx: Vec<usize> = (0..b).map(|_| batch_rng.gen_range(0..n)).collect();
                (
                    data.x.select(Axis(0), &idx).into(),
                    onehot.select(Axis(0), &idx).into(),
                    uniform.select(Axis(0), &idx).into(),
                )
            };

        let xp = x.dot(&q).dot(&q.t());
        let xperp = &x - &xp;
        let (l1, r1) = input_gradient(net, xp.view(), oh.view());
        let (l2, r2) = input_gradient(net, xperp.view(), un.view());

        // In full-batch mode the gradient pass already evaluates the exact
        // objective at the current iterate; track the best from it.
        if full_batch {
            let obj = l1 + lambda * l2;
            if obj < best {
                best = obj;
                best_q = q.clone();
            }
        }

        // d/dQ of tr-form objectives: (XᵀR + RᵀX)Q, negated for the
        // complement branch.
        let xt_r1 = x.t().dot(&r1);
        let xt_r2 = x.t().dot(&r2);
        let sym1 = &xt_r1 + &xt_r1.t();
        let sym2 = &xt_r2 + &xt_r2.t();
        let grad = (sym1 - sym2 * lambda).dot(&q);

        let stepped = &q - &(grad * lr);
        q = orthonormalize(&stepped)?;

        // Minibatch objectives are noisy; score the full objective on a
        // fixed stride instead of every step.
        if !full_batch && (step % 25 == 24 || step + 1 == opt.steps) {
            let obj = full_objective(&q);
            if obj < best {
                best = obj;
                best_q = q.clone();
            }
        }
    }
    let final_obj = full_objective(&q);
    if final_obj < best {
        best = final_obj;
        best_q = q;
    }

    Ok(ProjectorFit {
        projector: Projector { q: best_q },
        initial_objective: initial,
        best_objective: best,
        warned: best >= initial,
    })
}

/// Mixing metrics of a (net, projector) pair on a dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixingReport {
    /// Projector rank.
    pub rank_p: usize,
    /// Clean accuracy of the model on the dataset, in [0, 1].
    pub acc: f64,
    /// Accuracy of `f(Px₁+P⊥x₂)` against `y₁`.
    pub pperp_ra: f64,
    /// Accuracy of `f(Px₁+P⊥x₂)` against `y₂`.
    pub p_ra: f64,
    /// Mean `‖f(x̃)−f(x₁)‖/‖f(x₁)‖`.
    pub pperp_lc: f64,
    /// Mean `‖f(x̃)−f(x₂)‖/‖f(x₂)‖`.
    pub p_lc: f64,
    /// Effective rank of the first layer.
    pub effrank_w: f64,
}

impl MixingReport {
    /// JSON with table-convention percentages (2 decimals) under the
    /// canonical keys, plus the raw `[0,1]` values under `raw`.
    pub fn to_json(&self) -> serde_json::Value {
        let pct = |v: f64| (v * 10_000.0).round() / 100.0;
        let round2 = |v: f64| (v * 100.0).round() / 100.0;
        serde_json::json!({
            "rank_P": self.rank_p,
            "acc": pct(self.acc),
            "pperp_ra": pct(self.pperp_ra),
            "p_ra": pct(self.p_ra),
            "pperp_lc": pct(self.pperp_lc),
            "p_lc": pct(self.p_lc),
            "effrank_W": round2(self.effrank_w),
            "raw": {
                "acc": self.acc,
                "pperp_ra": self.pperp_ra,
                "p_ra": self.p_ra,
                "pperp_lc": self.pperp_lc,
                "p_lc": self.p_lc,
                "effrank_W": self.effrank_w,
            },
        })
    }
}

/// Draws `num_pairs` i.i.d. pairs, mixes them through the projector and
/// scores the four randomized-accuracy / logit-change metrics.
///
/// Pairs where a reference logit vector is zero are skipped; more than 10%
/// skips aborts with `DegenerateLogits`.
pub fn mixing_metrics(
    net: &Mlp,
    data: &LabeledDataset,
    p: &Projector,
    num_pairs: usize,
    rng: &mut impl Rng,
) -> Result<MixingReport> {
    if num_pairs == 0 {
        return Err(Error::InvalidInput("num_pairs must be >= 1".into()));
    }
    if p.d() != data.d() {
        return Err(Error::Shape(format!("projector d={} vs dataset d={}", p.d(), data.d())));
    }
    let n = data.n();
    let clean_logits = forward(net, &data.x)?;
    let clean_preds = argmax_rows(&clean_logits);
    let acc = clean_preds.iter().zip(data.y.iter()).filter(|(a, b)| a == b).count() as f64
        / n as f64;

    let idx: Vec<(usize, usize)> =
        (0..num_pairs).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();

    // x̃ = P x₁ + (x₂ − P x₂); computed this way the identity projector
    // reproduces x₁ exactly and the rank-0 projector reproduces x₂ exactly.
    let x1 = data.x.select(Axis(0), &idx.iter().map(|p| p.0).collect::<Vec<_>>());
    let x2 = data.x.select(Axis(0), &idx.iter().map(|p| p.1).collect::<Vec<_>>());
    let mixed = &p.apply_rows(&x1) + &(&x2 - &p.apply_rows(&x2));
    let mixed_logits = forward(net, &mixed)?;
    let mixed_preds = argmax_rows(&mixed_logits);

    let mut kept = 0usize;
    let mut skipped = 0usize;
    let (mut ra1, mut ra2, mut lc1, mut lc2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (t, &(i, j)) in idx.iter().enumerate() {
        let norm1 = vec_norm(clean_logits.row(i));
        let norm2 = vec_norm(clean_logits.row(j));
        if norm1 == 0.0 || norm2 == 0.0 {
            skipped += 1;
            continue;
        }
        kept += 1;
        if mixed_preds[t] == data.y[i] {
            ra1 += 1.0;
        }
        if mixed_preds[t] == data.y[j] {
            ra2 += 1.0;
        }
        let diff1 = (&mixed_logits.row(t) - &clean_logits.row(i)).to_owned();
        let diff2 = (&mixed_logits.row(t) - &clean_logits.row(j)).to_owned();
        lc1 += vec_norm(diff1.view()) / norm1;
        lc2 += vec_norm(diff2.view()) / norm2;
    }
    if skipped * 10 > num_pairs {
        return Err(Error::DegenerateLogits { skipped, total: num_pairs });
    }
    let kf = kept as f64;
    Ok(MixingReport {
        rank_p: p.k(),
        acc,
        pperp_ra: ra1 / kf,
        p_ra: ra2 / kf,
        pperp_lc: lc1 / kf,
        p_lc: lc2 / kf,
        effrank_w: effective_rank(&net.w)?,
    })
}

/// Predicted labels on a `res × res` grid in the plane spanned by a rank-2
/// projector, centered at `base_point`.
#[derive(Debug, Clone)]
pub struct BoundaryGrid {
    pub us: Vec<f64>,
    pub vs: Vec<f64>,
    /// Row-major over (u, v): `labels[ui * res + vi]`.
    pub labels: Vec<usize>,
}

impl BoundaryGrid {
    /// CSV rendering: `u,v,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,v,label\n");
        for (ui, &u) in self.us.iter().enumerate() {
            for (vi, &v) in self.vs.iter().enumerate() {
                out.push_str(&format!("{u},{v},{}\n", self.labels[ui * self.vs.len() + vi]));
            }
        }
        out
    }
}

/// Evaluates the model's predicted label on
/// `base + u·q₁ + v·q₂` for `u, v` on a symmetric grid of half-width
/// `range` and `res` points per axis.
pub fn boundary_grid(
    net: &Mlp,
    p2: &Projector,
    range: f64,
    res: usize,
    base_point: &Array1<f64>,
) -> Result<BoundaryGrid> {
    if p2.k() != 2 {
        return Err(Error::InvalidRank { requested: p2.k(), dim: p2.d() });
    }
    if base_point.len() != net.d() {
        return Err(Error::Shape("base point dimension mismatch".into()));
    }
    let coords = |i: usize| {
        if res == 1 {
            0.0
        } else {
            -range + 2.0 * range * i as f64 / (res - 1) as f64
        }
    };
    let us: Vec<f64> = (0..res).map(coords).collect();
    let vs: Vec<f64> = (0..res).map(coords).collect();
    let q1 = p2.q.column(0);
    let q2 = p2.q.column(1);
    let mut points = Matrix::zeros((res * res, net.d()));
    for (ui, &u) in us.iter().enumerate() {
        for (vi, &v) in vs.iter().enumerate() {
            let mut row = points.row_mut(ui * res + vi);
            row.assign(base_point);
            row.scaled_add(u, &q1);
            row.scaled_add(v, &q2);
        }
    }
    let labels = crate::model::predict(net, &points)?;
    Ok(BoundaryGrid { us, vs, labels })
}

/// How linear the decision boundary looks inside a rank-2 slice.
///
/// Each data point is replaced by its projection into the plane plus a
/// fixed complement (the dataset mean's `P⊥` part), pseudo-labeled by the
/// network, and a softmax-regression probe on the 2-d coordinates is fit to
/// those pseudo-labels. Returns the probe's agreement rate.
pub fn linear_probe_nonlinearity(
    net: &Mlp,
    data: &LabeledDataset,
    p2: &Projector,
) -> Result<f64> {
    if p2.k() != 2 {
        return Err(Error::InvalidRank { requested: p2.k(), dim: p2.d() });
    }
    let n = data.n();
    let mean = data.x.mean_axis(Axis(0)).expect("n >= 1");
    let base_perp = &mean - &p2.apply_vec(&mean);
    let mut replaced = p2.apply_rows(&data.x);
    for mut row in replaced.rows_mut() {
        row += &base_perp;
    }
    let pseudo = crate::model::predict(net, &replaced)?;
    let classes: std::collections::BTreeSet<usize> = pseudo.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels);
    }

    // 2-d coordinates within the plane, standardized for the probe.
    let coords = data.x.dot(&p2.q);
    let mut feats = Matrix::ones((n, 3));
    for i in 0..n {
        feats[[i, 0]] = coords[[i, 0]];
        feats[[i, 1]] = coords[[i, 1]];
    }
    for j in 0..2 {
        let col_mean = feats.column(j).sum() / n as f64;
        let var = feats.column(j).iter().map(|v| (v - col_mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(1e-12);
        feats.column_mut(j).mapv_inplace(|v| (v - col_mean) / sd);
    }

    let c = net.c();
    let mut weights = Matrix::zeros((3, c));
    let mut onehot = Matrix::zeros((n, c));
    for (i, &label) in pseudo.iter().enumerate() {
        onehot[[i, label]] = 1.0;
    }
    // Plain full-batch softmax regression; the probe has 3(c) parameters,
    // so a fixed schedule converges far past the thresholds of interest.
    for _ in 0..800 {
        let scores = feats.dot(&weights);
        let probs = softmax(&scores);
        let grad = feats.t().dot(&(&probs - &onehot)) / n as f64;
        weights.scaled_add(-2.0, &grad);
    }
    let probe_preds = argmax_rows(&feats.dot(&weights));
    let agree =
        probe_preds.iter().zip(pseudo.iter()).filter(|(a, b)| a == b).count() as f64 / n as f64;
    Ok(agree)
}
