//! The 1-hidden-layer ReLU network with rich and lazy initializations.
//!
//! The network computes `out_scale · A φ(Wx + b)` with `φ(u) = max(u, 0)`.
//! Under rich initialization each concatenated row `(W(i,·), b(i))` is
//! uniform on the unit sphere, the second layer is `±1`, and the output is
//! scaled by `1/m`; under lazy initialization the layers are Gaussian with
//! variances `1/d` and `1/m` and the biases start at zero. The output scale
//! is stored explicitly rather than folded into `A` so the rich-regime
//! scaling survives checkpoint round-trips and width sweeps.
//!
//! Binary problems run as 2-output softmax cross-entropy, which matches the
//! logistic form on the logit difference; the closed-form routines in
//! [`crate::ntk`] keep their own scalar conventions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{sample_unit_sphere, Matrix};

/// Initialization regime tag; kept on the model because it determines both
/// the output scale and how downstream analysis finds the bias subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Rich,
    Lazy,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Rich => write!(f, "rich"),
            Regime::Lazy => write!(f, "lazy"),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rich" => Ok(Regime::Rich),
            "lazy" => Ok(Regime::Lazy),
            other => Err(Error::InvalidInput(format!("unknown regime `{other}`"))),
        }
    }
}

/// 1-hidden-layer network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// m×d first-layer weights.
    pub w: Matrix,
    /// Length-m biases.
    pub b: Array1<f64>,
    /// m×c second-layer weights.
    pub a: Matrix,
    pub out_scale: f64,
    pub regime: Regime,
}

impl Mlp {
    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn c(&self) -> usize {
        self.a.ncols()
    }
}

/// Gradient carrier matching the parameter shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dw: Matrix,
    pub db: Array1<f64>,
    pub da: Matrix,
}

/// Rich initialization: `(W(i,·), b(i))` uniform on the sphere in
/// `R^{d+1}`, `A(i,j)` uniform on `{−1, +1}`, output scaled by `1/m`.
pub fn init_rich(m: usize, d: usize, c: usize, rng: &mut impl Rng) -> Result<Mlp> {
    check_sizes(m, d, c)?;
    let mut w = Array2::zeros((m, d));
    let mut b = Array1::zeros(m);
    for i in 0..m {
        let row = sample_unit_sphere(d + 1, rng)?;
        for j in 0..d {
            w[[i, j]] = row[j];
        }
        b[i] = row[d];
    }
    let a = Array2::from_shape_fn((m, c), |_| if rng.gen::<bool>() { 1.0 } else { -1.0 });
    Ok(Mlp { w, b, a, out_scale: 1.0 / m as f64, regime: Regime::Rich })
}

/// Lazy initialization: `W ~ N(0, 1/d)`, `A ~ N(0, 1/m)`, zero biases,
/// unit output scale.
pub fn init_lazy(m: usize, d: usize, c: usize, rng: &mut impl Rng) -> Result<Mlp> {
    check_sizes(m, d, c)?;
    let w_sd = 1.0 / (d as f64).sqrt();
    let a_sd = 1.0 / (m as f64).sqrt();
    let w = Array2::from_shape_fn((m, d), |_| rng.sample::<f64, _>(StandardNormal) * w_sd);
    let a = Array2::from_shape_fn((m, c), |_| rng.sample::<f64, _>(StandardNormal) * a_sd);
    Ok(Mlp { w, b: Array1::zeros(m), a, out_scale: 1.0, regime: Regime::Lazy })
}

fn check_sizes(m: usize, d: usize, c: usize) -> Result<()> {
    if m == 0 || d == 0 || c == 0 {
        return Err(Error::InvalidInput(format!("degenerate network size m={m} d={d} c={c}")));
    }
    Ok(())
}

/// Logits for a batch of rows: `out_scale · φ(XWᵀ + b) A`, shape n×c.
pub fn forward(net: &Mlp, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != net.d() {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            net.d()
        )));
    }
    let mut hidden = x.dot(&net.w.t());
    hidden += &net.b;
    hidden.mapv_inplace(|v| v.max(0.0));
    Ok(hidden.dot(&net.a) * net.out_scale)
}

/// Row-wise softmax, numerically shifted.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the batch plus
/// `(weight_decay/2)·(‖W‖² + ‖A‖²)`, with exact gradients of the same
/// objective.
pub fn loss_and_grad(
    net: &Mlp,
    x: &Matrix,
    y: &[usize],
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= net.c()) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    let n = x.nrows() as f64;

    let mut pre = x.dot(&net.w.t());
    pre += &net.b;
    let hidden = pre.mapv(|v| v.max(0.0));
    let logits = hidden.dot(&net.a) * net.out_scale;

    let probs = softmax(&logits);
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        loss -= probs[[i, label]].max(f64::MIN_POSITIVE).ln();
    }
    loss /= n;
    let w_sq: f64 = net.w.iter().map(|v| v * v).sum();
    let a_sq: f64 = net.a.iter().map(|v| v * v).sum();
    loss += 0.5 * weight_decay * (w_sq + a_sq);

    // dL/dlogits = (softmax − onehot)/n.
    let mut dlogits = probs;
    for (i, &label) in y.iter().enumerate() {
        dlogits[[i, label]] -= 1.0;
    }
    dlogits /= n;

    let mut da = hidden.t().dot(&dlogits) * net.out_scale;
    da.scaled_add(weight_decay, &net.a);

    // Back through the ReLU: gradient flows only where pre > 0.
    let mut dhidden = dlogits.dot(&net.a.t()) * net.out_scale;
    ndarray::Zip::from(&mut dhidden).and(&pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });

    let mut dw = dhidden.t().dot(x);
    dw.scaled_add(weight_decay, &net.w);
    let db = dhidden.sum_axis(Axis(0));

    Ok((loss, Gradients { dw, db, da }))
}

/// Argmax predictions; ties break toward the smaller class index.
pub fn predict(net: &Mlp, x: &Matrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(net, x)?))
}

/// Row-wise argmax with smaller-index tie-breaking.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    regime: Regime,
    m: usize,
    d: usize,
    c: usize,
    out_scale: f64,
    w: Vec<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
}

/// Writes the checkpoint as versioned JSON. Floats are emitted in shortest
/// round-trip form, so load returns bit-identical parameters.
pub fn save_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: "ldsb-checkpoint".into(),
        version: 1,
        regime: net.regime,
        m: net.m(),
        d: net.d(),
        c: net.c(),
        out_scale: net.out_scale,
        w: net.w.iter().copied().collect(),
        b: net.b.to_vec(),
        a: net.a.iter().copied().collect(),
    };
    let tmp = path.with_extension("tmp");
    {
        let mut writer = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut writer, &file)
            .map_err(|e| Error::InvalidInput(format!("checkpoint encode: {e}")))?;
        writer.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)
        .map_err(|e| Error::Parse { line: 0, msg: format!("checkpoint decode: {e}") })?;
    if file.format != "ldsb-checkpoint" || file.version != 1 {
        return Err(Error::Parse { line: 0, msg: "unrecognized checkpoint format".into() });
    }
    if file.w.len() != file.m * file.d || file.b.len() != file.m || file.a.len() != file.m * file.c
    {
        return Err(Error::Parse { line: 0, msg: "checkpoint shape mismatch".into() });
    }
    Ok(Mlp {
        w: Array2::from_shape_vec((file.m, file.d), file.w).expect("length checked"),
        b: Array1::from_vec(file.b),
        a: Array2::from_shape_vec((file.m, file.c), file.a).expect("length checked"),
        out_scale: file.out_scale,
        regime: file.regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn rich_rows_lie_on_the_sphere() {
        let mut rng = RngState::new(1).stream("init");
        let net = init_rich(50, 7, 2, &mut rng).unwrap();
        for i in 0..net.m() {
            let row_sq: f64 = net.w.row(i).iter().map(|v| v * v).sum::<f64>() + net.b[i] * net.b[i];
            assert!((row_sq.sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(net.a.iter().all(|&v| v == 1.0 || v == -1.0));
        assert_relative_eq!(net.out_scale, 1.0 / 50.0);
    }

    #[test]
    fn lazy_init_moments() {
        let mut rng = RngState::new(2).stream("init");
        let d = 100;
        let m = 1000;
        let net = init_lazy(m, d, 2, &mut rng).unwrap();
        assert!(net.b.iter().all(|&v| v == 0.0));
        assert_relative_eq!(net.out_scale, 1.0);
        let var_w: f64 = net.w.iter().map(|v| v * v).sum::<f64>() / (m * d) as f64;
        assert!((var_w - 1.0 / d as f64).abs() < 0.1 / d as f64, "var {var_w}");
        let var_a: f64 = net.a.iter().map(|v| v * v).sum::<f64>() / (m * 2) as f64;
        assert!((var_a - 1.0 / m as f64).abs() < 0.1 / m as f64, "var {var_a}");
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_rich(8, 3, 2, &mut RngState::new(5).stream("init")).unwrap();
        let b = init_rich(8, 3, 2, &mut RngState::new(5).stream("init")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_zero_second_layer_and_relu_gate() {
        let mut rng = RngState::new(3).stream("init");
        let mut net = init_rich(16, 4, 3, &mut rng).unwrap();
        net.a.fill(0.0);
        let x = Array2::from_shape_fn((5, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let logits = forward(&net, &x).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));

        // Single neuron w=e1, b=0, a=1: negative pre-activation gives 0.
        let net = Mlp {
            w: array![[1.0, 0.0]],
            b: array![0.0],
            a: array![[1.0]],
            out_scale: 1.0,
            regime: Regime::Rich,
        };
        let x = array![[-5.0, 2.0]];
        assert_eq!(forward(&net, &x).unwrap()[[0, 0]], 0.0);
        let x = array![[3.0, 2.0]];
        assert_eq!(forward(&net, &x).unwrap()[[0, 0]], 3.0);
    }

    #[test]
    fn forward_is_linear_in_a() {
        let mut rng = RngState::new(4).stream("init");
        let mut net = init_lazy(12, 5, 2, &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let base = forward(&net, &x).unwrap();
        net.a *= 2.0;
        let doubled = forward(&net, &x).unwrap();
        for (a, b) in base.iter().zip(doubled.iter()) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let mut rng = RngState::new(4).stream("init");
        let net = init_lazy(4, 5, 2, &mut rng).unwrap();
        let x = Array2::zeros((3, 6));
        assert!(matches!(forward(&net, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        let mut rng = RngState::new(6).stream("init");
        let mut net = init_rich(10, 4, 5, &mut rng).unwrap();
        net.a.fill(0.0); // all logits zero → uniform softmax
        let x = Array2::from_shape_fn((8, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let y = vec![0, 1, 2, 3, 4, 0, 1, 2];
        let (loss, _) = loss_and_grad(&net, &x, &y, 0.0).unwrap();
        assert_relative_eq!(loss, (5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = RngState::new(7).stream("gradcheck");
        for &(m, d, c, wd) in &[(4, 3, 2, 0.0), (8, 6, 3, 0.01), (5, 4, 2, 0.0)] {
            let mut net = init_rich(m, d, c, &mut rng).unwrap();
            let x = Array2::from_shape_fn((7, d), |_| rng.sample::<f64, _>(StandardNormal));
            let y: Vec<usize> = (0..7).map(|_| rng.gen_range(0..c)).collect();
            let (_, grads) = loss_and_grad(&net, &x, &y, wd).unwrap();
            let eps = 1e-5;

            let check = |net: &mut Mlp, idx: (usize, usize), which: char, analytic: f64| {
                let read = |n: &Mlp| match which {
                    'w' => n.w[[idx.0, idx.1]],
                    'a' => n.a[[idx.0, idx.1]],
                    _ => n.b[idx.0],
                };
                let write = |n: &mut Mlp, v: f64| match which {
                    'w' => n.w[[idx.0, idx.1]] = v,
                    'a' => n.a[[idx.0, idx.1]] = v,
                    _ => n.b[idx.0] = v,
                };
                let orig = read(net);
                write(net, orig + eps);
                let (lp, _) = loss_and_grad(net, &x, &y, wd).unwrap();
                write(net, orig - eps);
                let (lm, _) = loss_and_grad(net, &x, &y, wd).unwrap();
                write(net, orig);
                let fd = (lp - lm) / (2.0 * eps);
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (fd - analytic).abs() / denom < 1e-6,
                    "{which}[{:?}] analytic {analytic} vs fd {fd}",
                    idx
                );
            };

            for i in 0..m {
                for j in 0..d {
                    let g = grads.dw[[i, j]];
                    check(&mut net, (i, j), 'w', g);
                }
                let g = grads.db[i];
                check(&mut net, (i, 0), 'b', g);
                for j in 0..c {
                    let g = grads.da[[i, j]];
                    check(&mut net, (i, j), 'a', g);
                }
            }
        }
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_grads() {
        let mut rng = RngState::new(8).stream("dup");
        let net = init_lazy(6, 4, 2, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let y = vec![0, 1, 1, 0, 1];
        let (l1, g1) = loss_and_grad(&net, &x, &y, 0.0).unwrap();
        let xx = ndarray::concatenate![Axis(0), x, x];
        let yy: Vec<usize> = y.iter().chain(y.iter()).copied().collect();
        let (l2, g2) = loss_and_grad(&net, &xx, &yy, 0.0).unwrap();
        assert_relative_eq!(l1, l2, epsilon = 1e-12);
        for (a, b) in g1.dw.iter().zip(g2.dw.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn predict_tie_breaks_low() {
        let logits = array![[2.0, -1.0], [0.0, 0.0], [-1.0, 4.0]];
        assert_eq!(argmax_rows(&logits), vec![0, 0, 1]);
    }

    #[test]
    fn predict_matches_manual_argmax() {
        let mut rng = RngState::new(9).stream("pred");
        let net = init_rich(10, 5, 4, &mut rng).unwrap();
        let x = Array2::from_shape_fn((20, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let logits = forward(&net, &x).unwrap();
        let preds = predict(&net, &x).unwrap();
        for (i, &p) in preds.iter().enumerate() {
            for j in 0..4 {
                assert!(logits[[i, p]] >= logits[[i, j]]);
            }
        }
    }

    #[test]
    fn scaling_first_layer_scales_preactivations() {
        // Positive 1-homogeneity in (W, b): scaling both by t > 0 scales
        // hidden activations by t, hence logits by t.
        let mut rng = RngState::new(10).stream("homog");
        let mut net = init_rich(8, 3, 2, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let base = forward(&net, &x).unwrap();
        let t = 3.5;
        net.w *= t;
        net.b *= t;
        let scaled = forward(&net, &x).unwrap();
        for (a, b) in base.iter().zip(scaled.iter()) {
            assert_relative_eq!(t * a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("ldsb-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.json");
        let mut rng = RngState::new(11).stream("ckpt");
        let net = init_rich(20, 6, 3, &mut rng).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(net, loaded);
        let path2 = dir.join("net2.json");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }
}
