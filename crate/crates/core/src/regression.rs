//! Ordinary least squares and significance-driven stepwise selection.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Name of the target column in dataset CSV files.
pub const TARGET_COLUMN: &str = "hue_rad";

/// Name used for the intercept column in singular-fit errors.
pub const INTERCEPT_NAME: &str = "(intercept)";

/// Columns whose pivoted-QR diagonal falls below this fraction of the
/// largest one (after scaling every column to unit norm) count as dependent.
const RANK_TOLERANCE: f64 = 1e-10;

/// `n` observations of `k` named predictors and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        let n = target.len();
        let k = columns.len();
        if names.len() != k {
            return Err(Error::Argument(format!("{} names for {k} predictors", names.len())));
        }
        if k == 0 || n <= k {
            return Err(Error::Argument(format!("need n > k >= 1, got n={n}, k={k}")));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::Argument(format!(
                "predictor {} has {} rows, target has {n}",
                names[c],
                columns[c].len()
            )));
        }
        if columns.iter().flatten().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::Argument("dataset contains non-finite values".into()));
        }
        Ok(Self {
            names,
            columns,
            target,
        })
    }

    /// Builds a dataset from rows of predictor values.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        let k = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Argument(format!("row has {} values, expected {k}", r.len())));
        }
        let columns = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::new(names, columns, target)
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        match header.last() {
            Some(last) if last == TARGET_COLUMN => {}
            _ => {
                return Err(Error::Argument(format!(
                    "{}: last column must be {TARGET_COLUMN}",
                    path.display()
                )))
            }
        }
        let k = header.len() - 1;
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Argument(format!("{}: {e}", path.display())))?;
            target.push(vals[k]);
            rows.push(vals[..k].to_vec());
        }
        Self::from_rows(header[..k].to_vec(), &rows, target)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = self.names.clone();
        header.push(TARGET_COLUMN.into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            rec.push(self.target[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Least-squares fit on `[1 | X_subset]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub subset: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub intercept_p_value: f64,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// `sqrt(rss / n)`
    pub rms: f64,
    pub df: usize,
}

/// Two-sided p-value of a t statistic.
pub fn two_sided_p(t: f64, df: usize) -> f64 {
    if df == 0 || t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn coefficient_p(beta: f64, se: f64, df: usize) -> f64 {
    if df == 0 {
        1.0
    } else if se == 0.0 {
        if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        two_sided_p(beta / se, df)
    }
}

/// Householder QR with column pivoting, in place on a column-major matrix.
/// Returns the pivot order, the Householder vectors and `R` diagonal.
struct PivotedQr {
    /// column-major n×p; upper triangle holds R, below it the reflectors
    a: Vec<Vec<f64>>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    fn new(mut a: Vec<Vec<f64>>) -> Self {
        let n = a[0].len();
        let p = a.len();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut tau = vec![0.0; p.min(n)];
        let mut norms: Vec<f64> = a.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let mut r00 = 0.0;
        let mut rank = 0;
        for j in 0..p.min(n) {
            // largest remaining column, lowest index on ties
            let piv = (j..p).fold(j, |best, c| if norms[c] > norms[best] { c } else { best });
            a.swap(j, piv);
            norms.swap(j, piv);
            perm.swap(j, piv);

            let col = &mut a[j];
            let alpha: f64 = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if j == 0 {
                r00 = alpha;
            }
            if alpha <= RANK_TOLERANCE * r00 || alpha == 0.0 {
                break;
            }
            rank += 1;
            let beta = if col[j] > 0.0 { -alpha } else { alpha };
            let v0 = col[j] - beta;
            for v in &mut col[j + 1..] {
                *v /= v0;
            }
            tau[j] = (beta - col[j]) / beta;
            col[j] = beta;

            let (head, tail) = a.split_at_mut(j + 1);
            let h = &head[j];
            for c in tail.iter_mut() {
                let mut s = c[j];
                for i in j + 1..n {
                    s += h[i] * c[i];
                }
                s *= tau[j];
                c[j] -= s;
                for i in j + 1..n {
                    c[i] -= s * h[i];
                }
            }
            // downdate remaining norms; recompute to avoid cancellation
            for (c, nm) in tail.iter().zip(&mut norms[j + 1..]) {
                *nm = c[j + 1..].iter().map(|v| v * v).sum();
            }
        }
        Self { a, tau, perm, rank }
    }

    /// Applies `Qᵀ` to `y` in place.
    fn qt_apply(&self, y: &mut [f64]) {
        let n = y.len();
        for j in 0..self.rank {
            let h = &self.a[j];
            let mut s = y[j];
            for i in j + 1..n {
                s += h[i] * y[i];
            }
            s *= self.tau[j];
            y[j] -= s;
            for i in j + 1..n {
                y[i] -= s * h[i];
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j][i]
    }

    /// Solves `R₁₁ x = b` for the leading `rank` block.
    fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        let r = self.rank;
        let mut x = b[..r].to_vec();
        for i in (0..r).rev() {
            for j in i + 1..r {
                x[i] -= self.r(i, j) * x[j];
            }
            x[i] /= self.r(i, i);
        }
        x
    }
}

fn column_label(d: &Dataset, subset: &[usize], col: usize) -> String {
    if col == 0 {
        INTERCEPT_NAME.to_string()
    } else {
        d.names[subset[col - 1]].clone()
    }
}

/// OLS on the intercept plus `subset`, which may be empty.
fn fit_design(d: &Dataset, subset: &[usize]) -> Result<OlsFit> {
    let n = d.n();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(subset.len() + 1);
    cols.push(vec![1.0; n]);
    cols.extend(subset.iter().map(|&j| d.columns[j].clone()));
    let p = cols.len();

    // unit-norm columns make the rank test scale free
    let scales: Vec<f64> = cols
        .iter()
        .map(|c| {
            let s = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for (c, s) in cols.iter_mut().zip(&scales) {
        for v in c.iter_mut() {
            *v /= s;
        }
    }

    let qr = PivotedQr::new(cols);
    if qr.rank < p {
        let mut names: Vec<String> = Vec::new();
        let kept = qr.rank;
        for dep in kept..p {
            // dependent column = kept columns · R₁₁⁻¹ R₁₂
            let r12: Vec<f64> = (0..kept).map(|i| qr.r(i, dep)).collect();
            let z = qr.solve_r(&r12);
            for (i, zi) in z.iter().enumerate() {
                if zi.abs() > 1e-8 {
                    names.push(column_label(d, subset, qr.perm[i]));
                }
            }
            names.push(column_label(d, subset, qr.perm[dep]));
        }
        names.sort();
        names.dedup();
        return Err(Error::Singular(names));
    }

    let mut qty = d.target.clone();
    qr.qt_apply(&mut qty);
    let beta_piv = qr.solve_r(&qty);
    let rss: f64 = qty[p..].iter().map(|v| v * v).sum();

    // rows of R⁻¹ give the coefficient covariance up to σ²
    let mut rinv_row_norm2 = vec![0.0; p];
    for c in 0..p {
        let mut e = vec![0.0; p];
        e[c] = 1.0;
        let col = qr.solve_r(&e);
        for (i, v) in col.iter().enumerate() {
            rinv_row_norm2[i] += v * v;
        }
    }

    let mut beta = vec![0.0; p];
    let mut se = vec![0.0; p];
    let df = n - p;
    let sigma2 = if df > 0 { rss / df as f64 } else { 0.0 };
    for (pos, &orig) in qr.perm.iter().enumerate() {
        beta[orig] = beta_piv[pos] / scales[orig];
        se[orig] = (sigma2 * rinv_row_norm2[pos]).sqrt() / scales[orig];
    }

    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let fitted = beta[0] + subset.iter().zip(&beta[1..]).map(|(&j, b)| b * d.columns[j][i]).sum::<f64>();
            d.target[i] - fitted
        })
        .collect();
    let p_values: Vec<f64> = (1..p).map(|c| coefficient_p(beta[c], se[c], df)).collect();
    Ok(OlsFit {
        subset: subset.to_vec(),
        coefficients: beta[1..].to_vec(),
        intercept: beta[0],
        std_errors: se[1..].to_vec(),
        p_values,
        intercept_p_value: coefficient_p(beta[0], se[0], df),
        residuals,
        rss,
        rms: (rss / n as f64).sqrt(),
        df,
    })
}

/// OLS of the target on an intercept plus the predictors in `subset`.
pub fn fit_ols(d: &Dataset, subset: &[usize]) -> Result<OlsFit> {
    if subset.is_empty() {
        return Err(Error::Argument("fit_ols needs at least one predictor".into()));
    }
    let mut seen = HashSet::new();
    for &j in subset {
        if j >= d.k() {
            return Err(Error::Argument(format!("predictor index {j} out of range")));
        }
        if !seen.insert(j) {
            return Err(Error::Argument(format!("predictor index {j} repeated")));
        }
    }
    fit_design(d, subset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseOptions {
    pub p_enter: f64,
    pub p_remove: f64,
}

impl Default for StepwiseOptions {
    fn default() -> Self {
        Self {
            p_enter: 0.05,
            p_remove: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum StepEvent {
    Enter { index: usize, name: String, p_value: f64 },
    Remove { index: usize, name: String, p_value: f64 },
    /// The selected set repeated an earlier one.
    Cycle,
    /// The step budget ran out.
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseModel {
    pub names: Vec<String>,
    /// Ascending predictor indices.
    pub selected: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub p_values: Vec<f64>,
    pub intercept_p_value: f64,
    pub rms: f64,
    pub trace: Vec<StepEvent>,
}

impl StepwiseModel {
    pub fn n_predictors(&self) -> usize {
        self.names.len()
    }

    /// Coefficient per predictor, zero where not selected.
    pub fn full_coefficients(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.names.len()];
        for (&j, &b) in self.selected.iter().zip(&self.coefficients) {
            out[j] = b;
        }
        out
    }

    pub fn predict(&self, responses: &[f64]) -> Result<f64> {
        if responses.len() != self.names.len() {
            return Err(Error::Argument(format!(
                "expected {} responses, got {}",
                self.names.len(),
                responses.len()
            )));
        }
        Ok(self.intercept
            + self
                .selected
                .iter()
                .zip(&self.coefficients)
                .map(|(&j, b)| b * responses[j])
                .sum::<f64>())
    }
}

pub fn predict(m: &StepwiseModel, responses: &[f64]) -> Result<f64> {
    m.predict(responses)
}

/// Residuals this small are rounding noise; nothing can improve on them.
fn is_exact_fit(d: &Dataset, fit: &OlsFit) -> bool {
    let ymax = d.target.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 64.0 * f64::EPSILON * ymax;
    fit.rss <= d.n() as f64 * floor * floor
}

/// Forward entry / backward removal from the intercept-only model.
pub fn stepwise_fit(d: &Dataset, opts: StepwiseOptions) -> Result<StepwiseModel> {
    if !(opts.p_enter > 0.0 && opts.p_enter <= opts.p_remove && opts.p_remove <= 1.0) {
        return Err(Error::Argument(format!(
            "need 0 < p_enter <= p_remove <= 1, got {opts:?}"
        )));
    }
    let k = d.k();
    let max_steps = 2 * k * (k + 1);
    let mut selected: Vec<usize> = Vec::new();
    let mut current = fit_design(d, &selected)?;
    let mut seen: HashSet<Vec<usize>> = HashSet::from([Vec::new()]);
    let mut trace = Vec::new();
    let mut steps = 0;

    'outer: loop {
        let mut changed = false;

        if !is_exact_fit(d, &current) {
            let excluded: Vec<usize> = (0..k).filter(|j| !selected.contains(j)).collect();
            let entry: Vec<Option<(f64, usize, OlsFit)>> = excluded
                .par_iter()
                .map(|&j| {
                    let mut s = selected.clone();
                    s.push(j);
                    // collinear candidates cannot enter
                    fit_design(d, &s).ok().map(|f| (*f.p_values.last().unwrap(), j, f))
                })
                .collect();
            let best = entry
                .into_iter()
                .flatten()
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((p, j, fit)) = best {
                if p < opts.p_enter {
                    selected.push(j);
                    current = fit;
                    trace.push(StepEvent::Enter {
                        index: j,
                        name: d.names[j].clone(),
                        p_value: p,
                    });
                    steps += 1;
                    changed = true;
                    if !record(&mut seen, &selected, &mut trace) {
                        break 'outer;
                    }
                }
            }
        }

        if !selected.is_empty() && steps < max_steps {
            let worst = current
                .p_values
                .iter()
                .zip(&selected)
                .max_by(|a, b| a.0.total_cmp(b.0).then(b.1.cmp(a.1)))
                .map(|(&p, &j)| (p, j));
            if let Some((p, j)) = worst {
                if p > opts.p_remove {
                    selected.retain(|&s| s != j);
                    current = fit_design(d, &selected)?;
                    trace.push(StepEvent::Remove {
                        index: j,
                        name: d.names[j].clone(),
                        p_value: p,
                    });
                    steps += 1;
                    changed = true;
                    if !record(&mut seen, &selected, &mut trace) {
                        break 'outer;
                    }
                }
            }
        }

        if !changed {
            break;
        }
        if steps >= max_steps {
            trace.push(StepEvent::StepLimit);
            break;
        }
    }

    let mut order: Vec<usize> = (0..selected.len()).collect();
    order.sort_by_key(|&i| selected[i]);
    Ok(StepwiseModel {
        names: d.names.clone(),
        selected: order.iter().map(|&i| selected[i]).collect(),
        coefficients: order.iter().map(|&i| current.coefficients[i]).collect(),
        p_values: order.iter().map(|&i| current.p_values[i]).collect(),
        intercept: current.intercept,
        intercept_p_value: current.intercept_p_value,
        rms: current.rms,
        trace,
    })
}

/// Remembers the selected set; false if it was seen before.
fn record(seen: &mut HashSet<Vec<usize>>, selected: &[usize], trace: &mut Vec<StepEvent>) -> bool {
    let mut key = selected.to_vec();
    key.sort_unstable();
    if seen.insert(key) {
        true
    } else {
        trace.push(StepEvent::Cycle);
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    fn random_dataset(seed: u64, n: usize, k: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Dataset::new(names(k), cols, y).unwrap()
    }

    // normal equations XᵀX β = Xᵀy solved by Gauss–Jordan elimination
    fn normal_equations(d: &Dataset, subset: &[usize]) -> Vec<f64> {
        let n = d.n();
        let p = subset.len() + 1;
        let x = |i: usize, c: usize| if c == 0 { 1.0 } else { d.column(subset[c - 1])[i] };
        let mut m = vec![vec![0.0; p + 1]; p];
        for r in 0..p {
            for c in 0..p {
                m[r][c] = (0..n).map(|i| x(i, r) * x(i, c)).sum();
            }
            m[r][p] = (0..n).map(|i| x(i, r) * d.target()[i]).sum();
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for cc in c..=p {
                        m[r][cc] -= f * m[c][cc];
                    }
                }
            }
        }
        (0..p).map(|r| m[r][p] / m[r][r]).collect()
    }

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let d = Dataset::new(names(1), vec![x], y).unwrap();
        let f = fit_ols(&d, &[0]).unwrap();
        assert!((f.coefficients[0] - 3.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.rms < 1e-12);
    }

    #[test]
    fn constant_target_goes_to_intercept() {
        let mut d = random_dataset(3, 30, 3);
        d.target = vec![4.25; 30];
        let f = fit_ols(&d, &[0, 1, 2]).unwrap();
        assert!(f.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert!((f.intercept - 4.25).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations() {
        let d = random_dataset(7, 50, 2);
        let f = fit_ols(&d, &[0, 1]).unwrap();
        let oracle = normal_equations(&d, &[0, 1]);
        assert!((f.intercept - oracle[0]).abs() < 1e-8);
        for (b, o) in f.coefficients.iter().zip(&oracle[1..]) {
            assert!((b - o).abs() < 1e-8);
        }
    }

    #[test]
    fn p_values_match_reference() {
        // slope t statistic against an independently computed fixture
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = vec![1.1, 1.9, 3.2, 3.8, 5.3, 5.9];
        let d = Dataset::new(names(1), vec![x], y).unwrap();
        let f = fit_ols(&d, &[0]).unwrap();
        // fixture values from an independent least-squares routine
        assert!((f.coefficients[0] - 0.994_285_714_285_714_1).abs() < 1e-12);
        assert!((f.std_errors[0] - 0.052_476_104_053_166_47).abs() < 1e-12);
        assert!((f.p_values[0] - 4.570_152_915_039_848e-5).abs() < 1e-12);
        assert!((two_sided_p(2.776_445_105_197_798_7, 4) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn duplicate_columns_are_named() {
        let mut d = random_dataset(11, 20, 3);
        d.columns[2] = d.columns[0].iter().map(|v| 2.0 * v).collect();
        match fit_ols(&d, &[0, 1, 2]) {
            Err(Error::Singular(names)) => assert_eq!(names, vec!["x0", "x2"]),
            other => panic!("expected singular fit, got {other:?}"),
        }
    }

    #[test]
    fn constant_predictor_collides_with_intercept() {
        let mut d = random_dataset(12, 20, 2);
        d.columns[1] = vec![3.0; 20];
        match fit_ols(&d, &[1]) {
            Err(Error::Singular(names)) => assert!(names.contains(&INTERCEPT_NAME.to_string())),
            other => panic!("expected singular fit, got {other:?}"),
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(names(2), vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(names(1), vec![vec![1.0, f64::NAN, 3.0]], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Dataset::new(names(1), vec![vec![1.0, 2.0]], vec![1.0, 2.0, 3.0]).is_err());
        let d = random_dataset(1, 10, 2);
        assert!(fit_ols(&d, &[]).is_err());
        assert!(fit_ols(&d, &[0, 0]).is_err());
    }

    #[test]
    fn single_dominant_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = random_dataset(5, 80, 4);
        d.target = d.columns[2].iter().map(|v| v + 1e-16 * rng.random_range(-1.0..1.0)).collect();
        let m = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
        assert_eq!(m.selected, vec![2]);
    }

    #[test]
    fn dominant_predictor_enters_first() {
        // at p_enter = 0.05 a null column may still follow it in
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = random_dataset(5, 80, 4);
        d.target = d.columns[2].iter().map(|v| v + 1e-3 * rng.random_range(-1.0..1.0)).collect();
        let m = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
        assert!(matches!(m.trace[0], StepEvent::Enter { index: 2, .. }));
        assert!(m.selected.contains(&2));
    }

    #[test]
    fn pure_noise_selects_nothing() {
        let d = random_dataset(21, 60, 3);
        let m = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
        assert!(m.selected.is_empty(), "{:?}", m.trace);
        assert!((m.intercept - d.target().iter().sum::<f64>() / 60.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_is_intercept_only() {
        let mut d = random_dataset(8, 40, 6);
        d.target = vec![std::f64::consts::TAU; 40];
        let m = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
        assert!(m.selected.is_empty());
        assert!((m.predict(&d.row(0)).unwrap() - std::f64::consts::TAU).abs() < 1e-12);
    }

    #[test]
    fn affine_prediction() {
        let m = StepwiseModel {
            names: names(3),
            selected: vec![0],
            coefficients: vec![2.0],
            intercept: 1.0,
            p_values: vec![0.0],
            intercept_p_value: 0.0,
            rms: 0.0,
            trace: vec![],
        };
        assert_eq!(m.predict(&[3.0, 9.0, 9.0]).unwrap(), 7.0);
        assert!(m.predict(&[3.0]).is_err());
    }

    #[test]
    fn reordering_unselected_predictors_keeps_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut d = random_dataset(17, 100, 5);
        d.target = (0..100)
            .map(|i| 2.0 * d.columns[1][i] - d.columns[3][i] + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        let m = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
        let unselected: Vec<usize> = (0..5).filter(|j| !m.selected.contains(j)).collect();
        let mut perm: Vec<usize> = (0..5).collect();
        let (a, b) = (unselected[0], *unselected.last().unwrap());
        perm.swap(a, b);
        let shuffled = Dataset::new(
            perm.iter().map(|&j| d.names[j].clone()).collect(),
            perm.iter().map(|&j| d.columns[j].clone()).collect(),
            d.target.clone(),
        )
        .unwrap();
        let m2 = stepwise_fit(&shuffled, StepwiseOptions::default()).unwrap();
        for i in 0..100 {
            let r = d.row(i);
            let r2: Vec<f64> = perm.iter().map(|&j| r[j]).collect();
            assert!((m.predict(&r).unwrap() - m2.predict(&r2).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = random_dataset(9, 12, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("x0,x1,x2,hue_rad\n"));
        assert_eq!(Dataset::read_csv(&path).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residuals_are_orthogonal(seed in any::<u64>(), k in 1usize..5) {
            let d = random_dataset(seed, 40, k);
            let subset: Vec<usize> = (0..k).collect();
            let f = fit_ols(&d, &subset).unwrap();
            prop_assert!(f.residuals.iter().sum::<f64>().abs() < 1e-8);
            for &j in &subset {
                let dot: f64 = f.residuals.iter().zip(d.column(j)).map(|(r, x)| r * x).sum();
                prop_assert!(dot.abs() < 1e-8);
            }
        }

        #[test]
        fn adding_a_predictor_never_raises_rms(seed in any::<u64>(), k in 2usize..6) {
            let d = random_dataset(seed, 30, k);
            let small: Vec<usize> = (0..k - 1).collect();
            let big: Vec<usize> = (0..k).collect();
            let a = fit_ols(&d, &small).unwrap();
            let b = fit_ols(&d, &big).unwrap();
            prop_assert!(b.rms <= a.rms + 1e-12);
        }

        #[test]
        fn stepwise_is_deterministic_and_bounded(seed in any::<u64>()) {
            let k = 4;
            let mut d = random_dataset(seed, 40, k);
            d.target = (0..40).map(|i| d.columns[0][i] + 0.5 * d.target[i]).collect();
            let a = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
            let b = stepwise_fit(&d, StepwiseOptions::default()).unwrap();
            prop_assert_eq!(&a, &b);
            let steps = a.trace.iter().filter(|e| matches!(e, StepEvent::Enter { .. } | StepEvent::Remove { .. })).count();
            prop_assert!(steps <= 2 * k * (k + 1));
            prop_assert_eq!(a.coefficients.len(), a.selected.len());
        }
    }
}
