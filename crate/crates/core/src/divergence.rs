//! Gaussian-kernel MMD, class-conditional subdomain divergence, and subdomain matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numeric::{squared_distance, Matrix};
use crate::{Error, Result};

/// Similarity cap: divergences below this count as this.
pub const EPS_DIV: f64 = 1e-12;

/// Kernel bandwidth: a fixed `sigma` or the `"median"` sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<BandwidthRepr> for Bandwidth {
    type Error = String;

    fn try_from(r: BandwidthRepr) -> std::result::Result<Self, String> {
        match r {
            BandwidthRepr::Number(s) if s > 0.0 && s.is_finite() => Ok(Bandwidth::Fixed(s)),
            BandwidthRepr::Number(s) => Err(format!("bandwidth must be positive, got {s}")),
            BandwidthRepr::Text(t) if t == "median" => Ok(Bandwidth::Median),
            BandwidthRepr::Text(t) => Err(format!("unknown bandwidth '{t}', expected a number or \"median\"")),
        }
    }
}

impl From<Bandwidth> for BandwidthRepr {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Fixed(s) => BandwidthRepr::Number(s),
            Bandwidth::Median => BandwidthRepr::Text("median".into()),
        }
    }
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Median
    }
}

impl Bandwidth {
    /// Resolves to a concrete `sigma` on the pooled rows of `parts`.
    pub fn resolve(self, parts: &[&Matrix]) -> Result<f64> {
        match self {
            Bandwidth::Fixed(s) => check_sigma(s).map(|_| s),
            Bandwidth::Median => median_bandwidth(parts),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("kernel bandwidth must be positive, got {sigma}")))
    }
}

#[inline]
fn k(d2: f64, inv_two_s2: f64) -> f64 {
    (-d2 * inv_two_s2).exp()
}

/// `K[a, b] = exp(-|x_a - y_b|^2 / (2 sigma^2))`.
pub fn gaussian_kernel(x: &Matrix, y: &Matrix, sigma: f64) -> Result<Matrix> {
    check_sigma(sigma)?;
    if x.cols() != y.cols() {
        return Err(Error::shape("gaussian_kernel columns", x.cols(), y.cols()));
    }
    let c = 1.0 / (2.0 * sigma * sigma);
    let mut out = Matrix::zeros(x.rows(), y.rows());
    for a in 0..x.rows() {
        for b in 0..y.rows() {
            out.set(a, b, k(squared_distance(x.row(a), y.row(b)), c));
        }
    }
    Ok(out)
}

/// The median of the nonzero pairwise squared distances among the pooled rows, as a variance:
/// the returned `sigma` is its square root. Falls back to `1.0` when every row coincides.
pub fn median_bandwidth(parts: &[&Matrix]) -> Result<f64> {
    let rows: Vec<&[f64]> = parts.iter().flat_map(|m| m.row_iter()).collect();
    if let Some(first) = parts.first() {
        if let Some(bad) = parts.iter().find(|m| m.cols() != first.cols()) {
            return Err(Error::shape("median_bandwidth columns", first.cols(), bad.cols()));
        }
    }
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let v = squared_distance(rows[i], rows[j]);
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return Ok(1.0);
    }
    let n = d.len();
    let mid = n / 2;
    let (lo, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if n % 2 == 1 {
        upper
    } else {
        let lower = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(median.sqrt())
}

fn mean_kernel(x: &Matrix, xi: &[usize], y: &Matrix, yi: &[usize], c: f64) -> f64 {
    let mut s = 0.0;
    for &a in xi {
        for &b in yi {
            s += k(squared_distance(x.row(a), y.row(b)), c);
        }
    }
    s / (xi.len() * yi.len()) as f64
}

/// Biased (V-statistic) squared MMD between the rows of `x` and `y`.
pub fn mmd2(x: &Matrix, y: &Matrix, sigma: f64) -> Result<f64> {
    let xi: Vec<usize> = (0..x.rows()).collect();
    let yi: Vec<usize> = (0..y.rows()).collect();
    mmd2_rows(x, &xi, y, &yi, sigma)
}

/// [`mmd2`] over the selected rows of `x` and `y`.
pub fn mmd2_rows(x: &Matrix, xi: &[usize], y: &Matrix, yi: &[usize], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if xi.is_empty() || yi.is_empty() {
        return Err(Error::Empty("mmd2 needs at least one sample on each side"));
    }
    if x.cols() != y.cols() {
        return Err(Error::shape("mmd2 columns", x.cols(), y.cols()));
    }
    let c = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(x, xi, x, xi, c) + mean_kernel(y, yi, y, yi, c) - 2.0 * mean_kernel(x, xi, y, yi, c);
    Ok(v.max(0.0))
}

/// Adds `scale * d mmd2 / d row` into `gx` and `gy` for the selected rows, and returns the
/// (unclamped) value.
pub fn mmd2_rows_grad(
    x: &Matrix,
    xi: &[usize],
    y: &Matrix,
    yi: &[usize],
    sigma: f64,
    scale: f64,
    gx: &mut Matrix,
    gy: &mut Matrix,
) -> Result<f64> {
    check_sigma(sigma)?;
    if xi.is_empty() || yi.is_empty() {
        return Err(Error::Empty("mmd2 needs at least one sample on each side"));
    }
    let dim = x.cols();
    if y.cols() != dim || gx.shape() != x.shape() || gy.shape() != y.shape() {
        return Err(Error::shape(
            "mmd2_rows_grad",
            format!("{dim} columns"),
            format!("{:?} / {:?}", x.shape(), y.shape()),
        ));
    }
    let s2 = sigma * sigma;
    let c = 1.0 / (2.0 * s2);
    let (n, m) = (xi.len() as f64, yi.len() as f64);
    let wxx = 1.0 / (n * n);
    let wyy = 1.0 / (m * m);
    let wxy = 2.0 / (n * m);
    let mut value = 0.0;
    // d k(u, v) / du = -k (u - v) / sigma^2; each pair adds `w * dk/du` to u and its negation to v
    let mut within = |z: &Matrix, idx: &[usize], w: f64, g: &mut Matrix| {
        for (p, &a) in idx.iter().enumerate() {
            value += w;
            for &b in &idx[p + 1..] {
                let kv = k(squared_distance(z.row(a), z.row(b)), c);
                value += 2.0 * w * kv;
                if a == b {
                    continue;
                }
                let f = -scale * 2.0 * w * kv / s2;
                for d in 0..dim {
                    let delta = f * (z.get(a, d) - z.get(b, d));
                    g.row_mut(a)[d] += delta;
                    g.row_mut(b)[d] -= delta;
                }
            }
        }
    };
    within(x, xi, wxx, gx);
    within(y, yi, wyy, gy);
    for &a in xi {
        for &b in yi {
            let kv = k(squared_distance(x.row(a), y.row(b)), c);
            value -= wxy * kv;
            let f = -scale * wxy * kv / s2;
            for d in 0..dim {
                let delta = f * (x.get(a, d) - y.get(b, d));
                gx.row_mut(a)[d] -= delta;
                gy.row_mut(b)[d] += delta;
            }
        }
    }
    Ok(value)
}

/// Row indices of one domain grouped by subdomain, then class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellIndex {
    /// `cells[subdomain][class] = rows`.
    pub cells: Vec<BTreeMap<usize, Vec<usize>>>,
}

impl CellIndex {
    /// Groups `rows` (indices into `subdomains` / `classes`) by subdomain and class. The stored
    /// row ids are positions in `rows`, so they index a matrix built from those rows.
    pub fn from_rows(rows: &[usize], subdomains: &[usize], classes: &[usize], count: usize) -> Result<Self> {
        if subdomains.len() != classes.len() {
            return Err(Error::shape("CellIndex labels", subdomains.len(), classes.len()));
        }
        let mut cells = vec![BTreeMap::new(); count];
        for (pos, &r) in rows.iter().enumerate() {
            let s = *subdomains.get(r).ok_or_else(|| Error::InvalidArgument(format!("row {r} out of range")))?;
            if s >= count {
                return Err(Error::InvalidArgument(format!("subdomain {s} out of range for {count}")));
            }
            cells[s].entry(classes[r]).or_insert_with(Vec::new).push(pos);
        }
        Ok(CellIndex { cells })
    }

    /// Every row, in order.
    pub fn full(subdomains: &[usize], classes: &[usize], count: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..subdomains.len()).collect();
        Self::from_rows(&rows, subdomains, classes, count)
    }

    pub fn subdomains(&self) -> usize {
        self.cells.len()
    }

    /// Drops class cells with fewer than `min` rows.
    pub fn prune(mut self, min: usize) -> Self {
        for c in &mut self.cells {
            c.retain(|_, rows| rows.len() >= min);
        }
        self
    }

    fn max_row(&self) -> Option<usize> {
        self.cells.iter().flat_map(|c| c.values().flatten()).copied().max()
    }
}

/// Classes present in both cell maps.
pub fn shared_classes(a: &BTreeMap<usize, Vec<usize>>, b: &BTreeMap<usize, Vec<usize>>) -> Vec<usize> {
    a.keys().filter(|c| b.contains_key(c)).copied().collect()
}

/// Uniform mean of per-class [`mmd2`] over the classes both subdomains contain; `None` when
/// they share no class.
pub fn class_conditional_mmd(
    zs: &Matrix,
    src: &BTreeMap<usize, Vec<usize>>,
    zt: &Matrix,
    tgt: &BTreeMap<usize, Vec<usize>>,
    sigma: f64,
) -> Result<Option<f64>> {
    let shared = shared_classes(src, tgt);
    if shared.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for c in &shared {
        total += mmd2_rows(zs, &src[c], zt, &tgt[c], sigma)?;
    }
    Ok(Some(total / shared.len() as f64))
}

/// Class-conditional divergences between every source and target subdomain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceTable {
    /// `values[i][j]`, `None` where the pair shares no class.
    pub values: Vec<Vec<Option<f64>>>,
    /// Number of shared classes behind each cell.
    pub shared: Vec<Vec<usize>>,
}

impl DivergenceTable {
    pub fn from_values(values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let cols = values.first().map_or(0, Vec::len);
        if values.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged divergence table".into()));
        }
        if values.iter().flatten().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("divergences must be finite and nonnegative".into()));
        }
        let shared = values.iter().map(|r| r.iter().map(|v| usize::from(v.is_some())).collect()).collect();
        Ok(DivergenceTable { values, shared })
    }

    pub fn source_count(&self) -> usize {
        self.values.len()
    }

    pub fn target_count(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Comma-separated matrix, absent cells left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.values {
            let cells: Vec<String> = row.iter().map(|v| v.map(|x| format!("{x:?}")).unwrap_or_default()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Computes the full `M_s x M_t` table.
pub fn divergence_table(
    zs: &Matrix,
    src: &CellIndex,
    zt: &Matrix,
    tgt: &CellIndex,
    sigma: f64,
) -> Result<DivergenceTable> {
    check_sigma(sigma)?;
    if src.max_row().is_some_and(|r| r >= zs.rows()) || tgt.max_row().is_some_and(|r| r >= zt.rows()) {
        return Err(Error::InvalidArgument("cell index refers past the embedding rows".into()));
    }
    let mut values = vec![vec![None; tgt.subdomains()]; src.subdomains()];
    let mut shared = vec![vec![0; tgt.subdomains()]; src.subdomains()];
    for (i, s) in src.cells.iter().enumerate() {
        for (j, t) in tgt.cells.iter().enumerate() {
            shared[i][j] = shared_classes(s, t).len();
            values[i][j] = class_conditional_mmd(zs, s, zt, t, sigma)?;
        }
    }
    Ok(DivergenceTable { values, shared })
}

/// `1 / max(d, 1e-12)`.
pub fn similarity(d: f64) -> f64 {
    1.0 / d.max(EPS_DIV)
}

/// Binary matching matrix: which source subdomains each target subdomain aligns with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchMatrix {
    /// `r[i][j]`.
    pub r: Vec<Vec<bool>>,
    pub k: usize,
    /// Target subdomains with no present divergence cell.
    pub unmatched_targets: Vec<usize>,
}

impl MatchMatrix {
    pub fn from_bools(r: Vec<Vec<bool>>, k: usize) -> Self {
        let cols = r.first().map_or(0, Vec::len);
        let unmatched_targets = (0..cols).filter(|&j| r.iter().all(|row| !row[j])).collect();
        MatchMatrix { r, k, unmatched_targets }
    }

    pub fn to_csv(&self) -> String {
        self.r
            .iter()
            .map(|row| row.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(",") + "\n")
            .collect()
    }
}

/// Marks, for each target subdomain, the `k` present cells with the highest similarity (ties
/// to the lower source index).
pub fn match_subdomains(table: &DivergenceTable, k: usize) -> Result<MatchMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("match k must be at least 1".into()));
    }
    let (ms, mt) = (table.source_count(), table.target_count());
    let mut r = vec![vec![false; mt]; ms];
    let mut unmatched_targets = Vec::new();
    for j in 0..mt {
        let mut present: Vec<(usize, f64)> =
            (0..ms).filter_map(|i| table.values[i][j].map(|d| (i, similarity(d)))).collect();
        if present.is_empty() {
            unmatched_targets.push(j);
            continue;
        }
        present.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in present.iter().take(k) {
            r[i][j] = true;
        }
    }
    Ok(MatchMatrix { r, k, unmatched_targets })
}
