//! On-disk formats: trajectory CSV, model and domain JSON documents,
//! run-history JSON lines and the aggregate metrics CSV.

use anyhow::{bail, Context, Result};
use bops_core::bo::HistoryRecord;
use bops_core::domain::{AffineReparameterization, BoxDomain, ReparamKind};
use bops_core::metrics::MetricSeries;
use bops_core::plants::Episode;
use bops_core::sysid::{ModelPosterior, TrajectoryData};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Writes trajectories as CSV with header `t,x0..,u0..`, one row per
/// timestep and a blank line between episodes. The final row of an
/// episode carries a zero input placeholder.
pub fn trajectory_to_csv(data: &TrajectoryData) -> String {
    let n_x = data.state_dim();
    let n_u = data.input_dim();
    let mut out = String::from("t");
    for i in 0..n_x {
        write!(out, ",x{i}").unwrap();
    }
    for i in 0..n_u {
        write!(out, ",u{i}").unwrap();
    }
    out.push('\n');
    for (e, episode) in data.episodes.iter().enumerate() {
        if e > 0 {
            out.push('\n');
        }
        for (t, state) in episode.states.iter().enumerate() {
            write!(out, "{}", t as f64 * data.dt).unwrap();
            for v in state.iter() {
                write!(out, ",{v}").unwrap();
            }
            for i in 0..n_u {
                let v = episode.inputs.get(t).map_or(0.0, |u| u[i]);
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Parses the CSV layout produced by [`trajectory_to_csv`].
pub fn trajectory_from_csv(text: &str) -> Result<TrajectoryData> {
    let mut lines = text.lines();
    let header = lines.next().context("empty trajectory file")?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"t") {
        bail!("trajectory header must start with `t`");
    }
    let n_x = columns.iter().filter(|c| c.starts_with('x')).count();
    let n_u = columns.iter().filter(|c| c.starts_with('u')).count();
    if 1 + n_x + n_u != columns.len() || n_x == 0 || n_u == 0 {
        bail!("unrecognized trajectory header `{header}`");
    }

    let mut episodes = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut states: Vec<DVector<f64>> = Vec::new();
    let mut inputs: Vec<DVector<f64>> = Vec::new();
    let mut flush = |times: &mut Vec<f64>,
                     states: &mut Vec<DVector<f64>>,
                     inputs: &mut Vec<DVector<f64>>|
     -> Result<()> {
        if states.is_empty() {
            return Ok(());
        }
        if states.len() < 2 {
            bail!("an episode needs at least two rows");
        }
        inputs.pop();
        episodes.push(Episode {
            states: std::mem::take(states),
            inputs: std::mem::take(inputs),
        });
        times.clear();
        Ok(())
    };

    let mut dt = None;
    for line in lines {
        if line.trim().is_empty() {
            flush(&mut times, &mut states, &mut inputs)?;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            bail!("row has {} fields, expected {}", fields.len(), columns.len());
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().with_context(|| format!("parsing `{s}`"))
        };
        let t = parse(fields[0])?;
        if times.len() == 1 && dt.is_none() {
            dt = Some(t - times[0]);
        }
        times.push(t);
        let state = DVector::from_iterator(
            n_x,
            fields[1..=n_x]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<_>>>()?,
        );
        let input = DVector::from_iterator(
            n_u,
            fields[1 + n_x..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<_>>>()?,
        );
        states.push(state);
        inputs.push(input);
    }
    flush(&mut times, &mut states, &mut inputs)?;
    let dt = dt.context("cannot infer the timestep from a single-row episode")?;
    if episodes.is_empty() {
        bail!("trajectory file holds no transitions");
    }
    Ok(TrajectoryData { dt, episodes })
}

/// JSON document for an identified model posterior. The mean and the
/// row-major covariance are over the entries of the horizontally stacked
/// `[A B]`, vectorized row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelPosteriorFile {
    pub n_x: usize,
    pub n_u: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl ModelPosteriorFile {
    pub fn from_posterior(posterior: &ModelPosterior) -> Self {
        let dim = posterior.mean.len();
        let mut covariance = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                covariance.push(posterior.covariance[(r, c)]);
            }
        }
        Self {
            n_x: posterior.n_x,
            n_u: posterior.n_u,
            mean: posterior.mean.iter().cloned().collect(),
            covariance,
        }
    }

    pub fn into_posterior(self) -> Result<ModelPosterior> {
        let dim = self.n_x * (self.n_x + self.n_u);
        if self.mean.len() != dim || self.covariance.len() != dim * dim {
            bail!("posterior file dimensions are inconsistent");
        }
        let mean = DVector::from_column_slice(&self.mean);
        let covariance = DMatrix::from_row_slice(dim, dim, &self.covariance);
        ModelPosterior::new(mean, covariance, self.n_x, self.n_u)
            .map_err(|e| anyhow::anyhow!("invalid posterior file: {e}"))
    }
}

/// JSON document for a search domain: box bounds plus the affine map
/// back to policy parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainFile {
    pub kind: String,
    pub offset: Vec<f64>,
    /// Row-major transform; square for identity/pca, `n_theta x d_e` for
    /// rembo.
    pub transform: Vec<f64>,
    pub scales: Vec<f64>,
    pub active_dims: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_upper: Option<Vec<f64>>,
}

impl DomainFile {
    pub fn from_domain(domain: &BoxDomain, reparam: &AffineReparameterization) -> Self {
        let kind = match reparam.kind {
            ReparamKind::Identity => "identity",
            ReparamKind::Pca => "pca",
            ReparamKind::Rembo => "rembo",
        };
        let mut transform = Vec::with_capacity(reparam.transform.len());
        for r in 0..reparam.transform.nrows() {
            for c in 0..reparam.transform.ncols() {
                transform.push(reparam.transform[(r, c)]);
            }
        }
        Self {
            kind: kind.to_string(),
            offset: reparam.offset.clone(),
            transform,
            scales: reparam.scales.clone(),
            active_dims: reparam.active_dims.clone(),
            lower: domain.lower().to_vec(),
            upper: domain.upper().to_vec(),
            clip_lower: reparam.clip.as_ref().map(|c| c.lower().to_vec()),
            clip_upper: reparam.clip.as_ref().map(|c| c.upper().to_vec()),
        }
    }

    pub fn into_domain(self) -> Result<(BoxDomain, AffineReparameterization)> {
        let kind = match self.kind.as_str() {
            "identity" => ReparamKind::Identity,
            "pca" => ReparamKind::Pca,
            "rembo" => ReparamKind::Rembo,
            other => bail!("unknown domain kind `{other}`"),
        };
        let n_theta = self.offset.len();
        let cols = match kind {
            ReparamKind::Rembo => self.lower.len(),
            _ => n_theta,
        };
        if self.transform.len() != n_theta * cols {
            bail!("transform has {} entries, expected {}", self.transform.len(), n_theta * cols);
        }
        let transform = DMatrix::from_row_slice(n_theta, cols, &self.transform);
        let clip = match (self.clip_lower, self.clip_upper) {
            (Some(lower), Some(upper)) => Some(
                BoxDomain::new(lower, upper).map_err(|e| anyhow::anyhow!("invalid clip box: {e}"))?,
            ),
            (None, None) => None,
            _ => bail!("clip bounds must be given together"),
        };
        let domain = BoxDomain::new(self.lower, self.upper)
            .map_err(|e| anyhow::anyhow!("invalid domain box: {e}"))?;
        let reparam = AffineReparameterization {
            kind,
            offset: self.offset,
            transform,
            scales: self.scales,
            active_dims: self.active_dims,
            clip,
        };
        Ok((domain, reparam))
    }
}

/// One line of the run-history JSON-lines file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryLine {
    pub iter: usize,
    pub theta_tilde: Vec<f64>,
    pub theta: Vec<f64>,
    pub cost: f64,
    pub incumbent_cost: f64,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
}

impl From<&HistoryRecord> for HistoryLine {
    fn from(record: &HistoryRecord) -> Self {
        Self {
            iter: record.iter,
            theta_tilde: record.theta_tilde.clone(),
            theta: record.theta.clone(),
            cost: record.cost,
            incumbent_cost: record.incumbent_cost,
            domain_lower: record.domain_lower.clone(),
            domain_upper: record.domain_upper.clone(),
        }
    }
}

pub fn history_to_jsonl(records: &[HistoryRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(&HistoryLine::from(record))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn history_from_jsonl(text: &str) -> Result<Vec<HistoryLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("parsing history line"))
        .collect()
}

/// Aggregate CSV: `iter,median,p25,p75`, starting at iteration 0.
pub fn metrics_to_csv(series: &MetricSeries) -> String {
    let mut out = String::from("iter,median,p25,p75\n");
    for t in 0..series.len() {
        writeln!(out, "{t},{},{},{}", series.median[t], series.p25[t], series.p75[t]).unwrap();
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
