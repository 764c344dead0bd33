//! Plot data for the joint-distribution, conditional-state and
//! nonGaussianity figures, written as CSV files plus a JSON manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::conditioner::{build_conditional, cond_count_dist, conditional_mean, SelectionRule};
use crate::counting::{joint_table, marginal_distribution};
use crate::error::{invalid, Result};
use crate::inference::fidelity;
use crate::io::{self, Manifest, ManifestEntry, MeanLine, Meta, MANIFEST_SCHEMA};
use crate::nongauss::{sweep, Energy, SweepAxis, SweepSpec};
use crate::params::ExperimentParams;
use crate::sampler::{count_histogram, histogram, sample_run, ShotRecord, TwinBeamSource};

/// Parameters of the high-mode-number dataset.
pub fn dataset_a() -> ExperimentParams {
    ExperimentParams::new(197.0, 0.06, 13.4).expect("valid")
}

/// Parameters of the low-mode-number dataset.
pub fn dataset_b() -> ExperimentParams {
    ExperimentParams::new(25.0, 0.056, 17.1).expect("valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    Fig2a,
    Fig2b,
    Fig3,
    Fig4,
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig2a, Figure::Fig2b, Figure::Fig3, Figure::Fig4, Figure::Fig5];

    pub fn name(&self) -> &'static str {
        match self {
            Figure::Fig2a => "fig2a",
            Figure::Fig2b => "fig2b",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid(format!("unknown figure {s:?}; expected fig2a, fig2b, fig3, fig4 or fig5")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FigureOptions {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Shots in each synthetic overlay.
    pub shots: u64,
    pub tol: f64,
}

struct Writer<'a> {
    opts: &'a FigureOptions,
    entries: Vec<ManifestEntry>,
}

impl Writer<'_> {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.opts.out_dir.join(name))?))
    }

    fn record(&mut self, file: String, description: String, axes: &[&str], params: Option<ExperimentParams>) {
        self.entries.push(ManifestEntry {
            file,
            description,
            axes: axes.iter().map(|a| a.to_string()).collect(),
            params,
            values: BTreeMap::new(),
        });
    }

    fn meta(&self, params: &ExperimentParams) -> Meta {
        let mut meta = Meta::new();
        meta.insert("params".into(), json!(params));
        meta.insert("tol".into(), json!(self.opts.tol));
        meta
    }
}

/// Writes every data file of `figure` into `opts.out_dir` together with
/// `<figure>_manifest.json`, and returns the manifest.
pub fn reproduce(figure: Figure, opts: &FigureOptions) -> Result<Manifest> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut w = Writer { opts, entries: Vec::new() };
    match figure {
        Figure::Fig2a => joint_figure(&mut w, "fig2a", &dataset_a())?,
        Figure::Fig2b => joint_figure(&mut w, "fig2b", &dataset_b())?,
        Figure::Fig3 => conditional_figure(&mut w, "fig3", &dataset_a(), [10, 15], [11, 17], [8, 15])?,
        Figure::Fig5 => conditional_figure(&mut w, "fig5", &dataset_b(), [13, 19], [17, 21], [10, 15])?,
        Figure::Fig4 => nongauss_figure(&mut w)?,
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        figure: figure.name().into(),
        tol: opts.tol,
        seed: opts.seed,
        files: w.entries,
    };
    let path = manifest_path(&opts.out_dir, figure);
    io::write_manifest(BufWriter::new(File::create(path)?), &manifest)?;
    Ok(manifest)
}

fn synthetic(params: &ExperimentParams, opts: &FigureOptions) -> Result<ShotRecord> {
    sample_run(&TwinBeamSource::from_params(params)?, opts.shots, opts.seed)
}

fn joint_figure(w: &mut Writer, name: &str, params: &ExperimentParams) -> Result<()> {
    let model = joint_table(params, w.opts.tol)?;
    let file = format!("{name}_joint_model.csv");
    io::write_joint_csv(w.create(&file)?, &model)?;
    w.record(file, "closed-form joint photoelectron distribution".into(), &["s", "t", "p"], Some(*params));

    let record = synthetic(params, w.opts)?;
    let empirical = histogram(&record).joint();
    let file = format!("{name}_joint_synthetic.csv");
    io::write_joint_csv(w.create(&file)?, &empirical)?;
    w.record(file, format!("histogram of {} sampled shots", record.len()), &["s", "t", "p"], Some(*params));
    w.entries.last_mut().unwrap().values.insert("fidelity".into(), fidelity(&model.probs, &empirical.probs));

    let file = format!("{name}_marginal.csv");
    io::write_counts_csv(w.create(&file)?, &marginal_distribution(params, w.opts.tol)?, &w.meta(params))?;
    w.record(file, "multithermal marginal of either arm".into(), &["s", "p"], Some(*params));
    Ok(())
}

fn conditional_figure(
    w: &mut Writer,
    name: &str,
    params: &ExperimentParams,
    exact: [u64; 2],
    above: [u64; 2],
    below: [u64; 2],
) -> Result<()> {
    let record = synthetic(params, w.opts)?;
    let all_signal: Vec<u64> = record.shots.iter().map(|&(s, _)| s).collect();

    let file = format!("{name}_unconditional.csv");
    io::write_counts_csv(w.create(&file)?, &marginal_distribution(params, w.opts.tol)?, &w.meta(params))?;
    w.record(file, "unconditioned signal distribution".into(), &["s", "p"], Some(*params));
    let file = format!("{name}_unconditional_synthetic.csv");
    io::write_counts_csv(w.create(&file)?, &count_histogram(&all_signal), &w.meta(params))?;
    w.record(file, "sampled unconditioned signal distribution".into(), &["s", "p"], Some(*params));

    let panels = [
        ("a", "exact", exact.map(SelectionRule::Exact)),
        ("b", "above", above.map(SelectionRule::Above)),
        ("c", "below", below.map(SelectionRule::Below)),
    ];
    for (panel, kind, rules) in panels {
        for rule in rules {
            let threshold = rule_threshold(&rule);
            let mut meta = w.meta(params);
            meta.insert("rule".into(), json!(rule));
            let file = format!("{name}{panel}_{kind}{threshold}.csv");
            io::write_counts_csv(w.create(&file)?, &cond_count_dist(params, &rule, w.opts.tol)?, &meta)?;
            w.record(file, format!("conditional signal distribution, idler {rule}"), &["s", "p"], Some(*params));

            let selected = record.post_select(&rule);
            if selected.is_empty() {
                continue;
            }
            meta.insert("accepted_shots".into(), json!(selected.len()));
            let file = format!("{name}{panel}_{kind}{threshold}_synthetic.csv");
            io::write_counts_csv(w.create(&file)?, &count_histogram(&selected), &meta)?;
            w.record(
                file,
                format!("sampled conditional signal distribution, idler {rule}"),
                &["s", "p"],
                Some(*params),
            );
        }
    }

    let mut lines = Vec::new();
    for threshold in 0..=30u64 {
        for (kind, rule) in [
            ("exact", SelectionRule::Exact(threshold)),
            ("above", SelectionRule::Above(threshold)),
            ("below", SelectionRule::Below(threshold)),
        ] {
            if threshold == 0 && kind == "below" {
                continue;
            }
            let theory = match rule {
                SelectionRule::Exact(t) => conditional_mean(params, t),
                _ => build_conditional(params, &rule, w.opts.tol)?.conditional_mean(),
            };
            let selected = record.post_select(&rule);
            let synthetic = (!selected.is_empty()).then(|| selected.iter().sum::<u64>() as f64 / selected.len() as f64);
            lines.push(MeanLine { rule: kind.into(), threshold, theory, synthetic });
        }
    }
    let mut meta = w.meta(params);
    meta.insert("unconditioned_mean".into(), json!(params.mean()));
    let file = format!("{name}d_means.csv");
    io::write_means_csv(w.create(&file)?, &lines, &meta)?;
    w.record(
        file,
        "conditional mean against conditioning value or threshold; exact rows trace M_t".into(),
        &["threshold", "mean"],
        Some(*params),
    );
    Ok(())
}

fn rule_threshold(rule: &SelectionRule) -> u64 {
    match rule {
        SelectionRule::Exact(x)
        | SelectionRule::Above(x)
        | SelectionRule::Below(x)
        | SelectionRule::AtLeast(x)
        | SelectionRule::AtMost(x) => *x,
        SelectionRule::Set(v) => v[0],
    }
}

const FIG4_ETAS: [f64; 4] = [0.06, 0.08, 0.10, 0.20];
const FIG4_MUS: [f64; 3] = [197.0, 25.0, 1.0];

/// `M_t` reachable with `M > 0` at these settings.
pub fn feasible(mu: f64, eta: f64, t: u64, mt: f64) -> bool {
    let t = t as f64;
    mt > t * eta && mt < t + mu * (1.0 - eta)
}

fn nongauss_figure(w: &mut Writer) -> Result<()> {
    let tol = w.opts.tol;
    let mut curves: Vec<(String, String, SweepSpec)> = Vec::new();
    let spec = |axis, values: Vec<f64>, mu, eta, t| SweepSpec {
        axis,
        values,
        mu,
        eta,
        t,
        energy: Energy::ConditionalMean(4.0),
        tol,
    };

    for mu in FIG4_MUS {
        for eta in FIG4_ETAS {
            let mts = (0..=16).map(|i| 1.5 + 0.25 * i as f64).filter(|&mt| feasible(mu, eta, 5, mt)).collect();
            curves.push((
                format!("fig4a_mt_mu{mu}_eta{eta}.csv"),
                format!("delta_R against M_t, t=5, mu={mu}, eta={eta}"),
                spec(SweepAxis::Mt, mts, mu, eta, 5),
            ));
            let ts = (0..=19u64).filter(|&t| feasible(mu, eta, t, 4.0)).map(|t| t as f64).collect();
            curves.push((
                format!("fig4b_t_mu{mu}_eta{eta}.csv"),
                format!("delta_R against t, M_t=4, mu={mu}, eta={eta}"),
                spec(SweepAxis::T, ts, mu, eta, 0),
            ));
        }
        for t in [5, 15] {
            let etas = (1..=13).map(|i| 0.02 * i as f64).filter(|&eta| feasible(mu, eta, t, 4.0)).collect();
            curves.push((
                format!("fig4c_eta_mu{mu}_t{t}.csv"),
                format!("delta_R against eta, M_t=4, mu={mu}, t={t}"),
                spec(SweepAxis::Eta, etas, mu, 0.06, t),
            ));
        }
    }
    for t in [2, 15] {
        for eta in FIG4_ETAS {
            let mus = [1.0, 2.0, 3.0, 5.0, 10.0, 25.0, 50.0, 100.0, 197.0]
                .into_iter()
                .filter(|&mu| feasible(mu, eta, t, 4.0))
                .collect();
            curves.push((
                format!("fig4d_mu_t{t}_eta{eta}.csv"),
                format!("delta_R against mu, M_t=4, t={t}, eta={eta}"),
                spec(SweepAxis::Mu, mus, 1.0, eta, t),
            ));
        }
    }

    for (file, description, spec) in curves {
        let rows = sweep(&spec)?;
        io::write_sweep_csv(w.create(&file)?, &rows, &sweep_meta(&spec))?;
        w.record(file, description, &[spec.axis.name(), "delta_R"], None);
    }
    Ok(())
}

/// Metadata block of a sweep file.
pub fn sweep_meta(spec: &SweepSpec) -> Meta {
    let mut meta = Meta::new();
    meta.insert("axis".into(), json!(spec.axis));
    meta.insert("mu".into(), json!(spec.mu));
    meta.insert("eta".into(), json!(spec.eta));
    meta.insert("t".into(), json!(spec.t));
    meta.insert("energy".into(), json!(spec.energy));
    meta.insert("tol".into(), json!(spec.tol));
    meta.insert("log_base".into(), json!(std::f64::consts::E));
    meta
}

/// Path of the manifest [`reproduce`] writes.
pub fn manifest_path(out_dir: &Path, figure: Figure) -> PathBuf {
    out_dir.join(format!("{}_manifest.json", figure.name()))
}
