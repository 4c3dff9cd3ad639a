use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sqcbf::bench::{self, BenchRow, GradCell, GradStudyConfig};
use sqcbf::distance::{signed_distance, DistanceQuery};
use sqcbf::filter::{self, CycleRecord};
use sqcbf::oracle::{self, PenaltySchedule};
use sqcbf::sim::{self, RunMetrics, Scenario, INTERVENTION_THRESHOLD};
use sqcbf::smoothing::{pose_gradient, SmoothingConfig};
use sqcbf::superquadric::{ShapeSet, DEFAULT_RESOLUTION};
use sqcbf::voxel::{voxel_metrics, VoxelMetrics};

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Files written by [`cmd_run`].
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    pub plot: PathBuf,
    pub metrics: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            csv: dir.join(format!("{name}.csv")),
            jsonl: dir.join(format!("{name}.jsonl")),
            plot: dir.join(format!("{name}_plot.csv")),
            metrics: dir.join(format!("{name}_metrics.json")),
        }
    }
}

/// Loads and runs a scenario, optionally overriding the filter switch and
/// seed, and writes the cycle log, plot data and metrics under `out`.
pub fn cmd_run(
    path: &Path,
    out: &Path,
    filter_on: Option<bool>,
    seed: Option<u64>,
) -> anyhow::Result<(RunMetrics, RunFiles)> {
    let mut scenario =
        Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(on) = filter_on {
        scenario.filter_enabled = on;
    }
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let run = sim::run(&scenario)?;
    let tag = if scenario.filter_enabled { "on" } else { "off" };
    let files = RunFiles::new(out, &format!("{}_{tag}_s{}", scenario.name, scenario.seed));

    let mut w = create(&files.csv)?;
    filter::write_csv(&run.log, &mut w)?;
    w.flush()?;
    let mut w = create(&files.jsonl)?;
    filter::write_jsonl(&run.log, &mut w)?;
    w.flush()?;
    let mut w = create(&files.plot)?;
    write_plot_data(&run.log, &mut w)?;
    w.flush()?;
    write_json(&files.metrics, &run.metrics)?;
    Ok((run.metrics, files))
}

pub fn read_jsonl(path: &Path) -> anyhow::Result<Vec<CycleRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Per-cycle series for plotting: clearances, barrier value, intervention and
/// manipulability.
pub fn write_plot_data<W: Write>(log: &[CycleRecord], mut out: W) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    writeln!(
        out,
        "t,d_min,d_min_env,d_min_self,h_min,intervention,intervened,mu,status"
    )?;
    for r in log {
        let intervention = r
            .u_cmd
            .iter()
            .zip(&r.u_star)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            opt(r.d_min()),
            opt(r.d_min_env),
            opt(r.d_min_self),
            opt(r.h_min),
            intervention,
            u8::from(intervention > INTERVENTION_THRESHOLD),
            r.mu,
            r.status.as_str()
        )?;
    }
    Ok(())
}

/// Regenerates plot data from a JSONL cycle log.
pub fn cmd_plot(log: &Path, out: &Path) -> anyhow::Result<()> {
    let records = read_jsonl(log)?;
    let mut w = create(out)?;
    write_plot_data(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(workers, slope s/pair, intercept s, r2)` for each worker count.
    pub fits: Vec<(usize, f64, f64, f64)>,
}

pub fn cmd_bench(
    pairs: &[usize],
    workers: &[usize],
    cycles: usize,
    rounds: usize,
    out: Option<&Path>,
) -> anyhow::Result<BenchReport> {
    let mut rows = Vec::new();
    for &w in workers {
        for row in bench::scaling_sweep(pairs, w, cycles, rounds, DEFAULT_RESOLUTION)? {
            log::info!(
                "pairs {:4} workers {w}: median {:.3} ms, mean {:.3} ms (std {:.3})",
                row.pairs,
                row.median_s * 1e3,
                row.mean_s * 1e3,
                row.std_s * 1e3
            );
            rows.push(row);
        }
    }
    let mut fits = Vec::new();
    for &w in workers {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.workers == w)
            .map(|r| (r.pairs as f64, r.median_s))
            .unzip();
        if xs.len() >= 2 {
            let (slope, intercept, r2) = bench::linear_fit(&xs, &ys);
            fits.push((w, slope, intercept, r2));
        }
    }
    if let Some(path) = out {
        let mut w = create(path)?;
        bench::write_bench_csv(&rows, &mut w)?;
        w.flush()?;
    }
    Ok(BenchReport { rows, fits })
}

pub fn cmd_gradstudy(cfg: &GradStudyConfig, out: Option<&Path>) -> anyhow::Result<Vec<GradCell>> {
    let cells = bench::gradient_study(cfg)?;
    if let Some(path) = out {
        let mut w = create(path)?;
        bench::write_grad_csv(&cells, &mut w)?;
        w.flush()?;
    }
    Ok(cells)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FigTwoRow {
    pub x: f64,
    pub f_star: f64,
    pub implicit_grad_x: f64,
    pub distance: f64,
    /// Norm of the translational part of the distance gradient.
    pub distance_grad_norm: f64,
}

/// Implicit-function surrogate and signed distance along the x sweep of the
/// two-box pathology pair.
pub fn cmd_figtwo(samples: usize, out: Option<&Path>) -> anyhow::Result<Vec<FigTwoRow>> {
    let xs = oracle::linspace(-3.0, 3.0, samples);
    let implicit = oracle::implicit_sweep(&xs, &PenaltySchedule::default(), 1e-4);
    let cfg = SmoothingConfig::default();
    let mut rows = Vec::with_capacity(xs.len());
    for s in implicit {
        let (a, b) = oracle::pathology_pair(s.x);
        let pa = a.shape.sample_shared(DEFAULT_RESOLUTION)?;
        let pb = b.shape.sample_shared(DEFAULT_RESOLUTION)?;
        let q = DistanceQuery::new(&pa, a.pose, &pb, b.pose);
        let w = signed_distance(&q)?;
        let j = pose_gradient(&q, &w, &cfg)?;
        rows.push(FigTwoRow {
            x: s.x,
            f_star: s.f_star,
            implicit_grad_x: s.grad_x,
            distance: w.signed_distance,
            distance_grad_norm: j.j_b.fixed_columns::<3>(0).norm(),
        });
    }
    if let Some(path) = out {
        let mut w = create(path)?;
        writeln!(w, "x,f_star,implicit_grad_x,distance,distance_grad_norm")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.x, r.f_star, r.implicit_grad_x, r.distance, r.distance_grad_norm
            )?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Coverage and over-approximation of `model` against `reference`, both
/// shape-set JSON files.
pub fn cmd_voxel(model: &Path, reference: &Path, delta: f64) -> anyhow::Result<VoxelMetrics> {
    let load = |p: &Path| -> anyhow::Result<_> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(ShapeSet::from_json(&text)
            .with_context(|| format!("parsing {}", p.display()))?
            .to_posed()?)
    };
    Ok(voxel_metrics(&load(model)?, &load(reference)?, delta)?)
}
