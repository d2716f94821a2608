use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use optswitch::lsmc::{compare, fit_lsmc, write_comparison_csv, LsmcConfig};
use optswitch::models::{preset, Model, ModelConfig};
use optswitch::net::TrainConfig;
use optswitch::osj::{train_backward, SolutionMeta, TrainedSolution};
use optswitch::paths::{load_batch, save_batch, write_csv};
use optswitch::strategy::{heatmap, rollout, write_heatmap_csv, write_outcome_csv, HeatmapSpec, RolloutOptions};
use optswitch::{Error, PathBatch, Result};

use crate::args::*;
use crate::fit::{linear_fit, LinearFit};
use crate::manifest::{self, io, Manifest};

const DATASET: &str = "paths.bin";
const MODEL: &str = "model.toml";

/// Runs `cmd`. `inline` replaces the model named by the arguments (used when
/// replaying a manifest).
pub fn execute(cmd: &Command, inline: Option<&ModelConfig>) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(cmd, a, inline),
        Command::Train(a) => train(cmd, a, inline),
        Command::Eval(a) => eval(cmd, a),
        Command::Compare(a) => compare_cmd(cmd, a),
        Command::Benchmark(a) => benchmark(cmd, a),
        Command::Heatmap(a) => heatmap_cmd(cmd, a),
        Command::Replay(a) => replay(a),
    }
}

fn resolve_model(args: &ModelArgs, inline: Option<&ModelConfig>) -> Result<ModelConfig> {
    if let Some(m) = inline {
        return Ok(m.clone());
    }
    match (&args.preset, &args.config) {
        (Some(name), _) => preset(name),
        (None, Some(path)) => ModelConfig::from_toml(&fs::read_to_string(path).map_err(|e| io(path, e))?),
        (None, None) => Err(Error::Validation("pass --preset <name> or --config <file>".into())),
    }
}

fn read_model(dir: &Path) -> Result<ModelConfig> {
    let path = dir.join(MODEL);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    ModelConfig::from_toml(&text)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn write_model(dir: &Path, cfg: &ModelConfig) -> Result<()> {
    let path = dir.join(MODEL);
    fs::write(&path, cfg.to_toml()?).map_err(|e| io(&path, e))
}

fn finish(dir: &Path, mut manifest: Manifest) -> Result<()> {
    manifest.add_outputs(dir)?;
    manifest.write(dir)
}

fn csv_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| io(path, e))
}

fn train_config(t: &TrainingArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        learning_rate: t.lr,
        minibatch: t.minibatch,
        seed,
        ..TrainConfig::default()
    }
}

fn simulate(cmd: &Command, a: &SimulateArgs, inline: Option<&ModelConfig>) -> Result<()> {
    let cfg = resolve_model(&a.model, inline)?;
    let model = cfg.build()?;
    let paths = a.paths.unwrap_or(model.problem().grid().default_paths());
    let batch = model.simulate(paths, a.seed)?;
    prepare_out(&a.out)?;
    save_batch(&batch, a.out.join(DATASET))?;
    if a.csv {
        csv_file(&a.out.join("paths.csv"), |w| write_csv(&batch, w))?;
    }
    write_model(&a.out, &cfg)?;
    println!(
        "simulated {} paths, {} steps, d = {} -> {}",
        batch.paths(),
        batch.grid().steps,
        batch.dim(),
        a.out.join(DATASET).display()
    );
    finish(&a.out, Manifest::new(cmd, Some(&cfg))?)
}

fn train(cmd: &Command, a: &TrainArgs, inline: Option<&ModelConfig>) -> Result<()> {
    let clock = Instant::now();
    let mut manifest;
    let (cfg, batch) = match &a.data {
        Some(dir) => {
            let cfg = match inline {
                Some(m) => m.clone(),
                None => read_model(dir)?,
            };
            let data = dir.join(DATASET);
            let batch = load_batch(&data)?;
            manifest = Manifest::new(cmd, Some(&cfg))?;
            manifest.add_input(&data)?;
            (cfg, batch)
        }
        None => {
            let cfg = resolve_model(&a.model, inline)?;
            let model = cfg.build()?;
            let paths = a.paths.unwrap_or(model.problem().grid().default_paths());
            let batch = model.simulate(paths, a.seed)?;
            manifest = Manifest::new(cmd, Some(&cfg))?;
            (cfg, batch)
        }
    };
    let model = cfg.build()?;
    let solution = train_backward(model.problem(), &batch, &train_config(&a.training, a.seed))?;
    let seconds = if a.end_to_end {
        clock.elapsed().as_secs_f64()
    } else {
        solution.seconds()
    };
    prepare_out(&a.out)?;
    solution.save(&a.out, &cfg.fingerprint()?)?;
    write_model(&a.out, &cfg)?;
    let x0 = model.initial_state();
    let cont = solution.continuations(0, x0)?;
    let values: Vec<f64> = (0..model.modes())
        .map(|i| solution.value_at(0, i, x0).map(|v| v[0]))
        .collect::<Result<_>>()?;
    csv_file(&a.out.join("values.csv"), |w| {
        writeln!(w, "mode,continuation,value")?;
        for (i, (c, v)) in cont.iter().zip(&values).enumerate() {
            writeln!(w, "{},{c},{v}", i + 1)?;
        }
        Ok(())
    })?;
    println!("trained {} stages on {} paths in {seconds:.1} s", solution.log().len(), batch.paths());
    for (i, c) in cont.iter().enumerate() {
        println!("mode {}: continuation {c:.6}, value {:.6}", i + 1, values[i]);
    }
    finish(&a.out, manifest)
}

fn load_solution(dir: &Path) -> Result<(ModelConfig, Model, TrainedSolution, SolutionMeta)> {
    let cfg = read_model(dir)?;
    let model = cfg.build()?;
    let (solution, meta) = TrainedSolution::load(dir, model.problem())?;
    if meta.problem_fingerprint != cfg.fingerprint()? {
        return Err(Error::Validation(format!(
            "{}: model.toml does not match the problem the solution was trained on",
            dir.display()
        )));
    }
    Ok((cfg, model, solution, meta))
}

/// The training paths, regenerated from their seed.
fn training_paths(model: &Model, meta: &SolutionMeta) -> Result<PathBatch> {
    model.simulate(meta.paths, meta.path_seed)
}

fn selected_modes(mode: Option<usize>, modes: usize) -> Result<Vec<usize>> {
    match mode {
        None => Ok((0..modes).collect()),
        Some(m) if (1..=modes).contains(&m) => Ok(vec![m - 1]),
        Some(m) => Err(Error::Validation(format!("mode {m} out of range 1..={modes}"))),
    }
}

fn eval(cmd: &Command, a: &EvalArgs) -> Result<()> {
    let (cfg, model, solution, meta) = load_solution(&a.solution)?;
    let batch = if a.in_sample {
        training_paths(&model, &meta)?
    } else {
        let seed = a.eval_seed.unwrap_or(meta.path_seed.wrapping_add(1));
        model.simulate(a.paths.unwrap_or(meta.paths), seed)?
    };
    let options = RolloutOptions {
        allow_in_sample: a.in_sample,
    };
    let outcomes = selected_modes(a.mode, model.modes())?
        .into_iter()
        .map(|i| rollout(&solution, &batch, i, options))
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&a.out)?;
    csv_file(&a.out.join("outcome.csv"), |w| write_outcome_csv(&outcomes, w))?;
    for o in &outcomes {
        println!(
            "start mode {}: mean {:.6} ± {:.6}, {:.3} switches/path",
            o.start_mode + 1,
            o.summary.mean,
            o.summary.stderr,
            o.summary.mean_switches
        );
    }
    let mut manifest = Manifest::new(cmd, Some(&cfg))?;
    add_solution_inputs(&mut manifest, &a.solution)?;
    finish(&a.out, manifest)
}

fn add_solution_inputs(manifest: &mut Manifest, dir: &Path) -> Result<()> {
    manifest.add_input(&dir.join("solution.toml"))?;
    manifest.add_input(&dir.join(MODEL))
}

fn compare_cmd(cmd: &Command, a: &CompareArgs) -> Result<()> {
    let (cfg, model, solution, meta) = load_solution(&a.solution)?;
    let mut manifest = Manifest::new(cmd, Some(&cfg))?;
    add_solution_inputs(&mut manifest, &a.solution)?;
    let batch = match &a.data {
        Some(dir) => {
            let data = dir.join(DATASET);
            manifest.add_input(&data)?;
            load_batch(&data)?
        }
        None => training_paths(&model, &meta)?,
    };
    let ls = fit_lsmc(model.problem(), &batch, &LsmcConfig::default())?;
    let osj = solution.continuations(0, model.initial_state())?;
    let cmp = compare(&osj, &ls.continuation)?;
    prepare_out(&a.out)?;
    csv_file(&a.out.join("compare.csv"), |w| write_comparison_csv(&cmp, w))?;
    for r in &cmp.rows {
        println!(
            "mode {}: OSJ {:.6}  LS {:.6} (se {:.6})  diff {:.4}%",
            r.mode + 1,
            r.osj,
            r.ls,
            ls.continuation_stderr[r.mode],
            100.0 * r.diff
        );
    }
    println!("average difference {:.4}%", 100.0 * cmp.average);
    finish(&a.out, manifest)
}

/// One row of the dimension benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub dim: usize,
    pub seconds: f64,
    pub average_diff: f64,
    pub continuation: Vec<f64>,
}

/// Two-dimensional regression baseline for the high-dimensional presets.
pub fn benchmark_baseline(paths: usize, seed: u64) -> Result<Vec<f64>> {
    let model = preset("cl_hd_2")?.build()?;
    let batch = model.simulate(paths, seed)?;
    Ok(fit_lsmc(model.problem(), &batch, &LsmcConfig::default())?.continuation)
}

pub fn benchmark_dimension(
    dim: usize,
    paths: usize,
    seed: u64,
    train: &TrainConfig,
    baseline: &[f64],
    end_to_end: bool,
) -> Result<BenchmarkRow> {
    let model = preset(&format!("cl_hd_{dim}"))?.build()?;
    let clock = Instant::now();
    let batch = model.simulate(paths, seed)?;
    let solution = train_backward(model.problem(), &batch, train)?;
    let seconds = if end_to_end {
        clock.elapsed().as_secs_f64()
    } else {
        solution.seconds()
    };
    let continuation = solution.continuations(0, model.initial_state())?;
    let average_diff = compare(&continuation, baseline)?.average;
    Ok(BenchmarkRow {
        dim,
        seconds,
        average_diff,
        continuation,
    })
}

fn benchmark(cmd: &Command, a: &BenchmarkArgs) -> Result<()> {
    if a.dims.is_empty() {
        return Err(Error::Validation("--dims needs at least one dimension".into()));
    }
    let baseline = benchmark_baseline(a.baseline_paths, a.seed.wrapping_add(1))?;
    let train = train_config(&a.training, a.seed);
    let mut rows = Vec::new();
    for &d in &a.dims {
        let row = benchmark_dimension(d, a.paths, a.seed, &train, &baseline, a.end_to_end)?;
        println!("d = {d}: {:.1} s, average difference {:.4}%", row.seconds, 100.0 * row.average_diff);
        rows.push(row);
    }
    prepare_out(&a.out)?;
    csv_file(&a.out.join("benchmark.csv"), |w| {
        writeln!(w, "d,seconds,avg_diff")?;
        for r in &rows {
            writeln!(w, "{},{},{}", r.dim, r.seconds, r.average_diff)?;
        }
        Ok(())
    })?;
    let x: Vec<f64> = rows.iter().map(|r| r.dim as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let fit = linear_fit(&x, &y);
    csv_file(&a.out.join("fit.csv"), |w| {
        writeln!(w, "status,slope,intercept,r2")?;
        match fit {
            LinearFit::Line { slope, intercept, r2 } => writeln!(w, "line,{slope},{intercept},{r2}"),
            LinearFit::Degenerate => writeln!(w, "degenerate,,,"),
        }
    })?;
    match fit {
        LinearFit::Line { slope, intercept, r2 } => {
            println!("runtime ≈ {intercept:.3} + {slope:.4}·d s, R² = {r2:.4}")
        }
        LinearFit::Degenerate => println!("linear fit degenerate: fewer than two distinct dimensions"),
    }
    finish(&a.out, Manifest::new(cmd, None)?)
}

fn parse_ranges(text: &str) -> Result<[(f64, f64); 2]> {
    let bad = || Error::Validation(format!("--ranges expects lo:hi,lo:hi, got '{text}'"));
    let parts: Vec<(f64, f64)> = text
        .split(',')
        .map(|p| {
            let (lo, hi) = p.split_once(':').ok_or_else(bad)?;
            Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
        })
        .collect::<Result<_>>()?;
    <[(f64, f64); 2]>::try_from(parts).map_err(|_| bad())
}

fn heatmap_cmd(cmd: &Command, a: &HeatmapArgs) -> Result<()> {
    let (cfg, model, solution, meta) = load_solution(&a.solution)?;
    let d = model.dim();
    let axes: [usize; 2] = match a.axes.as_slice() {
        [u, v] if (1..=d).contains(u) && (1..=d).contains(v) => [u - 1, v - 1],
        _ => return Err(Error::Validation(format!("--axes needs two coordinates in 1..={d}"))),
    };
    let resolution: [usize; 2] = match a.res.as_slice() {
        [u, v] => [*u, *v],
        _ => return Err(Error::Validation("--res needs two grid sizes".into())),
    };
    if a.step > model.problem().grid().steps {
        return Err(Error::Validation(format!(
            "step {} is past the terminal step {}",
            a.step,
            model.problem().grid().steps
        )));
    }
    let ranges = a.ranges.as_deref().map(parse_ranges).transpose()?;
    let spec = match (&a.fixed, ranges) {
        (Some(fixed), Some(ranges)) => HeatmapSpec {
            axes,
            ranges,
            fixed: fixed.clone(),
            resolution,
        },
        _ => {
            let batch = training_paths(&model, &meta)?;
            let mut spec = HeatmapSpec::around_average(&batch, a.step, axes, a.width, resolution)?;
            if let Some(fixed) = &a.fixed {
                spec.fixed = fixed.clone();
            }
            if let Some(r) = ranges {
                spec.ranges = r;
            }
            spec
        }
    };
    prepare_out(&a.out)?;
    for i in selected_modes(a.mode, model.modes())? {
        let map = heatmap(&solution, a.step, i, &spec)?;
        let name = format!("heatmap_n{:04}_m{}.csv", a.step, i + 1);
        csv_file(&a.out.join(&name), |w| write_heatmap_csv(&map, w))?;
        let shares: Vec<String> = (0..model.modes())
            .map(|j| format!("{}:{:.3}", j + 1, map.fraction(j)))
            .collect();
        println!("step {} incumbent {}: {}", a.step, i + 1, shares.join(" "));
    }
    let mut manifest = Manifest::new(cmd, Some(&cfg))?;
    add_solution_inputs(&mut manifest, &a.solution)?;
    finish(&a.out, manifest)
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    for input in &manifest.inputs {
        let now = manifest::digest(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(Error::Validation(format!("input {} changed since the manifest was written", input.path)));
        }
    }
    if let Command::Replay(_) = manifest.run {
        return Err(Error::Validation("a manifest cannot record a replay".into()));
    }
    let mut run = manifest.run.clone();
    run.set_out(a.out.clone());
    let model = manifest.model_config()?;
    execute(&run, model.as_ref())
}
