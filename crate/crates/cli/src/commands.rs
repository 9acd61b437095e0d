//! One function per subcommand. Each writes its artifacts plus
//! `resolved_config.toml` into the run's `--out` directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use smoothcert::bounds::{self, BoundInputs};
use smoothcert::data::{
    self, load_checkpoint, load_idx, render_svg, save_checkpoint, synth_blobs, write_certification_csv,
    write_curve_csv, write_metrics_csv, write_sigma_trace_csv, Dataset, PlotSeries,
};
use smoothcert::nn::MlpModel;
use smoothcert::rng::{self, Phase};
use smoothcert::sigma::{select_sigma, SigmaSearchConfig, SigmaSelection};
use smoothcert::smoothing::{
    certified_accuracy_curve, certify_dataset, empirical_margin_loss, radius_grid, CertifyParams, CurvePoint,
    NoiseConfig, WeightSampler,
};
use smoothcert::spectral::spectral_report;
use smoothcert::train::{train_observed, TrainConfig, TrainEvent};

use crate::args::{BoundArgs, CertifyArgs, DataArgs, ReportArgs, SamplerArg, SigmaArgs, TrainArgs};
use crate::config::write_resolved;
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::file(path, e))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} not found: {}", path.display())))
    }
}

pub fn load_data(args: &DataArgs) -> CliResult<Dataset> {
    let full = match (&args.images, &args.labels, &args.synth) {
        (Some(images), Some(labels), None) => {
            require_file(images, "image file")?;
            require_file(labels, "label file")?;
            load_idx(images, labels)?
        }
        (None, None, Some(spec)) => {
            let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
            let bad = || CliError::usage(format!("--synth expects classes,dims,count,spread,seed; got `{spec}`"));
            if parts.len() != 5 {
                return Err(bad());
            }
            let k: usize = parts[0].parse().map_err(|_| bad())?;
            let d: usize = parts[1].parse().map_err(|_| bad())?;
            let m: usize = parts[2].parse().map_err(|_| bad())?;
            let spread: f64 = parts[3].parse().map_err(|_| bad())?;
            let seed: u64 = parts[4].parse().map_err(|_| bad())?;
            synth_blobs(k, d, m, spread, seed)?
        }
        (None, None, None) => {
            return Err(CliError::usage("no dataset: pass --images and --labels, or --synth"));
        }
        _ => {
            return Err(CliError::usage(
                "pass either both --images and --labels, or --synth (not a mix)",
            ));
        }
    };
    if args.skip == 0 && args.take.is_none_or(|t| t >= full.len()) {
        return Ok(full);
    }
    if args.skip >= full.len() {
        return Err(CliError::usage(format!("--skip {} leaves no data ({} examples)", args.skip, full.len())));
    }
    let end = args.take.map_or(full.len(), |t| (args.skip + t).min(full.len()));
    let indices: Vec<usize> = (args.skip..end).collect();
    Ok(full.subset(&indices)?)
}

fn load_model(path: &Path, data: &Dataset) -> CliResult<MlpModel> {
    require_file(path, "checkpoint")?;
    let (model, _) = load_checkpoint(path)?;
    if model.input_dim() != data.dim() {
        return Err(CliError::usage(format!(
            "checkpoint expects {}-dimensional inputs, dataset has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if model.num_classes() < data.num_classes() {
        return Err(CliError::usage(format!(
            "checkpoint has {} outputs, dataset has {} classes",
            model.num_classes(),
            data.num_classes()
        )));
    }
    Ok(model)
}

fn parse_hidden(s: &str) -> CliResult<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(CliError::usage(format!("--hidden: bad width `{w}`"))),
        })
        .collect()
}

fn parse_lr_drops(s: &str) -> CliResult<Vec<(usize, f64)>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|pair| {
            let bad = || CliError::usage(format!("--lr-drops: expected epoch:divisor, got `{pair}`"));
            let (e, d) = pair.split_once(':').ok_or_else(bad)?;
            Ok((e.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let data = load_data(&args.data)?;
    let hidden = parse_hidden(&args.hidden)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        lr_drops: parse_lr_drops(&args.lr_drops)?,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        alpha: args.alpha,
        noise_variance: args.sigma2,
        seed: args.seed,
    };
    cfg.validate()?;
    let mut dims = vec![data.dim()];
    dims.extend(&hidden);
    dims.push(data.num_classes());
    let model = MlpModel::init(&dims, true, args.seed)?;

    let ckpt_dir = args.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write_resolved(&args.out, "train", args)?;
    let echo = serde_json::to_value(args)?;
    let metrics_path = args.out.join("metrics.csv");

    let mut history = Vec::new();
    let (model, _) = train_observed(model, &data, &cfg, |event| {
        if let TrainEvent::EpochEnd { metrics, model } = event {
            history.push(*metrics);
            let meta = json!({ "epoch": metrics.epoch, "seed": args.seed, "config": echo });
            save_checkpoint(ckpt_dir.join(format!("epoch-{:03}.ckpt", metrics.epoch)), model, meta)?;
            // Rewritten every epoch so an aborted run keeps its history.
            write_metrics_csv(&metrics_path, &history)?;
            eprintln!(
                "epoch {:>3}  loss {:.4}  train_acc {:.4}  reg {:.4}  {:.2}s",
                metrics.epoch, metrics.loss, metrics.train_acc, metrics.reg_value, metrics.seconds
            );
        }
        Ok(())
    })?;
    let meta = json!({ "epoch": args.epochs - 1, "seed": args.seed, "config": echo });
    save_checkpoint(args.out.join("model.ckpt"), &model, meta)?;
    let report = spectral_report(&model);
    write_text(&args.out.join("spectral.json"), &serde_json::to_string_pretty(&report)?)?;
    println!("{}", args.out.join("model.ckpt").display());
    Ok(())
}

pub fn sigma(args: &SigmaArgs) -> CliResult<()> {
    let data = load_data(&args.data)?;
    let model = load_model(&args.checkpoint, &data)?;
    if args.grid_points == 0 || !(args.grid_max > 0.0) {
        return Err(CliError::usage("--grid-points and --grid-max must be positive"));
    }
    let cfg = SigmaSearchConfig {
        grid: (1..=args.grid_points)
            .map(|i| args.grid_max * i as f64 / args.grid_points as f64)
            .collect(),
        samples: args.samples,
        tolerance: args.tolerance,
        eval_subset: args.eval_subset,
        full_scan: args.full_scan,
    };
    let sel = select_sigma(&model, &data, &cfg, args.seed)?;
    create_dir(&args.out)?;
    write_resolved(&args.out, "sigma", args)?;
    write_sigma_trace_csv(args.out.join("sigma_trace.csv"), &sel.trace)?;
    write_text(&args.out.join("sigma.json"), &serde_json::to_string_pretty(&sel)?)?;
    if sel.flagged {
        eprintln!("warning: no grid value kept the accuracy drop within tolerance; using the grid minimum");
    }
    println!("{}", sel.sigma2);
    Ok(())
}

fn read_sigma_file(path: &Path) -> CliResult<f64> {
    require_file(path, "sigma file")?;
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let sel: SigmaSelection = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: not a sigma.json ({e})", path.display())))?;
    Ok(sel.sigma2)
}

pub fn certify(args: &CertifyArgs) -> CliResult<()> {
    let sigma2 = match (args.sigma2, &args.sigma_file) {
        (Some(s), None) => s,
        (None, Some(path)) => read_sigma_file(path)?,
        (Some(_), Some(_)) => return Err(CliError::usage("pass only one of --sigma2 and --sigma-file")),
        (None, None) => return Err(CliError::usage("missing smoothing variance: pass --sigma2 or --sigma-file")),
    };
    let input_sigma2 = args.input_sigma2.unwrap_or(sigma2);
    if !(sigma2 >= 0.0 && input_sigma2 >= 0.0) {
        return Err(CliError::usage("variances must be ≥ 0"));
    }
    let data = load_data(&args.data)?;
    let model = load_model(&args.checkpoint, &data)?;
    let noise = NoiseConfig {
        sigma_input: input_sigma2.sqrt(),
        sigma_weight: sigma2.sqrt(),
        base_seed: args.seed,
        weight_sampler: match args.sampler {
            SamplerArg::Projected => WeightSampler::Projected,
            SamplerArg::Materialized => WeightSampler::Materialized,
            SamplerArg::Cached => WeightSampler::Cached { size: args.cache_size },
        },
    };
    let params = CertifyParams {
        n0: args.n0,
        n: args.n,
        alpha_b: args.alpha_b,
    };
    let indices = match args.subsample {
        Some(count) if count < data.len() => {
            data.sample_indices(count, rng::sample_seed(args.seed, 0, Phase::Subsample))?
        }
        _ => (0..data.len()).collect(),
    };
    let workers = if args.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        args.workers
    };
    let results = certify_dataset(&model, &data, &indices, &noise, &params, workers)?;

    let radius_max = args.radius_max.unwrap_or_else(|| {
        let largest = results.iter().map(|r| r.result.radius).fold(0.0, f64::max);
        if largest > 0.0 { largest } else { 1.0 }
    });
    if !(radius_max > 0.0) {
        return Err(CliError::usage("--radius-max must be > 0"));
    }
    let curve = certified_accuracy_curve(&results, &radius_grid(radius_max, args.radius_steps));

    create_dir(&args.out)?;
    write_resolved(&args.out, "certify", args)?;
    write_certification_csv(args.out.join("certify.csv"), &results)?;
    write_curve_csv(args.out.join("curve.csv"), &curve)?;
    let name = run_name(&args.out);
    let svg = render_svg(
        &[PlotSeries {
            name,
            points: curve.iter().map(|p| (p.radius, p.accuracy)).collect(),
        }],
        "Certified accuracy",
        "radius",
        "certified accuracy",
    )?;
    write_text(&args.out.join("curve.svg"), &svg)?;

    let certified = results.iter().filter(|r| !r.result.abstained()).count();
    let correct = results.iter().filter(|r| r.correct()).count();
    let summary = json!({
        "samples": results.len(),
        "certified": certified,
        "abstained": results.len() - certified,
        "clean_accuracy": correct as f64 / results.len().max(1) as f64,
        "sigma2_weight": sigma2,
        "sigma2_input": input_sigma2,
    });
    write_text(&args.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "certified {certified}/{} samples; accuracy at radius 0: {}",
        results.len(),
        curve.first().map_or(0.0, |p| p.accuracy)
    );
    Ok(())
}

pub fn bound(args: &BoundArgs) -> CliResult<()> {
    let data = load_data(&args.data)?;
    let model = load_model(&args.checkpoint, &data)?;
    let inputs = BoundInputs::from_model(&model, &data, args.gamma, args.delta)?;
    inputs.validate()?;
    let tau = bounds::tau_solve(inputs.d)?;
    let psi = bounds::psi(&inputs, tau)?;
    let loss = match args.margin_loss {
        Some(l) => l,
        None => {
            // The posterior of the bound perturbs weights with variance Ψ.
            let noise = NoiseConfig {
                sigma_input: args.margin_sigma2.unwrap_or(psi).sqrt(),
                sigma_weight: psi.sqrt(),
                base_seed: args.seed,
                weight_sampler: WeightSampler::Projected,
            };
            empirical_margin_loss(&model, &data, args.gamma, args.margin_votes, &noise, args.seed)?
        }
    };
    let probabilities = args.pa.zip(args.pb);
    let report = bounds::evaluate(&inputs, loss, probabilities)?;
    create_dir(&args.out)?;
    write_resolved(&args.out, "bound", args)?;
    let text = serde_json::to_string_pretty(&report)?;
    write_text(&args.out.join("bound.json"), &text)?;
    if report.vacuous {
        eprintln!("note: the bound is vacuous (≥ 1 or undefined)");
    }
    println!("{text}");
    Ok(())
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// A spectral summary of one checkpoint, for the trends table.
struct SpectralRow {
    run: String,
    epoch: Option<u64>,
    collapsed: f64,
    product: f64,
    gershgorin: f64,
    mean_cos: f64,
    frobenius_sq: f64,
}

fn checkpoints_of(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let sub = dir.join("checkpoints");
    if sub.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| CliError::file(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        paths.sort();
        if !paths.is_empty() {
            return Ok(paths);
        }
    }
    let single = dir.join("model.ckpt");
    Ok(if single.is_file() { vec![single] } else { Vec::new() })
}

/// Linear interpolation of a curve at `r`, clamped to its end values.
fn interpolate(curve: &[CurvePoint], r: f64) -> f64 {
    match curve.iter().position(|p| p.radius >= r) {
        None => curve.last().map_or(0.0, |p| p.accuracy),
        Some(0) => curve[0].accuracy,
        Some(i) => {
            let (a, b) = (curve[i - 1], curve[i]);
            if b.radius == a.radius {
                b.accuracy
            } else {
                a.accuracy + (b.accuracy - a.accuracy) * (r - a.radius) / (b.radius - a.radius)
            }
        }
    }
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let names: Vec<String> = match &args.names {
        Some(n) => {
            let names: Vec<String> = n.split(',').map(|s| s.trim().to_string()).collect();
            if names.len() != args.inputs.len() {
                return Err(CliError::usage(format!(
                    "--names has {} entries for {} inputs",
                    names.len(),
                    args.inputs.len()
                )));
            }
            names
        }
        None => args.inputs.iter().map(|p| run_name(p)).collect(),
    };

    let mut curves: Vec<(String, Vec<CurvePoint>)> = Vec::new();
    let mut spectral: Vec<SpectralRow> = Vec::new();
    for (dir, name) in args.inputs.iter().zip(&names) {
        if !dir.is_dir() {
            return Err(CliError::usage(format!("not a directory: {}", dir.display())));
        }
        let curve_path = dir.join("curve.csv");
        let has_curve = curve_path.is_file();
        if has_curve {
            let curve = data::read_curve_csv(&curve_path)?;
            if curve.is_empty() {
                return Err(CliError::usage(format!("{}: empty curve", curve_path.display())));
            }
            curves.push((name.clone(), curve));
        }
        let ckpts = checkpoints_of(dir)?;
        if !has_curve && ckpts.is_empty() {
            return Err(CliError::usage(format!(
                "{}: no curve.csv and no checkpoints to report on",
                dir.display()
            )));
        }
        for path in ckpts {
            let (model, header) = load_checkpoint(&path)?;
            let r = spectral_report(&model);
            spectral.push(SpectralRow {
                run: name.clone(),
                epoch: header.metadata.get("epoch").and_then(|e| e.as_u64()),
                collapsed: r.collapsed_spectral,
                product: r.product_spectral,
                gershgorin: r.gershgorin,
                mean_cos: r.mean_offdiag_abs_cosine(),
                frobenius_sq: r.per_layer_frobenius.iter().map(|f| f * f).sum(),
            });
        }
    }

    create_dir(&args.out)?;
    write_resolved(&args.out, "report", args)?;
    let mut notes = Vec::new();

    if !curves.is_empty() {
        let first = &curves[0].1;
        let same_grid = curves.iter().all(|(_, c)| {
            c.len() == first.len() && c.iter().zip(first).all(|(a, b)| a.radius.to_bits() == b.radius.to_bits())
        });
        let grid: Vec<f64> = if same_grid {
            first.iter().map(|p| p.radius).collect()
        } else {
            let mut all: Vec<f64> = curves.iter().flat_map(|(_, c)| c.iter().map(|p| p.radius)).collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            let note = "radius grids differ; curves were linearly re-interpolated onto the union of all grid \
                        points (values beyond a curve's last radius repeat its last accuracy)";
            eprintln!("note: {note}");
            notes.push(note.to_string());
            all
        };
        let mut table = String::from("radius");
        for (name, _) in &curves {
            table.push(',');
            table.push_str(name);
        }
        table.push('\n');
        let resampled: Vec<Vec<f64>> = curves
            .iter()
            .map(|(_, c)| grid.iter().map(|&r| interpolate(c, r)).collect())
            .collect();
        for (i, r) in grid.iter().enumerate() {
            table.push_str(&r.to_string());
            for col in &resampled {
                table.push(',');
                table.push_str(&col[i].to_string());
            }
            table.push('\n');
        }
        write_text(&args.out.join("curves.csv"), &table)?;
        let series: Vec<PlotSeries> = curves
            .iter()
            .zip(&resampled)
            .map(|((name, _), ys)| PlotSeries {
                name: name.clone(),
                points: grid.iter().copied().zip(ys.iter().copied()).collect(),
            })
            .collect();
        let svg = render_svg(&series, "Certified accuracy", "radius", "certified accuracy")?;
        write_text(&args.out.join("curves.svg"), &svg)?;
    }

    if !spectral.is_empty() {
        let mut table =
            String::from("run,epoch,collapsed_spectral,product_spectral,gershgorin,mean_offdiag_abs_cosine,frobenius_sq_sum\n");
        for r in &spectral {
            table.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.run,
                r.epoch.map(|e| e.to_string()).unwrap_or_default(),
                r.collapsed,
                r.product,
                r.gershgorin,
                r.mean_cos,
                r.frobenius_sq
            ));
        }
        write_text(&args.out.join("spectral_trends.csv"), &table)?;
    }
    if !notes.is_empty() {
        write_text(&args.out.join("notes.txt"), &(notes.join("\n") + "\n"))?;
    }
    println!("{}", args.out.display());
    Ok(())
}
