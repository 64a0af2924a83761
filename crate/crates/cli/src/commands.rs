use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bytesize::ByteSize;
use dedisp::analysis::{realtime_threshold, TrafficCounts};
use dedisp::report::{build_analysis, DeploySpec, RunManifest, TuningDocument};
use dedisp::setup::default_instances;
use dedisp::signal::{write_raw, write_sigproc};
use dedisp::tuner::{compare_zero_dm, synthetic_input, TuningMode};
use dedisp::{
    benchmark, generate, instance_sizing, tune as run_tune, zero_dm_experiment, DelayTable,
    ObservationSetup, PulseSpec, TuneOptions, TuningResult, WorkerPool,
};
use serde::Serialize;

use crate::{AnalyzeArgs, BenchArgs, GenArgs, TuneArgs, UsageError};

fn resolve_setup(name: &str) -> Result<ObservationSetup> {
    ObservationSetup::resolve(name).map_err(|e| UsageError(format!("--setup {name}: {e}")).into())
}

/// `path` with `.manifest.json` appended to its file name.
fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

/// 80% of MemAvailable from /proc/meminfo, if readable.
fn default_mem_cap() -> Option<u64> {
    let info = fs::read_to_string("/proc/meminfo").ok()?;
    let kb: u64 = info
        .lines()
        .find_map(|l| l.strip_prefix("MemAvailable:"))?
        .split_whitespace()
        .next()?
        .parse()
        .ok()?;
    Some(kb * 1024 / 10 * 8)
}

#[derive(Serialize)]
struct GenManifest<'a> {
    #[serde(flatten)]
    manifest: RunManifest,
    pulse: &'a PulseSpec,
    samples: usize,
    format: &'static str,
}

pub fn gen(a: &GenArgs, argv: Vec<String>) -> Result<()> {
    let setup = resolve_setup(&a.setup)?;
    let pulse = PulseSpec {
        dm: a.dm,
        t0: a.t0,
        width: a.width,
        amplitude: a.amp,
        noise_sigma: a.sigma,
        seed: a.seed,
    };
    pulse.validate().map_err(|e| UsageError(e.to_string()))?;
    let s = setup.samples_per_second as usize;
    let samples = a.samples.unwrap_or_else(|| {
        let end = a.t0 + pulse.sweep_seconds(&setup) + a.width;
        s * (end.floor() as usize + 1)
    });
    let fb = generate(&setup, samples, &pulse)?;

    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let sigproc = a
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("fil"));
    if sigproc {
        write_sigproc(&fb, &a.out)?;
    } else {
        write_raw(&fb, &a.out)?;
    }

    let mpath = manifest_path(&a.out);
    let mut manifest = RunManifest::new("gen", argv);
    manifest.setup = Some(setup.clone());
    manifest.seed = Some(a.seed);
    manifest.outputs = vec![a.out.display().to_string(), mpath.display().to_string()];
    write_json(
        &mpath,
        &GenManifest {
            manifest,
            pulse: &pulse,
            samples,
            format: if sigproc {
                "sigproc"
            } else {
                "raw-f32le-channel-major"
            },
        },
    )?;
    println!(
        "wrote {} ({} channels x {} samples, {})",
        a.out.display(),
        fb.channels(),
        samples,
        if sigproc { "SIGPROC" } else { "raw f32" }
    );
    Ok(())
}

fn save_result(
    dir: &Path,
    result: &TuningResult,
    manifest: &RunManifest,
    format: crate::Format,
) -> Result<Vec<PathBuf>> {
    let mut stem = format!("{}-{}", slug(&result.setup.name), result.num_dms);
    if result.mode == TuningMode::ZeroDm {
        stem.push_str("-zero-dm");
    }
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    let mut outputs = Vec::new();
    if format.json() {
        outputs.push(json.clone());
    }
    if format.csv() {
        outputs.push(csv.clone());
    }
    let mpath = dir.join(format!("{stem}.manifest.json"));
    outputs.push(mpath.clone());

    let mut manifest = manifest.clone();
    manifest.instances = vec![result.num_dms];
    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    if format.json() {
        TuningDocument {
            manifest: manifest.clone(),
            result: result.clone(),
        }
        .save(&json)
        .with_context(|| format!("writing {}", json.display()))?;
    }
    if format.csv() {
        let file = fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
        result.write_csv(BufWriter::new(file))?;
    }
    write_json(&mpath, &manifest)?;
    Ok(outputs)
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.prec$}"))
}

fn describe(result: &TuningResult, a: &TuneArgs) -> Result<String> {
    let best = result.best_record();
    let threshold = realtime_threshold(&result.setup, result.num_dms)?;
    let mut line = format!(
        "{:>5} DMs{}  optimum {}  {:.3} GFLOP/s  snr {}  chebyshev {}  real-time {} (needs {:.4} GFLOP/s)",
        result.num_dms,
        if result.mode == TuningMode::ZeroDm { " (zero-DM)" } else { "" },
        best.config,
        best.gflops,
        opt(result.snr_optimum, 2),
        opt(result.chebyshev_bound, 3),
        if best.gflops >= threshold { "PASS" } else { "FAIL" },
        threshold
    );
    if let Some(roof) = &a.roofline {
        let table = match result.mode {
            TuningMode::Real => DelayTable::build(&result.setup, result.num_dms)?,
            TuningMode::ZeroDm => DelayTable::zero_dm(&result.setup, result.num_dms)?,
        };
        let ai = TrafficCounts::for_config(
            &table,
            &best.config,
            result.setup.samples_per_second as usize,
        )?
        .ai()?;
        line.push_str(&format!(
            "  AI {:.3} {} (attainable {:.1} GFLOP/s)",
            ai,
            roof.classify(ai),
            roof.attainable(ai)
        ));
    }
    let warned = result
        .records
        .iter()
        .filter(|r| r.warning.is_some())
        .count();
    if warned > 0 {
        line.push_str(&format!(
            "\n      note: {warned} of {} configs ran close to the timer resolution",
            result.records.len()
        ));
    }
    Ok(line)
}

pub fn tune(a: &TuneArgs, argv: Vec<String>) -> Result<()> {
    let setup = resolve_setup(&a.setup)?;
    let dms = if a.dms.is_empty() {
        default_instances()
    } else {
        a.dms.clone()
    };
    let cap = match a.mem_cap {
        Some(c) => Some(c.as_u64()),
        None => {
            let cap = default_mem_cap();
            if cap.is_none() {
                println!("notice: available memory unknown, no memory cap applied");
            }
            cap
        }
    };
    let pool = WorkerPool::new(a.threads)?;
    let opts = TuneOptions {
        limits: a.limits,
        repeats: a.repeats,
        seed: a.seed,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut manifest = RunManifest::new("tune", argv);
    manifest.setup = Some(setup.clone());
    manifest.limits = Some(a.limits);
    manifest.repeats = Some(a.repeats);
    manifest.seed = Some(a.seed);

    println!("{setup}");
    let (mut done, mut skipped) = (0, 0);
    for &d in &dms {
        let instance = instance_sizing(&setup, d)?;
        if let Some(cap) = cap {
            if instance.footprint_bytes() > cap {
                println!(
                    "notice: skipping {d} DMs: buffers need {} but the memory cap is {}",
                    ByteSize(instance.footprint_bytes()),
                    ByteSize(cap)
                );
                skipped += 1;
                continue;
            }
        }
        let real = run_tune(&setup, d, &opts, &pool)?;
        save_result(&a.out, &real, &manifest, a.format)?;
        println!("{}", describe(&real, a)?);
        if a.zero_dm {
            let zero = zero_dm_experiment(&setup, d, &opts, &pool)?;
            save_result(&a.out, &zero, &manifest, a.format)?;
            println!("{}", describe(&zero, a)?);
            let cmp = compare_zero_dm(&real, &zero)?;
            println!("      zero-DM / real optimum ratio {:.3}", cmp.ratio);
        }
        done += 1;
    }
    println!(
        "tuned {done} instance(s), skipped {skipped}; results in {}",
        a.out.display()
    );
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let setup = resolve_setup(&a.setup)?;
    a.config
        .validate(a.dms, setup.samples_per_second as usize, &a.limits)
        .map_err(|e| UsageError(format!("--config {}: {e}", a.config)))?;
    let table = if a.zero_dm {
        DelayTable::zero_dm(&setup, a.dms)?
    } else {
        DelayTable::build(&setup, a.dms)?
    };
    let pool = WorkerPool::new(a.threads)?;
    let fb = synthetic_input(&setup, &table, a.seed)?;
    let record = benchmark(&fb, &table, &a.config, a.repeats, &a.limits, &pool)?;
    let traffic = TrafficCounts::for_config(&table, &a.config, setup.samples_per_second as usize)?;
    println!("{setup}");
    println!(
        "{} DMs, config {}: mean {:.6} s over {} runs, {:.3} GFLOP/s, AI {:.4}",
        a.dms,
        a.config,
        record.mean_time,
        record.runs.len(),
        record.gflops,
        traffic.ai()?
    );
    if let Some(w) = &record.warning {
        println!("note: {w}");
    }
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs, argv: Vec<String>) -> Result<()> {
    if a.files.is_empty() && a.deploy.is_none() {
        return Err(UsageError("give tuning result files, --deploy, or both".into()).into());
    }
    let results = a
        .files
        .iter()
        .map(|p| TuningDocument::load(p).map(|doc| doc.result))
        .collect::<dedisp::Result<Vec<_>>>()?;

    let deploy = match a.deploy {
        None => None,
        Some(arg) => {
            let setup = match (&a.setup, results.first()) {
                (Some(name), _) => resolve_setup(name)?,
                (None, Some(r)) => r.setup.clone(),
                (None, None) => {
                    return Err(UsageError("--deploy without results needs --setup".into()).into())
                }
            };
            Some(DeploySpec {
                setup,
                num_dms: arg.dms,
                beams: arg.beams,
                time_per_pass: arg.time,
            })
        }
    };

    let report = build_analysis(&results, a.roofline, deploy.as_ref())?;
    let text = report.to_text();
    print!("{text}");

    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut outputs = vec![dir.join("analysis.txt")];
        fs::write(&outputs[0], &text)?;
        if a.format.json() {
            let path = dir.join("analysis.json");
            write_json(&path, &report)?;
            outputs.push(path);
        }
        if a.format.csv() {
            let path = dir.join("plot.csv");
            report.write_plot_csv(BufWriter::new(fs::File::create(&path)?))?;
            outputs.push(path);
        }
        let mpath = dir.join("analysis.manifest.json");
        outputs.push(mpath.clone());
        let mut manifest = RunManifest::new("analyze", argv);
        manifest.setup = deploy.as_ref().map(|d| d.setup.clone());
        manifest.instances = results.iter().map(|r| r.num_dms).collect();
        manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        write_json(&mpath, &manifest)?;
    }
    Ok(())
}
