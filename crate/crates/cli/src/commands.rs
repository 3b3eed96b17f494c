use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use loopsoup::estimators::{rows_to_csv, Accum, ExperimentSpec, Runner, BLOCK};
use loopsoup::green::{FreeGreen, GreenFunction, GreenTable};
use loopsoup::io::write_atomic;
use loopsoup::lattice::{LatticeSpec, RngStream, Site};
use loopsoup::loopmeasure::{cov_occupancy, expected_first_shell, mu_hit_mass, mu_visit_all, prob_avoid};
use loopsoup::percolation::{cluster_of, u_set_count, SiteClusters};
use loopsoup::sampler::{read_sample, sample_soup, write_sample, Scope, SoupParams};
use loopsoup::validation::{default_selection, run_criterion, Level, ValidationConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Serialize)]
struct HostInfo {
    hostname: String,
    os: &'static str,
    arch: &'static str,
    cpus: usize,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: &'static str,
    config: String,
    master_seed: u64,
    streams: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
    host: HostInfo,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn host() -> HostInfo {
    let hostname = std::fs::read_to_string("/etc/hostname")
        .map(|s| s.trim().to_string())
        .or_else(|_| std::env::var("HOSTNAME"))
        .unwrap_or_default();
    HostInfo {
        hostname,
        os: std::env::consts::OS,
        arch: std::env::consts::ARCH,
        cpus: rayon::current_num_threads(),
    }
}

fn write_manifest(
    cfg: &RunConfig,
    command: &'static str,
    seed: u64,
    streams: Vec<String>,
    started: f64,
    path: &Path,
) -> Result<(), CliError> {
    let m = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg.to_toml(),
        master_seed: seed,
        streams,
        started_unix: started,
        finished_unix: now(),
        host: host(),
    };
    write_atomic(path, serde_json::to_string_pretty(&m).unwrap().as_bytes())?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.clone())
}

fn site(v: &[i32], d: usize) -> Result<Site, CliError> {
    if v.len() != d {
        return Err(CliError::Config(format!("site {v:?} does not have {d} coordinates")));
    }
    Ok(Site(v.to_vec()))
}

pub fn sample(cfg: &RunConfig) -> Result<(), CliError> {
    let started = now();
    let s = &cfg.sample;
    let spec = LatticeSpec::new(s.dim, s.radius, s.kappa)?;
    let out = out_dir(cfg)?;
    let base = SoupParams::new(&spec, s.alpha, RngStream::new(cfg.seed, 0))?
        .with_order(s.order.clone())?
        .with_budget(cfg.length_budget);
    base.check_jmax()?;
    let mut streams = Vec::new();
    for k in 0..s.soups {
        let p = base.clone().with_stream(RngStream::new(cfg.seed, k));
        let soup = sample_soup(&p)?;
        write_sample(&out, &format!("soup_{k}"), &soup)?;
        println!("soup_{k}: {} loops, total length {}", soup.loops.len(), soup.total_length());
        streams.push(format!("soup_{k}: stream {k}"));
    }
    write_manifest(cfg, "sample", cfg.seed, streams, started, &out.join("sample.manifest.json"))
}

#[derive(Serialize)]
struct AnalysisLine {
    soup: String,
    loops: usize,
    total_length: usize,
    components: usize,
    largest_component: usize,
    origin: Option<loopsoup::percolation::ClusterReport>,
    u_set_counts: Vec<usize>,
}

fn soup_stems(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    if !cfg.analyze.inputs.is_empty() {
        return Ok(cfg.analyze.inputs.clone());
    }
    let mut stems: Vec<PathBuf> = std::fs::read_dir(&cfg.out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "loops"))
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::Config(format!("no soups (*.loops) in {}", cfg.out.display())));
    }
    Ok(stems)
}

pub fn analyze(cfg: &RunConfig) -> Result<(), CliError> {
    let mut text = String::new();
    for stem in soup_stems(cfg)? {
        let soup = read_sample(&stem.with_extension("loops"), &stem.with_extension("json"))?;
        let o = Site::origin(soup.spec().dim);
        let origin = match soup.scope {
            Scope::Full => Some(cluster_of(&soup, &o)?),
            _ => None,
        };
        let mut sc = SiteClusters::build(&soup);
        let comps = sc.components();
        let mut u = Vec::new();
        if soup.scope == Scope::Full {
            for k in 1..=cfg.analyze.chain {
                u.push(u_set_count(&soup, k)?);
            }
        }
        let line = AnalysisLine {
            soup: stem.display().to_string(),
            loops: soup.loops.len(),
            total_length: soup.total_length(),
            components: comps.len(),
            largest_component: comps.values().map(|c| c.len()).max().unwrap_or(0),
            origin,
            u_set_counts: u,
        };
        writeln!(text, "{}", serde_json::to_string(&line).unwrap()).unwrap();
    }
    let out = out_dir(cfg)?.join("analysis.jsonl");
    write_atomic(&out, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn exact(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.exact;
    let spec = LatticeSpec::new(e.dim, e.radius, e.kappa)?;
    let table = GreenTable::new(&spec, &[])?;
    let mut csv = String::from("quantity,d,radius,kappa,alpha,set,value\n");
    let fmt_set = |s: &[Site]| s.iter().map(|x| x.0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")).collect::<Vec<_>>().join(";");
    for raw in &e.sets {
        let set = raw.iter().map(|v| site(v, e.dim)).collect::<Result<Vec<_>, _>>()?;
        let label = fmt_set(&set);
        let mut row = |q: &str, v: f64| {
            writeln!(csv, "{q},{},{},{},{},{label},{v}", e.dim, e.radius, e.kappa, e.alpha).unwrap();
        };
        row("mu_hit_mass", mu_hit_mass(&set, &table)?);
        row("prob_avoid", prob_avoid(&set, e.alpha, &table)?);
        if set.len() >= 2 {
            row("mu_visit_all", mu_visit_all(&set, &table)?);
        }
        if set.len() == 2 && set[0] != set[1] {
            row("cov_occupancy", cov_occupancy(&set[0], &set[1], e.alpha, &table)?);
        }
    }
    for &d in &e.first_shell_dims {
        let fs = expected_first_shell(e.alpha, d, e.first_shell_radius)?;
        writeln!(csv, "expected_first_shell,{d},inf,0,{},,{}", e.alpha, fs.value).unwrap();
        writeln!(csv, "expected_first_shell_tail_width,{d},inf,0,{},,{}", e.alpha, fs.tail_width).unwrap();
    }
    let out = out_dir(cfg)?.join("exact.csv");
    write_atomic(&out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

pub fn green(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.green;
    let mut csv = String::from("d,radius,kappa,x,value\n");
    let pts = g.points.iter().map(|v| site(v, g.dim)).collect::<Result<Vec<_>, _>>()?;
    let o = Site::origin(g.dim);
    let (radius, f): (String, Box<dyn GreenFunction>) = if g.free {
        if g.kappa != 0.0 {
            return Err(CliError::Config("the free Green function is for kappa = 0".into()));
        }
        ("inf".into(), Box::new(FreeGreen::new(g.dim)?))
    } else {
        let spec = LatticeSpec::new(g.dim, g.radius, g.kappa)?;
        (g.radius.to_string(), Box::new(GreenTable::new(&spec, &[])?))
    };
    for x in &pts {
        let v = f.green(&o, x)?;
        let xs = x.0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(csv, "{},{radius},{},{xs},{v}", g.dim, g.kappa).unwrap();
    }
    let out = out_dir(cfg)?.join("green.csv");
    write_atomic(&out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    spec: ExperimentSpec,
    /// Replicas completed per task.
    done: Vec<u64>,
    accums: Vec<Accum>,
}

pub fn experiment(cfg: &RunConfig) -> Result<(), CliError> {
    let started = now();
    let spec = &cfg.experiment;
    let runner = Runner::new(spec)?;
    let out = out_dir(cfg)?;
    let stem = spec.kind.label();
    let ckpt_path = out.join(format!("{stem}.checkpoint.json"));
    let tasks = runner.tasks().to_vec();
    let mut ck = match std::fs::read_to_string(&ckpt_path) {
        Ok(text) => {
            let ck: Checkpoint = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("unreadable checkpoint {}: {e}", ckpt_path.display())))?;
            if ck.spec != *spec || ck.done.len() != tasks.len() {
                return Err(CliError::Config(format!(
                    "checkpoint {} belongs to a different experiment; remove it to start over",
                    ckpt_path.display()
                )));
            }
            eprintln!("resuming from {} ({:?} replicas done)", ckpt_path.display(), ck.done);
            ck
        }
        Err(_) => Checkpoint {
            spec: spec.clone(),
            done: vec![0; tasks.len()],
            accums: tasks.iter().map(|&(_, k)| Accum::new(k)).collect(),
        },
    };
    // Test hook: stop after this many blocks, as if interrupted.
    let mut budget: Option<u64> = std::env::var("LOOPSOUP_MAX_BLOCKS").ok().and_then(|s| s.parse().ok());
    for t in 0..tasks.len() {
        while ck.done[t] < spec.replicas {
            if budget == Some(0) {
                return Err(CliError::Core(loopsoup::Error::Io(std::io::Error::new(
                    std::io::ErrorKind::Interrupted,
                    "stopped by LOOPSOUP_MAX_BLOCKS; rerun to resume",
                ))));
            }
            let end = (ck.done[t] + BLOCK).min(spec.replicas);
            let acc = runner.block(t, ck.done[t], end)?;
            ck.accums[t].merge(&acc);
            ck.done[t] = end;
            write_atomic(&ckpt_path, serde_json::to_string(&ck).unwrap().as_bytes())?;
            if let Some(b) = budget.as_mut() {
                *b -= 1;
            }
        }
    }
    let result = runner.finish(&ck.accums)?;
    write_atomic(&out.join(format!("{stem}.csv")), rows_to_csv(&result.rows).as_bytes())?;
    write_atomic(&out.join(format!("{stem}.json")), result.sidecar_json(spec)?.as_bytes())?;
    let streams = tasks
        .iter()
        .map(|&(n, _)| format!("task n={n}: RngStream({}, 0).derive_keyed(\"{stem}\", {n}, replica)", spec.seed))
        .collect();
    write_manifest(cfg, "experiment", spec.seed, streams, started, &out.join(format!("{stem}.manifest.json")))?;
    std::fs::remove_file(&ckpt_path)?;
    for r in &result.rows {
        println!("{} n={} value={} stderr={}", r.kind, r.n, r.value, r.stderr);
    }
    for (label, f) in &result.fits {
        println!("fit {label}: slope {:.4} ± {:.4} ({} points)", f.slope, f.slope_se, f.points_used);
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig, level: Level, seed: Option<u64>, only: &[u32]) -> Result<(), CliError> {
    let mut vc = ValidationConfig { level, ..Default::default() };
    if let Some(s) = seed {
        vc.seed = s;
    }
    let ids = if only.is_empty() { default_selection(level) } else { only.to_vec() };
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for id in ids {
        let r = run_criterion(id, &vc)?;
        println!("{}", r.line());
        for d in &r.details {
            println!("    {d}");
        }
        if !r.passed {
            failed.push(id);
        }
        reports.push(r);
    }
    let json = serde_json::json!({
        "level": level,
        "seed": vc.seed,
        "passed": failed.is_empty(),
        "criteria": reports,
    });
    let out = out_dir(cfg)?.join("validation.json");
    write_atomic(&out, serde_json::to_string_pretty(&json).unwrap().as_bytes())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed))
    }
}
