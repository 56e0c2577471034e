use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use eplguard::detector::{self, Decision, Fold, TrainConfig, Verdict};
use eplguard::features::{FeatureMatrix, FeatureVector};
use eplguard::io::{self, tables, Provenance};
use eplguard::mvn::Averaging;
use eplguard::pipeline::{
    append, run_quickstart, settled_features, split_by_label, to_matrix, track_prns, write_dataset, ReceiverConfig,
    RunRecord, QUICKSTART_FILES, TOOL_VERSION,
};
use eplguard::prn::{validate_prn, MAX_PRN};
use eplguard::receiver::{ChannelStatus, CorrelatorEpoch};
use eplguard::scenario::Scenario;
use eplguard::sim::{IqStream, LabelTimeline};
use serde_json::json;

use crate::{AveragingArg, ChannelSelect, Cli, Command, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing inputs, or an invalid configuration file.
    Config(String),
    /// Inputs that exist but cannot be processed.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(1),
            CliError::Data(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn config(self) -> Result<T>;
    fn data(self) -> Result<T>;
}

impl<T> Classify<T> for eplguard::Result<T> {
    fn config(self) -> Result<T> {
        self.map_err(|e| CliError::Config(e.to_string()))
    }

    fn data(self) -> Result<T> {
        self.map_err(|e| CliError::Data(e.to_string()))
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let rcv = receiver_config(cli.receiver.as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate { scenario } => simulate(&scenario, out),
        Command::Track { input, sel } => track(&input, &sel, &rcv, out),
        Command::Extract { epochs, labels, name } => extract(&epochs, labels.as_deref(), name, &rcv, out),
        Command::Train {
            genuine,
            spoofed,
            train,
        } => train_model(&genuine, &spoofed, &train, &rcv, out),
        Command::Eval {
            model,
            genuine,
            spoofed,
            n,
            swap_labels,
        } => eval(&model, &genuine, &spoofed, &n, swap_labels, out),
        Command::Xval {
            folds,
            train,
            swap_labels,
        } => xval(&folds, &train, swap_labels, out),
        Command::Detect {
            model,
            inputs,
            labels,
            sel,
            lock_seconds,
        } => detect(&model, &inputs, labels.as_deref(), &sel, lock_seconds, &rcv, out),
        Command::Quickstart { scenarios, train } => quickstart(&scenarios, &train, &rcv, out),
    }
}

fn receiver_config(path: Option<&Path>) -> Result<ReceiverConfig> {
    let cfg = match path {
        None => ReceiverConfig::default(),
        Some(p) => {
            require(&[p])?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            io::from_toml_str(&text, &p.display().to_string()).config()?
        }
    };
    cfg.validate().config()?;
    Ok(cfg)
}

fn require<P: AsRef<Path>>(paths: &[P]) -> Result<()> {
    for p in paths {
        let p = p.as_ref();
        if !p.exists() {
            return Err(CliError::Config(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

fn out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))
}

fn record(command: &str, config: &serde_json::Value, seed: Option<u64>, inputs: &[&Path], out: &Path) -> Result<()> {
    let mut r = RunRecord::new(command, config, seed).data()?;
    for p in inputs {
        r.add_input(p).data()?;
    }
    r.write(out).data()
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Dataset id of a stage file: `x.prn07.epochs.csv`, `x.features.csv` and
/// `x.genuine.features.csv` all map to `x`.
fn dataset_id(p: &Path) -> String {
    let name = file_name(p);
    if let Some(i) = name.find(".prn") {
        return name[..i].to_string();
    }
    for suffix in [
        ".genuine.features.csv",
        ".attacked.features.csv",
        ".features.csv",
        ".epochs.csv",
        ".csv",
    ] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    name
}

fn prn_of_epoch_file(p: &Path) -> Result<u8> {
    let name = file_name(p);
    let prn = name
        .find(".prn")
        .map(|i| &name[i + 4..])
        .and_then(|rest| rest.split('.').next())
        .and_then(|d| d.parse::<u8>().ok())
        .ok_or_else(|| CliError::Config(format!("{}: expected a name like <id>.prnNN.epochs.csv", p.display())))?;
    validate_prn(prn).config()?;
    Ok(prn)
}

fn is_capture_input(p: &Path) -> bool {
    p.extension().is_none_or(|e| e != "csv")
}

/// Reads a manifest or a raw capture. Returns the stream, the dataset id and
/// the labels path a manifest points at.
fn load_capture(path: &Path, decimate: usize) -> Result<(IqStream, String, Option<PathBuf>)> {
    require(&[path])?;
    if path.extension().is_some_and(|e| e == "toml") {
        let m = io::load_manifest(path).config()?;
        let base = path.parent().unwrap_or(Path::new("."));
        let capture = m.resolve(base, &m.capture);
        let labels = m.labels.as_ref().map(|l| m.resolve(base, l));
        require(&[&capture])?;
        let meta = io::read_meta(&capture).data()?;
        let iq = io::read_iq(&capture, &meta, decimate).data()?;
        Ok((iq, m.id, labels))
    } else {
        let meta = io::read_meta(path).data()?;
        let iq = io::read_iq(path, &meta, decimate).data()?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok((iq, id, None))
    }
}

fn selected_prns(sel: &ChannelSelect) -> Result<Vec<u8>> {
    if sel.prns.is_empty() {
        return Ok((1..=MAX_PRN).collect());
    }
    for &p in &sel.prns {
        validate_prn(p).config()?;
    }
    Ok(sel.prns.clone())
}

fn track_capture(
    path: &Path,
    sel: &ChannelSelect,
    rcv: &ReceiverConfig,
) -> Result<(String, Option<PathBuf>, Vec<(u8, Vec<CorrelatorEpoch>)>)> {
    let prns = selected_prns(sel)?;
    if sel.decimate == 0 {
        return Err(CliError::Config("--decimate must be at least 1".into()));
    }
    let (iq, id, labels) = load_capture(path, sel.decimate)?;
    let tracks = track_prns(&iq, &prns, rcv).data()?;
    for t in &tracks {
        let status = match t.status {
            ChannelStatus::Completed => "tracked to the end".to_string(),
            ChannelStatus::LossOfLock { t, .. } => format!("lost lock at {t:.3} s"),
        };
        println!("PRN {:2}: {} epochs, {status}", t.prn, t.epochs.len());
    }
    if tracks.is_empty() {
        eprintln!("warning: no PRN acquired in {}", path.display());
    }
    Ok((id, labels, tracks.into_iter().map(|t| (t.prn, t.epochs)).collect()))
}

fn simulate(path: &Path, out: &Path) -> Result<ExitCode> {
    require(&[path])?;
    let scn = Scenario::load(path).config()?;
    let iq = scn.synthesize().config()?;
    out_dir(out)?;
    let manifest = write_dataset(&scn, &iq, out).data()?;
    record("simulate", &json!(scn), Some(scn.synth.noise_seed), &[path], out)?;
    println!(
        "{} samples at {} Hz ({} s) -> {}",
        iq.len(),
        iq.sample_rate,
        scn.synth.duration,
        manifest.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn track(input: &Path, sel: &ChannelSelect, rcv: &ReceiverConfig, out: &Path) -> Result<ExitCode> {
    let (id, _, channels) = track_capture(input, sel, rcv)?;
    out_dir(out)?;
    for (prn, epochs) in &channels {
        tables::write_epochs(&out.join(format!("{id}.prn{prn:02}.epochs.csv")), epochs).data()?;
    }
    let cfg = json!({ "receiver": rcv, "prns": sel.prns, "decimate": sel.decimate });
    record("track", &cfg, None, &[input], out)?;
    Ok(ExitCode::SUCCESS)
}

fn extract(
    epochs: &[PathBuf],
    labels: Option<&Path>,
    name: Option<String>,
    rcv: &ReceiverConfig,
    out: &Path,
) -> Result<ExitCode> {
    require(epochs)?;
    if let Some(l) = labels {
        require(&[l])?;
    }
    let prns = epochs
        .iter()
        .map(|p| prn_of_epoch_file(p))
        .collect::<Result<Vec<_>>>()?;
    let mut feats: Vec<FeatureVector> = Vec::new();
    for (path, &prn) in epochs.iter().zip(&prns) {
        let e = tables::read_epochs(path).data()?;
        feats.extend(settled_features(&e, prn, rcv).data()?);
    }
    feats.sort_by(|a, b| a.prn.cmp(&b.prn).then(a.t_start.total_cmp(&b.t_start)));
    let name = name.unwrap_or_else(|| dataset_id(&epochs[0]));
    out_dir(out)?;
    match labels {
        Some(l) => {
            let tl = tables::read_labels(l).data()?;
            let (g, a) = split_by_label(&feats, &tl);
            tables::write_features(&out.join(format!("{name}.genuine.features.csv")), &g).data()?;
            tables::write_features(&out.join(format!("{name}.attacked.features.csv")), &a).data()?;
            println!("{name}: {} genuine, {} attacked windows", g.len(), a.len());
        }
        None => {
            tables::write_features(&out.join(format!("{name}.features.csv")), &feats).data()?;
            println!("{name}: {} windows", feats.len());
        }
    }
    let mut inputs: Vec<&Path> = epochs.iter().map(PathBuf::as_path).collect();
    inputs.extend(labels);
    record("extract", &json!({ "receiver": rcv, "name": name }), None, &inputs, out)?;
    Ok(ExitCode::SUCCESS)
}

fn train_config(t: &TrainArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        seed: t.seed,
        n_avg: t.n_avg,
        holdout_fraction: t.holdout,
        averaging: match t.averaging {
            AveragingArg::Scores => Averaging::Scores,
            AveragingArg::Features => Averaging::Features,
        },
        ..TrainConfig::default()
    };
    cfg.validate().config()?;
    Ok(cfg)
}

fn load_features(paths: &[PathBuf]) -> Result<FeatureMatrix> {
    require(paths)?;
    let mut m = FeatureMatrix::default();
    for p in paths {
        let f = tables::read_features(p).data()?;
        append(&mut m, &to_matrix(&dataset_id(p), &f));
    }
    Ok(m)
}

fn train_model(
    genuine: &[PathBuf],
    spoofed: &[PathBuf],
    t: &TrainArgs,
    rcv: &ReceiverConfig,
    out: &Path,
) -> Result<ExitCode> {
    let cfg = train_config(t)?;
    let g = load_features(genuine)?;
    let s = load_features(spoofed)?;
    let mut profile = detector::train(&g, &s, &cfg).data()?;
    profile.window = rcv.window;
    out_dir(out)?;
    let mut r = RunRecord::new("train", &json!({ "train": cfg, "receiver": rcv }), Some(cfg.seed)).data()?;
    for p in genuine.iter().chain(spoofed) {
        r.add_input(p).data()?;
    }
    let prov = Provenance {
        trained_on: profile.trained_on.clone(),
        tool_version: TOOL_VERSION.to_string(),
        seed: Some(cfg.seed),
        config_sha256: Some(r.config_sha256.clone()),
    };
    let path = out.join("model.json");
    io::save_model(&profile, &prov, &path).data()?;
    r.write(out).data()?;
    println!(
        "trained on {} genuine and {} spoofed windows; log threshold {:.4} ({:?}) -> {}",
        g.len(),
        s.len(),
        profile.log_threshold,
        profile.threshold_source,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_report_tables(out: &Path, stem: &str, rows: &[(String, detector::EvalReport)]) -> Result<()> {
    tables::write_reports(&out.join(format!("{stem}.csv")), rows).data()?;
    let table = tables::format_report_table(rows);
    let txt = out.join(format!("{stem}.txt"));
    std::fs::write(&txt, &table).map_err(|e| CliError::Data(format!("{}: {e}", txt.display())))?;
    print!("{table}");
    Ok(())
}

fn eval(
    model: &Path,
    genuine: &[PathBuf],
    spoofed: &[PathBuf],
    ns: &[usize],
    swap: bool,
    out: &Path,
) -> Result<ExitCode> {
    require(&[model])?;
    if ns.contains(&0) {
        return Err(CliError::Config("--n values must be at least 1".into()));
    }
    let (profile, _) = io::load_model(model).data()?;
    let g = load_features(genuine)?;
    let s = load_features(spoofed)?;
    let ns = if ns.is_empty() {
        vec![profile.n_avg]
    } else {
        ns.to_vec()
    };
    let name = dataset_id(&spoofed[0]);
    let mut rows = Vec::new();
    for &n in &ns {
        let mut p = profile.clone();
        p.n_avg = n;
        match detector::evaluate(&p, &g, &s) {
            Ok(r) => rows.push((name.clone(), if swap { r.swapped() } else { r })),
            Err(eplguard::Error::InsufficientSamples { .. }) if ns.len() > 1 => {
                eprintln!("warning: n = {n} leaves a class without a complete block; skipped");
            }
            Err(e) => return Err(CliError::Data(e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("no block size could be evaluated".into()));
    }
    out_dir(out)?;
    write_report_tables(out, "eval_report", &rows)?;
    let mut inputs: Vec<&Path> = vec![model];
    inputs.extend(genuine.iter().chain(spoofed).map(PathBuf::as_path));
    record("eval", &json!({ "n": ns, "swap_labels": swap }), None, &inputs, out)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_fold(spec: &str) -> Result<(String, PathBuf, PathBuf)> {
    let bad = || CliError::Config(format!("fold `{spec}`: expected ID=GENUINE.csv,SPOOFED.csv"));
    let (id, files) = spec.split_once('=').ok_or_else(bad)?;
    let (g, s) = files.split_once(',').ok_or_else(bad)?;
    if id.is_empty() || g.is_empty() || s.is_empty() {
        return Err(bad());
    }
    Ok((id.to_string(), PathBuf::from(g), PathBuf::from(s)))
}

fn xval(specs: &[String], t: &TrainArgs, swap: bool, out: &Path) -> Result<ExitCode> {
    let cfg = train_config(t)?;
    let parsed = specs.iter().map(|s| parse_fold(s)).collect::<Result<Vec<_>>>()?;
    if parsed.len() < 2 {
        return Err(CliError::Config(
            "cross-validation needs at least two --fold datasets".into(),
        ));
    }
    let mut folds = Vec::with_capacity(parsed.len());
    for (id, g, s) in &parsed {
        require(&[g, s])?;
        folds.push(Fold {
            id: id.clone(),
            genuine: to_matrix(id, &tables::read_features(g).data()?),
            spoofed: to_matrix(id, &tables::read_features(s).data()?),
        });
    }
    let reports = detector::kfold_xval(&folds, &cfg).data()?;
    out_dir(out)?;
    let rows: Vec<_> = reports
        .into_iter()
        .map(|r| (r.held_out, if swap { r.report.swapped() } else { r.report }))
        .collect();
    write_report_tables(out, "xval_report", &rows)?;
    let inputs: Vec<&Path> = parsed.iter().flat_map(|(_, g, s)| [g.as_path(), s.as_path()]).collect();
    record(
        "xval",
        &json!({ "train": cfg, "swap_labels": swap }),
        Some(cfg.seed),
        &inputs,
        out,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn detect(
    model: &Path,
    inputs: &[PathBuf],
    labels: Option<&Path>,
    sel: &ChannelSelect,
    lock_seconds: f64,
    rcv: &ReceiverConfig,
    out: &Path,
) -> Result<ExitCode> {
    require(&[model])?;
    require(inputs)?;
    if !(lock_seconds > 0.0) {
        return Err(CliError::Config("--lock-seconds must be positive".into()));
    }
    let (profile, _) = io::load_model(model).data()?;
    let (channels, manifest_labels) = match inputs {
        [one] if is_capture_input(one) => {
            let (_, l, ch) = track_capture(one, sel, rcv)?;
            (ch, l)
        }
        _ if inputs.iter().all(|p| !is_capture_input(p)) => {
            let mut ch = Vec::new();
            for p in inputs {
                ch.push((prn_of_epoch_file(p)?, tables::read_epochs(p).data()?));
            }
            (ch, None)
        }
        _ => {
            return Err(CliError::Config(
                "detect takes either one manifest or capture, or one or more epoch CSVs".into(),
            ))
        }
    };
    let label_path = labels.map(Path::to_path_buf).or(manifest_labels);
    let timeline: Option<LabelTimeline> = match &label_path {
        Some(p) => {
            require(&[p])?;
            Some(tables::read_labels(p).data()?)
        }
        None => None,
    };

    let mut decisions: Vec<Decision> = Vec::new();
    let mut prns = Vec::new();
    for (prn, epochs) in &channels {
        let feats = settled_features(epochs, *prn, rcv).data()?;
        let res = detector::detect_features(&feats, &profile, timeline.as_ref()).data()?;
        println!("PRN {prn:2}: {} passed, {} dropped", res.passed, res.dropped);
        if !res.decisions.is_empty() {
            prns.push(*prn);
        }
        decisions.extend(res.decisions);
    }
    out_dir(out)?;
    tables::write_decisions(&out.join("decisions.csv"), &decisions).data()?;
    if timeline.is_some() && prns.len() < detector::PVT_MIN_PRNS {
        println!("only {} PRNs produced decisions; no spoof timing report", prns.len());
    } else if timeline.is_some() {
        let sets = detector::prn_sets(&prns).data()?;
        let rep = detector::spoof_timing(&decisions, &sets, lock_seconds).data()?;
        let text = serde_json::to_string_pretty(&rep).map_err(|e| CliError::Data(e.to_string()))?;
        let path = out.join("spoof_timing.json");
        std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        println!(
            "{} PRN-sets: mean longest undetected spoofing {:.2} s, mean {}-s locks {:.2}",
            sets.len(),
            rep.overall_continuous_spoof_s,
            lock_seconds,
            rep.mean_locks
        );
    }
    let mut rec_inputs: Vec<&Path> = vec![model];
    rec_inputs.extend(inputs.iter().map(PathBuf::as_path));
    rec_inputs.extend(label_path.as_deref());
    let cfg = json!({ "receiver": rcv, "prns": sel.prns, "decimate": sel.decimate, "lock_seconds": lock_seconds });
    record("detect", &cfg, None, &rec_inputs, out)?;
    let alarms = decisions.iter().filter(|d| d.verdict == Verdict::Malicious).count();
    if alarms > 0 {
        println!("ALARM: {alarms} of {} decisions flagged as spoofed", decisions.len());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn quickstart(dir: &Path, t: &TrainArgs, rcv: &ReceiverConfig, out: &Path) -> Result<ExitCode> {
    let cfg = train_config(t)?;
    let files: Vec<PathBuf> = QUICKSTART_FILES.iter().map(|f| dir.join(f)).collect();
    require(&files)?;
    for f in &files {
        Scenario::load(f).config()?;
    }
    let outcome = run_quickstart(dir, out, rcv, &cfg).data()?;
    let rows = vec![("quickstart".to_string(), outcome.report)];
    print!("{}", tables::format_report_table(&rows));
    println!("outputs in {}", out.display());
    Ok(ExitCode::SUCCESS)
}
