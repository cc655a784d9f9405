use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hgr_core::dataset::{
    audit_disjoint, load_canonical, load_dir, make_split, save_canonical, RecordingSession,
    SplitPlan, SynthSpec,
};
use hgr_core::harness::{
    compare, evaluate_run, load_model, read_metrics, render_comparisons, render_report,
    run_training, write_metrics, write_possim, MetricRow, RunDir, RunManifest,
};
use hgr_core::kv::KeyValues;
use hgr_core::preprocess::PreprocessConfig;
use hgr_core::{Error, Model, ModelConfig, Result};

use crate::{Command, PreprocessArgs, PreprocessFlags, SplitFlags, SynthArgs, TrainArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::ConvertValidate { paths } => convert_validate(&paths),
        Command::Synth(args) => synth(args),
        Command::Preprocess(args) => preprocess(args),
        Command::Train(args) => train(args),
        Command::Eval { run, data, out } => eval(&run, &data, out),
        Command::Stats {
            metrics,
            reference,
            against,
            out,
        } => {
            let rows = read_all(&metrics)?;
            let table = render_comparisons(&compare(&rows, reference, &against));
            emit(&table, out.as_deref())
        }
        Command::Possim { run } => possim(&run),
        Command::Report {
            metrics,
            reference,
            heatmap,
            out,
        } => {
            let rows = read_all(&metrics)?;
            emit(&render_report(&rows, reference, &heatmap), out.as_deref())
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )))
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for p in paths {
        require(p)?;
        rows.extend(read_metrics(p)?);
    }
    Ok(rows)
}

fn load_data(dir: &Path) -> Result<Vec<RecordingSession>> {
    require(dir)?;
    let sessions = load_dir(dir)?;
    if sessions.is_empty() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("no .emg files in {}", dir.display()),
        )));
    }
    Ok(sessions)
}

fn convert_validate(paths: &[PathBuf]) -> Result<()> {
    let mut files = Vec::new();
    for p in paths {
        require(p)?;
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "emg"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    for f in &files {
        let s = load_canonical(f).map_err(|e| match e {
            Error::Io(_) => e,
            other => Error::Format(format!("{}: {other}", f.display())),
        })?;
        println!(
            "{}: subject {} exercise {} {} samples x {} sensors @ {} Hz, repetitions {:?}",
            f.display(),
            s.subject,
            s.exercise,
            s.len(),
            s.n_sensors,
            s.fs_hz,
            s.repetitions()
        );
    }
    println!("{} file(s) valid", files.len());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec::new(
        args.seed,
        args.subjects,
        args.classes,
        args.reps,
        args.duration_s,
    );
    fs::create_dir_all(&args.out)?;
    let mut kv = KeyValues::new();
    kv.set("seed", spec.seed);
    kv.set("subjects", spec.subjects);
    kv.set("classes", spec.classes);
    kv.set("reps", spec.reps);
    kv.set("duration_s", spec.duration_s);
    kv.set("rest_s", spec.rest_s);
    kv.set("sensors", spec.n_sensors);
    kv.set("fs_hz", spec.fs_hz);
    kv.write(args.out.join("synth.txt"))?;

    let sessions = spec.generate()?;
    for s in &sessions {
        let name = format!(
            "s{:02}_{}.emg",
            s.subject,
            s.exercise.to_string().to_lowercase()
        );
        save_canonical(s, args.out.join(name))?;
    }
    println!(
        "wrote {} session(s) to {}",
        sessions.len(),
        args.out.display()
    );
    Ok(())
}

fn preprocess_config(flags: &PreprocessFlags, window_ms: u32) -> PreprocessConfig {
    PreprocessConfig {
        cutoff_hz: flags.cutoff_hz,
        mu: flags.mu,
        window_ms,
        step_ms: flags.step_ms,
        zero_phase: flags.zero_phase,
        filter_orders: flags.filter_orders.clone(),
    }
}

fn split_plan(flags: &SplitFlags) -> SplitPlan {
    SplitPlan {
        train_reps: flags.train_reps.clone(),
        test_reps: flags.test_reps.clone(),
        scope: flags.scope,
    }
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let config = preprocess_config(&args.preprocess, args.window);
    let plan = split_plan(&args.split);
    config.validate()?;
    plan.validate()?;
    let sessions = load_data(&args.data)?;
    fs::create_dir_all(&args.out)?;
    let mut kv = KeyValues::new();
    config.write_kv(&mut kv);
    let join = |r: &[u16]| {
        r.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    };
    kv.set("train_reps", join(&plan.train_reps));
    kv.set("test_reps", join(&plan.test_reps));
    kv.set("scope", plan.scope);
    kv.write(args.out.join("manifest.txt"))?;

    let splits = make_split(&sessions, &plan, &config)?;
    let k = plan.scope.n_classes();
    let mut windows = String::from("subject,split,windows,per_class\n");
    let mut scales = String::from("subject,sensor,scale\n");
    for s in &splits {
        audit_disjoint(&s.train, &s.test)?;
        for (name, set) in [("train", &s.train), ("test", &s.test)] {
            let hist: Vec<String> = set.histogram(k).iter().map(ToString::to_string).collect();
            let _ = writeln!(
                windows,
                "{},{name},{},{}",
                s.subject,
                set.len(),
                hist.join(";")
            );
        }
        for (i, v) in s.scale.per_channel_scale.iter().enumerate() {
            let _ = writeln!(scales, "{},{i},{v:.9e}", s.subject);
        }
    }
    fs::write(args.out.join("windows.csv"), windows)?;
    fs::write(args.out.join("scales.csv"), scales)?;
    println!(
        "{} subject(s) prepared into {}",
        splits.len(),
        args.out.display()
    );
    Ok(())
}

fn train_manifest(args: &TrainArgs) -> Result<RunManifest> {
    if let Some(path) = &args.manifest {
        require(path)?;
        return RunManifest::read(path);
    }
    let model = ModelConfig::new(args.variant, args.window, args.split.scope.n_classes());
    let mut m = RunManifest::new(model, split_plan(&args.split), args.seed);
    m.preprocess = preprocess_config(&args.preprocess, args.window);
    m.epochs = args.epochs;
    m.batch_size = args.batch_size;
    m.adam.lr = args.lr;
    m.adam.beta1 = args.beta1;
    m.adam.beta2 = args.beta2;
    m.adam.eps = args.adam_eps;
    m.adam.weight_decay = args.weight_decay;
    m.loss_mode = args.loss;
    Ok(m)
}

fn train(args: TrainArgs) -> Result<()> {
    let manifest = train_manifest(&args)?;
    manifest.validate()?;
    let sessions = load_data(&args.data)?;
    if let Some(s) = sessions.first() {
        if s.fs_hz != manifest.model.fs_hz || s.n_sensors != manifest.model.n_sensors {
            return Err(Error::Config(format!(
                "data is {} sensors @ {} Hz, model expects {} @ {} Hz",
                s.n_sensors, s.fs_hz, manifest.model.n_sensors, manifest.model.fs_hz
            )));
        }
    }
    let results = run_training(&sessions, &manifest, &args.out, args.jobs)?;
    for r in &results {
        let cells: Vec<String> = r
            .evaluation
            .heads
            .iter()
            .map(|h| format!("{} {:.2}%", h.head, h.accuracy()))
            .collect();
        println!("subject {:02}: {}", r.subject, cells.join(", "));
    }
    println!("run written to {}", args.out.display());
    Ok(())
}

fn eval(run: &Path, data: &Path, out: Option<PathBuf>) -> Result<()> {
    require(run)?;
    let dir = RunDir::open(run)?;
    let sessions = load_data(data)?;
    let rows = evaluate_run(&dir, &sessions)?;
    let out = out.unwrap_or_else(|| dir.root.join("eval.csv"));
    write_metrics(&out, &rows)?;
    for r in &rows {
        println!("subject {:02} {}: {:.2}%", r.subject, r.head, r.accuracy);
    }
    Ok(())
}

fn possim(run: &Path) -> Result<()> {
    require(run)?;
    let dir = RunDir::open(run)?;
    let manifest = RunManifest::read(dir.manifest())?;
    let models = dir
        .subjects()?
        .into_iter()
        .map(|s| load_model(&dir, &manifest, s))
        .collect::<Result<Vec<Model<f32>>>>()?;
    if models.is_empty() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("no checkpoints in {}", run.display()),
        )));
    }
    let refs: Vec<&Model<f32>> = models.iter().collect();
    for name in write_possim(&dir, &refs)? {
        println!("{}", dir.root.join(name).display());
    }
    Ok(())
}
