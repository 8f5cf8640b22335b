use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use odf_core::icosphere::direction_count;
use odf_core::io::{export_glyphs, read_point_cloud, write_odf, CloudFormat};
use odf_core::rng::seeded;
use odf_core::{
    default_cone_bank, icosphere_directions, normalize_to_unit_sphere, odf_brute_force, odf_cloud_with_frames, par,
    AlignmentMode, ConeBank, Point3, PointCloud,
};
use odf_net::{
    contribution_map, evaluate, inference_sample, load_checkpoint, rotation_scenarios, save_checkpoint, train,
    MiniOdfNet, NetConfig, RotationAug, TrainConfig,
};
use rand::Rng;

use crate::dataset::{load_dataset, Dataset};
use crate::error::{CliError, CliResult};
use crate::{BankArgs, Cli, Command, DataArgs};

pub fn echo(cli: &Cli) -> String {
    let workers = cli.workers.map_or("auto".to_string(), |w| w.to_string());
    format!("seed={} workers={workers} verbose={} command={:?}", cli.seed, cli.verbose, cli.command)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if cli.workers == Some(0) {
        return Err(CliError::Validation("--workers must be at least 1".into()));
    }
    par::with_workers(cli.workers, || dispatch(cli))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Directions { level, out } => directions(*level, out.as_deref()),
        Command::Features {
            input,
            align,
            bank,
            out,
        } => features(cli, input, *align, bank, out),
        Command::OracleCheck {
            seeds,
            min_points,
            max_points,
            perturb,
        } => oracle_check(cli, *seeds, *min_points, *max_points, *perturb),
        Command::Train {
            data,
            ckpt,
            rotation,
            batch_size,
            lr,
            level,
        } => train_cmd(cli, data, ckpt, *rotation, *batch_size, *lr, *level),
        Command::Eval { data, ckpt, scenarios } => eval_cmd(cli, data, ckpt.as_deref(), *scenarios),
        Command::Glyphs {
            input,
            align,
            bank,
            every,
            length,
            out,
        } => glyphs(input, *align, bank, *every, *length, out),
        Command::Contrib { input, ckpt, out } => contrib(input, ckpt.as_deref(), out.as_deref()),
        Command::Bench { points, repeats, level } => bench(cli, *points, *repeats, *level),
    }
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn build_bank(args: &BankArgs) -> CliResult<ConeBank> {
    if let Some(a) = args.alphas_deg.iter().find(|a| !(**a > 0.0 && **a <= 180.0)) {
        return Err(CliError::Validation(format!("half-angle {a} degrees outside (0, 180]")));
    }
    let alphas = args.alphas_deg.iter().map(|a| a.to_radians()).collect();
    Ok(ConeBank::new(icosphere_directions(args.level)?, alphas, args.ranks.clone())?)
}

/// Checkpoints store direction and scale counts; the bank must be the
/// default one at the matching level.
fn bank_for(net: &MiniOdfNet) -> CliResult<ConeBank> {
    let n = net.config.n_directions;
    let level = (0..=2u32)
        .find(|&l| direction_count(l) == n)
        .ok_or_else(|| CliError::Validation(format!("checkpoint has {n} directions, not an icosphere level")))?;
    let bank = default_cone_bank(icosphere_directions(level)?);
    if bank.scale_count() != net.config.n_scales {
        return Err(CliError::Validation(format!(
            "checkpoint has {} scales, the default bank has {}",
            net.config.n_scales,
            bank.scale_count()
        )));
    }
    Ok(bank)
}

fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    let format = CloudFormat::from_path(path).ok_or_else(|| {
        CliError::Validation(format!("{}: unknown cloud format (use .xyz, .off or .ply)", path.display()))
    })?;
    Ok(normalize_to_unit_sphere(&read_point_cloud(path, format)?)?)
}

/// Uniform in a box, then normalized.
fn random_cloud(n: usize, seed: u64) -> CliResult<PointCloud> {
    let mut r = seeded(seed);
    let pts = (0..n)
        .map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    Ok(normalize_to_unit_sphere(&PointCloud::new(pts))?)
}

fn directions(level: u32, out: Option<&Path>) -> CliResult<()> {
    let dirs = icosphere_directions(level)?;
    let mut text = String::new();
    for d in dirs.directions() {
        writeln!(text, "{:.17e} {:.17e} {:.17e}", d.x, d.y, d.z).expect("string");
    }
    emit(out, &text)?;
    eprintln!("directions: {}", dirs.len());
    Ok(())
}

fn features(cli: &Cli, input: &Path, align: AlignmentMode, args: &BankArgs, out: &Path) -> CliResult<()> {
    let bank = build_bank(args)?;
    let cloud = read_cloud(input)?;
    let start = Instant::now();
    let (field, frames) = odf_cloud_with_frames(&cloud, &bank, align)?;
    let secs = start.elapsed().as_secs_f64();
    write_odf(out, &field)?;
    log(cli, format!("wrote {}", out.display()));
    println!("points,directions,scales,cones,alignment,degenerate_frames,millis");
    println!(
        "{},{},{},{},{align},{},{:.3}",
        field.n_points,
        field.n_directions,
        field.n_scales,
        bank.cone_count(),
        frames.degenerate_count(),
        secs * 1e3
    );
    Ok(())
}

fn oracle_check(cli: &Cli, seeds: usize, min_points: usize, max_points: usize, perturb: bool) -> CliResult<()> {
    let bank = default_cone_bank(icosphere_directions(1)?);
    if seeds == 0 {
        return Err(CliError::Validation("--seeds must be at least 1".into()));
    }
    if min_points <= bank.max_rank() || max_points < min_points {
        return Err(CliError::Validation(format!(
            "need {} < min-points <= max-points, got {min_points}..{max_points}",
            bank.max_rank()
        )));
    }
    let modes = [AlignmentMode::None, AlignmentMode::RiXy, AlignmentMode::RiXyz];
    println!("seed,points,alignment,cones,values,mismatches");
    let mut first = None;
    let mut total = 0;
    for s in 0..seeds {
        let seed = cli.seed.wrapping_add(s as u64);
        let n = min_points + (s * 53) % (max_points - min_points + 1);
        let mode = modes[s % 3];
        let cloud = random_cloud(n, seed)?;
        let (mut field, frames) = odf_cloud_with_frames(&cloud, &bank, mode)?;
        if perturb && s == 0 {
            field.values[0] += 1.0;
        }
        let mut mismatches = 0;
        for i in 0..n {
            let oracle = odf_brute_force(&cloud.points, i, &bank, &frames.frames[i])?;
            for (c, &v) in oracle.iter().enumerate() {
                let fast = field.point(i)[c];
                if fast != v as f32 {
                    mismatches += 1;
                    first.get_or_insert((seed, i, c, fast, v));
                }
            }
        }
        total += mismatches;
        println!("{seed},{n},{mode},{},{},{mismatches}", bank.cone_count(), n * bank.cone_count());
    }
    match first {
        None => {
            eprintln!("oracle-check: {seeds} clouds, {} cones, all values equal", bank.cone_count());
            Ok(())
        }
        Some((seed, point, cone, fast, oracle)) => Err(CliError::Computation(format!(
            "{total} mismatches; first at seed={seed} point={point} cone={cone} fast={fast} oracle={oracle}"
        ))),
    }
}

fn train_config(cli: &Cli, data: &DataArgs) -> TrainConfig {
    TrainConfig {
        epochs: data.epochs,
        votes: data.votes,
        seed: cli.seed,
        ..TrainConfig::default()
    }
}

fn dataset(cli: &Cli, data: &DataArgs) -> CliResult<Dataset> {
    let ds = load_dataset(&data.dataset, cli.seed)?;
    log(
        cli,
        format!("dataset {}: {} classes, {} train, {} test", ds.name, ds.classes, ds.train.len(), ds.test.len()),
    );
    Ok(ds)
}

fn train_cmd(
    cli: &Cli,
    data: &DataArgs,
    ckpt: &Path,
    rotation: RotationAug,
    batch_size: usize,
    lr: f64,
    level: u32,
) -> CliResult<()> {
    let config = TrainConfig {
        rotation,
        batch_size,
        learning_rate: lr,
        ..train_config(cli, data)
    };
    config.validate()?;
    let bank = default_cone_bank(icosphere_directions(level)?);
    let ds = dataset(cli, data)?;
    let net_config = NetConfig {
        n_directions: bank.direction_count(),
        n_scales: bank.scale_count(),
        ..NetConfig::desk(data.mode, ds.classes)
    };
    let (net, report) = train(&config, &net_config, &ds.train, &bank, |e, l| {
        log(cli, format!("epoch {e} loss {l:.5}"))
    })?;
    save_checkpoint(ckpt, &net)?;
    log(cli, format!("saved {}", ckpt.display()));
    let single = evaluate(&net, &ds.test, &bank, &config, rotation, 1)?.accuracy;
    let voted = evaluate(&net, &ds.test, &bank, &config, rotation, config.votes)?.accuracy;
    println!("mode,rotation,epochs,seconds,final_loss,test_accuracy,votes,voting_accuracy");
    println!(
        "{},{rotation},{},{:.1},{:.5},{single:.2},{},{voted:.2}",
        data.mode,
        config.epochs,
        report.seconds,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        config.votes
    );
    Ok(())
}

fn eval_cmd(cli: &Cli, data: &DataArgs, ckpt: Option<&Path>, scenarios: bool) -> CliResult<()> {
    if ckpt.is_none() && !scenarios {
        return Err(CliError::Validation("eval needs --ckpt, --scenarios or both".into()));
    }
    let config = train_config(cli, data);
    config.validate()?;
    let net = ckpt.map(load_checkpoint).transpose()?;
    let ds = dataset(cli, data)?;
    let mut mode = data.mode;
    if let Some(net) = &net {
        if net.config.classes != ds.classes {
            return Err(CliError::Validation(format!(
                "checkpoint has {} classes, dataset has {}",
                net.config.classes, ds.classes
            )));
        }
        mode = net.config.mode;
        let bank = bank_for(net)?;
        println!("mode,test_rotation,votes,accuracy");
        for rotation in [RotationAug::None, RotationAug::Z, RotationAug::So3] {
            let mut votes = vec![1];
            if config.votes > 1 {
                votes.push(config.votes);
            }
            for v in votes {
                let acc = evaluate(net, &ds.test, &bank, &config, rotation, v)?.accuracy;
                println!("{mode},{rotation},{v},{acc:.2}");
            }
        }
    }
    if scenarios {
        if net.is_some() {
            println!();
        }
        let bank = default_cone_bank(icosphere_directions(1)?);
        let table = rotation_scenarios(
            &config,
            &NetConfig::desk(mode, ds.classes),
            &ds.train,
            &ds.test,
            &bank,
            |m| log(cli, m),
        )?;
        print!("{}", table.csv(&mode.to_string()));
    }
    Ok(())
}

fn glyphs(input: &Path, align: AlignmentMode, args: &BankArgs, every: usize, length: f64, out: &Path) -> CliResult<()> {
    if every == 0 || !(length > 0.0 && length.is_finite()) {
        return Err(CliError::Validation("--every must be >= 1 and --length positive".into()));
    }
    let bank = build_bank(args)?;
    let cloud = read_cloud(input)?;
    let (field, frames) = odf_cloud_with_frames(&cloud, &bank, align)?;
    let selection: Vec<usize> = (0..cloud.len()).step_by(every).collect();
    let frames = (align != AlignmentMode::None).then_some(&frames);
    let segments = export_glyphs(out, &cloud, &field, bank.directions(), frames, &selection, length)?;
    println!("points,glyphs,segments");
    println!("{},{},{segments}", cloud.len(), selection.len());
    Ok(())
}

fn contrib(input: &Path, ckpt: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let ckpt = ckpt.ok_or_else(|| CliError::Validation("contrib needs a trained model: pass --ckpt".into()))?;
    let net = load_checkpoint(ckpt)?;
    let bank = bank_for(&net)?;
    let cloud = read_cloud(input)?;
    let sample = inference_sample(&net, &cloud, &bank, net.config.mode.default_alignment())?;
    let logits = net.logits(&sample)?;
    let predicted = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let map = contribution_map(&net, &sample, cloud.len())?;
    emit(out, &map.csv())?;
    eprintln!(
        "contrib: points={} width={} tied_channels={} degenerate={} predicted={predicted}",
        cloud.len(),
        map.total(),
        map.tied_channels,
        map.degenerate
    );
    Ok(())
}

fn bench(cli: &Cli, points: usize, repeats: usize, level: u32) -> CliResult<()> {
    if repeats == 0 {
        return Err(CliError::Validation("--repeats must be at least 1".into()));
    }
    let bank = default_cone_bank(icosphere_directions(level)?);
    let cloud = random_cloud(points, cli.seed)?;
    let multi = cli.workers.unwrap_or(8);
    let time = |workers: usize| {
        par::with_workers(Some(workers), || -> CliResult<_> {
            let (field, _) = odf_cloud_with_frames(&cloud, &bank, AlignmentMode::RiXy)?;
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                odf_cloud_with_frames(&cloud, &bank, AlignmentMode::RiXy)?;
                times.push(t.elapsed().as_secs_f64());
            }
            Ok((field, times))
        })
    };
    let (reference, t1) = time(1)?;
    let mut runs = vec![(1, t1, true)];
    if multi != 1 {
        let (field, t) = time(multi)?;
        runs.push((multi, t, field == reference));
    }
    println!("workers,points,cones,best_ms,mean_ms,per_point_us,identical");
    for (w, times, same) in &runs {
        let best = times.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        println!(
            "{w},{points},{},{:.3},{:.3},{:.3},{same}",
            bank.cone_count(),
            best * 1e3,
            mean * 1e3,
            best * 1e6 / points as f64
        );
    }
    if runs.iter().any(|r| !r.2) {
        return Err(CliError::Computation("multi-worker field differs from single-worker field".into()));
    }
    Ok(())
}
