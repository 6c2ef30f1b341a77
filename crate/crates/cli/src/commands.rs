use std::fs;
use std::path::{Path, PathBuf};

use noma_core::eval::{self, hard_decision_qpsk, NetSeeds};
use noma_core::fused::{bench_compare, bench_params, build_plan, MachineInfo};
use noma_core::io::{self, write_meta, ArtifactMeta, ExperimentConfig, TrainedDetectors, UserDetector};
use noma_core::iq::widen_dataset;
use noma_core::lls::{self, LlsWeights};
use noma_core::rng::derive_seed;
use noma_core::{hybrid, synthesize, Detector, Error};

use crate::args::{parse_dims, parse_snr_grid, BenchArgs, Cli, Command, DetectArgs, SimulateArgs, SweepArgs, TrainArgs};
use crate::Failure;

type Outcome = Result<(), Failure>;

const TRAIN_TAG: u64 = 0x74_7261_696e;

struct Context {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
}

impl Context {
    fn artifact(&self, explicit: &Option<PathBuf>, default_name: &str) -> Result<PathBuf, Failure> {
        let path = explicit.clone().unwrap_or_else(|| self.out_dir.join(default_name));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(Error::from)?;
        }
        Ok(path)
    }

    fn meta(&self, artifact: &Path, notes: Vec<String>) -> Outcome {
        let meta = ArtifactMeta {
            artifact: artifact.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            config_digest: self.cfg.digest(),
            seed: self.cfg.scenario.seed,
            notes,
        };
        write_meta(artifact, &meta)?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> Outcome {
    let mut cfg = ExperimentConfig::load(&cli.config).map_err(|e| Failure::config(format!("config `{}`: {e}", cli.config)))?;
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::config("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot size the thread pool: {e}")))?;
    }
    let out_dir = cli.out_dir.unwrap_or_else(|| cfg.output.dir.clone());
    let ctx = Context { cfg, out_dir };
    match cli.command {
        Command::Simulate(a) => simulate(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Detect(a) => detect(ctx, a),
        Command::Sweep(a) => sweep(ctx, a),
        Command::Bench(a) => bench(ctx, a),
    }
}

fn write(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(Error::from)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn simulate(mut ctx: Context, a: SimulateArgs) -> Outcome {
    if let Some(snr) = a.snr {
        ctx.cfg.scenario.snr_db = snr;
    }
    ctx.cfg.validate()?;
    let rec = synthesize(&ctx.cfg.scenario)?;
    let path = ctx.artifact(&a.output, "dataset.noma")?;
    io::write_dataset(&rec, &path)?;
    eprintln!("wrote {}", path.display());
    ctx.meta(&path, vec![format!("snr_db={}", ctx.cfg.scenario.snr_db)])
}

fn train(ctx: Context, a: TrainArgs) -> Outcome {
    let rec = io::read_dataset(&a.dataset)?;
    let users: Vec<usize> = if a.users.is_empty() {
        (1..=rec.num_users()).collect()
    } else {
        a.users.clone()
    };
    if let Some(&u) = users.iter().find(|&&u| u == 0 || u > rec.num_users()) {
        return Err(Error::Dimension(format!("user {u} not in dataset with {} users", rec.num_users())).into());
    }
    let parent = derive_seed(derive_seed(ctx.cfg.scenario.seed, TRAIN_TAG), ctx.cfg.train.shuffle_seed);

    let mut detectors = Vec::with_capacity(users.len());
    let mut trace = String::from("epoch,user,loss\n");
    for &user in &users {
        let data = eval::user_training_set(&rec, user)?;
        let seeds = NetSeeds::derive(parent, user as u64);
        let (w0, outcome) = eval::fit_hybrid(&data, &ctx.cfg.network.hidden, &ctx.cfg.train, seeds)?;
        for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
            trace.push_str(&format!("{},{},{}\n", epoch + 1, user, loss));
        }
        detectors.push(UserDetector {
            user,
            gram_condition: w0.gram_condition.is_finite().then_some(w0.gram_condition),
            lls_weights: w0.w,
            network: outcome.params,
        });
    }
    let det = TrainedDetectors {
        format: TrainedDetectors::FORMAT.to_string(),
        num_antennas: rec.num_antennas(),
        config_digest: ctx.cfg.digest(),
        users: detectors,
    };

    let params_path = ctx.artifact(&a.output, "detectors.json")?;
    det.save(&params_path)?;
    eprintln!("wrote {}", params_path.display());
    ctx.meta(&params_path, vec![])?;
    let trace_path = ctx.artifact(&a.loss_trace, "loss_trace.csv")?;
    write(&trace_path, &trace)?;
    ctx.meta(&trace_path, vec![])
}

fn detect(ctx: Context, a: DetectArgs) -> Outcome {
    let rec = io::read_dataset(&a.dataset)?;
    let det = TrainedDetectors::load(&a.params)?;
    if det.num_antennas != rec.num_antennas() {
        return Err(Error::Dimension(format!(
            "detectors were trained for {} antennas, dataset has {}",
            det.num_antennas,
            rec.num_antennas()
        ))
        .into());
    }
    let widened = widen_dataset(&rec.data_rx, None)?;

    let mut decisions = String::from("user,symbol,detector,re,im,bit0,bit1\n");
    let mut summary = String::from("user,detector,symbols,bit_errors,ber\n");
    for u in &det.users {
        if u.user == 0 || u.user > rec.num_users() {
            return Err(Error::Dimension(format!(
                "detector for user {} but dataset has {} users",
                u.user,
                rec.num_users()
            ))
            .into());
        }
        let truth = hard_decision_qpsk(&rec.user_data_symbols(u.user));
        let lls_est = lls::predict(&LlsWeights::new(u.lls_weights.clone()), &widened)?;
        let net_est = hybrid::detect(&u.network, &widened.design)?;
        for (detector, est) in [(Detector::Lls, lls_est), (Detector::HybridNn, net_est)] {
            let bits = hard_decision_qpsk(&est);
            for (i, (z, b)) in est.iter().zip(&bits).enumerate() {
                decisions.push_str(&format!("{},{},{},{},{},{},{}\n", u.user, i, detector, z.re, z.im, b[0], b[1]));
            }
            let errors = eval::bit_errors(&bits, &truth)?;
            let ber = eval::bit_error_rate(&bits, &truth)?;
            summary.push_str(&format!("{},{},{},{},{}\n", u.user, detector, bits.len(), errors, ber));
        }
    }

    let notes = vec![format!("detectors_digest={}", det.config_digest)];
    let decisions_path = ctx.artifact(&a.decisions, "decisions.csv")?;
    write(&decisions_path, &decisions)?;
    ctx.meta(&decisions_path, notes.clone())?;
    let summary_path = ctx.artifact(&a.summary, "ber_summary.csv")?;
    write(&summary_path, &summary)?;
    ctx.meta(&summary_path, notes)
}

fn sweep(mut ctx: Context, a: SweepArgs) -> Outcome {
    let sweep = &mut ctx.cfg.sweep;
    if let Some(grid) = &a.snr {
        sweep.snr_db = parse_snr_grid(grid).map_err(Failure::config)?;
    }
    if let Some(t) = a.trials {
        sweep.trials = t;
    }
    if !a.users.is_empty() {
        sweep.users = a.users.clone();
    }
    if !a.detectors.is_empty() {
        sweep.detectors = a.detectors.clone();
    }
    if !a.ablations.is_empty() {
        sweep.ablations = a.ablations.clone();
    }
    sweep.fixed_channel |= a.fixed_channel;
    if let Some(g) = a.gamma {
        ctx.cfg.scenario.rx_nonlinearity_gain = g;
    }
    ctx.cfg.validate()?;

    let report = eval::run_noise_sweep(&ctx.cfg.setup(), &ctx.cfg.digest())?;
    let path = ctx.artifact(&a.output, "ber.csv")?;
    write(&path, &report.to_csv())?;
    ctx.meta(
        &path,
        vec![
            format!("trials={}", report.meta.trials),
            format!("fixed_channel={}", report.meta.fixed_channel),
        ],
    )
}

fn bench(ctx: Context, a: BenchArgs) -> Outcome {
    let dims = parse_dims(&a.dims).map_err(Failure::config)?;
    if dims.contains(&0) {
        return Err(Failure::config("layer widths must be positive"));
    }
    if a.batch == 0 || a.repeats == 0 {
        return Err(Failure::config("batch and repeats must be at least 1"));
    }
    let plan = build_plan(&bench_params(&dims, ctx.cfg.scenario.seed)?)?;
    let report = bench_compare(&plan, a.batch, a.repeats)?;
    let machine = MachineInfo::current(1);
    let path = ctx.artifact(&a.output, "bench.csv")?;
    write(&path, &report.to_csv())?;
    for row in &report.rows {
        eprintln!("{:>10} {:>10.1} ns/sample  x{:.2}", row.path, row.ns_per_sample, row.speedup_vs_naive);
    }
    ctx.meta(
        &path,
        vec![
            format!("arch={}", machine.arch),
            format!("os={}", machine.os),
            format!("logical_cpus={}", machine.logical_cpus),
            format!("threads={}", machine.threads),
            format!("max_deviation_f64={:e}", report.max_deviation_f64),
            format!("max_deviation_f32={:e}", report.max_deviation_f32),
        ],
    )
}
