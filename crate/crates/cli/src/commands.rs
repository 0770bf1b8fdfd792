use std::path::{Path, PathBuf};

use lavino::io::{load_video, save_video, slice_extract, VideoFormat};
use lavino::metrics::{MetricReport, SSIM_WINDOW};
use lavino::Shape;
use lavino::operators::{degrade, LinearOp};
use lavino::samplers::{
    admm_tv_restore, data_residual, latino_image_restore, latino_restore, latino_v_restore,
    vision_xl_restore, Init, RunReport,
};
use lavino::verify::{run_all, Check, VerifyOptions};
use lavino::VideoTensor;

use crate::config::{ExperimentConfig, FieldError, SamplerKind};
use crate::metadata::Metadata;
use crate::CliError;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

fn field(name: &str, message: impl Into<String>) -> CliError {
    CliError::Validation(FieldError::new(name, message).to_string())
}

fn existing(path: &Option<PathBuf>, key: &str, needed_by: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| field(key, format!("required by {needed_by}")))?;
    if !p.exists() {
        return Err(field(key, format!("{} does not exist", p.display())));
    }
    Ok(p)
}

fn output_dir(cfg: &ExperimentConfig, ov: &Overrides) -> Result<PathBuf, CliError> {
    ov.output
        .clone()
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| field("paths.output", "missing; set it or pass --output"))
}

fn measurement_path(cfg: &ExperimentConfig, ov: &Overrides) -> Result<PathBuf, CliError> {
    match (&ov.output, &cfg.paths.measurement) {
        (None, Some(p)) => Ok(p.clone()),
        _ => Ok(output_dir(cfg, ov)?.join("measurement.vten")),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn load(path: &Path) -> Result<VideoTensor, CliError> {
    Ok(load_video(path, VideoFormat::infer(path))?)
}

pub struct DegradeOutput {
    pub measurement: PathBuf,
    pub metadata: Metadata,
}

pub fn cmd_degrade(cfg: &ExperimentConfig, ov: &Overrides) -> Result<DegradeOutput, CliError> {
    let input = existing(&cfg.paths.input, "paths.input", "degrade")?;
    let measurement = measurement_path(cfg, ov)?;
    let x = load(&input)?;
    let op = cfg.operator(x.shape()).map_err(|e| {
        field(
            "paths.input",
            format!("{} {} does not fit the operator: {e}", input.display(), x.shape()),
        )
    })?;
    let mut noise = cfg.noise;
    if let Some(s) = ov.seed {
        noise.seed = s;
    }
    let y = degrade(&op, &x, noise)?;
    if let Some(dir) = measurement.parent() {
        create_dir(dir)?;
    }
    save_video(&y, &measurement, VideoFormat::Raw)?;
    let metadata = Metadata::describe(&cfg.problem.label(), &op, noise);
    metadata.write(&Metadata::sidecar_path(&measurement))?;
    println!(
        "degraded {} {} -> {} {}",
        input.display(),
        op.input_shape(),
        measurement.display(),
        op.output_shape()
    );
    Ok(DegradeOutput {
        measurement,
        metadata,
    })
}

pub struct RestoreOutput {
    pub restored: VideoTensor,
    pub report: RunReport,
    pub metrics: Option<MetricReport>,
    pub dir: PathBuf,
}

fn run_sampler(
    cfg: &ExperimentConfig,
    op: &LinearOp,
    y: &VideoTensor,
    init: Init,
    seed: u64,
) -> Result<(VideoTensor, RunReport), CliError> {
    let mut sc = cfg.sampler_config.clone();
    sc.seed = seed;
    sc.init = init.clone();
    let timeout = cfg.prior_timeout;
    Ok(match cfg.sampler {
        SamplerKind::Latino => {
            let vcm = cfg.vcm_prior.build(timeout)?;
            let icm = cfg.icm_prior.build(timeout)?;
            latino_restore(y, op, vcm.as_ref(), icm.as_ref(), &sc)?
        }
        SamplerKind::LatinoV => {
            let vcm = cfg.vcm_prior.build(timeout)?;
            latino_v_restore(y, op, vcm.as_ref(), &sc)?
        }
        SamplerKind::LatinoImage => {
            let icm = cfg.icm_prior.build(timeout)?;
            restore_frames(y, op, icm.as_ref(), &sc)?
        }
        SamplerKind::VisionXl => {
            let prior = cfg.icm_prior.build(timeout)?;
            let mut vxl = cfg.vision_xl.clone();
            vxl.seed = seed;
            vxl.init = init;
            vision_xl_restore(y, op, prior.as_ref(), &vxl)?
        }
        SamplerKind::AdmmTv => admm_tv_restore(y, op, &sc.tv_weights, sc.sigma_n, &cfg.admm)?,
    })
}

/// Runs the image loop on every frame; frame `t` uses seed `seed + t`.
/// The report combines frames: residuals add in quadrature and the NFE
/// count is that of one frame, since all frames share each evaluation.
fn restore_frames(
    y: &VideoTensor,
    op: &LinearOp,
    icm: &dyn lavino::Prior,
    sc: &lavino::samplers::SamplerConfig,
) -> lavino::Result<(VideoTensor, RunReport)> {
    let frame_op = LinearOp::new(op.kind().clone(), op.input_shape().with_frames(1))?;
    let mut frames = Vec::with_capacity(y.shape().frames);
    let mut report: Option<RunReport> = None;
    for t in 0..y.shape().frames {
        let mut fc = sc.clone();
        fc.seed = sc.seed.wrapping_add(t as u64);
        if let Init::Provided(x0) = &sc.init {
            fc.init = Init::Provided(x0.frame(t));
        }
        let (x, r) = latino_image_restore(&y.frame(t), &frame_op, icm, &fc)?;
        frames.push(x);
        report = Some(match report {
            None => r,
            Some(mut acc) => {
                acc.initial_residual = acc.initial_residual.hypot(r.initial_residual);
                for (a, b) in acc.iterations.iter_mut().zip(&r.iterations) {
                    a.residual = a.residual.hypot(b.residual);
                    a.tv += b.tv;
                    a.ms += b.ms;
                }
                acc.wall_ms += r.wall_ms;
                acc
            }
        });
    }
    let x = VideoTensor::stack(&frames)?;
    let mut report = report.expect("at least one frame");
    if let Some(last) = report.iterations.last_mut() {
        last.residual = data_residual(op, &x, y)?;
    }
    Ok((x, report))
}

pub fn cmd_restore(cfg: &ExperimentConfig, ov: &Overrides) -> Result<RestoreOutput, CliError> {
    let measurement = measurement_path(cfg, ov)?;
    if !measurement.exists() {
        return Err(field(
            "paths.measurement",
            format!("{} does not exist", measurement.display()),
        ));
    }
    let sidecar = Metadata::sidecar_path(&measurement);
    if !sidecar.exists() {
        return Err(field(
            "paths.measurement",
            format!("metadata {} is missing", sidecar.display()),
        ));
    }
    let meta = Metadata::read(&sidecar).map_err(|e| field("paths.measurement", e.to_string()))?;
    let op = meta
        .operator()
        .map_err(|e| field("paths.measurement", e.to_string()))?;
    let expected = cfg.problem.operator_kind();
    if op.kind() != &expected {
        return Err(field(
            "problem",
            format!(
                "config describes {} but the measurement was produced by {}",
                expected,
                op.kind()
            ),
        ));
    }
    let init = if cfg.init_from_file {
        let p = existing(&cfg.paths.init, "paths.init", "sampler.init = \"file\"")?;
        let x0 = load(&p)?;
        if x0.shape() != op.input_shape() {
            return Err(field(
                "paths.init",
                format!("shape {} does not match the operator input {}", x0.shape(), op.input_shape()),
            ));
        }
        Init::Provided(x0)
    } else {
        Init::PseudoInverse
    };
    let reference = match (&cfg.paths.reference, &cfg.paths.input) {
        (Some(_), _) => Some(existing(&cfg.paths.reference, "paths.reference", "metrics")?),
        (None, Some(p)) if cfg.metrics && p.exists() => Some(p.clone()),
        _ => None,
    };
    let dir = output_dir(cfg, ov)?;
    let y = load(&measurement)?;
    y.expect_shape(op.output_shape())?;
    let reference = match reference {
        Some(_) if cfg.metrics && !metrics_fit(op.input_shape()) => {
            println!(
                "metrics skipped: frames smaller than {SSIM_WINDOW}x{SSIM_WINDOW}"
            );
            None
        }
        Some(p) if cfg.metrics => {
            let r = load(&p)?;
            if r.shape() != op.input_shape() {
                return Err(field(
                    "paths.reference",
                    format!("shape {} does not match the operator input {}", r.shape(), op.input_shape()),
                ));
            }
            Some(r)
        }
        _ => None,
    };

    let seed = ov.seed.unwrap_or(cfg.sampler_config.seed);
    let (x, report) = run_sampler(cfg, &op, &y, init, seed)?;

    create_dir(&dir)?;
    save_video(&x, &dir.join("restored.vten"), VideoFormat::Raw)?;
    save_video(&x, &dir.join("frames"), VideoFormat::FrameDir)?;
    write_text(&dir.join("report.txt"), &report.to_text())?;
    let metrics = match &reference {
        Some(r) => {
            let m = MetricReport::compute(&x, r)?;
            write_text(&dir.join("metrics.txt"), &m.to_text())?;
            Some(m)
        }
        None => None,
    };
    println!(
        "{} ({}): NFE {}, residual {:.4e} -> {:.4e}, {:.0} ms",
        report.sampler,
        report.init,
        report.nfe,
        report.initial_residual,
        report.final_residual(),
        report.wall_ms
    );
    if let Some(m) = &metrics {
        println!("PSNR {:.3} dB, SSIM {:.4}", m.psnr, m.ssim);
    }
    Ok(RestoreOutput {
        restored: x,
        report,
        metrics,
        dir,
    })
}

fn metrics_fit(s: Shape) -> bool {
    s.height >= SSIM_WINDOW && s.width >= SSIM_WINDOW
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_evaluate(x: &Path, reference: &Path, output: Option<&Path>) -> Result<MetricReport, CliError> {
    for (p, name) in [(x, "restored"), (reference, "reference")] {
        if !p.exists() {
            return Err(CliError::Validation(format!("{name}: {} does not exist", p.display())));
        }
    }
    let a = load(x)?;
    let b = load(reference)?;
    let m = MetricReport::compute(&a, &b).map_err(|e| CliError::Validation(e.to_string()))?;
    let text = m.to_text();
    print!("{text}");
    if let Some(out) = output {
        let path = if out.is_dir() { out.join("metrics.txt") } else { out.to_path_buf() };
        write_text(&path, &text)?;
    }
    Ok(m)
}

pub fn cmd_verify(opts: &VerifyOptions) -> Result<Vec<Check>, CliError> {
    let checks = run_all(opts)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::Verification(failed));
    }
    Ok(checks)
}

pub fn cmd_slice(x: &Path, column: usize, output: &Path) -> Result<PathBuf, CliError> {
    if !x.exists() {
        return Err(CliError::Validation(format!("{} does not exist", x.display())));
    }
    let v = load(x)?;
    let s = slice_extract(&v, column).map_err(|e| CliError::Validation(format!("--column: {e}")))?;
    let path = if output.is_dir() {
        output.join(format!("slice_{column:05}.png"))
    } else {
        output.to_path_buf()
    };
    s.save_png(&path)?;
    println!("slice column {column} -> {}", path.display());
    Ok(path)
}

