//! Echo prior speaking the external-prior protocol on stdin/stdout.
//!
//! The consistency map is the identity; the noise predictor is the matching
//! Tweedie inversion on the default schedule. Fault injection flags:
//!
//! * `--latent T,H,W,C`  announce a fixed latent shape
//! * `--wrong-length`    answer the first request with a short payload and exit
//! * `--die-after N`     exit without answering request number `N` (1-based)
//! * `--hang-after N`    stop responding at request number `N`
//! * `--model NAME`      accept `NAME` instead of `echo`

use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::time::Duration;

use lavino::priors::protocol::{self, Opcode};
use lavino::priors::AlphaSchedule;
use lavino::tensor::Shape;

#[derive(Default)]
struct Options {
    model: Option<String>,
    latent: Option<Shape>,
    wrong_length: bool,
    die_after: Option<usize>,
    hang_after: Option<usize>,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options::default();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut value = |name: &str| args.next().ok_or(format!("{name} needs a value"));
        match a.as_str() {
            "--model" => opts.model = Some(value("--model")?),
            "--latent" => {
                let v = value("--latent")?;
                let d: Vec<usize> = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|e| format!("--latent: {e}")))
                    .collect::<Result<_, _>>()?;
                if d.len() != 4 {
                    return Err("--latent takes T,H,W,C".into());
                }
                opts.latent = Some(Shape::new(d[0], d[1], d[2], d[3]));
            }
            "--wrong-length" => opts.wrong_length = true,
            "--die-after" => {
                opts.die_after = Some(value("--die-after")?.parse().map_err(|e| format!("{e}"))?)
            }
            "--hang-after" => {
                opts.hang_after = Some(value("--hang-after")?.parse().map_err(|e| format!("{e}"))?)
            }
            other => return Err(format!("unknown flag {other}")),
        }
    }
    Ok(opts)
}

fn run(opts: Options) -> lavino::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut r = BufReader::new(stdin.lock());
    let mut w = BufWriter::new(stdout.lock());
    let schedule = AlphaSchedule::default();
    let accepted = opts.model.as_deref().unwrap_or("echo");

    let model = protocol::read_hello(&mut r)?;
    if model != accepted {
        protocol::write_hello_error(&mut w, &format!("unknown model '{model}'"))?;
        return Ok(());
    }
    protocol::write_hello_reply(&mut w, opts.latent)?;

    let mut count = 0;
    while let Some(req) = protocol::read_request(&mut r)? {
        count += 1;
        if opts.die_after == Some(count) {
            std::process::exit(3);
        }
        if opts.hang_after == Some(count) {
            loop {
                std::thread::sleep(Duration::from_secs(3600));
            }
        }
        if opts.wrong_length {
            let mut bytes = protocol::encode_response_ok(&req.tensor);
            bytes.truncate(bytes.len() - 8);
            w.write_all(&bytes).and_then(|_| w.flush()).ok();
            return Ok(());
        }
        let t = req.timestep as usize;
        if schedule.check_timestep(t).is_err() {
            protocol::write_response_error(&mut w, &format!("timestep {t} out of range"))?;
            continue;
        }
        match req.opcode {
            Opcode::Consistency => protocol::write_response_ok(&mut w, &req.tensor)?,
            Opcode::EpsPredict => {
                let a = schedule.alpha_bar(t);
                let eps = req.tensor.map(|z| (z - a.sqrt() * z) / (1.0 - a).sqrt());
                protocol::write_response_ok(&mut w, &eps)?
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("lavino-echo-prior: {e}");
            return ExitCode::from(1);
        }
    };
    match run(opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lavino-echo-prior: {e}");
            ExitCode::from(2)
        }
    }
}
