use std::fs;
use std::io::Write;
use std::process::ExitCode;

use anyhow::{Context, Result};
use elm_core::lagrangian::estimate_wave_speed;
use elm_core::mlp::{sample_plane_waves, save_density, train, TrainConfig};
use elm_core::Error;

use crate::output::divergence_line;
use crate::TrainArgs;

pub fn run(args: TrainArgs) -> Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<TrainConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(s) = args.steps {
        config.steps = s;
    }
    if let Some(s) = args.samples {
        config.samples = s;
    }
    if let Some(d) = args.spatial_dim {
        config.waves.spatial_dim = d;
    }
    config.validate()?;

    let samples = sample_plane_waves(config.samples, &config.waves, config.seed);
    let trained = match train(&config, &samples) {
        Ok(t) => t,
        Err(Error::TrainingDiverged { step, loss }) => {
            let msg = format!("loss became {loss}");
            eprintln!("{}", divergence_line("train", step, f64::NAN, &msg));
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_density(&trained.density, &args.out.join("model.elmd"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in trained.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.17e}\n"));
    }
    fs::File::create(args.out.join("loss.csv"))?.write_all(csv.as_bytes())?;

    let last = trained.losses.last().copied().unwrap_or(f64::NAN);
    let c2 = estimate_wave_speed(&trained.density)?;
    println!("final batch loss {last:.3e}, estimated c² {c2:.5} (target {})", config.waves.c2);
    println!("wrote {}", args.out.join("model.elmd").display());
    Ok(ExitCode::SUCCESS)
}
