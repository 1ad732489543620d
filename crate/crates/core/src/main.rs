//! Command line front end: estimation, region queries, radius curves,
//! rate reports, and config-driven experiments.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use secure_estimation::error::{Error, Result};
use secure_estimation::estimators::{
    estimate_lasso_full, estimate_least_squares, estimate_optimal, estimate_trimmed_mean,
    EstimateReport,
};
use secure_estimation::geometry::{build_region, chebyshev, radius_curve, CHEB_DEFAULT_TOL};
use secure_estimation::harness::{float_range, load_config, run_experiment_with_workers};
use secure_estimation::model::SensorModel;
use secure_estimation::rates::{u_of_y_delta, upper_bound_rate, RateReport};

#[derive(Parser)]
#[command(
    name = "secure-estimation",
    version,
    about = "Resilient state estimation with up to q compromised sensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Method {
    /// Chebyshev center of the widest region that fits in a delta-ball.
    Optimal,
    /// Trimmed mean; identical sensors only.
    Trimmed,
    /// Weighted least squares over all sensors.
    Ls,
    /// Least squares with an L1-penalized per-sensor bias.
    Lasso,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the state from one averaged measurement.
    Estimate {
        /// Sensor model JSON file.
        #[arg(long)]
        model: PathBuf,
        /// Measurement as comma-separated values, e.g. "4,-4,5,-5".
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, value_enum, default_value_t = Method::Optimal)]
        method: Method,
        /// Accuracy radius; required by the optimal method.
        #[arg(long)]
        delta: Option<f64>,
        /// Level-search accuracy for the optimal method.
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// L1 penalty weight for the lasso method.
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        /// Averaging horizon behind the measurement (lasso weighting).
        #[arg(long, default_value_t = 1)]
        k: u32,
    },
    /// Describe the confidence region at one inconsistency level.
    Region {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        /// Inconsistency level.
        #[arg(long)]
        phi: f64,
    },
    /// Chebyshev radius of the region across a range of levels, as CSV.
    RadiusCurve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        /// Levels as start:stop:step, e.g. "3.6:30:0.05".
        #[arg(long)]
        phis: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decay-rate bound for the worst-case error probability.
    Rates {
        #[arg(long)]
        model: PathBuf,
        /// Measurement to evaluate the attained level on (needs --delta).
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        /// Accuracy radius.
        #[arg(long)]
        delta: Option<f64>,
        /// Level-search accuracy for the attained level.
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Emit a delta,u_bar CSV over start:stop:step instead of JSON.
        #[arg(long)]
        sweep_delta: Option<String>,
        /// Write the sweep CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a config-driven experiment, writing CSV plus a metadata sidecar.
    Simulate {
        /// Experiment config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Worker thread count; also settable via SSE_WORKERS.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let values = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {t:?} in vector")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(Error::InvalidArgument(format!(
            "range {text:?} must look like start:stop:step"
        )));
    };
    let parse = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad number {t:?} in range")))
    };
    float_range(parse(start)?, parse(stop)?, parse(step)?)
}

fn emit(output: Option<&PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct PieceOut {
    subset: Vec<usize>,
    center: Vec<f64>,
    level: f64,
}

#[derive(Serialize)]
struct RegionOut {
    phi: f64,
    empty: bool,
    pieces: Vec<PieceOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chebyshev_center: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate {
            model,
            y,
            method,
            delta,
            eps,
            lambda,
            k,
        } => {
            let model = SensorModel::from_json_file(&model)?;
            let y = parse_vector(&y)?;
            let report = match method {
                Method::Optimal => {
                    let delta = delta.ok_or_else(|| {
                        Error::InvalidArgument("--delta is required for the optimal method".into())
                    })?;
                    estimate_optimal(&model, &y, delta, eps)?
                }
                Method::Trimmed => {
                    let value = estimate_trimmed_mean(&model, &y)?;
                    EstimateReport::plain("trimmed_mean", DVector::from_element(1, value), 0)
                }
                Method::Ls => {
                    EstimateReport::plain("least_squares", estimate_least_squares(&model, &y)?, 0)
                }
                Method::Lasso => {
                    let sol = estimate_lasso_full(&model, &y, k, lambda, 1e-10)?;
                    EstimateReport::plain("lasso", sol.x, sol.iterations)
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Region { model, y, phi } => {
            let model = SensorModel::from_json_file(&model)?;
            let y = parse_vector(&y)?;
            let region = build_region(&model, &y, phi)?;
            let pieces = region
                .pieces
                .iter()
                .map(|p| PieceOut {
                    subset: p.subset.clone(),
                    center: p.center.as_slice().to_vec(),
                    level: p.level,
                })
                .collect();
            let (chebyshev_center, radius) = if region.is_empty() {
                (None, None)
            } else {
                let (c, r) = chebyshev(&region, CHEB_DEFAULT_TOL)?;
                (Some(c.as_slice().to_vec()), Some(r))
            };
            let out = RegionOut {
                phi,
                empty: region.is_empty(),
                pieces,
                chebyshev_center,
                radius,
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::RadiusCurve {
            model,
            y,
            phis,
            output,
        } => {
            let model = SensorModel::from_json_file(&model)?;
            let y = parse_vector(&y)?;
            let phis = parse_range(&phis)?;
            let mut csv = String::from("phi,radius\n");
            for (phi, radius) in radius_curve(&model, &y, &phis)? {
                match radius {
                    Some(r) => csv.push_str(&format!("{phi},{r}\n")),
                    None => csv.push_str(&format!("{phi},\n")),
                }
            }
            emit(output.as_ref(), &csv)?;
        }
        Command::Rates {
            model,
            y,
            delta,
            eps,
            sweep_delta,
            output,
        } => {
            let model = SensorModel::from_json_file(&model)?;
            let (u_bar_1, argmin_support) = upper_bound_rate(&model);
            if u_bar_1 == 0.0 {
                eprintln!(
                    "warning: a reduced sensor block loses rank; the decay bound is vacuous"
                );
            }
            if let Some(range) = sweep_delta {
                let mut csv = String::from("delta,u_bar\n");
                for d in parse_range(&range)? {
                    csv.push_str(&format!("{d},{}\n", d * d * u_bar_1));
                }
                emit(output.as_ref(), &csv)?;
                return Ok(());
            }
            let mut report = RateReport {
                u_bar_1,
                argmin_support,
                delta,
                u_bar_delta: delta.map(|d| d * d * u_bar_1),
                u_y_delta: None,
                empirical_rate: None,
            };
            if let Some(text) = y {
                let delta = delta.ok_or_else(|| {
                    Error::InvalidArgument("--delta is required alongside --y".into())
                })?;
                report.u_y_delta = Some(u_of_y_delta(&model, &parse_vector(&text)?, delta, eps)?);
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate { config, workers } => {
            let config = load_config(&config)?;
            let summary = run_experiment_with_workers(&config, workers)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
