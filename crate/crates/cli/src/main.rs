use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod report;

#[derive(Parser)]
#[command(name = "bohmlab", version, about = "Bohmian trajectories, measurement experiments and no-go checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON parameter file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of trials (each command has its own default).
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory for the JSON summary and CSV detail.
    #[arg(long, default_value = "bohmlab-out")]
    pub out: PathBuf,
    /// Worker threads, 0 = all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Quantum equilibrium: |ψ|²-distributed ensembles stay |ψ_t|²-distributed
    /// along trajectories (trap superposition, free Gaussian, t = 0 control).
    Equivariance {
        #[command(flatten)]
        common: Common,
        /// trap, free or control; all three when omitted.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Two particles with an interaction: exact linear trajectories
    /// X_t = a(t)X + b(t)Y against the integrated ones.
    CoupledOscillator {
        #[command(flatten)]
        common: Common,
    },
    /// Stern-Gerlach spin measurement: outcome frequencies, packet moments
    /// and the Green's-function oracle.
    SternGerlach {
        #[command(flatten)]
        common: Common,
        /// |α|², weight of spin up.
        #[arg(long)]
        alpha2: Option<f64>,
    },
    /// Momentum measured by time of flight: mX_T/T against |ψ̃(p)|².
    TimeOfFlight {
        #[command(flatten)]
        common: Common,
    },
    /// Rotating ground-state paradox in a 2D trap: X_τ has the law of X₀
    /// although individual particles moved.
    Oscillator2d {
        #[command(flatten)]
        common: Common,
    },
    /// EPRB with two Stern-Gerlach magnets on the singlet: anticorrelations
    /// and the dependence of one wing's result on the far setting.
    Eprb {
        #[command(flatten)]
        common: Common,
    },
    /// Bell's inequality for the singlet and LP infeasibility of local
    /// value assignments.
    Bell {
        #[command(flatten)]
        common: Common,
        /// Angle between successive coplanar settings, in degrees.
        #[arg(long)]
        angles: Option<f64>,
    },
    /// Hardy's nonlocality without inequalities: optimal state search and
    /// certificates.
    Hardy {
        #[command(flatten)]
        common: Common,
    },
    /// Operator formalism checks: sequential measurements, POVM closure and
    /// density-matrix consistency.
    FormalismSuite {
        #[command(flatten)]
        common: Common,
    },
    /// POVM of a Stern-Gerlach experiment by grid quadrature as the flight
    /// time doubles.
    PovmExtract {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Equivariance { common, scenario } => commands::equivariance(common, scenario.as_deref()),
        Command::CoupledOscillator { common } => commands::coupled_oscillator(common),
        Command::SternGerlach { common, alpha2 } => commands::stern_gerlach(common, *alpha2),
        Command::TimeOfFlight { common } => commands::time_of_flight(common),
        Command::Oscillator2d { common } => commands::oscillator2d(common),
        Command::Eprb { common } => commands::eprb(common),
        Command::Bell { common, angles } => commands::bell(common, *angles),
        Command::Hardy { common } => commands::hardy(common),
        Command::FormalismSuite { common } => commands::formalism_suite(common),
        Command::PovmExtract { common } => commands::povm_extract(common),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
