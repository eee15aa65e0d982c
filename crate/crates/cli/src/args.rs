use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lyapcert::metric::Variant;

use crate::config::{Command, RunConfig};

/// Lyapunov certificates from first-order approximations.
///
/// Every option can also be set through an environment variable with the
/// `LYAPCERT_` prefix; the command line wins.
#[derive(Debug, Parser)]
#[command(name = "lyapcert", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Decay envelopes, gain functions and linearized decay.
    Analyze(Options),
    /// Metric on the grid with residuals and eigenvalue bounds.
    Metric(Options),
    /// V on the grid with the Dini decrease certificate.
    Certify(Options),
    /// Killing-field controller synthesis, then certification of the closed loop.
    Stabilize(Options),
}

#[derive(Debug, Args)]
pub struct Options {
    /// Catalog name, `linear:<file.json>` or a system document path.
    #[arg(long, env = "LYAPCERT_SYSTEM")]
    pub system: String,
    /// Row-major Q, comma separated [default: the document's Q, else identity].
    #[arg(long = "Q", env = "LYAPCERT_Q", value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    /// Integration and metric tolerance [default: 1e-10].
    #[arg(long, env = "LYAPCERT_TOL")]
    pub tol: Option<f64>,
    /// Residual eigenvalue tolerance [default: 1e-4].
    #[arg(long, env = "LYAPCERT_CHECK_TOL")]
    pub check_tol: Option<f64>,
    /// Trajectory horizon [default: 20].
    #[arg(long, env = "LYAPCERT_HORIZON")]
    pub horizon: Option<f64>,
    /// Radii grid, comma separated [default: 0.5,1,2].
    #[arg(long, env = "LYAPCERT_RADII", value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Samples per radius or box [default: 8].
    #[arg(long, env = "LYAPCERT_SAMPLES")]
    pub samples: Option<usize>,
    /// Per-axis grid, comma separated [default: -2,-1,0.5,1,2].
    #[arg(long, env = "LYAPCERT_GRID", value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// origin | along-solutions | transverse | rescaled [default: along-solutions].
    #[arg(long, env = "LYAPCERT_VARIANT")]
    pub variant: Option<Variant>,
    /// Controller gain λ [default: 1].
    #[arg(long, env = "LYAPCERT_LAMBDA_GAIN")]
    pub lambda_gain: Option<f64>,
    /// Worker threads [default: all cores].
    #[arg(long, env = "LYAPCERT_THREADS")]
    pub threads: Option<usize>,
    /// Output directory [default: out].
    #[arg(long, env = "LYAPCERT_OUT")]
    pub out: Option<PathBuf>,
    /// Sampling seed [default: 0].
    #[arg(long, env = "LYAPCERT_SEED")]
    pub seed: Option<u64>,
    /// Parameter override `name=value`; repeatable.
    #[arg(long = "param", env = "LYAPCERT_PARAMS", value_delimiter = ',', value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("`{value}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

impl Options {
    pub fn into_config(self, command: Command) -> RunConfig {
        let mut c = RunConfig::new(command, self.system);
        c.q = self.q;
        c.tol = self.tol.unwrap_or(c.tol);
        c.check_tol = self.check_tol.unwrap_or(c.check_tol);
        c.horizon = self.horizon.unwrap_or(c.horizon);
        c.radii = self.radii.unwrap_or(c.radii);
        c.samples = self.samples.unwrap_or(c.samples);
        c.grid = self.grid.unwrap_or(c.grid);
        c.variant = self.variant.unwrap_or(c.variant);
        c.lambda_gain = self.lambda_gain.unwrap_or(c.lambda_gain);
        c.threads = self.threads;
        c.out = self.out.unwrap_or(c.out);
        c.seed = self.seed.unwrap_or(c.seed);
        c.params = self.params;
        c
    }
}

impl Cli {
    pub fn into_config(self) -> RunConfig {
        match self.command {
            Sub::Analyze(o) => o.into_config(Command::Analyze),
            Sub::Metric(o) => o.into_config(Command::Metric),
            Sub::Certify(o) => o.into_config(Command::Certify),
            Sub::Stabilize(o) => o.into_config(Command::Stabilize),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunConfig {
        Cli::try_parse_from(args).unwrap().into_config()
    }

    #[test]
    fn defaults_match_config() {
        let c = parse(&["lyapcert", "analyze", "--system", "scalar-example"]);
        assert_eq!(c, RunConfig::new(Command::Analyze, "scalar-example"));
    }

    #[test]
    fn lists_with_negative_values() {
        let c = parse(&[
            "lyapcert", "certify", "--system", "s", "--grid", "-2,-1,0.5", "--Q", "2,0,0,1", "--radii", "1,3",
            "--variant", "origin", "--param", "lam=2", "--param", "mu=1",
        ]);
        assert_eq!(c.grid, vec![-2.0, -1.0, 0.5]);
        assert_eq!(c.q, Some(vec![2.0, 0.0, 0.0, 1.0]));
        assert_eq!(c.radii, vec![1.0, 3.0]);
        assert_eq!(c.variant, Variant::Origin);
        assert_eq!(c.params, vec![("lam".into(), 2.0), ("mu".into(), 1.0)]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Cli::try_parse_from(["lyapcert", "metric", "--system", "s", "--variant", "curved"]).is_err());
        assert!(Cli::try_parse_from(["lyapcert", "metric", "--system", "s", "--param", "lam"]).is_err());
        assert!(Cli::try_parse_from(["lyapcert", "metric"]).is_err());
    }
}
