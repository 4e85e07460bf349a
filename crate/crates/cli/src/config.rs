//! Run configuration files: TOML on disk, relative paths resolved against
//! the file's directory, then command-line overrides on top.

use std::path::{Path, PathBuf};
use std::time::Duration;

use agora_core::run::{BackendConfig, RunConfig};

use crate::Failure;

/// Flags that override the corresponding config keys.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Competition bundle directory.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_parallel: Option<usize>,
    #[arg(long)]
    pub n_drafts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
    /// Whole-run wall budget in seconds.
    #[arg(long)]
    pub run_wall: Option<f64>,
    #[arg(long)]
    pub session_wall: Option<f64>,
    #[arg(long)]
    pub cell_wall: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u32>,
}

fn duration(secs: f64, flag: &str) -> Result<Duration, Failure> {
    Duration::try_from_secs_f64(secs).map_err(|_| Failure::Config(format!("--{flag} must be a non-negative number of seconds")))
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), Failure> {
        if let Some(b) = &self.bundle {
            cfg.bundle = absolute(b)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.n_parallel {
            cfg.n_parallel = n;
        }
        if self.n_drafts.is_some() {
            cfg.n_drafts = self.n_drafts;
        }
        if self.max_iterations.is_some() {
            cfg.max_iterations = self.max_iterations;
        }
        if let Some(s) = self.run_wall {
            cfg.budget.run_wall = duration(s, "run-wall")?;
        }
        if let Some(s) = self.session_wall {
            cfg.budget.session_wall = duration(s, "session-wall")?;
        }
        if let Some(s) = self.cell_wall {
            cfg.budget.cell_wall = duration(s, "cell-wall")?;
        }
        if let Some(n) = self.max_steps {
            cfg.budget.max_steps = n;
        }
        Ok(())
    }
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Reads a TOML run config. Relative paths inside it are taken relative to
/// the file, so a config and its bundle can move together.
pub fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let base = absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(&base, &mut cfg.bundle);
    match &mut cfg.backend {
        BackendConfig::Scripted { script } => resolve(&base, script),
        BackendConfig::Replay { log } => resolve(&base, log),
        BackendConfig::Live(_) => {}
    }
    // bare program names are looked up on PATH; only paths with a separator move
    if cfg.guest.program.components().count() > 1 {
        resolve(&base, &mut cfg.guest.program);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_follow_the_file_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "bundle = \"bundle\"\nseed = 3\n\n[backend]\nkind = \"scripted\"\nscript = \"script.json\"\n\n[budget]\nrun_wall = 100\nsession_wall = 50\ncell_wall = 10\nmax_steps = 5\n",
        )
        .unwrap();
        let mut cfg = load(&path).unwrap();
        assert_eq!(cfg.bundle, dir.path().join("bundle"));
        assert_eq!(cfg.backend, BackendConfig::Scripted { script: dir.path().join("script.json") });
        assert_eq!(cfg.guest.program, PathBuf::from("python3"));
        let o = Overrides {
            seed: Some(9),
            max_steps: Some(2),
            run_wall: Some(60.0),
            ..Default::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!((cfg.seed, cfg.budget.max_steps), (9, 2));
        assert_eq!(cfg.budget.run_wall, Duration::from_secs(60));
        assert!(Overrides { cell_wall: Some(-1.0), ..Default::default() }.apply(&mut cfg).is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "bundle = \"b\"\nparallel = 3\n[backend]\nkind = \"scripted\"\nscript = \"s\"\n").unwrap();
        assert!(matches!(load(&path), Err(Failure::Config(_))));
    }
}
