//! Operating-system resource caps for guest processes. Best effort: a cap
//! the platform refuses is skipped, and the skip is logged by the host.

use std::process::Command;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceLimits {
    /// Address-space cap in bytes.
    #[serde(default)]
    pub memory_bytes: Option<u64>,
    /// Guest is pinned to this many CPUs.
    #[serde(default)]
    pub cpu_count: Option<usize>,
    /// CPU-time cap in seconds.
    #[serde(default)]
    pub cpu_seconds: Option<u64>,
}

impl ResourceLimits {
    pub fn is_empty(&self) -> bool {
        self.memory_bytes.is_none() && self.cpu_count.is_none() && self.cpu_seconds.is_none()
    }

    /// Arranges for the caps to be applied in the child before exec.
    pub fn apply(&self, cmd: &mut Command) {
        if self.is_empty() {
            return;
        }
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cpus = self.cpu_count.map(|n| n.clamp(1, available));
        if let Some(n) = cpus {
            for var in ["OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"] {
                cmd.env(var, n.to_string());
            }
        }
        if !cfg!(target_os = "linux") {
            warn!("resource caps other than thread env vars are unsupported on this platform");
            return;
        }
        info!(?self, "applying guest resource caps");
        let memory = self.memory_bytes;
        let cpu_secs = self.cpu_seconds;
        #[cfg(target_os = "linux")]
        {
            use std::os::unix::process::CommandExt;
            // SAFETY: the closure only issues async-signal-safe syscalls and
            // ignores their failures.
            unsafe {
                cmd.pre_exec(move || {
                    if let Some(bytes) = memory {
                        let lim = libc::rlimit {
                            rlim_cur: bytes as libc::rlim_t,
                            rlim_max: bytes as libc::rlim_t,
                        };
                        libc::setrlimit(libc::RLIMIT_AS, &lim);
                    }
                    if let Some(secs) = cpu_secs {
                        let lim = libc::rlimit {
                            rlim_cur: secs as libc::rlim_t,
                            rlim_max: secs as libc::rlim_t,
                        };
                        libc::setrlimit(libc::RLIMIT_CPU, &lim);
                    }
                    if let Some(n) = cpus {
                        let mut set: libc::cpu_set_t = std::mem::zeroed();
                        for cpu in 0..n {
                            libc::CPU_SET(cpu, &mut set);
                        }
                        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
                    }
                    Ok(())
                });
            }
        }
    }
}
