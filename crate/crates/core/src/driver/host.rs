use std::collections::BTreeSet;
use std::thread;

use serde::{Deserialize, Serialize};

/// Machine description recorded with each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub hostname: String,
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub physical_cores: usize,
}

impl HostInfo {
    pub fn detect() -> Self {
        HostInfo {
            hostname: hostname(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: logical_cpus(),
            physical_cores: physical_cores(),
        }
    }
}

fn hostname() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .map(|s| s.trim().to_string())
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "unknown".to_string())
}

fn logical_cpus() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Physical cores, not counting hyperthread siblings. Falls back to the
/// logical CPU count where the topology cannot be read.
pub fn physical_cores() -> usize {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| count_cores(&s))
        .unwrap_or_else(logical_cpus)
}

fn count_cores(cpuinfo: &str) -> Option<usize> {
    let mut cores = BTreeSet::new();
    for block in cpuinfo.split("\n\n") {
        let field = |name: &str| {
            block.lines().find_map(|line| {
                let (k, v) = line.split_once(':')?;
                (k.trim() == name).then(|| v.trim().to_string())
            })
        };
        if let (Some(package), Some(core)) = (field("physical id"), field("core id")) {
            cores.insert((package, core));
        }
    }
    (!cores.is_empty()).then_some(cores.len())
}
