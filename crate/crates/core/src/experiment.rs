//! Experiment orchestration: seeded replicas (optionally in parallel),
//! per-replica CSV output, summary aggregation, and mode comparison.
//!
//! Aggregates are computed by reading the per-replica CSV files back, so
//! anything in a summary is bit-exactly recomputable from the raw files.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::node::Mode;
use crate::scenario::Scenario;
use crate::sim::metrics::{Category, Metrics};
use crate::sim::world::{run_replica, World};

/// Command-line overrides applied on top of a scenario file.
#[derive(Clone, Copy, Default, Debug)]
pub struct Overrides {
    pub replicas: Option<u32>,
    pub duration_s: Option<u32>,
    pub warmup_s: Option<u32>,
    pub seed: Option<u64>,
    pub update_period_s: Option<u32>,
    pub flow_capacity: Option<usize>,
}

pub fn apply_overrides(sc: &mut Scenario, o: &Overrides) {
    if let Some(v) = o.replicas {
        sc.run.replicas = v;
    }
    if let Some(v) = o.duration_s {
        sc.run.duration_s = v;
    }
    if let Some(v) = o.warmup_s {
        sc.run.warmup_s = v;
    }
    if let Some(v) = o.seed {
        sc.run.base_seed = v;
    }
    if let Some(v) = o.update_period_s {
        sc.sdn.update_period_s = v;
    }
    if let Some(v) = o.flow_capacity {
        sc.sdn.flow_table_capacity = v;
        sc.rpl.routing_capacity = v;
    }
}

pub fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Sdn => "sdn",
        Mode::RplBaseline => "rpl",
    }
}

/// Per-replica numbers carried into summaries (parsed back from CSV).
#[derive(Clone, Debug, Default)]
pub struct ReplicaRow {
    pub replica: u32,
    pub control_frames_steady: u64,
    pub control_bytes_steady: u64,
    pub data_bytes_steady: u64,
    pub miss_requests_steady: u64,
    pub dao_datagrams: u64,
    pub rtt_n_steady: u64,
    pub rtt_mean_us: f64,
    pub rtt_p50_us: u64,
    pub rtt_p90_us: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Aggregate {
    pub mean: f64,
    pub stddev: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub mode: Mode,
    pub rows: Vec<ReplicaRow>,
    pub control_bytes: Aggregate,
    pub rtt_mean_us: Aggregate,
}

/// Two-sided 97.5% Student t quantile for small samples (plain z beyond
/// the table).
fn t_critical(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        return f64::INFINITY;
    }
    if df <= TABLE.len() {
        TABLE[df - 1]
    } else {
        1.96
    }
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Aggregate {
            mean,
            stddev: 0.0,
            ci95_lo: mean,
            ci95_hi: mean,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stddev = var.sqrt();
    let half = t_critical(n - 1) * stddev / (n as f64).sqrt();
    Aggregate {
        mean,
        stddev,
        ci95_lo: mean - half,
        ci95_hi: mean + half,
    }
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    // Nearest-rank.
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn replica_file(out: &Path, kind: &str, mode: Mode, replica: u32) -> PathBuf {
    out.join(format!("{kind}_{}_r{replica:03}.csv", mode_label(mode)))
}

fn write_replica_csvs(out: &Path, mode: Mode, replica: u32, m: &Metrics) -> io::Result<()> {
    let mut f = fs::File::create(replica_file(out, "metrics", mode, replica))?;
    writeln!(f, "window,category,frames,bytes")?;
    for steady in [false, true] {
        let w = if steady { "steady" } else { "warmup" };
        for cat in Category::ALL {
            let c = m.counter(steady, cat);
            writeln!(f, "{w},{},{},{}", cat.label(), c.frames, c.bytes)?;
        }
    }
    writeln!(f, "warmup,miss_requests,{},0", m.miss_requests_warmup)?;
    writeln!(f, "steady,miss_requests,{},0", m.miss_requests_steady)?;
    writeln!(f, "all,dao_datagrams,{},0", m.dao_datagrams_created)?;
    writeln!(f, "all,channel_transmissions,{},0", m.channel.transmissions)?;
    writeln!(f, "all,channel_rx_opportunities,{},0", m.channel.rx_opportunities)?;
    writeln!(f, "all,channel_delivered,{},0", m.channel.delivered)?;
    writeln!(f, "all,channel_lost_to_draw,{},0", m.channel.lost_to_draw)?;
    writeln!(f, "all,channel_collided,{},0", m.channel.collided)?;

    let mut f = fs::File::create(replica_file(out, "rtt", mode, replica))?;
    writeln!(
        f,
        "replica,send_time_us,rtt_us,src,dst,req_hops,rep_hops,req_path"
    )?;
    for s in &m.rtt {
        let path: Vec<String> = s.req_path.iter().map(|a| a.to_string()).collect();
        writeln!(
            f,
            "{replica},{},{},{},{},{},{},{}",
            s.send_time_us,
            s.rtt_us,
            s.src,
            s.dst,
            s.req_hops,
            s.rep_hops,
            path.join("-")
        )?;
    }

    let mut f = fs::File::create(replica_file(out, "diag", mode, replica))?;
    writeln!(f, "cause,count")?;
    for (cause, count) in &m.diags {
        writeln!(f, "{},{}", cause.label(), count)?;
    }
    Ok(())
}

fn read_csv_rows(path: &Path) -> io::Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect())
}

/// Rebuild a replica's summary row from its CSV files.
fn row_from_csvs(out: &Path, mode: Mode, replica: u32, warmup_us: u64) -> io::Result<ReplicaRow> {
    let mut row = ReplicaRow {
        replica,
        ..Default::default()
    };
    for cols in read_csv_rows(&replica_file(out, "metrics", mode, replica))? {
        let frames: u64 = cols[2].parse().unwrap_or(0);
        let bytes: u64 = cols[3].parse().unwrap_or(0);
        match (cols[0].as_str(), cols[1].as_str()) {
            ("steady", "miss_requests") => row.miss_requests_steady = frames,
            ("all", "dao_datagrams") => row.dao_datagrams = frames,
            ("steady", "data") => row.data_bytes_steady = bytes,
            ("steady", cat) if !cat.starts_with("channel_") => {
                row.control_frames_steady += frames;
                row.control_bytes_steady += bytes;
            }
            _ => {}
        }
    }
    let mut rtts: Vec<u64> = Vec::new();
    for cols in read_csv_rows(&replica_file(out, "rtt", mode, replica))? {
        let send: u64 = cols[1].parse().unwrap_or(0);
        if send >= warmup_us {
            rtts.push(cols[2].parse().unwrap_or(0));
        }
    }
    rtts.sort_unstable();
    row.rtt_n_steady = rtts.len() as u64;
    row.rtt_mean_us = if rtts.is_empty() {
        0.0
    } else {
        rtts.iter().sum::<u64>() as f64 / rtts.len() as f64
    };
    row.rtt_p50_us = percentile(&rtts, 0.50);
    row.rtt_p90_us = percentile(&rtts, 0.90);
    Ok(row)
}

fn write_summary(out: &Path, mode: Mode, rows: &[ReplicaRow]) -> io::Result<()> {
    let mut f = fs::File::create(out.join(format!("summary_{}.csv", mode_label(mode))))?;
    writeln!(
        f,
        "replica,control_frames_steady,control_bytes_steady,data_bytes_steady,\
         miss_requests_steady,dao_datagrams,rtt_n_steady,rtt_mean_us,rtt_p50_us,rtt_p90_us"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{:.3},{},{}",
            r.replica,
            r.control_frames_steady,
            r.control_bytes_steady,
            r.data_bytes_steady,
            r.miss_requests_steady,
            r.dao_datagrams,
            r.rtt_n_steady,
            r.rtt_mean_us,
            r.rtt_p50_us,
            r.rtt_p90_us
        )?;
    }
    Ok(())
}

fn write_aggregates(
    out: &Path,
    mode: Mode,
    control: &Aggregate,
    rtt: &Aggregate,
) -> io::Result<()> {
    let mut f = fs::File::create(out.join(format!("aggregate_{}.csv", mode_label(mode))))?;
    writeln!(f, "metric,mean,stddev,ci95_lo,ci95_hi")?;
    for (name, a) in [("control_bytes_steady", control), ("rtt_mean_us", rtt)] {
        writeln!(
            f,
            "{name},{:.3},{:.3},{:.3},{:.3}",
            a.mean, a.stddev, a.ci95_lo, a.ci95_hi
        )?;
    }
    Ok(())
}

fn write_ecdf(out: &Path, label: &str, mut rtts: Vec<u64>) -> io::Result<()> {
    rtts.sort_unstable();
    let mut f = fs::File::create(out.join(format!("ecdf_{label}.csv")))?;
    writeln!(f, "rtt_us,fraction")?;
    let n = rtts.len();
    for (i, v) in rtts.iter().enumerate() {
        // Last occurrence of each distinct value carries the step height.
        if i + 1 == n || rtts[i + 1] != *v {
            writeln!(f, "{v},{:.6}", (i + 1) as f64 / n as f64)?;
        }
    }
    Ok(())
}

fn pooled_steady_rtts(out: &Path, mode: Mode, replicas: u32, warmup_us: u64) -> io::Result<Vec<u64>> {
    let mut rtts = Vec::new();
    for r in 0..replicas {
        for cols in read_csv_rows(&replica_file(out, "rtt", mode, r))? {
            let send: u64 = cols[1].parse().unwrap_or(0);
            if send >= warmup_us {
                rtts.push(cols[2].parse().unwrap_or(0));
            }
        }
    }
    Ok(rtts)
}

/// Run every replica of the scenario in the given mode, write the CSV
/// artifacts under `out`, and return the summary.
pub fn run_experiment(
    scenario: &Scenario,
    mode: Mode,
    jobs: usize,
    out: &Path,
    dump_topology: bool,
) -> io::Result<ExperimentSummary> {
    fs::create_dir_all(out)?;
    let replicas = scenario.run.replicas;
    let results = run_replicas_parallel(scenario, mode, replicas, jobs);
    for (replica, metrics) in &results {
        write_replica_csvs(out, mode, *replica, metrics)?;
    }
    if dump_topology && mode == Mode::Sdn {
        let world = World::new(scenario, mode, scenario.run.base_seed)
            .run_until(scenario.run.duration_s as u64 * 1_000_000);
        fs::write(
            out.join(format!("topology_{}.txt", mode_label(mode))),
            world.topology_dump(),
        )?;
    }
    summarize_dir(scenario, mode, out)
}

/// Build the summary strictly from the CSV files in `out`.
pub fn summarize_dir(
    scenario: &Scenario,
    mode: Mode,
    out: &Path,
) -> io::Result<ExperimentSummary> {
    let warmup_us = scenario.run.warmup_s as u64 * 1_000_000;
    let replicas = scenario.run.replicas;
    let mut rows = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        rows.push(row_from_csvs(out, mode, r, warmup_us)?);
    }
    write_summary(out, mode, &rows)?;
    let control = aggregate(&rows.iter().map(|r| r.control_bytes_steady as f64).collect::<Vec<_>>());
    let rtt = aggregate(&rows.iter().map(|r| r.rtt_mean_us).collect::<Vec<_>>());
    write_aggregates(out, mode, &control, &rtt)?;
    write_ecdf(
        out,
        mode_label(mode),
        pooled_steady_rtts(out, mode, replicas, warmup_us)?,
    )?;
    Ok(ExperimentSummary {
        mode,
        rows,
        control_bytes: control,
        rtt_mean_us: rtt,
    })
}

fn run_replicas_parallel(
    scenario: &Scenario,
    mode: Mode,
    replicas: u32,
    jobs: usize,
) -> Vec<(u32, Metrics)> {
    let jobs = jobs.max(1);
    if jobs == 1 || replicas <= 1 {
        return (0..replicas)
            .map(|r| (r, run_replica(scenario, mode, r)))
            .collect();
    }
    let mut results: Vec<(u32, Metrics)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..jobs as u32 {
            let sc = &*scenario;
            handles.push(scope.spawn(move || {
                let mut part = Vec::new();
                let mut r = worker;
                while r < replicas {
                    part.push((r, run_replica(sc, mode, r)));
                    r += jobs as u32;
                }
                part
            }));
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("replica thread"))
            .collect()
    });
    results.sort_by_key(|(r, _)| *r);
    results
}

/// Load the summary rows previously written to a run directory; the mode
/// is discovered from the summary file name.
pub fn load_summary_rows(dir: &Path) -> io::Result<(String, Vec<ReplicaRow>)> {
    for label in ["sdn", "rpl"] {
        let path = dir.join(format!("summary_{label}.csv"));
        if path.exists() {
            let mut rows = Vec::new();
            for cols in read_csv_rows(&path)? {
                rows.push(ReplicaRow {
                    replica: cols[0].parse().unwrap_or(0),
                    control_frames_steady: cols[1].parse().unwrap_or(0),
                    control_bytes_steady: cols[2].parse().unwrap_or(0),
                    data_bytes_steady: cols[3].parse().unwrap_or(0),
                    miss_requests_steady: cols[4].parse().unwrap_or(0),
                    dao_datagrams: cols[5].parse().unwrap_or(0),
                    rtt_n_steady: cols[6].parse().unwrap_or(0),
                    rtt_mean_us: cols[7].parse().unwrap_or(0.0),
                    rtt_p50_us: cols[8].parse().unwrap_or(0),
                    rtt_p90_us: cols[9].parse().unwrap_or(0),
                });
            }
            return Ok((label.to_string(), rows));
        }
    }
    Err(io::Error::new(
        io::ErrorKind::NotFound,
        format!("no summary_*.csv in {dir:?}"),
    ))
}

fn pooled_rtts_from_dir(dir: &Path, label: &str) -> io::Result<Vec<u64>> {
    let mut rtts = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&format!("rtt_{label}_")) && n.ends_with(".csv"))
        })
        .collect();
    entries.sort();
    for path in entries {
        for cols in read_csv_rows(&path)? {
            rtts.push(cols[2].parse().unwrap_or(0));
        }
    }
    Ok(rtts)
}

/// Merge two run directories into a side-by-side table plus ECDF point
/// sets for external plotting.
pub fn compare(dir_a: &Path, dir_b: &Path, out: &Path) -> io::Result<String> {
    fs::create_dir_all(out)?;
    let (label_a, rows_a) = load_summary_rows(dir_a)?;
    let (label_b, rows_b) = load_summary_rows(dir_b)?;
    let stats = |rows: &[ReplicaRow]| {
        (
            aggregate(&rows.iter().map(|r| r.control_bytes_steady as f64).collect::<Vec<_>>()),
            aggregate(&rows.iter().map(|r| r.rtt_mean_us).collect::<Vec<_>>()),
        )
    };
    let (ctrl_a, rtt_a) = stats(&rows_a);
    let (ctrl_b, rtt_b) = stats(&rows_b);
    let mut f = fs::File::create(out.join("compare.csv"))?;
    writeln!(f, "metric,{label_a}_a,{label_b}_b")?;
    writeln!(f, "replicas,{},{}", rows_a.len(), rows_b.len())?;
    writeln!(
        f,
        "control_bytes_steady_mean,{:.3},{:.3}",
        ctrl_a.mean, ctrl_b.mean
    )?;
    writeln!(
        f,
        "rtt_mean_us,{:.3},{:.3}",
        rtt_a.mean, rtt_b.mean
    )?;
    writeln!(
        f,
        "rtt_mean_us_ci95,{:.3}..{:.3},{:.3}..{:.3}",
        rtt_a.ci95_lo, rtt_a.ci95_hi, rtt_b.ci95_lo, rtt_b.ci95_hi
    )?;
    write_ecdf(out, &format!("{label_a}_a"), pooled_rtts_from_dir(dir_a, &label_a)?)?;
    write_ecdf(out, &format!("{label_b}_b"), pooled_rtts_from_dir(dir_b, &label_b)?)?;

    let mut table = String::new();
    table.push_str(&format!(
        "{:<28}{:>16}{:>16}\n",
        "metric",
        format!("{label_a} (A)"),
        format!("{label_b} (B)")
    ));
    table.push_str(&format!(
        "{:<28}{:>16.0}{:>16.0}\n",
        "control bytes (steady)", ctrl_a.mean, ctrl_b.mean
    ));
    table.push_str(&format!(
        "{:<28}{:>16.2}{:>16.2}\n",
        "mean RTT (ms)",
        rtt_a.mean / 1000.0,
        rtt_b.mean / 1000.0
    ));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    fn tiny_scenario() -> Scenario {
        let text = "[run]\nduration_s = 120\nwarmup_s = 30\nreplicas = 2\nbase_seed = 9\n\
             [nodes]\n1 0 0 border_router -\n2 40 0 sender server\n3 80 0 sender server\n";
        parse_scenario(text).unwrap().0
    }

    #[test]
    fn experiment_writes_and_summarizes() {
        let dir = std::env::temp_dir().join("sd6lo_exp_test");
        let _ = fs::remove_dir_all(&dir);
        let sc = tiny_scenario();
        let summary = run_experiment(&sc, Mode::Sdn, 1, &dir, false).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(dir.join("metrics_sdn_r000.csv").exists());
        assert!(dir.join("rtt_sdn_r001.csv").exists());
        assert!(dir.join("summary_sdn.csv").exists());
        assert!(dir.join("aggregate_sdn.csv").exists());
        assert!(dir.join("ecdf_sdn.csv").exists());
        // Aggregates equal an independent recomputation from the files.
        let again = summarize_dir(&sc, Mode::Sdn, &dir).unwrap();
        assert_eq!(summary.control_bytes.mean, again.control_bytes.mean);
        assert_eq!(summary.rtt_mean_us.mean, again.rtt_mean_us.mean);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir_a = std::env::temp_dir().join("sd6lo_det_a");
        let dir_b = std::env::temp_dir().join("sd6lo_det_b");
        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
        let sc = tiny_scenario();
        run_experiment(&sc, Mode::RplBaseline, 2, &dir_a, false).unwrap();
        run_experiment(&sc, Mode::RplBaseline, 1, &dir_b, false).unwrap();
        for name in [
            "metrics_rpl_r000.csv",
            "metrics_rpl_r001.csv",
            "rtt_rpl_r000.csv",
            "rtt_rpl_r001.csv",
            "summary_rpl.csv",
            "aggregate_rpl.csv",
            "ecdf_rpl.csv",
        ] {
            let a = fs::read(dir_a.join(name)).unwrap();
            let b = fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
    }

    #[test]
    fn compare_produces_table_and_ecdfs() {
        let dir_a = std::env::temp_dir().join("sd6lo_cmp_a");
        let dir_b = std::env::temp_dir().join("sd6lo_cmp_b");
        let out = std::env::temp_dir().join("sd6lo_cmp_out");
        for d in [&dir_a, &dir_b, &out] {
            let _ = fs::remove_dir_all(d);
        }
        let sc = tiny_scenario();
        run_experiment(&sc, Mode::Sdn, 1, &dir_a, false).unwrap();
        run_experiment(&sc, Mode::RplBaseline, 1, &dir_b, false).unwrap();
        let table = compare(&dir_a, &dir_b, &out).unwrap();
        assert!(table.contains("mean RTT"));
        assert!(out.join("compare.csv").exists());
        assert!(out.join("ecdf_sdn_a.csv").exists());
        assert!(out.join("ecdf_rpl_b.csv").exists());
        for d in [&dir_a, &dir_b, &out] {
            let _ = fs::remove_dir_all(d);
        }
    }

    #[test]
    fn aggregate_math() {
        let a = aggregate(&[10.0, 12.0, 14.0]);
        assert!((a.mean - 12.0).abs() < 1e-12);
        assert!((a.stddev - 2.0).abs() < 1e-12);
        // t(df=2) = 4.303: half-width 4.303 * 2 / sqrt(3).
        let half = 4.303 * 2.0 / 3f64.sqrt();
        assert!((a.ci95_hi - (12.0 + half)).abs() < 1e-9);
    }
}
