//! Command-line driver: flat key=value configs, subcommand dispatch,
//! deterministic seeding, and artifact emission with meta sidecars.
//!
//! Every run derives its working seed as mix64(master_seed, fnv(label))
//! where the label is the subcommand name, so different commands on the
//! same config never share sample streams, while repeated identical
//! invocations are bit-reproducible at any thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use crate::asymptotics::{harmonic_probe_t, limit_targets, sweep_csv, sweep_t, SampleBudget};
use crate::bifscan::{annulus_concentration, emit_heatmap, scan_h, Channel, GridWindow};
use crate::family::{parse_kv, FamilyParams, PointC2};
use crate::lyapunov::{
    bdm_estimate, calibrate_eta0, cone_check, find_periodic, per_orbit_csv, qr_exponents_detailed,
};
use crate::measure::{box_vt, containment_fraction, sample_mu};
use crate::stats::{mix64, Fnv64};

/// Master seed mixed with the subcommand label so tasks never share streams.
fn task_seed(master: u64, label: &str) -> u64 {
    let mut h = Fnv64::new();
    for b in label.bytes() {
        h.write_u64(b as u64);
    }
    mix64(master, h.finish())
}

fn parse_point(s: &str) -> Result<PointC2, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected z_re,z_im,w_re,w_im, got `{s}`"));
    }
    let mut v = [0.0f64; 4];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| format!("bad number `{part}`"))?;
    }
    Ok(PointC2::new(Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3])))
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected re,im, got `{s}`"));
    }
    let re = parts[0].trim().parse().map_err(|_| format!("bad number `{}`", parts[0]))?;
    let im = parts[1].trim().parse().map_err(|_| format!("bad number `{}`", parts[1]))?;
    Ok(Complex64::new(re, im))
}

fn parse_decades(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected first:last, got `{s}`"))?;
    let lo: u32 = a.trim().parse().map_err(|_| format!("bad decade `{a}`"))?;
    let hi: u32 = b.trim().parse().map_err(|_| format!("bad decade `{b}`"))?;
    if lo > hi {
        return Err(format!("decades must be ordered, got `{s}`"));
    }
    Ok((lo, hi))
}

/// Settings shared by every subcommand. Flags override config keys.
#[derive(Args, Clone, Debug)]
struct Common {
    /// Flat key=value config file with the family parameters
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config key `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = auto); falls back to config `threads`, then
    /// the DEGENLAB_THREADS environment variable
    #[arg(long)]
    threads: Option<usize>,
    /// Artifact directory; overrides the config key `out_dir`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(name = "degenlab", version, about = "numerical laboratory for a degenerating Henon family")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Apply the map once to a point, print the image
    Eval {
        #[command(flatten)]
        common: Common,
        /// Point as z_re,z_im,w_re,w_im
        #[arg(long, value_parser = parse_point)]
        point: PointC2,
    },
    /// Solve the fiber over a target point
    Preimage {
        #[command(flatten)]
        common: Common,
        /// Target as z_re,z_im,w_re,w_im
        #[arg(long, value_parser = parse_point)]
        point: PointC2,
    },
    /// Draw equilibrium-measure samples by backward iteration
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        burn_in: Option<u32>,
        /// Box margin used for the containment summary
        #[arg(long)]
        beta: Option<f64>,
    },
    /// QR Lyapunov exponents along backward orbits
    Lyapunov {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_orbits: Option<usize>,
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Exponent sweep over a range of |t| decades
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Decade range first:last, t = 10^-k
        #[arg(long, value_parser = parse_decades)]
        t_decades: Option<(u32, u32)>,
        /// Phase of t in radians
        #[arg(long)]
        t_phase: Option<f64>,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Mean-value harmonicity probe on a circle around t0
    ProbeHarmonic {
        #[command(flatten)]
        common: Common,
        /// Circle center as re,im; defaults to the config t
        #[arg(long, value_parser = parse_complex)]
        t0: Option<Complex64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        n_circle: Option<usize>,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Lyapunov landscape and Laplacian over an H-plane window
    Scan {
        #[command(flatten)]
        common: Common,
        /// Window center as re,im
        #[arg(long, value_parser = parse_complex)]
        h_center: Option<Complex64>,
        #[arg(long)]
        h_halfwidth: Option<f64>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Verify cone invariance and the expansion band on a sample cloud
    ConeCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_points: Option<usize>,
        /// Relative width of the |2w| expansion band
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        vectors_per_point: Option<usize>,
        /// Cone opening; calibrated from a pre-scan when absent
        #[arg(long)]
        eta0: Option<f64>,
    },
    /// Locate fixed points of an iterate and their multipliers
    Periodic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        period: Option<u32>,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
}

/// Parsed config: family parameters plus the flat runtime key space.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub params: FamilyParams,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    extra: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let params = FamilyParams::from_kv(text).map_err(|e| e.to_string())?;
        let family_keys: std::collections::BTreeSet<String> = params
            .to_kv()
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, _)| k.to_string()))
            .collect();
        let mut extra = BTreeMap::new();
        for (k, v) in parse_kv(text).map_err(|e| e.to_string())? {
            if !family_keys.contains(&k) {
                // first occurrence wins, matching the family parser
                extra.entry(k).or_insert(v);
            }
        }
        let fetch = |map: &BTreeMap<String, String>, key: &str| map.get(key).cloned();
        let seed = match fetch(&extra, "seed") {
            Some(v) => v.parse().map_err(|_| format!("bad value for seed in config: {v}"))?,
            None => 0,
        };
        let threads = match fetch(&extra, "threads") {
            Some(v) => v.parse().map_err(|_| format!("bad value for threads in config: {v}"))?,
            None => 0,
        };
        let out_dir = PathBuf::from(fetch(&extra, "out_dir").unwrap_or_else(|| "out".into()));
        Ok(Self { params, seed, out_dir, threads, extra })
    }

    /// Canonical serialization: family block first, then the runtime keys
    /// sorted. Parsing the result reproduces this config exactly.
    pub fn normal_form(&self) -> String {
        let mut out = self.params.to_kv();
        for (k, v) in &self.extra {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn setting<T: FromStr + Copy>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.extra.get(key) {
            Some(raw) => {
                raw.parse().map_err(|_| format!("bad value for {key} in config: {raw}"))
            }
            None => Ok(default),
        }
    }
}

fn resolve_threads(flag: Option<usize>, cfg: &RunConfig) -> usize {
    flag.or_else(|| {
        std::env::var("DEGENLAB_THREADS").ok().and_then(|v| v.parse().ok()).filter(|_| cfg.threads == 0)
    })
    .unwrap_or(cfg.threads)
}

fn write_artifact(dir: &Path, stem: &str, csv: &str, meta: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let write = |name: String, content: &str| {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
    };
    write(format!("{stem}.csv"), csv)?;
    write(format!("{stem}.meta"), meta)
}

fn meta_header(params: &FamilyParams, command: &str, seed: u64) -> String {
    format!("{}command={command}\nseed={seed}\n", params.to_kv())
}

fn execute(cli: Cli) -> Result<String, String> {
    let common = match &cli.cmd {
        Cmd::Eval { common, .. }
        | Cmd::Preimage { common, .. }
        | Cmd::Sample { common, .. }
        | Cmd::Lyapunov { common, .. }
        | Cmd::Sweep { common, .. }
        | Cmd::ProbeHarmonic { common, .. }
        | Cmd::Scan { common, .. }
        | Cmd::ConeCheck { common, .. }
        | Cmd::Periodic { common, .. } => common.clone(),
    };
    let cfg = RunConfig::load(&common.config)?;
    let params = cfg.params;
    let master = common.seed.unwrap_or(cfg.seed);
    let out_dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let threads = resolve_threads(common.threads, &cfg);
    if threads > 0 {
        // a pool may exist already (tests drive execute() repeatedly);
        // outputs do not depend on the pool size, so a stale size is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    match cli.cmd {
        Cmd::Eval { point, .. } => {
            let img = params.evaluate(point).map_err(|e| e.to_string())?;
            Ok(format!("{},{},{},{}", img.z.re, img.z.im, img.w.re, img.w.im))
        }
        Cmd::Preimage { point, .. } => {
            let set = crate::preimage::preimages(&params, point).map_err(|e| e.to_string())?;
            let max_res =
                set.solutions.iter().map(|s| s.residual).fold(0.0f64, f64::max);
            let meta = format!(
                "{}target={},{},{},{}\n",
                meta_header(&params, "preimage", master),
                point.z.re,
                point.z.im,
                point.w.re,
                point.w.im
            );
            write_artifact(&out_dir, "preimage", &set.to_csv(), &meta)?;
            Ok(format!(
                "n_solutions={} total_multiplicity={} defect={} max_residual={}",
                set.solutions.len(),
                set.total_multiplicity(),
                set.degree_defect,
                max_res
            ))
        }
        Cmd::Sample { n_points, burn_in, beta, .. } => {
            let n = cfg.setting(n_points, "n_points", 20_000)?;
            let burn = cfg.setting(burn_in, "burn_in", crate::measure::DEFAULT_BURN_IN)?;
            let beta = cfg.setting(beta, "beta", 0.3)?;
            let seed = task_seed(master, "sample");
            let cloud = sample_mu(&params, n, burn, seed).map_err(|e| e.to_string())?;
            let frac = containment_fraction(&cloud, &box_vt(&params, beta));
            let stderr = (frac * (1.0 - frac) / n as f64).sqrt();
            let meta = format!("{}beta={beta}\ncommand=sample\n", cloud.meta_block());
            write_artifact(&out_dir, "sample", &cloud.to_csv(), &meta)?;
            Ok(format!("n={n} containment={frac} stderr={stderr}"))
        }
        Cmd::Lyapunov { n_orbits, n_steps, .. } => {
            let orbits = cfg.setting(n_orbits, "n_orbits", 8)?;
            let steps = cfg.setting(n_steps, "n_steps", 1000)?;
            let seed = task_seed(master, "lyapunov");
            let (est, rows) =
                qr_exponents_detailed(&params, seed, orbits, steps).map_err(|e| e.to_string())?;
            let meta = format!(
                "{}n_orbits={orbits}\nn_steps={steps}\n",
                meta_header(&params, "lyapunov", master)
            );
            write_artifact(&out_dir, "lyapunov", &per_orbit_csv(&rows), &meta)?;
            Ok(format!(
                "chi1={} stderr1={} chi2={} stderr2={} L={}",
                est.chi1, est.stderr1, est.chi2, est.stderr2, est.l
            ))
        }
        Cmd::Sweep { t_decades, t_phase, n_points, n_steps, .. } => {
            let (lo, hi) = match t_decades {
                Some(d) => d,
                None => match cfg.extra.get("t_decades") {
                    Some(raw) => parse_decades(raw)
                        .map_err(|e| format!("bad value for t_decades in config: {e}"))?,
                    None => (2, 5),
                },
            };
            let phase = cfg.setting(t_phase, "t_phase", 0.0)?;
            let budget = SampleBudget {
                n_points: cfg.setting(n_points, "n_points", 20_000)?,
                n_steps: cfg.setting(n_steps, "n_steps", 2_000)?,
            };
            let ts: Vec<Complex64> = (lo..=hi)
                .map(|k| Complex64::from_polar(10f64.powi(-(k as i32)), phase))
                .collect();
            let seed = task_seed(master, "sweep");
            let outcomes = sweep_t(&params, &ts, budget, seed);
            let csv = sweep_csv(&params, &outcomes);
            let meta = format!(
                "{}t_decades={lo}:{hi}\nt_phase={phase}\nn_points={}\nn_steps={}\n",
                meta_header(&params, "sweep", master),
                budget.n_points,
                budget.n_steps
            );
            write_artifact(&out_dir, "sweep", &csv, &meta)?;
            let rows: Vec<_> = outcomes.iter().filter_map(|o| o.row()).collect();
            let failed = outcomes.len() - rows.len();
            let target = match limit_targets(&params, 0.1) {
                Ok(tg) => format!("{}", tg.l_limit),
                Err(_) => "none".into(),
            };
            match rows.last() {
                Some(last) => Ok(format!(
                    "rows={} failed={failed} L_shift={} stderr={} target={target}",
                    rows.len(),
                    last.l_shift,
                    last.stderr_l
                )),
                None => Ok(format!("rows=0 failed={failed} target={target}")),
            }
        }
        Cmd::ProbeHarmonic { t0, radius, n_circle, n_points, n_steps, .. } => {
            let t0 = t0.unwrap_or(params.t);
            let radius = cfg.setting(radius, "probe_radius", 0.2 * t0.norm())?;
            let n_circle = cfg.setting(n_circle, "n_circle", 16)?;
            let budget = SampleBudget {
                n_points: cfg.setting(n_points, "n_points", 4_000)?,
                n_steps: cfg.setting(n_steps, "n_steps", 500)?,
            };
            let seed = task_seed(master, "probe-harmonic");
            let (dev, stderr) = harmonic_probe_t(&params, t0, radius, n_circle, budget, seed)
                .map_err(|e| e.to_string())?;
            let csv = format!(
                "t0_re,t0_im,radius,n_circle,deviation,stderr\n{},{},{radius},{n_circle},{dev},{stderr}\n",
                t0.re, t0.im
            );
            let meta = format!(
                "{}t0={},{}\nradius={radius}\nn_circle={n_circle}\nn_points={}\nn_steps={}\n",
                meta_header(&params, "probe-harmonic", master),
                t0.re,
                t0.im,
                budget.n_points,
                budget.n_steps
            );
            write_artifact(&out_dir, "probe", &csv, &meta)?;
            Ok(format!("deviation={dev} stderr={stderr} n_circle={n_circle}"))
        }
        Cmd::Scan { h_center, h_halfwidth, nx, ny, n_points, n_steps, .. } => {
            let window = GridWindow {
                center: h_center.unwrap_or_else(|| {
                    cfg.extra
                        .get("h_center")
                        .and_then(|v| parse_complex(v).ok())
                        .unwrap_or(Complex64::new(0.0, 0.0))
                }),
                halfwidth: cfg.setting(h_halfwidth, "h_halfwidth", 1.5)?,
                nx: cfg.setting(nx, "nx", 61)?,
                ny: cfg.setting(ny, "ny", 61)?,
            };
            let budget = SampleBudget {
                n_points: cfg.setting(n_points, "scan_n_points", 2_000)?,
                n_steps: cfg.setting(n_steps, "scan_n_steps", 500)?,
            };
            let seed = task_seed(master, "scan");
            let grid = scan_h(params.base, params.lead_g(), params.t, window, budget, seed)
                .map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
            emit_heatmap(&grid, Channel::L, &out_dir.join("scan_L")).map_err(|e| e.to_string())?;
            emit_heatmap(&grid, Channel::Laplacian, &out_dir.join("scan_laplacian"))
                .map_err(|e| e.to_string())?;
            let r0 = params.base.c.norm() * params.lead_g().norm();
            let frac = annulus_concentration(&grid, r0, 0.2).map_err(|e| e.to_string())?;
            Ok(format!(
                "nodes={} failed={} exceptional={} concentration={frac} r0={r0}",
                grid.l_values.len(),
                grid.failed_nodes(),
                grid.exceptional_nodes()
            ))
        }
        Cmd::ConeCheck { n_points, delta, vectors_per_point, eta0, .. } => {
            let n = cfg.setting(n_points, "n_points", 20_000)?;
            let delta = cfg.setting(delta, "delta", 0.1)?;
            let vpp = cfg.setting(vectors_per_point, "vectors_per_point", 5)?;
            let seed = task_seed(master, "cone-check");
            let cloud = sample_mu(&params, n, crate::measure::DEFAULT_BURN_IN, seed)
                .map_err(|e| e.to_string())?;
            let eta0 = match eta0 {
                Some(v) => v,
                None => match cfg.extra.get("eta0") {
                    Some(raw) => raw
                        .parse()
                        .map_err(|_| format!("bad value for eta0 in config: {raw}"))?,
                    None => calibrate_eta0(&params, &cloud),
                },
            };
            let report = cone_check(&params, &cloud, eta0, delta, vpp, mix64(seed, 1));
            let csv = format!(
                "eta0,delta,n_tested,invariance_failures,ratio_violations\n{},{},{},{},{}\n",
                report.eta0,
                report.delta,
                report.n_tested,
                report.invariance_failures,
                report.ratio_violations
            );
            let meta = format!(
                "{}n_points={n}\ndelta={delta}\nvectors_per_point={vpp}\neta0={eta0}\n",
                meta_header(&params, "cone-check", master)
            );
            write_artifact(&out_dir, "cone", &csv, &meta)?;
            Ok(format!(
                "eta0={} n_tested={} invariance_failures={} ratio_violations={}",
                report.eta0, report.n_tested, report.invariance_failures, report.ratio_violations
            ))
        }
        Cmd::Periodic { period, n_seeds, .. } => {
            let n = cfg.setting(period, "period", 3)?;
            let seeds = cfg.setting(n_seeds, "n_seeds", 2_000)?;
            if !(1..=4).contains(&n) {
                return Err(format!("period must lie in 1..=4, got {n}"));
            }
            if params.t.norm() == 0.0 {
                return Err("periodic search requires t != 0".into());
            }
            let seed = task_seed(master, "periodic");
            let set = find_periodic(&params, n, seeds, seed);
            let bdm = bdm_estimate(&params, &set);
            let meta = format!(
                "{}period={n}\nn_seeds={seeds}\n",
                meta_header(&params, "periodic", master)
            );
            write_artifact(&out_dir, "periodic", &set.to_csv(), &meta)?;
            Ok(format!(
                "period={n} found={} coverage={} bdm_l={} bdm_unreliable={}",
                set.points.len(),
                set.coverage_estimate,
                bdm.l_hat,
                bdm.unreliable
            ))
        }
    }
}

/// Entry point: parses argv, runs the subcommand, prints the one-line
/// summary. Exit code 0 on success, 1 on contract errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(message) => {
            eprintln!("{message}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REF_CFG: &str = include_str!("../../../configs/ref.cfg");

    fn write_cfg(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("test.cfg");
        std::fs::write(&path, text).unwrap();
        path
    }

    fn parse_cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flag_parsers_accept_and_reject() {
        let p = parse_point("1,0,2,-0.5").unwrap();
        assert_eq!(p.z, Complex64::new(1.0, 0.0));
        assert_eq!(p.w, Complex64::new(2.0, -0.5));
        assert!(parse_point("1,2,3").is_err());
        assert!(parse_point("1,2,3,x").is_err());
        assert_eq!(parse_complex("0.5,-1").unwrap(), Complex64::new(0.5, -1.0));
        assert!(parse_complex("1").is_err());
        assert_eq!(parse_decades("2:5").unwrap(), (2, 5));
        assert!(parse_decades("5:2").is_err());
        assert!(parse_decades("abc").is_err());
    }

    #[test]
    fn task_seeds_are_stable_and_distinct() {
        assert_eq!(task_seed(7, "sample"), task_seed(7, "sample"));
        assert_ne!(task_seed(7, "sample"), task_seed(7, "sweep"));
        assert_ne!(task_seed(7, "sample"), task_seed(8, "sample"));
    }

    #[test]
    fn config_roundtrips_through_normal_form() {
        let cfg = RunConfig::parse(REF_CFG).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.threads, 0);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        let normal = cfg.normal_form();
        let again = RunConfig::parse(&normal).unwrap();
        assert_eq!(normal, again.normal_form());
        assert_eq!(cfg.params, again.params);
    }

    #[test]
    fn config_rejects_malformed_values() {
        let bad = format!("{REF_CFG}seed=notanumber\n");
        // the first seed line wins, so this still parses
        assert!(RunConfig::parse(&bad).is_ok());
        let broken = REF_CFG.replace("seed=1", "seed=x");
        assert!(RunConfig::parse(&broken).unwrap_err().contains("seed"));
        assert!(RunConfig::parse("nonsense\n").is_err());
    }

    #[test]
    fn eval_reproduces_the_forward_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_cfg(dir.path(), REF_CFG);
        let cli = parse_cli(&[
            "degenlab",
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--point",
            "1,0,1,0",
        ]);
        assert_eq!(execute(cli).unwrap(), "1.1,0,1.5,0");
    }

    #[test]
    fn preimage_writes_artifacts_and_counts_sheets() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_cfg(dir.path(), REF_CFG);
        let out = dir.path().join("arts");
        let cli = parse_cli(&[
            "degenlab",
            "preimage",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--point",
            "1.1,0,1.5,0",
        ]);
        let summary = execute(cli).unwrap();
        assert!(summary.contains("total_multiplicity=4"), "{summary}");
        let csv = std::fs::read_to_string(out.join("preimage.csv")).unwrap();
        assert!(csv.starts_with("z_re,z_im,w_re,w_im,mult,residual\n"));
        let meta = std::fs::read_to_string(out.join("preimage.meta")).unwrap();
        assert!(meta.contains("command=preimage\n"));
        assert!(meta.contains("target=1.1,0,1.5,0\n"));
    }

    #[test]
    fn usage_and_contract_errors_map_to_exit_codes() {
        assert_eq!(run(["degenlab", "frobnicate"]), 2);
        assert_eq!(run(["degenlab", "eval", "--config", "/nonexistent.cfg", "--point", "1,0,1,0"]), 1);
        assert_eq!(run(["degenlab", "--help"]), 0);
        // t = 0 in the config makes the member irregular: contract error
        let dir = tempfile::tempdir().unwrap();
        let degenerate = REF_CFG.replace("t_re=0.1", "t_re=0");
        let cfg = write_cfg(dir.path(), &degenerate);
        let out = dir.path().join("arts");
        let cli = parse_cli(&[
            "degenlab",
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--n-points",
            "10",
        ]);
        assert_eq!(execute(cli).unwrap_err(), "Henon map is not regular");
    }

    #[test]
    fn period_bounds_are_validated_before_searching() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_cfg(dir.path(), REF_CFG);
        let cli = parse_cli(&[
            "degenlab",
            "periodic",
            "--config",
            cfg.to_str().unwrap(),
            "--period",
            "9",
        ]);
        assert_eq!(execute(cli).unwrap_err(), "period must lie in 1..=4, got 9");
    }
}
