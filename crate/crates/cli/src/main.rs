use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evgrid_core::decisions::DepartureStrategy;
use evgrid_core::engine::{run_case, run_parallel, CaseSpec, Engine, EngineError, RunOptions};
use evgrid_core::ev::{CoefficientRanges, EvPrototype};
use evgrid_core::network::RoadNetwork;
use evgrid_core::pdn::PdnCase;
use evgrid_core::scenario::{
    generate_fleet, generate_stations, home_edges, read_json, read_optional, synthetic, write_json, EvRecord, Scenario,
    ScenarioError, SyntheticParams,
};
use evgrid_core::tripgen::PlaceModel;

#[derive(Parser)]
#[command(name = "evgrid", version, about = "EV traffic and distribution-grid co-simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Threshold,
    Distance,
}

impl From<Strategy> for DepartureStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Threshold => DepartureStrategy::Threshold,
            Strategy::Distance => DepartureStrategy::Distance,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one case and write its CSV streams and manifest.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        days: Option<usize>,
        /// Traffic step in seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Grid interval in seconds.
        #[arg(long = "pdn-dt")]
        pdn_dt: Option<f64>,
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        #[arg(long = "no-v2g")]
        no_v2g: bool,
        /// Skip the discarded warm-up day.
        #[arg(long = "no-warmup")]
        no_warmup: bool,
    },
    /// Run every case of a manifest on a worker pool.
    Parallel {
        /// JSON list of cases; relative paths resolve against its directory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Write trips.json for a scenario.
    GenTrips {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        days: usize,
        /// Day index of the first day; day 0 is a Monday.
        #[arg(long = "first-day", default_value_t = 0, allow_negative_numbers = true)]
        first_day: i64,
        /// Defaults to trips.json in the scenario directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write evs.json from the scenario's network, place model and prototypes.
    GenEvs {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "soc-min", default_value_t = 0.2)]
        soc_min: f64,
        #[arg(long = "soc-max", default_value_t = 1.0)]
        soc_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write stations.json: fast stations on "CS*" edges, slow ones elsewhere.
    GenStations {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long = "fcs-piles", default_value_t = 10)]
        fcs_piles: u32,
        #[arg(long = "scs-piles", default_value_t = 4)]
        scs_piles: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled synthetic city as a scenario directory.
    GenScenario {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        evs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value_t = 2500.0)]
        spacing: f64,
        #[arg(long = "soc-min", default_value_t = 0.2)]
        soc_min: f64,
        #[arg(long = "soc-max", default_value_t = 1.0)]
        soc_max: f64,
        #[arg(long = "fcs-piles", default_value_t = 10)]
        fcs_piles: u32,
        #[arg(long = "scs-piles", default_value_t = 4)]
        scs_piles: u32,
    },
    /// Check a scenario directory without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            msg: e.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        EngineError::from(e).into()
    }
}

fn config(msg: impl ToString) -> Failure {
    Failure {
        code: 2,
        msg: msg.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn target(out: Option<PathBuf>, dir: &Path, file: &str) -> PathBuf {
    out.unwrap_or_else(|| dir.join(file))
}

fn load_network(dir: &Path) -> Result<RoadNetwork, Failure> {
    RoadNetwork::load(&dir.join("network.json")).map_err(config)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate {
            scenario,
            out,
            seed,
            days,
            dt,
            pdn_dt,
            strategy,
            no_v2g,
            no_warmup,
        } => {
            let spec = CaseSpec {
                scenario,
                out: Some(out.clone()),
                options: RunOptions {
                    seed,
                    days,
                    dt,
                    dt_pdn: pdn_dt,
                    strategy: strategy.map(Into::into),
                    v2g: no_v2g.then_some(false),
                    warmup: no_warmup.then_some(false),
                    ..Default::default()
                },
            };
            let rec = run_case(&spec)?;
            let l = &rec.manifest.ledger;
            log::info!(
                "wrote {}: {} steps, {:.1} kWh charged, {:.1} kWh V2G, ledger residual {:.2e} kWh",
                out.display(),
                rec.manifest.stats.steps,
                l.charged_grid_kwh,
                l.v2g_grid_kwh,
                l.residual()
            );
            Ok(())
        }
        Command::Parallel { manifest, workers } => {
            let mut specs: Vec<CaseSpec> = read_json(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            for s in &mut specs {
                s.scenario = base.join(&s.scenario);
                s.out = s.out.as_ref().map(|o| base.join(o));
            }
            let results = run_parallel(&specs, workers);
            let mut code = 0;
            for (i, r) in results.iter().enumerate() {
                match r {
                    Ok(rec) => log::info!("case {i} (seed {}): ok", rec.manifest.seed),
                    Err(e) => {
                        eprintln!("case {i}: {e}");
                        code = code.max(e.exit_code() as u8);
                    }
                }
            }
            if code == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code,
                    msg: format!("{} of {} cases failed", results.iter().filter(|r| r.is_err()).count(), results.len()),
                })
            }
        }
        Command::GenTrips {
            scenario,
            seed,
            days,
            first_day,
            out,
        } => {
            let scn = Scenario::load(&scenario)?;
            let chains = scn.generate_trips(seed, first_day, days)?;
            write_json(&target(out, &scenario, "trips.json"), &chains)?;
            Ok(())
        }
        Command::GenEvs {
            scenario,
            count,
            seed,
            soc_min,
            soc_max,
            out,
        } => {
            if !(0.0..=1.0).contains(&soc_min) || !(soc_min..=1.0).contains(&soc_max) {
                return Err(config(format!("soc range {soc_min}..{soc_max}")));
            }
            let net = load_network(&scenario)?;
            let places: PlaceModel = read_optional(&scenario.join("placemodel.json"))?.unwrap_or_default();
            let protos: Vec<EvPrototype> =
                read_optional(&scenario.join("prototypes.json"))?.unwrap_or_else(EvPrototype::standard_set);
            let homes = home_edges(&net, &places);
            if protos.is_empty() || homes.is_empty() {
                return Err(config("no prototypes or home edges to draw from"));
            }
            let fleet: Vec<EvRecord> =
                generate_fleet(&protos, &homes, count, (soc_min, soc_max), &CoefficientRanges::default(), seed);
            write_json(&target(out, &scenario, "evs.json"), &fleet)?;
            Ok(())
        }
        Command::GenStations {
            scenario,
            fcs_piles,
            scs_piles,
            out,
        } => {
            let net = load_network(&scenario)?;
            let pdn: PdnCase = read_optional(&scenario.join("pdn.json"))?.unwrap_or_else(PdnCase::ieee33);
            let recs = generate_stations(&net, fcs_piles, scs_piles, pdn.buses.len());
            write_json(&target(out, &scenario, "stations.json"), &recs)?;
            Ok(())
        }
        Command::GenScenario {
            out,
            evs,
            seed,
            grid,
            spacing,
            soc_min,
            soc_max,
            fcs_piles,
            scs_piles,
        } => {
            let scn = synthetic(&SyntheticParams {
                grid,
                spacing_m: spacing,
                evs,
                seed,
                soc_range: (soc_min, soc_max),
                fcs_piles,
                scs_piles,
            });
            scn.validate()?;
            scn.save(&out)?;
            Ok(())
        }
        Command::Validate { scenario } => {
            let scn = Scenario::load(&scenario)?;
            let engine = Engine::new(scn, RunOptions::default())?;
            println!(
                "ok: {} edges, {} vehicles, {} stations, plugins {:?}",
                engine.scenario().network.edges().len(),
                engine.scenario().evs.len(),
                engine.scenario().stations.len(),
                engine.plugin_order()
            );
            Ok(())
        }
    }
}
