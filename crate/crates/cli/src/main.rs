//! `leakstat` command line: training, scoring, change points, localization,
//! loss estimation, simulation and evaluation pipelines over CSV/JSON files.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use leakstat::changepoint::{self, Classification, SlopeRule};
use leakstat::detection::{self, Detection};
use leakstat::event::{EventKind, EventRecord, Location};
use leakstat::io::{self, MissingPolicy, RunReport};
use leakstat::localization::{self, EdgeWeighting, FieldBuilder, NetworkGraph};
use leakstat::lossreg;
use leakstat::panel::SensorPanel;
use leakstat::stats::{RegressionForm, RidgePolicy};
use leakstat::synthgen::{self, Scenario};
use leakstat::training::{self, ClusterScheme, TrainOptions, TrainingStrategy};
use leakstat::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "leakstat", version, about = "Anomaly detection and pre-localization for sensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PanelArgs {
    /// Wide panel CSV; a `<stem>.roles.csv` sidecar is read when present.
    #[arg(long)]
    panel: PathBuf,
    /// Forward-fill gaps of up to this many steps instead of rejecting them.
    #[arg(long)]
    gap_limit: Option<usize>,
}

impl PanelArgs {
    fn load(&self) -> Result<SensorPanel> {
        let policy = match self.gap_limit {
            Some(limit) => MissingPolicy::ForwardFill { limit },
            None => MissingPolicy::Reject,
        };
        io::load_panel(&self.panel, policy)
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

impl OutArgs {
    fn dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|source| Error::Io {
            path: self.out.clone(),
            source,
        })?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-cluster moments and thresholds from a training panel.
    Train {
        #[command(flatten)]
        panel: PanelArgs,
        /// hour-of-day, two-hour-block, weekday-weekend-hour, single or map:H=K,...
        #[arg(long, default_value = "hour-of-day")]
        scheme: String,
        /// unfiltered, drop-lowest:Q or clean:START/END;...
        #[arg(long, default_value = "unfiltered")]
        strategy: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Fail on ill-conditioned covariances instead of ridging them.
        #[arg(long)]
        no_ridge: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score a panel and run the hysteresis alarm rule.
    Detect {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = detection::DEFAULT_WINDOW)]
        window: usize,
        /// Network directory; when given, each alarm is pre-localized.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Segment the moving-average statistic and label anomaly starts and ends.
    Changepoints {
        /// Statistics CSV written by `detect`.
        #[arg(long)]
        stats: PathBuf,
        /// PELT penalty; defaults to 2 ln(n) times the robust noise variance.
        #[arg(long)]
        penalty: Option<f64>,
        #[arg(long, default_value_t = changepoint::DEFAULT_MIN_SEG)]
        min_seg: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Remove redundant change points by a raw slope difference instead of a t-test.
        #[arg(long)]
        slope_delta: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Interpolate squared z-scores over the network and rank candidate nodes.
    Localize {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Timestamp of the last step to use.
        #[arg(long)]
        at: String,
        /// Number of steps (ending at --at) whose z-scores are averaged before squaring.
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        candidates: usize,
        #[arg(long, default_value_t = localization::DEFAULT_RADIUS)]
        radius: f64,
        /// True location (node id or @x:y) to score the result against.
        #[arg(long)]
        truth: Option<String>,
        /// Weight edges by inverse length instead of uniformly.
        #[arg(long)]
        inverse_length: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Classify an anomaly as leak or sensor bias.
    Discriminate {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Training panel used for the per-sensor operating bands.
        #[arg(long)]
        training: PathBuf,
        #[arg(long)]
        at: String,
        #[arg(long, default_value_t = 0.005)]
        lower: f64,
        #[arg(long, default_value_t = 0.995)]
        upper: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit or apply the loss regression on the moving-average statistic.
    EstimateLoss {
        #[arg(long)]
        stats: PathBuf,
        /// CSV with `timestamp,loss` on the statistics grid; fits the model.
        #[arg(long)]
        loss: Option<PathBuf>,
        /// Fixed `intercept,slope` instead of fitting.
        #[arg(long)]
        coefficients: Option<String>,
        #[arg(long, default_value = "linear")]
        form: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate a synthetic panel, network and ground truth.
    Simulate {
        /// Scenario JSON; defaults to the built-in benchmark layout.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        horizon: usize,
        /// Also write a clean training panel of this many steps preceding the run.
        #[arg(long)]
        train_horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Match detections against ground truth.
    Evaluate {
        /// Ground-truth event table.
        #[arg(long)]
        truth: PathBuf,
        /// Detected event table.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = localization::DEFAULT_RADIUS)]
        radius: f64,
        /// Statistics CSV whose time grid is used for leak-hours.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--alpha {alpha} must lie in (0, 1)")))
    }
}

fn parse_time(s: &str) -> Result<leakstat::NaiveDateTime> {
    io::parse_timestamp(s).map_err(|m| usage(format!("--at: {m}")))
}

/// Network with sensor bindings from its own `sensors.csv` and the panel roles.
fn load_network(dir: &Path, panel: &SensorPanel) -> Result<NetworkGraph> {
    let mut graph = io::load_graph(dir)?;
    io::bind_panel_sensors(&mut graph, panel.sensors())?;
    Ok(graph)
}

fn finish(report: &mut RunReport, dir: &Path) -> Result<()> {
    let path = dir.join("report.json");
    report.output(&path);
    io::write_json(&path, report)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            panel,
            scheme,
            strategy,
            alpha,
            no_ridge,
            out,
        } => {
            check_alpha(alpha)?;
            let scheme: ClusterScheme = scheme.parse()?;
            let strategy: TrainingStrategy = strategy.parse()?;
            let data = panel.load()?;
            let opts = TrainOptions {
                ridge: if no_ridge { RidgePolicy::Never } else { RidgePolicy::Auto },
            };
            let model = training::train_with(&data, &scheme, &strategy, &opts)?;
            let thresholds = training::thresholds(&model, alpha)?;
            let normality = training::normality_screen(&data, &model, 0.05)?;
            let dir = out.dir()?;
            let mut report = RunReport::new("train");
            report.input("panel", &panel.panel);
            let path = dir.join("model.json");
            io::save_model(&path, &model)?;
            report.output(&path);
            report.metric("scheme", scheme.to_string());
            report.metric("sensors", model.dim());
            report.metric("cluster_sizes", model.clusters().iter().map(|c| c.n()).collect::<Vec<_>>());
            report.metric("alpha", alpha);
            report.metric("thresholds", &thresholds);
            report.metric("normality_pass_rate", normality.pass_rate());
            finish(&mut report, dir)
        }

        Command::Detect {
            panel,
            model,
            alpha,
            window,
            graph,
            out,
        } => {
            check_alpha(alpha)?;
            let data = panel.load()?;
            let trained = io::load_model(&model, RidgePolicy::Auto)?;
            let stats = detection::score(&trained, &data, window)?;
            let thresholds = training::thresholds(&trained, alpha)?;
            let status = detection::hysteresis_by_cluster(&stats, &thresholds, false)?;
            let episodes = alarm_episodes(&status.status);
            let network = graph.as_deref().map(|g| load_network(g, &data)).transpose()?;
            let data = data.select(&trained.sensor_ids())?;

            let mut detections = Vec::with_capacity(episodes.len());
            for (i, &(a, b)) in episodes.iter().enumerate() {
                let mut ev = EventRecord::new(
                    format!("d{}", i + 1),
                    EventKind::Unclassified,
                    stats.timestamps[a],
                    b.map(|b| stats.timestamps[b]),
                );
                ev.detected = Some(stats.timestamps[a]);
                if let Some(g) = &network {
                    let last = b.unwrap_or(stats.len() - 1).min(a + window - 1);
                    let z2 = localization::window_z_field(&data, &trained, a..last + 1)?.z2;
                    let builder = FieldBuilder::new(g, &trained.sensor_ids(), EdgeWeighting::Unweighted)?;
                    let field = builder.field(&z2)?;
                    ev.location = Some(Location::Node(g.node(field.argmax()).id.clone()));
                }
                detections.push(ev);
            }

            let dir = out.dir()?;
            let mut report = RunReport::new("detect");
            report.input("panel", &panel.panel);
            report.input("model", &model);
            let sp = dir.join("stats.csv");
            io::save_stats(&sp, &stats, Some(&status))?;
            report.output(&sp);
            let dp = dir.join("detections.csv");
            io::save_events(&dp, &detections)?;
            report.output(&dp);
            let alarms = status.status.iter().filter(|s| **s).count();
            report.metric("steps", stats.len());
            report.metric("alarm_steps", alarms);
            report.metric("alarm_rate", alarms as f64 / stats.len().max(1) as f64);
            report.metric("detections", detections.len());
            report.metric("window", window);
            report.metric("thresholds", &thresholds);
            finish(&mut report, dir)
        }

        Command::Changepoints {
            stats,
            penalty,
            min_seg,
            alpha,
            slope_delta,
            out,
        } => {
            check_alpha(alpha)?;
            let (series, _) = io::load_stats(&stats)?;
            let offset = series.window - 1;
            let y: Vec<f64> = series.ma.iter().flatten().copied().collect();
            let penalty = penalty.unwrap_or_else(|| changepoint::default_penalty(&y));
            let seg = changepoint::pelt(&y, penalty, min_seg)?;
            let rule = match slope_delta {
                Some(delta) => SlopeRule::Raw { delta },
                None => SlopeRule::TTest,
            };
            let classified = shift(changepoint::classify(&y, &seg, alpha, rule)?, offset);
            let events = changepoint::events_from_labels(&classified, &series.timestamps)?;

            let dir = out.dir()?;
            let mut report = RunReport::new("changepoints");
            report.input("stats", &stats);
            let cp = dir.join("scps.csv");
            io::save_scps(&cp, &classified, &series.timestamps)?;
            report.output(&cp);
            let ep = dir.join("events.csv");
            io::save_events(&ep, &events)?;
            report.output(&ep);
            report.metric("penalty", penalty);
            report.metric("change_points", seg.scps.len());
            report.metric("removed", classified.removed.len());
            report.metric("events", events.len());
            finish(&mut report, dir)
        }

        Command::Localize {
            panel,
            model,
            graph,
            at,
            window,
            candidates,
            radius,
            truth,
            inverse_length,
            out,
        } => {
            if window == 0 {
                return Err(usage("--window must be at least 1"));
            }
            let at = parse_time(&at)?;
            let data = panel.load()?;
            let trained = io::load_model(&model, RidgePolicy::Auto)?;
            let network = load_network(&graph, &data)?;
            let data = data.select(&trained.sensor_ids())?;
            let end = step_index(&data, at)?;
            let start = (end + 1).saturating_sub(window);
            let z2 = localization::window_z_field(&data, &trained, start..end + 1)?.z2;
            let weighting = if inverse_length {
                EdgeWeighting::InverseLength
            } else {
                EdgeWeighting::Unweighted
            };
            let builder = FieldBuilder::new(&network, &trained.sensor_ids(), weighting)?;
            let field = builder.field(&z2)?;
            let truth: Option<Location> = truth.map(|t| t.parse().map_err(usage)).transpose()?;
            let located = localization::locate(&field, &network, truth.as_ref(), radius)?;
            let ranked = localization::iterative_suppress(&builder, &z2, candidates, radius)?;

            let dir = out.dir()?;
            let mut report = RunReport::new("localize");
            report.input("panel", &panel.panel);
            report.input("model", &model);
            report.input("graph", &graph);
            let fp = dir.join("field.csv");
            io::save_field(&fp, &network, &field)?;
            report.output(&fp);
            report.metric("at", io::format_timestamp(at));
            report.metric("steps_averaged", end + 1 - start);
            report.metric("node", &located.node);
            report.metric("distance_m", located.distance);
            report.metric("success", located.success);
            report.metric("candidates", &ranked);
            finish(&mut report, dir)
        }

        Command::Discriminate {
            panel,
            model,
            graph,
            training,
            at,
            lower,
            upper,
            out,
        } => {
            let at = parse_time(&at)?;
            let data = panel.load()?;
            let trained = io::load_model(&model, RidgePolicy::Auto)?;
            let network = load_network(&graph, &data)?;
            let train_panel = io::load_panel(&training, MissingPolicy::Reject)?;
            let bands = localization::operational_bands(&train_panel, &trained, lower, upper)?;
            let data = data.select(&trained.sensor_ids())?;
            let t = step_index(&data, at)?;
            let k = training::assign_cluster(at, trained.scheme());
            let z = localization::z_field(data.row(t), &trained, k, Some(localization::DEFAULT_SIGMA_FLOOR))?;
            let verdict = localization::discriminate(
                &z.z,
                &bands,
                &network,
                &trained.sensor_ids(),
                &localization::DiscriminationParams::default(),
            )?;

            let dir = out.dir()?;
            let mut report = RunReport::new("discriminate");
            report.input("panel", &panel.panel);
            report.input("model", &model);
            report.input("training", &training);
            report.metric("at", io::format_timestamp(at));
            report.metric("verdict", verdict.verdict);
            report.metric("out_of_range", verdict.out_of_range);
            report.metric("top_sensor", trained.sensor_ids()[verdict.top]);
            report.metric("neighbour_share", verdict.neighbour_share);
            report.metric("shares", &verdict.shares);
            finish(&mut report, dir)
        }

        Command::EstimateLoss {
            stats,
            loss,
            coefficients,
            form,
            out,
        } => {
            let form: RegressionForm = form.parse()?;
            let (series, _) = io::load_stats(&stats)?;
            let actual = loss
                .as_deref()
                .map(|p| {
                    let (ts, v) = io::load_series(p, "loss")?;
                    if ts != series.timestamps {
                        return Err(Error::GridMismatch(format!(
                            "{} does not share the time grid of {}",
                            p.display(),
                            stats.display()
                        )));
                    }
                    Ok(v)
                })
                .transpose()?;
            let model = match (&coefficients, &actual) {
                (Some(c), _) => {
                    let (a, b) = c
                        .split_once(',')
                        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                        .ok_or_else(|| usage(format!("--coefficients '{c}' must be 'intercept,slope'")))?;
                    lossreg::LossModel::from_coefficients(a, b, form, series.window)
                }
                (None, Some(actual)) => {
                    let (f, l): (Vec<f64>, Vec<f64>) = series
                        .ma
                        .iter()
                        .zip(actual)
                        .filter_map(|(m, l)| m.filter(|m| form == RegressionForm::Linear || *m > 0.0).map(|m| (m, *l)))
                        .unzip();
                    lossreg::fit_loss_with_window(&f, &l, form, series.window)?
                }
                (None, None) => return Err(usage("give --loss to fit or --coefficients to apply")),
            };
            let rows = lossreg::loss_table(&model, &series.timestamps, &series.ma, actual.as_deref())?;

            let dir = out.dir()?;
            let mut report = RunReport::new("estimate-loss");
            report.input("stats", &stats);
            let lp = dir.join("loss.csv");
            io::save_loss(&lp, &rows)?;
            report.output(&lp);
            report.metric("form", form);
            report.metric("intercept", model.fit.intercept());
            report.metric("slope", model.fit.slope());
            report.metric("std_errors", &model.fit.std_errors);
            report.metric("r_squared", model.fit.r_squared);
            report.metric("points", model.fit.n);
            report.metric("total_predicted", rows.iter().map(|r| r.predicted).sum::<f64>());
            if actual.is_some() {
                let res: Vec<f64> = rows.iter().filter_map(|r| r.residual).collect();
                let act: Vec<f64> = rows.iter().filter_map(|r| r.actual).collect();
                report.metric("residual_actual_correlation", lossreg::correlation(&res, &act));
            }
            finish(&mut report, dir)
        }

        Command::Simulate {
            scenario,
            horizon,
            train_horizon,
            seed,
            out,
        } => {
            let sc: Scenario = match &scenario {
                Some(p) => io::read_json(p)?,
                None => Scenario::area_a(),
            };
            let (data, truth, graph) = synthgen::generate(&sc, seed, horizon)?;
            let dir = out.dir()?;
            let mut report = RunReport::new("simulate");
            report.seed = Some(seed);
            if let Some(p) = &scenario {
                report.input("scenario", p);
            }
            let pp = dir.join("panel.csv");
            io::save_panel(&pp, &data)?;
            report.output(&pp);
            let gp = dir.join("graph");
            io::save_graph(&gp, &graph)?;
            report.output(&gp);
            let tp = dir.join("truth.csv");
            io::save_events(&tp, &truth.events)?;
            report.output(&tp);
            let op = dir.join("outflow.csv");
            io::save_series(&op, "outflow", data.timestamps(), &truth.total_outflow())?;
            report.output(&op);
            if let Some(n) = train_horizon {
                let mut clean = sc.clone();
                clean.events.clear();
                clean.start = sc.start - leakstat::Duration::minutes(sc.step_minutes * n as i64);
                let (train_panel, _, _) = synthgen::generate(&clean, seed.wrapping_add(1), n)?;
                let p = dir.join("training.csv");
                io::save_panel(&p, &train_panel)?;
                report.output(&p);
            }
            let sj = dir.join("scenario.json");
            io::write_json(&sj, &sc)?;
            report.output(&sj);
            report.metric("nodes", graph.len());
            report.metric("edges", graph.edges().len());
            report.metric("sensors", data.dim());
            report.metric("steps", data.len());
            report.metric("events", truth.events.len());
            finish(&mut report, dir)
        }

        Command::Evaluate {
            truth,
            detections,
            graph,
            radius,
            stats,
            out,
        } => {
            let truth_events = io::load_events(&truth)?;
            let detected = io::load_events(&detections)?;
            let network = io::load_graph(&graph)?;
            let dets: Vec<Detection> = detected
                .iter()
                .map(|e| {
                    let location = e.location.clone().ok_or_else(|| {
                        Error::UnresolvableLocation(format!("{}: detection '{}' has no location", detections.display(), e.id))
                    })?;
                    Ok(Detection {
                        time: e.detected.unwrap_or(e.start),
                        location,
                    })
                })
                .collect::<Result<_>>()?;
            let leaks: Vec<EventRecord> = truth_events
                .into_iter()
                .filter(|e| e.kind != EventKind::SensorBias)
                .collect();
            let confusion = detection::confusion_eval(&dets, &leaks, radius, &network)?;

            let dir = out.dir()?;
            let mut report = RunReport::new("evaluate");
            report.input("truth", &truth);
            report.input("detections", &detections);
            report.metric("true_positives", confusion.true_positives);
            report.metric("events", confusion.events);
            report.metric("tp_rate", confusion.tp_rate);
            report.metric("false_positives", confusion.fp_count);
            report.metric("delay_hours", &confusion.delay_hours);
            if let Some(sp) = &stats {
                report.input("stats", sp);
                let (series, _) = io::load_stats(sp)?;
                let grid = &series.timestamps;
                let a = detection::leak_count_from_events(&leaks, grid);
                let b = detection::leak_count_from_events(&detected, grid);
                report.metric("leak_hours", detection::leak_hours(&a, &b)?);
            }
            finish(&mut report, dir)
        }
    }
}

/// `(first, last)` active step of every alarm run; `last` is `None` for a
/// run still active at the end.
fn alarm_episodes(status: &[bool]) -> Vec<(usize, Option<usize>)> {
    let mut out = Vec::new();
    let mut open = None;
    for (t, &on) in status.iter().enumerate() {
        match (on, open) {
            (true, None) => open = Some(t),
            (false, Some(a)) => {
                out.push((a, Some(t - 1)));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        out.push((a, None));
    }
    out
}

fn step_index(panel: &SensorPanel, at: leakstat::NaiveDateTime) -> Result<usize> {
    panel
        .timestamps()
        .binary_search(&at)
        .map_err(|_| usage(format!("--at {} is not a step of the panel", io::format_timestamp(at))))
}

/// Moves change-point indices from the moving-average series onto the statistics grid.
fn shift(mut c: Classification, offset: usize) -> Classification {
    for s in &mut c.scps {
        s.index += offset;
    }
    for r in &mut c.removed {
        *r += offset;
    }
    for iv in &mut c.intervals {
        iv.range = iv.range.start + offset..iv.range.end + offset;
    }
    c
}
