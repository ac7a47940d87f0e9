use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sqkit::evaluate::{to_centimetres, EvalConfig, SceneModel};
use sqkit::export::{render_scene_png, RenderMode};
use sqkit::fitting::{fit_parts, FitConfig};
use sqkit::io::{atomic_write, load_obj, load_scene, manifest_stats, save_scene, save_template, TemplateLibrary};
use sqkit::kinematics::{ArticulatedTemplate, EntityKind, JointSpec, TemplatePart};
use sqkit::losses::LossWeights;
use sqkit::optimizer::{optimize_scene, trace_csv, OptimizerConfig, StageSchedule};
use sqkit::Error;

#[derive(Parser)]
#[command(name = "sqkit", version, about = "Superquadric scene tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TemplateDirs {
    /// Directory searched for template JSON files before the built-ins.
    #[arg(long = "templates", value_name = "DIR")]
    dirs: Vec<PathBuf>,
}

impl TemplateDirs {
    fn library(&self) -> TemplateLibrary {
        TemplateLibrary::new(self.dirs.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit one superquadric per part mesh and write an object template.
    Fit {
        /// Part meshes (OBJ); the first one is the root part.
        #[arg(required = true)]
        parts: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Template name; defaults to the output file stem.
        #[arg(long)]
        name: Option<String>,
        /// JSON array of joint specifications to attach.
        #[arg(long)]
        joints: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a scene to PNG at its camera resolution.
    Render {
        scene: PathBuf,
        #[arg(long, group = "mode")]
        mask: bool,
        #[arg(long, group = "mode")]
        iuv: bool,
        #[arg(long, group = "mode")]
        overlay: bool,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        templates: TemplateDirs,
    },
    /// Evaluate every loss term of a scene against a ground-truth scene.
    Eval {
        scene: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON file of loss weights.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        templates: TemplateDirs,
    },
    /// Optimize the scene poses against the scene's ground truth.
    Optimize {
        scene: PathBuf,
        #[arg(long, default_value = "default3")]
        schedule: String,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the per-iteration objective trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        templates: TemplateDirs,
    },
    /// Per-category counts and train/test split of a scene directory.
    Stats { dir: PathBuf },
    /// Run the HTTP annotation service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit {
            parts,
            output,
            name,
            joints,
            samples,
            seed,
        } => {
            let meshes = parts
                .iter()
                .map(|p| {
                    let id = p.file_stem().map_or("part".into(), |s| s.to_string_lossy().into_owned());
                    Ok((id, load_obj(p)?))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let config = FitConfig {
                n_samples: samples,
                seed,
                ..FitConfig::default()
            };
            let fits = fit_parts(&meshes, &config)?;
            let joints: Vec<JointSpec> = match joints {
                Some(p) => read_json(&p)?,
                None => Vec::new(),
            };
            let template = ArticulatedTemplate {
                name: name.unwrap_or_else(|| output.file_stem().map_or("template".into(), |s| s.to_string_lossy().into_owned())),
                kind: EntityKind::Object,
                root: fits[0].0.clone(),
                parts: fits
                    .iter()
                    .map(|(id, f)| TemplatePart {
                        id: id.clone(),
                        name: id.clone(),
                        sq: f.sq.clone(),
                        bone: None,
                    })
                    .collect(),
                joints,
                skeleton: Vec::new(),
            };
            template.validate()?;
            save_template(&template, &output)?;
            let residuals: serde_json::Map<_, _> = fits.iter().map(|(id, f)| (id.clone(), json!(f.residual))).collect();
            print_json(&json!({ "template": output, "residuals": residuals }));
        }
        Command::Render {
            scene,
            mask: _,
            iuv,
            overlay,
            output,
            templates,
        } => {
            let mode = if iuv {
                RenderMode::Iuv
            } else if overlay {
                RenderMode::Overlay
            } else {
                RenderMode::Mask
            };
            let s = load_scene(&scene)?;
            let base = scene.parent().unwrap_or(Path::new("."));
            let png = render_scene_png(&s, &templates.library(), None, mode, base)?;
            atomic_write(&output, &png)?;
        }
        Command::Eval {
            scene,
            gt,
            weights,
            templates,
        } => {
            let weights: LossWeights = match weights {
                Some(p) => read_json(&p)?,
                None => LossWeights::default(),
            };
            let (s, g) = (load_scene(&scene)?, load_scene(&gt)?);
            let lib = templates.library();
            let (human_t, object_t) = s.resolve(&lib)?;
            let (gh, go) = g.resolve(&lib)?;
            if gh != human_t || go != object_t {
                return Err(Failure::Data("scene and ground truth use different templates".into()));
            }
            let model = SceneModel::new(human_t, object_t, &s.camera, EvalConfig::default())?;
            let targets = model.targets(&g.human.pose, &g.object.pose)?;
            let report = model.report(&targets, &s.human.pose, &s.object.pose, &weights)?;
            let chamfer = model.object_chamfer(&targets, &s.object.pose)?;
            print_json(&json!({
                "report": report,
                "object_chamfer_cm": to_centimetres(chamfer),
            }));
        }
        Command::Optimize {
            scene,
            schedule,
            output,
            trace,
            templates,
        } => {
            let schedule = StageSchedule::by_name(&schedule).map_err(|e| Failure::Usage(e.to_string()))?;
            let s = load_scene(&scene)?;
            let (out, report) = optimize_scene(&s, &templates.library(), &schedule, &OptimizerConfig::default())?;
            save_scene(&out, &output)?;
            if let Some(t) = trace {
                atomic_write(&t, trace_csv(&report).as_bytes())?;
            }
            print_json(&json!({
                "report": report,
                "object_chamfer_cm": to_centimetres(report.object_chamfer),
            }));
        }
        Command::Stats { dir } => {
            let manifest = manifest_stats(&dir)?;
            print_json(&serde_json::to_value(&manifest).expect("manifests serialize"));
        }
        Command::Serve { config } => {
            let config = sq_service::ServiceConfig::load(&config).map_err(|e| Failure::Data(e.to_string()))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(e.to_string()))?;
            runtime
                .block_on(sq_service::serve(config))
                .map_err(|e| Failure::Data(e.to_string()))?;
        }
    }
    Ok(())
}

fn report_failure(kind: &str, message: &str, extra: Option<(&str, String)>) {
    let mut value = json!({ "error": kind, "message": message });
    if let Some((k, v)) = extra {
        value[k] = json!(v);
    }
    eprintln!("{value}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let message = text.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            let usage = text.lines().skip_while(|l| !l.starts_with("Usage:")).collect::<Vec<_>>().join(" ");
            report_failure("usage", message, Some(("usage", usage)));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            report_failure("usage", &m, None);
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            report_failure("data", &m, None);
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            report_failure("numerical", &m, None);
            ExitCode::from(3)
        }
    }
}
