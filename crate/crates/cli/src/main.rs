use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use layertex::pipeline::{
    self, PipelineConfig, ProviderSpec, ALL_STAGES, BLEND_STAGES, DECOMPOSE_STAGES, RENDER_STAGES,
};
use layertex::{fixtures, Error};

const EXIT_VALIDATION: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "layertex", version, about = "Occlusion-aware layered mesh texturing")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage.
    Run {
        #[arg(long)]
        mesh: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Stages 1–5: load, superfaces, weight table, hit levels, level sets.
    Decompose {
        #[arg(long)]
        mesh: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Stage 6: depth maps and the render manifest.
    Render {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Stages 7–9: provider, unprojection, blending.
    Blend {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Per-level faces, superfaces and coverage of a finished workdir.
    Stats {
        #[arg(long)]
        workdir: PathBuf,
    },
    /// Write a test mesh as OBJ.
    Fixture {
        #[arg(value_enum)]
        kind: FixtureKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        subdivisions: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Cube,
    Icosphere,
    NestedSpheres,
    ConcentricShells,
    OpenBox,
    Torus,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    workdir: PathBuf,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `procedural` or `dir:<path>`.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum hit level.
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    ray_res: Option<u32>,
    #[arg(long)]
    view_res: Option<u32>,
    #[arg(long)]
    uv_res: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    camera_distance: Option<f64>,
    #[arg(long)]
    fov: Option<f64>,
    /// Prompt for one hit level: `--prompt-level 2 "a red apple"`.
    #[arg(long, num_args = 2, value_names = ["K", "TEXT"], action = clap::ArgAction::Append)]
    prompt_level: Vec<String>,
}

impl Overrides {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.provider {
            c.provider = p.parse::<ProviderSpec>()?;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(seed => seed, levels => h_max, ray_res => ray_resolution, view_res => view_resolution,
             uv_res => uv_resolution, tau => tau, camera_distance => camera_distance, fov => fov_deg);
        for pair in self.prompt_level.chunks(2) {
            let level = pair[0]
                .parse::<u32>()
                .map_err(|_| Error::Validation(format!("--prompt-level expects a level number, got `{}`", pair[0])))?;
            c.prompts.insert(level, pair[1].clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn run_range(mesh: Option<&Path>, opts: &Overrides, range: std::ops::RangeInclusive<u8>) -> Result<(), Error> {
    let config = opts.config()?;
    let report = pipeline::run_stages(&config, mesh, &opts.workdir, range)?;
    for s in &report.stages {
        let state = if s.skipped { "skipped" } else { "ran" };
        println!("{:<11} {:<8} {:>8.2} s", s.stage, state, s.seconds);
    }
    if let Some(blend) = report.stage("blend") {
        if let Some(f) = blend.details["coverage"]["fraction"].as_f64() {
            println!("coverage {:.2}%", f * 100.0);
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { mesh, opts } => run_range(Some(&mesh), &opts, ALL_STAGES),
        Command::Decompose { mesh, opts } => run_range(Some(&mesh), &opts, DECOMPOSE_STAGES),
        Command::Render { opts } => run_range(None, &opts, RENDER_STAGES),
        Command::Blend { opts } => run_range(None, &opts, BLEND_STAGES),
        Command::Stats { workdir } => {
            print!("{}", pipeline::stats_table(&workdir)?);
            Ok(())
        }
        Command::Fixture { kind, out, subdivisions } => {
            let s = subdivisions;
            let mesh = match kind {
                FixtureKind::Cube => fixtures::cube(),
                FixtureKind::Icosphere => fixtures::icosphere(s, 0.5, Default::default()),
                FixtureKind::NestedSpheres => fixtures::nested_spheres(s),
                FixtureKind::ConcentricShells => fixtures::concentric_shells(s),
                FixtureKind::OpenBox => fixtures::open_box(s.max(1) as usize),
                FixtureKind::Torus => fixtures::torus(16 * s.max(1) as usize, 8 * s.max(1) as usize, 0.35, 0.12),
            };
            mesh.write_obj(&out)?;
            println!("{} faces -> {}", mesh.face_count(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_STAGE })
        }
    }
}
