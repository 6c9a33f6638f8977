use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use drc::eval::best_threshold;
use drc::fitter::{fit, AdamConfig, FitConfig};
use drc::fusion::fuse_depth;
use drc::gradcheck::{gradcheck, Fault, ALL_KINDS};
use drc::io::{
    read_bundles, read_grid, read_grid_any, write_binary_grid, write_bundle, write_grid,
    FUSED_XFORM,
};
use drc::pipeline::{add_noise_to_views, render_views, run_repro, ReproConfig, RunManifest, MANIFEST_FILE};
use drc::renderer::{make_test_shape, sample_view_ring, ImageSpec, ViewRing};
use drc::{Aabb, AuxKind, CostParams, Dims, ExecMode, GridGeometry, ObservationKind};

use crate::{
    Cli, Command, EvalArgs, FitArgs, FuseArgs, GeometryArgs, GradcheckArgs, RenderArgs,
    ReplayArgs, ReproArgs, ShapeArgs, THREADS_ENV,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Check(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

impl From<drc::Error> for CliError {
    fn from(e: drc::Error) -> Self {
        match e {
            drc::Error::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Applies `DRC_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Data(e.to_string()))
}

pub fn run(cli: Cli) -> Result<()> {
    let det = cli.deterministic;
    match cli.command {
        Command::Shape(a) => shape(&a, det),
        Command::Render(a) => render(&a, det),
        Command::Fit(a) => fit_cmd(&a, det),
        Command::Fuse(a) => fuse(&a, det),
        Command::Eval(a) => eval(&a, det),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Repro(a) => repro(&a, det),
        Command::Replay(a) => replay(&a),
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Records the resolved command line and writes `manifest.toml` into `dir`.
struct Recorder {
    manifest: RunManifest,
    dir: PathBuf,
}

impl Recorder {
    fn new(command: &str, det: bool, args: Vec<String>, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut manifest = RunManifest::new(command);
        manifest.deterministic = det;
        manifest.args = std::iter::once(command.to_string()).chain(args).collect();
        if det {
            manifest.args.push("--deterministic".into());
        }
        Ok(Recorder {
            manifest,
            dir: dir.to_path_buf(),
        })
    }

    fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(path_str(p));
    }

    fn finish(self) -> Result<()> {
        self.manifest.write(&self.dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}

fn shape(a: &ShapeArgs, det: bool) -> Result<()> {
    let args = vec![
        "--name".into(),
        a.name.to_string(),
        "--dims".into(),
        a.dims.to_string(),
        "--out".into(),
        path_str(&a.out),
    ];
    let mut rec = Recorder::new("shape", det, args, &a.out)?;
    rec.manifest.param("name", a.name).param("dims", a.dims);
    let s = make_test_shape(a.name, Dims::cube(a.dims))?;
    let attrs = vec![
        ("shape".to_string(), a.name.to_string()),
        ("cavity".to_string(), s.cavity.len().to_string()),
    ];
    let p = a.out.join("shape.grid");
    write_binary_grid(&p, &s.grid)?;
    rec.output(&p);
    let occ = s.grid.to_occupancy();
    for (file, aux) in [("color.grid", &s.color), ("semantics.grid", &s.semantics)] {
        let p = a.out.join(file);
        write_grid(&p, &occ, Some(aux), &attrs)?;
        rec.output(&p);
    }
    println!("shape\t{}", a.name);
    println!("occupied\t{}", s.grid.count_occupied());
    println!("cavity\t{}", s.cavity.len());
    rec.finish()
}

fn render(a: &RenderArgs, det: bool) -> Result<()> {
    let mut args = vec!["--grid".into(), path_str(&a.grid)];
    if let Some(x) = &a.aux {
        args.extend(["--aux".into(), path_str(x)]);
    }
    args.extend([
        "--views".into(),
        a.views.to_string(),
        "--kind".into(),
        a.kind.to_string(),
        "--noise".into(),
        a.noise.to_string(),
        "--seed".into(),
        a.seed.to_string(),
        "--image-size".into(),
        a.image_size.to_string(),
        "--out".into(),
        path_str(&a.out),
    ]);

    let depth_like = matches!(a.kind, ObservationKind::Depth | ObservationKind::DepthSemantics);
    if a.noise != 0.0 && !depth_like {
        return Err(usage(format!("--noise only applies to depth kinds, not {}", a.kind)));
    }
    if a.image_size == 0 {
        return Err(usage("--image-size must be at least 1"));
    }
    let grid = read_grid_any(&a.grid)?.into_binary();
    let aux = match (a.kind, &a.aux) {
        (ObservationKind::Color | ObservationKind::DepthSemantics, None) => {
            return Err(CliError::Data(format!("rendering {} needs an --aux grid", a.kind)));
        }
        (ObservationKind::Mask | ObservationKind::Depth, Some(_)) => {
            return Err(usage(format!("--aux does not apply to {}", a.kind)));
        }
        (_, None) => None,
        (kind, Some(p)) => {
            let aux = read_grid(p)?
                .aux
                .ok_or_else(|| CliError::Data(format!("{}: grid has no payload", p.display())))?;
            let fits = match aux.kind() {
                AuxKind::Color => kind == ObservationKind::Color,
                AuxKind::Semantics { .. } => kind == ObservationKind::DepthSemantics,
            };
            if !fits {
                return Err(CliError::Data(format!("{}: payload does not match {kind}", p.display())));
            }
            Some(aux)
        }
    };

    let mut rec = Recorder::new("render", det, args, &a.out)?;
    rec.manifest.seeds.insert("seed".into(), a.seed);
    rec.manifest
        .param("views", a.views)
        .param("kind", a.kind)
        .param("noise", a.noise)
        .param("image_size", a.image_size);
    rec.manifest.inputs.push(path_str(&a.grid));
    if let Some(p) = &a.aux {
        rec.manifest.inputs.push(path_str(p));
    }

    let params = CostParams::default();
    let ring = ViewRing {
        views: a.views,
        image: ImageSpec {
            width: a.image_size,
            height: a.image_size,
            ..ImageSpec::default()
        },
        ..ViewRing::default()
    };
    let cameras = sample_view_ring(&ring, a.seed)?;
    let mut views = render_views(&grid, aux.as_ref(), &cameras, a.kind, &params)?;
    if a.noise != 0.0 {
        views = add_noise_to_views(&views, a.noise, a.seed, &params)?;
    }
    for (i, v) in views.iter().enumerate() {
        let d = a.out.join(format!("view_{i:03}"));
        write_bundle(&d, v)?;
        rec.output(&d);
    }
    println!("rendered {} {} views into {}", views.len(), a.kind, a.out.display());
    rec.finish()
}

impl GeometryArgs {
    fn to_args(&self) -> Vec<String> {
        match &self.like {
            Some(p) => vec!["--like".into(), path_str(p)],
            None => vec!["--dims".into(), self.dims.clone(), format!("--bounds={}", self.bounds)],
        }
    }

    fn resolve(&self) -> Result<GridGeometry> {
        if let Some(p) = &self.like {
            return Ok(*read_grid_any(p)?.geometry());
        }
        let dims: Vec<usize> = self
            .dims
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(format!("bad --dims `{}`", self.dims)))?;
        let dims = match dims[..] {
            [n] => Dims::cube(n),
            [x, y, z] => Dims::new(x, y, z),
            _ => return Err(usage(format!("--dims takes 1 or 3 values, got `{}`", self.dims))),
        };
        let b: Vec<f64> = self
            .bounds
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(format!("bad --bounds `{}`", self.bounds)))?;
        let [x0, y0, z0, x1, y1, z1] = b[..] else {
            return Err(usage(format!("--bounds takes 6 values, got `{}`", self.bounds)));
        };
        Ok(GridGeometry::uniform(dims, Aabb::new([x0, y0, z0], [x1, y1, z1]))?)
    }
}

fn exec_mode(det: bool) -> ExecMode {
    if det {
        ExecMode::Deterministic
    } else {
        ExecMode::Parallel
    }
}

fn fit_cmd(a: &FitArgs, det: bool) -> Result<()> {
    let mut observations = read_bundles(&a.obs)?;
    let kind = a.kind.unwrap_or_else(|| observations[0].kind());
    if let Some(n) = a.views {
        if n == 0 || n > observations.len() {
            return Err(usage(format!(
                "--views {n} but {} bundles were found",
                observations.len()
            )));
        }
        observations.truncate(n);
    }
    let geometry = a.geometry.resolve()?;

    let mut args = vec!["--obs".into(), path_str(&a.obs)];
    args.extend(a.geometry.to_args());
    args.extend(["--kind".into(), kind.to_string()]);
    args.extend([
        "--views".into(),
        observations.len().to_string(),
        "--iterations".into(),
        a.iterations.to_string(),
        "--rays".into(),
        a.rays.to_string(),
        "--step-size".into(),
        a.step_size.to_string(),
        "--foreground-weight".into(),
        a.foreground_weight.to_string(),
        "--seed".into(),
        a.seed.to_string(),
        "--out".into(),
        path_str(&a.out),
    ]);
    let config = FitConfig {
        iterations: a.iterations,
        rays_per_iter: a.rays,
        foreground_weight: a.foreground_weight,
        seed: a.seed,
        adam: AdamConfig {
            step_size: a.step_size,
            ..AdamConfig::default()
        },
        mode: exec_mode(det),
        ..FitConfig::default()
    };
    let r = fit(&observations, &geometry, kind, &config)?;

    let mut rec = Recorder::new("fit", det, args, &a.out)?;
    rec.manifest.seeds.insert("seed".into(), a.seed);
    rec.manifest
        .param("kind", kind)
        .param("views", observations.len())
        .param("iterations", a.iterations)
        .param("rays", a.rays)
        .param("step_size", a.step_size)
        .param("foreground_weight", a.foreground_weight);
    rec.manifest.inputs.push(path_str(&a.obs));
    let p = a.out.join("fit.grid");
    write_grid(&p, &r.occupancy, r.aux.as_ref(), &[("kind".into(), kind.to_string())])?;
    rec.output(&p);
    let p = a.out.join("loss.tsv");
    fs::write(&p, r.report.to_tsv(kind))?;
    rec.output(&p);
    if let (Some(first), Some(last)) = (r.report.mean_ray_losses.first(), r.report.mean_ray_losses.last()) {
        println!("mean ray loss {first:.6} -> {last:.6} over {} iterations", a.iterations);
    }
    println!("wall time {:.2} s", r.report.wall_time.as_secs_f64());
    rec.finish()
}

fn fuse(a: &FuseArgs, det: bool) -> Result<()> {
    let observations = read_bundles(&a.obs)?;
    let geometry = a.geometry.resolve()?;
    let fused = fuse_depth(&observations, &geometry, &CostParams::default())?;

    let mut args = vec!["--obs".into(), path_str(&a.obs)];
    args.extend(a.geometry.to_args());
    args.extend(["--out".into(), path_str(&a.out)]);
    let mut rec = Recorder::new("fuse", det, args, &a.out)?;
    rec.manifest.inputs.push(path_str(&a.obs));
    let p = a.out.join("fused.grid");
    let attr = (FUSED_XFORM.0.to_string(), FUSED_XFORM.1.to_string());
    write_grid(&p, &fused.to_occupancy(), None, &[attr])?;
    rec.output(&p);
    let valid = (0..geometry.num_cells()).filter(|&i| fused.is_valid(i)).count();
    println!("fused {} views; {valid} of {} cells observed", observations.len(), geometry.num_cells());
    rec.finish()
}

fn eval(a: &EvalArgs, det: bool) -> Result<()> {
    let pred = read_grid_any(&a.pred)?.into_occupancy();
    let gt = read_grid_any(&a.gt)?.into_binary();
    let res = best_threshold(&pred, &gt)?;
    let report = format!("best_iou\t{:.6}\nbest_threshold\t{:.2}\n", res.best_iou, res.best_threshold);
    print!("{report}");
    if let Some(out) = &a.out {
        let args = vec![
            "--pred".into(),
            path_str(&a.pred),
            "--gt".into(),
            path_str(&a.gt),
            "--out".into(),
            path_str(out),
        ];
        let mut rec = Recorder::new("eval", det, args, out)?;
        rec.manifest.inputs.extend([path_str(&a.pred), path_str(&a.gt)]);
        let p = out.join("eval.tsv");
        fs::write(&p, &report)?;
        rec.output(&p);
        let p = out.join("iou_curve.tsv");
        fs::write(&p, res.curve_tsv())?;
        rec.output(&p);
        rec.finish()?;
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<()> {
    let kinds: Vec<ObservationKind> = if a.kind == "all" {
        ALL_KINDS.to_vec()
    } else {
        vec![a.kind.parse().map_err(|e: drc::Error| usage(e.to_string()))?]
    };
    let fault = a.inject_fault.map_or(Fault::None, Fault::Scale);
    let mut failed = Vec::new();
    for kind in kinds {
        let report = gradcheck(kind, a.trials, a.seed, fault)?;
        println!("{}", report.summary());
        if !report.passed() {
            failed.push(kind.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn repro(a: &ReproArgs, det: bool) -> Result<()> {
    let shapes: Vec<String> = a.shapes.iter().map(|s| s.to_string()).collect();
    let args = vec![
        "--shapes".into(),
        shapes.join(","),
        "--dims".into(),
        a.dims.to_string(),
        "--views".into(),
        a.views.to_string(),
        "--image-size".into(),
        a.image_size.to_string(),
        "--noise".into(),
        a.noise.to_string(),
        "--seed".into(),
        a.seed.to_string(),
        "--iterations".into(),
        a.iterations.to_string(),
        "--out".into(),
        path_str(&a.out),
    ];
    let mut rec = Recorder::new("repro", det, args, &a.out)?;
    rec.manifest.seeds.insert("seed".into(), a.seed);
    rec.manifest
        .param("shapes", shapes.join(","))
        .param("dims", a.dims)
        .param("views", a.views)
        .param("image_size", a.image_size)
        .param("noise", a.noise)
        .param("iterations", a.iterations);
    let config = ReproConfig {
        shapes: a.shapes.clone(),
        dims: a.dims,
        views: a.views,
        image_size: a.image_size,
        noise: a.noise,
        seed: a.seed,
        iterations: a.iterations,
        mode: exec_mode(det),
    };
    let out = run_repro(&config, Some(&a.out))?;
    for f in &out.files {
        rec.output(f);
    }
    print!("{}", drc::pipeline::repro_table(&out.rows));
    rec.finish()
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if m.tool_version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, replaying with {}",
            m.tool_version,
            env!("CARGO_PKG_VERSION")
        );
    }
    if !m.deterministic {
        eprintln!("warning: the recorded run was not deterministic; outputs may differ in the last bits");
    }
    let mut args = m.args.clone();
    if let Some(out) = &a.out {
        let i = args
            .iter()
            .position(|s| s == "--out")
            .filter(|&i| i + 1 < args.len())
            .ok_or_else(|| usage("the recorded command has no --out to override"))?;
        args[i + 1] = path_str(out);
    }
    let cli = Cli::try_parse_from(std::iter::once("drc".to_string()).chain(args))
        .map_err(|e| CliError::Data(format!("{}: {e}", a.manifest.display())))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Data("a manifest cannot record a replay".into()));
    }
    run(cli)
}
