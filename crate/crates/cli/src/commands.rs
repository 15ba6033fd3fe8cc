use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use hgconv_core::autodiff::{gradcheck as run_gradcheck, FixtureSpec, Pipeline, PipelinePoint};
use hgconv_core::clustering::{parse_ratio, run_clustering, AttentionMap, ClusterConfig};
use hgconv_core::fixtures::clustered_grid;
use hgconv_core::flops::{flops_clustering, flops_hg_module};
use hgconv_core::hgconv::{coarsen_all, refine};
use hgconv_core::io::{cluster_visualize, read_pnm, write_pnm, RunConfig, Tensor};
use hgconv_core::traindemo::{run_demo, DemoConfig};
use hgconv_core::verify::{self, CaseResult};
use hgconv_core::{Direction, DirectionalAdjacency, Error, GridShape};

use crate::{ClusterArgs, ConvCheckArgs, FlopsArgs, GradcheckArgs, TrainDemoArgs};

#[derive(Debug)]
pub enum CliError {
    Verification(String),
    Usage(String),
    Io(String),
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Usage(m) | CliError::Io(m) | CliError::Config(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Format { .. } | Error::Truncated { .. } | Error::Io(_) => CliError::Io(msg),
            Error::Config(_) => CliError::Config(msg),
            Error::InvalidArgument(_)
            | Error::Shape { .. }
            | Error::UnregisteredPrimitive(_)
            | Error::NegativeEntry { .. } => CliError::Usage(msg),
            Error::NonFinite(_) | Error::Unrefined | Error::Diverged { .. } => {
                CliError::Verification(msg)
            }
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn with_path(path: &Path, e: Error) -> CliError {
    match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn ratio(s: &str) -> CliResult<f64> {
    parse_ratio(s).map_err(|e| CliError::Usage(format!("--ratio: {e}")))
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let bytes = read(p)?;
            let text = String::from_utf8(bytes).map_err(|_| {
                CliError::Config(format!("{}: configuration is not valid UTF-8", p.display()))
            })?;
            RunConfig::from_toml_str(&text).map_err(|e| with_path(p, e))
        }
    }
}

fn load_attention(path: &Path, shape: GridShape) -> CliResult<AttentionMap> {
    let t = Tensor::decode(&read(path)?).map_err(|e| with_path(path, e))?;
    let n = shape.n_pixels();
    let fits = match t.dims() {
        [h, w] => (*h, *w) == (shape.height(), shape.width()) || (*h, *w) == (n, 1),
        [len] => *len == n,
        _ => false,
    };
    if !fits {
        return Err(CliError::Usage(format!(
            "attention tensor has dims {:?}; expected [{}, {}], [{n}] or [{n}, 1]",
            t.dims(),
            shape.height(),
            shape.width()
        )));
    }
    Ok(AttentionMap::new(
        shape,
        t.data().iter().map(|&v| f64::from(v)).collect(),
    )?)
}

pub fn cluster(a: &ClusterArgs) -> CliResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.cluster.seed = seed;
    }
    if let Some(alpha) = a.alpha {
        cfg.cluster.focus_alpha = alpha;
    }
    if let Some(r) = &a.ratio {
        cfg.cluster.downsample_ratio = ratio(r)?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let image = read_pnm(&read(&a.input)?).map_err(|e| with_path(&a.input, e))?;
    let shape = image.shape();
    let attention = a
        .attention
        .as_deref()
        .map(|p| load_attention(p, shape))
        .transpose()?;
    let x = image.to_features();
    let out = run_clustering(&x, shape, &cfg.cluster, attention.as_ref())?;
    let s = &out.assignment;
    let groups = refine(
        &coarsen_all(s, &DirectionalAdjacency::new(shape))?,
        cfg.module.refine_options(),
    )?;

    let viz = cluster_visualize(s, shape, out.centers.seeds(), cfg.cluster.seed);
    write(&a.out_viz, write_pnm(&viz))?;
    write(&a.out_assign, Tensor::from_matrix(&s.to_dense()).encode())?;

    let mut sizes = vec![0usize; s.n_groups()];
    for g in s.argmax() {
        sizes[g] += 1;
    }
    let mut report = String::new();
    let _ = writeln!(report, "pixels: {}", shape.n_pixels());
    let _ = writeln!(report, "groups: {}", s.n_groups());
    let _ = writeln!(
        report,
        "nonempty_groups: {}",
        sizes.iter().filter(|&&c| c > 0).count()
    );
    let _ = writeln!(
        report,
        "mean_cluster_size: {:.6}",
        shape.n_pixels() as f64 / s.n_groups() as f64
    );
    let _ = writeln!(
        report,
        "max_cluster_size: {}",
        sizes.iter().max().copied().unwrap_or(0)
    );
    let _ = writeln!(report, "assignment_nnz: {}", s.nnz());
    for d in Direction::ALL {
        let _ = writeln!(report, "adjacency_nnz_{}: {}", d.name(), groups.nnz(d));
    }
    print!("{report}");
    if let Some(p) = &a.out_stats {
        write(p, &report)?;
    }
    Ok(())
}

pub fn conv_check(a: &ConvCheckArgs) -> CliResult {
    let sizes = match &a.sizes {
        Some(s) => verify::parse_sizes(s).map_err(|e| CliError::Usage(format!("--sizes: {e}")))?,
        None => verify::default_sizes(),
    };
    let cases = verify::conv_check(&sizes, a.seeds)?;
    for c in &cases {
        println!("{c}");
    }
    let worst = cases.iter().map(|c| c.max_abs_diff).fold(0.0, f64::max);
    let failed = cases.iter().filter(|c| !c.passed()).count();
    println!("cases: {}", cases.len());
    println!("max_abs_diff: {worst:.3e}");
    println!("tolerance: {:.0e}", verify::EQUIVALENCE_TOLERANCE);
    if failed > 0 {
        let first = cases
            .iter()
            .find(|c| !c.passed())
            .map(CaseResult::to_string)
            .unwrap_or_default();
        return Err(CliError::Verification(format!(
            "{failed} case(s) over tolerance, first: {first}"
        )));
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    let pipeline: Pipeline = a
        .pipeline
        .parse()
        .map_err(|e: Error| CliError::Usage(format!("--pipeline: {e}")))?;
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(CliError::Usage("--tolerance must be positive".into()));
    }
    let point = PipelinePoint::fixture(&FixtureSpec {
        pipeline,
        seed: a.seed,
        ..FixtureSpec::default()
    })?;
    let report = run_gradcheck(&point, &point.random_readout(a.seed), a.h)?;
    println!("{report}");
    println!("tolerance: {:e}", a.tolerance);
    if report.passes(a.tolerance) {
        println!("result: PASS");
        Ok(())
    } else {
        println!("result: FAIL");
        Err(CliError::Verification(format!(
            "max relative error {:e} in {} exceeds {:e}",
            report.max_rel_error(),
            report.offending().unwrap_or("?"),
            a.tolerance
        )))
    }
}

pub fn flops(a: &FlopsArgs) -> CliResult {
    let shape = GridShape::new(a.height, a.width).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.channels == 0 || a.layers == 0 {
        return Err(CliError::Usage(
            "--channels and --layers must be positive".into(),
        ));
    }
    let cfg = ClusterConfig {
        downsample_ratio: ratio(&a.ratio)?,
        seed: a.seed,
        ..ClusterConfig::default()
    };
    let (_, s, g) = clustered_grid(shape, a.channels, &cfg)?;
    let report = flops_hg_module(&s, &g, a.channels, a.channels, a.layers)?
        .with_clustering(flops_clustering(shape, a.channels, s.n_groups(), &cfg));
    println!("{report}");
    Ok(())
}

pub fn train_demo(a: &TrainDemoArgs) -> CliResult {
    let cfg = DemoConfig {
        epochs: a.epochs,
        lr: a.lr,
        samples: a.samples,
        seed: a.seed,
        ..DemoConfig::default()
    };
    let mut lines = String::new();
    let result = run_demo(&cfg, |m| {
        println!("{m}");
        let _ = writeln!(lines, "{m}");
    });
    if let Some(p) = &a.out {
        write(p, &lines)?;
    }
    result?;
    Ok(())
}
