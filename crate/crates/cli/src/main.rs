//! `mtcc`: enhance fingerprint images, build cylinder templates, match them
//! and run the verification protocol over a dataset directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use mtcc::evaluation::{emit_curves, run_protocol_with, write_summary, MemorySource, Sample};
use mtcc::{
    build_template, deserialize_template, enhance_pipeline, global_score, parse_minutiae, serialize_template, Config,
    DatasetLayout, Error, FeatureKind, FloatMap, GrayImage, Mask, Template, TextureMaps,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

const EXIT_IO: u8 = 1;
const EXIT_EMPTY_MASK: u8 = 2;
const EXIT_EMPTY_TEMPLATE: u8 = 3;
const EXIT_KIND_MISMATCH: u8 = 4;
const EXIT_USAGE: u8 = 64;

const MAP_FILES: [&str; 3] = ["orientation.fmap", "frequency.fmap", "energy.fmap"];

#[derive(Parser)]
#[command(name = "mtcc", version, about = "Minutia cylinder code fingerprint matcher")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the enhanced image, the mask and the three texture maps.
    Enhance {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and serialize the template of one image and minutiae file.
    Template {
        image: PathBuf,
        minutiae: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: FeatureKind,
        #[arg(long)]
        out: PathBuf,
        /// Reuse the maps written by `enhance` instead of recomputing them.
        #[arg(long, value_name = "DIR")]
        maps: Option<PathBuf>,
    },
    /// Print the global score of two templates.
    Match { a: PathBuf, b: PathBuf },
    /// Run the verification protocol over `<s>_<i>.<ext>` files.
    Evaluate {
        dataset: PathBuf,
        /// `all` or a comma-separated list of o,f,e,co,cf,ce.
        #[arg(long, value_parser = parse_kind_list)]
        kind: Option<KindList>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        impressions: Option<usize>,
    },
    /// Print the effective configuration.
    Config,
}

fn parse_kind(s: &str) -> Result<FeatureKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone)]
struct KindList(Vec<FeatureKind>);

fn parse_kind_list(s: &str) -> Result<KindList, String> {
    mtcc::config::parse_kinds(s).map(KindList).map_err(|e| e.to_string())
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptyMask => EXIT_EMPTY_MASK,
            Error::EmptyTemplate => EXIT_EMPTY_TEMPLATE,
            Error::KindMismatch(..) => EXIT_KIND_MISMATCH,
            _ => EXIT_IO,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mtcc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Defaults, then the config file, then flags.
fn load_config(g: &GlobalOpts) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.apply_text(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v).map_err(|e| usage(format!("--set {kv}: {e}")))?;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = load_config(&cli.global)?;
    if cfg.workers > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let verbose = cli.global.verbose;
    match cli.command {
        Command::Enhance { image, out } => cmd_enhance(&image, &out, &cfg),
        Command::Template {
            image,
            minutiae,
            kind,
            out,
            maps,
        } => cmd_template(&image, &minutiae, kind, &out, maps.as_deref(), &cfg),
        Command::Match { a, b } => cmd_match(&a, &b, &cfg, verbose),
        Command::Evaluate {
            dataset,
            kind,
            out,
            subjects,
            impressions,
        } => {
            if let Some(KindList(k)) = kind {
                cfg.kinds = k;
            }
            cfg.subjects = subjects.unwrap_or(cfg.subjects);
            cfg.impressions = impressions.unwrap_or(cfg.impressions);
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            cmd_evaluate(&dataset, &out, &cfg, verbose)
        }
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn enhance(image: &Path, cfg: &Config) -> Result<(GrayImage, TextureMaps), Failure> {
    let img = GrayImage::load(image)?;
    Ok(enhance_pipeline(&img, &cfg.enhancement, &cfg.stft)?)
}

fn cmd_enhance(image: &Path, out: &Path, cfg: &Config) -> CmdResult {
    let (enhanced, maps) = enhance(image, cfg)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    enhanced.save(out.join("enhanced.pgm"))?;
    maps.mask.save(out.join("mask.pgm"))?;
    for (name, map) in MAP_FILES.iter().zip([&maps.orientation, &maps.frequency, &maps.energy]) {
        map.save_raw(out.join(name))?;
    }
    Ok(())
}

fn load_maps(dir: &Path) -> Result<TextureMaps, Failure> {
    let mask = Mask::from_image(&GrayImage::load(dir.join("mask.pgm"))?);
    let mut maps = TextureMaps::blank(mask);
    let [o, f, e] = MAP_FILES.map(|n| FloatMap::load_raw(dir.join(n)));
    maps.orientation = o?;
    maps.frequency = f?;
    maps.energy = e?;
    for m in [&maps.orientation, &maps.frequency, &maps.energy] {
        if m.dims() != maps.mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: maps.mask.dims(),
                actual: m.dims(),
            }
            .into());
        }
    }
    Ok(maps)
}

fn read_minutiae(path: &Path) -> Result<Vec<mtcc::Minutia>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_minutiae(&text).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_template(
    image: &Path,
    minutiae: &Path,
    kind: FeatureKind,
    out: &Path,
    maps_dir: Option<&Path>,
    cfg: &Config,
) -> CmdResult {
    let ms = read_minutiae(minutiae)?;
    let maps = match maps_dir {
        Some(dir) => load_maps(dir)?,
        None => enhance(image, cfg)?.1,
    };
    let t = build_template(kind, &ms, &maps, &cfg.cylinder)?;
    write_bytes(out, &serialize_template(&t)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_template(path: &Path) -> Result<Template, Failure> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    deserialize_template(&bytes).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_match(a: &Path, b: &Path, cfg: &Config, verbose: bool) -> CmdResult {
    let (ta, tb) = (read_template(a)?, read_template(b)?);
    let r = global_score(&ta, &tb, &cfg.relax)?;
    let mut out = format!("{:.6}\n", r.score);
    if verbose {
        let _ = writeln!(out, "# {} paired minutiae (n_p = {})", r.pairs.len(), r.n_p);
        let _ = writeln!(
            out,
            "# ref_x ref_y ref_theta query_x query_y query_theta similarity relaxed"
        );
        for p in &r.pairs {
            let (m, n) = (&ta.cylinders[p.reference].center, &tb.cylinders[p.query].center);
            let _ = writeln!(
                out,
                "{:.2} {:.2} {:.4} {:.2} {:.2} {:.4} {:.6} {:.6}",
                m.x, m.y, m.theta, n.x, n.y, n.theta, p.similarity, p.relaxed
            );
        }
    }
    std::io::stdout()
        .write_all(out.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

/// Cache key over the inputs and every setting that shapes a template.
fn cache_key(image: &[u8], minutiae: &[u8], cfg: &Config, kind: FeatureKind) -> String {
    let mut h = Sha256::new();
    for part in [
        image,
        minutiae,
        cfg.section_text(&["enhance.", "stft.", "cylinder."]).as_bytes(),
        kind.label().as_bytes(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

fn cmd_evaluate(dataset: &Path, out: &Path, cfg: &Config, verbose: bool) -> CmdResult {
    let layout = DatasetLayout::new(dataset, cfg.subjects, cfg.impressions)?;
    let cache = if cfg.cache_dir.is_empty() {
        out.join("cache")
    } else {
        PathBuf::from(&cfg.cache_dir)
    };
    fs::create_dir_all(&cache).map_err(|e| io_err(&cache, e))?;

    let samples: Vec<Sample> = (1..=layout.subjects)
        .flat_map(|s| (1..=layout.impressions).map(move |i| Sample::new(s, i)))
        .collect();
    let sources: Vec<Mutex<MemorySource>> = cfg.kinds.iter().map(|_| Mutex::new(MemorySource::new())).collect();
    let problems: Vec<Vec<String>> = samples
        .par_iter()
        .map(|&s| {
            let mut notes = Vec::new();
            if let Err(e) = prepare_sample(&layout, s, cfg, &cache, &sources, &mut notes) {
                notes.push(format!("{s}: {e}"));
            }
            notes
        })
        .collect();
    let problems: Vec<String> = problems.into_iter().flatten().collect();
    for p in &problems {
        eprintln!("mtcc: {p}");
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut listing: String = problems.iter().map(|p| format!("{p}\n")).collect();

    let mut reports = Vec::new();
    for (kind, src) in cfg.kinds.iter().zip(sources) {
        let src = src.into_inner().expect("no worker panicked");
        let rep = run_protocol_with(&layout, &src, *kind, &cfg.relax)?;
        emit_curves(&rep, &out.join(kind.label()))?;
        if verbose {
            eprintln!(
                "{kind}: EER {:.4}%, FMR1000 {:.4}%, {} skipped pairs",
                100.0 * rep.eer,
                100.0 * rep.fmr1000.fnmr,
                rep.skipped.len()
            );
        }
        for sk in &rep.skipped {
            let _ = writeln!(listing, "{kind} {} {}: {}", sk.a, sk.b, sk.reason);
        }
        reports.push(rep);
    }
    write_summary(&reports, &out.join("summary.csv"))?;
    fs::write(out.join("problems.txt"), listing).map_err(|e| io_err(out, e))?;
    Ok(())
}

/// Loads or builds every requested template of one sample. Recoverable
/// per-kind problems go to `notes`; an `Err` skips the whole sample.
fn prepare_sample(
    layout: &DatasetLayout,
    s: Sample,
    cfg: &Config,
    cache: &Path,
    sources: &[Mutex<MemorySource>],
    notes: &mut Vec<String>,
) -> Result<(), String> {
    let img_path = layout.path(s.subject, s.impression, &cfg.image_ext);
    let min_path = layout.path(s.subject, s.impression, &cfg.minutiae_ext);
    let image = fs::read(&img_path).map_err(|e| format!("missing image {}: {e}", img_path.display()))?;
    let minutiae = fs::read(&min_path).map_err(|e| format!("missing minutiae {}: {e}", min_path.display()))?;

    let mut pending = BTreeMap::new();
    for (slot, kind) in cfg.kinds.iter().enumerate() {
        let path = cache.join(format!("{}.mtcc", cache_key(&image, &minutiae, cfg, *kind)));
        match fs::read(&path).ok().and_then(|b| deserialize_template(&b).ok()) {
            Some(t) => sources[slot].lock().expect("lock").insert(s, t),
            None => {
                pending.insert(slot, path);
            }
        }
    }
    if pending.is_empty() {
        return Ok(());
    }
    let ms = mtcc::template::parse_minutiae_bytes(&minutiae).map_err(|e| format!("{}: {e}", min_path.display()))?;
    let img = GrayImage::load(&img_path).map_err(|e| e.to_string())?;
    let (_, maps) = enhance_pipeline(&img, &cfg.enhancement, &cfg.stft).map_err(|e| e.to_string())?;
    for (slot, path) in pending {
        let kind = cfg.kinds[slot];
        match build_template(kind, &ms, &maps, &cfg.cylinder) {
            Ok(t) => {
                let bytes = serialize_template(&t).map_err(|e| e.to_string())?;
                fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
                sources[slot].lock().expect("lock").insert(s, t);
            }
            Err(e) => notes.push(format!("{s} kind {kind}: {e}")),
        }
    }
    Ok(())
}
