use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mqn_core::hdr::{
    generate_ldr_random, read_ldr, read_rgbe, tmo_apply, write_ldr, write_rgbe, HdrImage,
    TmoParams,
};
use mqn_core::metrics::{
    combined_loss, cosine_loss, fr_loss, l1_loss, l2_loss, percentile_align, psnr, ssim,
    LossWeights, ToyExtractor,
};
use mqn_core::model::{build_mqn, forward_padded, layer_table, load_weights, save_weights, ModelGraph, MqnConfig};
use mqn_core::quant::{calibrate_tensors, quantize_model, QuantPlan};
use mqn_core::model::reflect_pad;

use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::file(path)(e.into()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::file(path)(e.into()))
}

/// Prints the effective settings of a run to stderr.
fn resolved(command: &str, flags: &[(&str, String)], cfg: Option<&MqnConfig>) {
    let mut s = format!("# mqn {command}\n");
    for (k, v) in flags {
        let _ = writeln!(s, "{k}={v}");
    }
    if let Some(c) = cfg {
        s.push_str(&c.to_text());
    }
    eprint!("{s}");
}

fn load_config(spec: &str) -> Result<MqnConfig> {
    if spec == "default" {
        return Ok(MqnConfig::default());
    }
    let path = Path::new(spec);
    let text = String::from_utf8_lossy(&read(path)?).into_owned();
    MqnConfig::parse(&text).map_err(CliError::file(path))
}

fn load_graph(weights: &Path, cfg: &MqnConfig) -> Result<ModelGraph> {
    load_weights(&read(weights)?, cfg).map_err(CliError::file(weights))
}

fn parse_plan(s: &str) -> Result<QuantPlan> {
    QuantPlan::parse(s).ok_or_else(|| {
        CliError::Usage(format!("unknown scheme `{s}` (float32, mixed, int16, int8)"))
    })
}

/// Regular files in `dir` with extension `ext`, sorted by file name.
fn list(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::file(dir)(e.into()))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::file(dir)(e.into()))?.path();
        let matches = p
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case(ext));
        if p.is_file() && matches {
            out.push(p);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

/// Input/output path pairs: one pair for a file, or every `in_ext` file of
/// a directory mapped into the output directory with `out_ext`.
fn pairs(input: &Path, output: &Path, in_ext: &str, out_ext: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    if !input.is_dir() {
        return Ok(vec![(input.to_path_buf(), output.to_path_buf())]);
    }
    fs::create_dir_all(output).map_err(|e| CliError::file(output)(e.into()))?;
    let files = list(input, in_ext)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no .{in_ext} files",
            input.display()
        )));
    }
    Ok(files
        .into_iter()
        .map(|f| {
            let stem = f.file_stem().unwrap_or_default().to_owned();
            let o = output.join(stem).with_extension(out_ext);
            (f, o)
        })
        .collect())
}

pub fn init_weights(config: &str, seed: u64, output: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    resolved(
        "init-weights",
        &[("seed", seed.to_string()), ("output", output.display().to_string())],
        Some(&cfg),
    );
    let mut g = build_mqn(&cfg)?;
    g.init_weights(seed)?;
    write(output, &save_weights(&g))
}

pub fn calibrate(config: &str, weights: &Path, images: &Path, output: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    resolved(
        "calibrate",
        &[
            ("weights", weights.display().to_string()),
            ("images", images.display().to_string()),
            ("output", output.display().to_string()),
        ],
        Some(&cfg),
    );
    let mut g = load_graph(weights, &cfg)?;
    let files = list(images, "png")?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no .png files", images.display())));
    }
    let inputs = files
        .par_iter()
        .map(|f| {
            let img = read_ldr(&read(f)?).map_err(CliError::file(f))?;
            Ok(reflect_pad(&img.to_tensor(), 32)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let rec = calibrate_tensors(&g, &inputs).map_err(CliError::file(weights))?;
    eprintln!("calibrated on {} images", files.len());
    g.set_calibration(rec);
    write(output, &save_weights(&g))
}

pub fn quantize(config: &str, weights: &Path, scheme: &str, output: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let plan = parse_plan(scheme)?;
    resolved(
        "quantize",
        &[
            ("weights", weights.display().to_string()),
            ("scheme", plan.name()),
            ("output", output.display().to_string()),
        ],
        Some(&cfg),
    );
    let g = load_graph(weights, &cfg)?;
    let q = quantize_model(&g, plan, None).map_err(CliError::file(weights))?;
    write(output, &save_weights(&q))
}

pub fn infer(
    config: &str,
    weights: &Path,
    scheme: Option<&str>,
    input: &Path,
    output: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let requested = scheme.map(parse_plan).transpose()?;
    let g = load_graph(weights, &cfg)?;
    let g = match (g.is_quantized(), requested) {
        (true, Some(p)) if p != g.plan() => {
            return Err(CliError::Usage(format!(
                "{} is already quantized as {}, not {}",
                weights.display(),
                g.plan().name(),
                p.name()
            )))
        }
        (false, Some(p)) if p != QuantPlan::float32() => {
            quantize_model(&g, p, None).map_err(CliError::file(weights))?
        }
        _ => g,
    };
    resolved(
        "infer",
        &[
            ("weights", weights.display().to_string()),
            ("scheme", g.plan().name()),
            ("input", input.display().to_string()),
            ("output", output.display().to_string()),
        ],
        Some(&cfg),
    );
    let jobs = pairs(input, output, "png", "hdr")?;
    jobs.par_iter()
        .map(|(i, o)| {
            let img = read_ldr(&read(i)?).map_err(CliError::file(i))?;
            let y = forward_padded(&g, &img.to_tensor()).map_err(CliError::file(i))?;
            let hdr = HdrImage::from_tensor(&y).map_err(CliError::file(i))?;
            write(o, &write_rgbe(&hdr))
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

pub enum TmoChoice {
    Fixed(TmoParams),
    Random(u64),
}

/// Builds operator parameters from `--kind` and `--params`, where params
/// is either a sidecar file or comma-separated `key=value` pairs.
pub fn tmo_params(kind: &str, params: Option<&str>) -> Result<TmoParams> {
    let mut text = format!("kind={kind}\n");
    match params {
        Some(p) if Path::new(p).is_file() => {
            let body = String::from_utf8_lossy(&read(Path::new(p))?).into_owned();
            text.push_str(&body);
        }
        Some(p) => text.push_str(&p.replace(',', "\n")),
        None => {}
    }
    TmoParams::parse(&text).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn tmo(input: &Path, output: &Path, choice: &TmoChoice) -> Result<()> {
    let mut flags = vec![
        ("input", input.display().to_string()),
        ("output", output.display().to_string()),
    ];
    match choice {
        TmoChoice::Fixed(p) => flags.push(("params", p.to_text().trim().replace('\n', ","))),
        TmoChoice::Random(s) => flags.push(("random_seed", s.to_string())),
    }
    resolved("tmo", &flags, None);
    let jobs = pairs(input, output, "hdr", "png")?;
    jobs.par_iter()
        .enumerate()
        .map(|(k, (i, o))| {
            let h = read_rgbe(&read(i)?).map_err(CliError::file(i))?;
            let (out, p) = match choice {
                TmoChoice::Fixed(p) => (tmo_apply(&h, p).map_err(CliError::file(i))?, *p),
                TmoChoice::Random(seed) => {
                    generate_ldr_random(&h, seed.wrapping_add(k as u64)).map_err(CliError::file(i))?
                }
            };
            if out.all_zero {
                eprintln!("warning: {}: no positive luminance, wrote black", i.display());
            }
            write(o, &write_ldr(&out.image).map_err(CliError::file(o))?)?;
            write(&o.with_extension("tmo"), p.to_text().as_bytes())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

const COLUMNS: [&str; 7] = ["psnr", "ssim", "l1", "l2", "cosine", "fr", "combined"];

fn cell(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn eval(
    pred: &Path,
    gt: &Path,
    align: bool,
    peak: f32,
    seed: u64,
    output: Option<&Path>,
) -> Result<()> {
    if !(peak > 0.0) {
        return Err(CliError::Usage(format!("--peak must be > 0, got {peak}")));
    }
    let weights = LossWeights::default();
    resolved(
        "eval",
        &[
            ("pred", pred.display().to_string()),
            ("gt", gt.display().to_string()),
            ("align", align.to_string()),
            ("peak", peak.to_string()),
            ("extractor_seed", seed.to_string()),
            (
                "loss_weights",
                format!("{},{},{},{}", weights.l1, weights.l2, weights.cosine, weights.fr),
            ),
        ],
        None,
    );
    let refs = list(gt, "hdr")?;
    if refs.is_empty() {
        return Err(CliError::Usage(format!("{}: no .hdr files", gt.display())));
    }
    let fx = ToyExtractor::new(seed);
    let rows = refs
        .par_iter()
        .map(|g| {
            let name = g.file_name().unwrap_or_default();
            let p = pred.join(name);
            let gi = read_rgbe(&read(g)?).map_err(CliError::file(g))?;
            let mut pi = read_rgbe(&read(&p)?).map_err(CliError::file(&p))?;
            if (pi.width(), pi.height()) != (gi.width(), gi.height()) {
                return Err(CliError::file(&p)(mqn_core::Error::Shape(format!(
                    "{}x{} prediction for a {}x{} reference",
                    pi.width(),
                    pi.height(),
                    gi.width(),
                    gi.height()
                ))));
            }
            if align {
                let a = percentile_align(&pi, &gi).map_err(CliError::file(&p))?;
                if a.degenerate {
                    eprintln!("warning: {}: flat prediction, alignment skipped", p.display());
                }
                pi = a.image;
            }
            let (h, y) = (gi.to_tensor(), pi.to_tensor());
            let at = |e| CliError::file(&p)(e);
            let vals = [
                psnr(&h, &y, peak).map_err(at)?,
                ssim(&h, &y).map_err(at)?,
                l1_loss(&h, &y).map_err(at)?,
                l2_loss(&h, &y).map_err(at)?,
                cosine_loss(&h, &y).map_err(at)?,
                fr_loss(&h, &y, &fx).map_err(at)?,
                combined_loss(&h, &y, &fx, &weights).map_err(at)?,
            ];
            Ok((name.to_string_lossy().into_owned(), vals.map(|v| v as f64)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = format!("image,{}\n", COLUMNS.join(","));
    let mut sums = [0.0f64; 7];
    for (name, vals) in &rows {
        csv.push_str(name);
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
            csv.push(',');
            csv.push_str(&cell(*v));
        }
        csv.push('\n');
    }
    csv.push_str("mean");
    for s in sums {
        csv.push(',');
        csv.push_str(&cell(s / rows.len() as f64));
    }
    csv.push('\n');
    match output {
        Some(o) => write(o, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Usage(format!("--size: expected HxW, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(CliError::Usage(format!("--size {s}: sides must be positive multiples of 32")));
    }
    Ok((h, w))
}

pub fn inspect(config: &str, weights: Option<&Path>, size: Option<&str>) -> Result<()> {
    let cfg = load_config(config)?;
    let (h, w) = match size {
        Some(s) => parse_size(s)?,
        None => (cfg.input_height, cfg.input_width),
    };
    let mut flags = vec![("size", format!("{h}x{w}"))];
    if let Some(p) = weights {
        flags.push(("weights", p.display().to_string()));
    }
    resolved("inspect", &flags, Some(&cfg));
    let g = match weights {
        Some(p) => load_graph(p, &cfg)?,
        None => build_mqn(&cfg)?,
    };
    let rows = layer_table(&g, h, w)?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<9} {:<9} {:<7} {:<5} {:<18} {:>9} {:>12}",
        "name", "kind", "partition", "mode", "dtype", "output", "params", "macs"
    );
    for r in &rows {
        let dtype = r
            .weight_dtype
            .map(|d| format!("{d:?}").to_lowercase())
            .unwrap_or_else(|| "-".into());
        let [n, oh, ow, oc] = r.out_shape;
        let _ = writeln!(
            out,
            "{:<width$}  {:<9} {:<9} {:<7} {:<5} {:<18} {:>9} {:>12}",
            r.name,
            r.kind,
            r.partition,
            r.mode,
            dtype,
            format!("{n}x{oh}x{ow}x{oc}"),
            r.params,
            r.macs
        );
    }
    let head: Vec<&str> = g.head_nodes().map(|(_, n)| n.name.as_str()).collect();
    let _ = writeln!(out, "scheme {}", g.plan().name());
    let _ = writeln!(out, "boundary {}", g.node(g.boundary()).name);
    let _ = writeln!(out, "head {}", head.join(","));
    let params: u64 = rows.iter().map(|r| r.params).sum();
    let macs: u64 = rows.iter().map(|r| r.macs).sum();
    let _ = writeln!(out, "total params {params} macs {macs}");
    print!("{out}");
    Ok(())
}
