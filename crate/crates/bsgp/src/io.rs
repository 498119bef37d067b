//! Model files: a short text header followed by a little-endian `f64` payload.
//!
//! ```text
//! BSGP-STATE v1
//! kind samples|svgp
//! likelihood <name>
//! layers <L>
//! layer <M> <D> <P>        (L lines)
//! states <S>
//! scale <D> <0|1>
//! config <K>
//! <K lines of run configuration>
//! payload <count>
//! <count × 8 bytes>
//! ```
//!
//! Payload order: feature means and stds, target mean and std (if present),
//! one chain id per state, each state in flat layout, then for `svgp` the
//! `M × M` factor `L_S` row-major. Wall-clock timings are not stored.

use std::io::{BufRead, Write};
use std::path::Path;

use bsgp_core::baseline::SvgpModel;
use bsgp_core::likelihood::{LikelihoodKind, LikelihoodParams};
use bsgp_core::linalg::Mat;
use bsgp_core::model::{LayerState, ModelState};
use bsgp_core::sampler::{SampleMeta, SampleSet};
use bsgp_core::KernelHyper;

use crate::config::RunConfig;
use crate::data::Standardizer;
use crate::error::{HarnessError, Result};

pub const MAGIC: &str = "BSGP-STATE v1";

#[derive(Clone, Debug, PartialEq)]
pub enum Fitted {
    Samples(SampleSet),
    Svgp(SvgpModel),
}

impl Fitted {
    fn template(&self) -> &ModelState {
        match self {
            Fitted::Samples(s) => &s.states[0],
            Fitted::Svgp(_) => unreachable!("svgp has no model state"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub fitted: Fitted,
    pub config: RunConfig,
    pub x_scale: Standardizer,
    pub y_scale: Option<Standardizer>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

pub fn write_model(w: &mut impl Write, f: &ModelFile) -> Result<()> {
    let mut head = String::new();
    let mut payload: Vec<f64> = Vec::new();
    payload.extend(&f.x_scale.mean);
    payload.extend(&f.x_scale.std);
    if let Some(y) = &f.y_scale {
        payload.extend([y.mean[0], y.std[0]]);
    }
    let (kind, shapes, lik, states) = match &f.fitted {
        Fitted::Samples(s) => {
            if s.is_empty() {
                return Err(bad("cannot write an empty sample set"));
            }
            let t = f.fitted.template();
            payload.extend(s.chain_ids.iter().map(|&c| c as f64));
            for st in &s.states {
                payload.extend(st.to_flat());
            }
            let shapes: Vec<_> = t.layers.iter().map(|l| (l.num_inducing(), l.input_dim(), l.output_dim())).collect();
            ("samples", shapes, t.lik.kind, s.len())
        }
        Fitted::Svgp(m) => {
            let st = ModelState::new(vec![m.layer.clone()], m.lik.clone())?;
            payload.push(0.0);
            payload.extend(st.to_flat());
            payload.extend(m.l_s.as_slice());
            let l = &m.layer;
            ("svgp", vec![(l.num_inducing(), l.input_dim(), l.output_dim())], m.lik.kind, 1)
        }
    };
    head.push_str(MAGIC);
    head.push('\n');
    head.push_str(&format!("kind {kind}\nlikelihood {}\nlayers {}\n", lik.name(), shapes.len()));
    for (m, d, p) in &shapes {
        head.push_str(&format!("layer {m} {d} {p}\n"));
    }
    head.push_str(&format!("states {states}\n"));
    head.push_str(&format!("scale {} {}\n", f.x_scale.mean.len(), u8::from(f.y_scale.is_some())));
    let echo = f.config.echo();
    head.push_str(&format!("config {}\n{echo}", echo.lines().count()));
    head.push_str(&format!("payload {}\n", payload.len()));
    let mut bytes = head.into_bytes();
    bytes.reserve(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| HarnessError::io("<model output>", e))
}

fn line(r: &mut impl BufRead) -> Result<String> {
    let mut s = String::new();
    let n = r.read_line(&mut s).map_err(|e| HarnessError::io("<model input>", e))?;
    if n == 0 {
        return Err(bad("unexpected end of header"));
    }
    Ok(s.trim_end_matches('\n').to_string())
}

fn field<'a>(l: &'a str, key: &str) -> Result<Vec<&'a str>> {
    let mut it = l.split_whitespace();
    if it.next() != Some(key) {
        return Err(bad(format!("expected `{key}` line, found `{l}`")));
    }
    Ok(it.collect())
}

fn count(l: &str, key: &str) -> Result<usize> {
    let f = field(l, key)?;
    f.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad `{key}` line: `{l}`")))
}

pub fn read_model(r: &mut impl BufRead) -> Result<ModelFile> {
    if line(r)? != MAGIC {
        return Err(bad("not a model file (bad magic line)"));
    }
    let kind_line = line(r)?;
    let kind = field(&kind_line, "kind")?.first().copied().unwrap_or("").to_string();
    let lik_line = line(r)?;
    let lik_name = field(&lik_line, "likelihood")?.first().copied().unwrap_or("").to_string();
    let lik_kind =
        LikelihoodKind::from_name(&lik_name).ok_or_else(|| bad(format!("unknown likelihood `{lik_name}`")))?;
    let n_layers = count(&line(r)?, "layers")?;
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let l = line(r)?;
        let f = field(&l, "layer")?;
        let v: Vec<usize> = f.iter().filter_map(|s| s.parse().ok()).collect();
        if v.len() != 3 {
            return Err(bad(format!("bad layer line `{l}`")));
        }
        shapes.push((v[0], v[1], v[2]));
    }
    let n_states = count(&line(r)?, "states")?;
    let scale_line = line(r)?;
    let sf: Vec<usize> = field(&scale_line, "scale")?.iter().filter_map(|s| s.parse().ok()).collect();
    if sf.len() != 2 {
        return Err(bad(format!("bad scale line `{scale_line}`")));
    }
    let n_cfg = count(&line(r)?, "config")?;
    let mut cfg_text = String::new();
    for _ in 0..n_cfg {
        cfg_text.push_str(&line(r)?);
        cfg_text.push('\n');
    }
    let config = RunConfig::parse(&cfg_text)?;
    let n_payload = count(&line(r)?, "payload")?;
    let mut raw = vec![0u8; n_payload * 8];
    r.read_exact(&mut raw).map_err(|_| bad("payload shorter than declared"))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| HarnessError::io("<model input>", e))?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    // template with the declared structure, for flat-length bookkeeping
    let layers = shapes
        .iter()
        .map(|&(m, d, p)| LayerState::new(KernelHyper::isotropic(d, 1.0, 1.0), Mat::zeros(m, d), Mat::zeros(m, p)))
        .collect::<bsgp_core::Result<Vec<_>>>()?;
    let lik = LikelihoodParams { kind: lik_kind, log_noise_variance: 0.0 };
    let mut template = ModelState::new(layers, lik)?;
    let flat_len = template.flat_len();
    let d = sf[0];
    let has_y = sf[1] == 1;
    let m0 = shapes.first().map_or(0, |s| s.0);
    let expected = 2 * d
        + 2 * usize::from(has_y)
        + n_states * (1 + flat_len)
        + if kind == "svgp" { m0 * m0 } else { 0 };
    if n_payload != expected {
        return Err(bad(format!("payload has {n_payload} values, header implies {expected}")));
    }
    let mut it = vals.into_iter();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let x_scale = Standardizer { mean: take(d), std: take(d) };
    let y_scale = has_y.then(|| {
        let v = take(2);
        Standardizer { mean: vec![v[0]], std: vec![v[1]] }
    });
    let chain_ids: Vec<u32> = take(n_states).into_iter().map(|c| c as u32).collect();
    let mut states = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        template.set_flat(&take(flat_len))?;
        states.push(template.clone());
    }
    let fitted = match kind.as_str() {
        "samples" => Fitted::Samples(SampleSet::new(
            states,
            chain_ids,
            SampleMeta { config: config.sampler.sghmc.clone(), seconds: Vec::new() },
        )?),
        "svgp" => {
            let st = states.pop().ok_or_else(|| bad("svgp file without a state"))?;
            let layer = st.layers.into_iter().next().ok_or_else(|| bad("svgp file without a layer"))?;
            let mut m = SvgpModel::new(layer, st.lik)?;
            m.l_s = Mat::from_vec(m0, m0, take(m0 * m0));
            Fitted::Svgp(m)
        }
        other => return Err(bad(format!("unknown model kind `{other}`"))),
    };
    Ok(ModelFile { fitted, config, x_scale, y_scale })
}

pub fn save(path: &Path, f: &ModelFile) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, f)?;
    std::fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_model(&mut std::io::BufReader::new(file))
}
