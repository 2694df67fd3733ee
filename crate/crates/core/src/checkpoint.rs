//! Single-file network checkpoints.
//!
//! Layout: a UTF-8 text header of `\n`-terminated lines, then the raw
//! parameter values.
//!
//! ```text
//! HANDNET-CHECKPOINT 1
//! seed <u64>
//! mode <train|eval>
//! input <d0> [<d1> ...]
//! layers <count>
//! <one line per layer, e.g. `conv2d filters=16 channels=1 kernel=5 stride=1 pad=2`>
//! params <count>
//! <name> <d0> [<d1> ...]        (declaration order)
//! end
//! <every parameter value as little-endian f64, declaration order, row-major>
//! ```
//!
//! Floats in the header (dropout rates) use Rust's shortest round-trip
//! formatting, so save → load → save is byte-identical. Gradients and
//! optimizer state are not stored.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{LayerSpec, Mode, Network};

const MAGIC: &str = "HANDNET-CHECKPOINT 1";

fn layer_line(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Dense { inputs, outputs } => format!("dense inputs={inputs} outputs={outputs}"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::Conv2d {
            filters,
            channels,
            kernel,
            stride,
            pad,
        } => format!("conv2d filters={filters} channels={channels} kernel={kernel} stride={stride} pad={pad}"),
        LayerSpec::MaxPool { window, stride } => format!("maxpool window={window} stride={stride}"),
        LayerSpec::Dropout { rate } => format!("dropout rate={rate:?}"),
        LayerSpec::Flatten => "flatten".into(),
        LayerSpec::SoftmaxXent => "softmax_xent".into(),
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_layer(line: &str) -> Result<LayerSpec> {
    let mut parts = line.split(' ');
    let kind = parts.next().unwrap_or_default();
    let mut fields = std::collections::HashMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| bad(format!("malformed field `{p}`")))?;
        fields.insert(k, v);
    }
    let int = |k: &str| -> Result<usize> {
        fields
            .get(k)
            .ok_or_else(|| bad(format!("{kind}: missing `{k}`")))?
            .parse()
            .map_err(|_| bad(format!("{kind}: bad `{k}`")))
    };
    Ok(match kind {
        "dense" => LayerSpec::Dense {
            inputs: int("inputs")?,
            outputs: int("outputs")?,
        },
        "relu" => LayerSpec::Relu,
        "conv2d" => LayerSpec::Conv2d {
            filters: int("filters")?,
            channels: int("channels")?,
            kernel: int("kernel")?,
            stride: int("stride")?,
            pad: int("pad")?,
        },
        "maxpool" => LayerSpec::MaxPool {
            window: int("window")?,
            stride: int("stride")?,
        },
        "dropout" => LayerSpec::Dropout {
            rate: fields
                .get("rate")
                .ok_or_else(|| bad("dropout: missing `rate`"))?
                .parse()
                .map_err(|_| bad("dropout: bad `rate`"))?,
        },
        "flatten" => LayerSpec::Flatten,
        "softmax_xent" => LayerSpec::SoftmaxXent,
        other => return Err(bad(format!("unknown layer kind `{other}`"))),
    })
}

fn dims_str(d: &[usize]) -> String {
    d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_dims<'a>(it: impl Iterator<Item = &'a str>) -> Result<Vec<usize>> {
    it.map(|s| s.parse().map_err(|_| bad(format!("bad dimension `{s}`"))))
        .collect()
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut head = String::new();
    head.push_str(MAGIC);
    head.push('\n');
    head.push_str(&format!("seed {}\n", net.seed()));
    let mode = match net.mode() {
        Mode::Train => "train",
        Mode::Eval => "eval",
    };
    head.push_str(&format!("mode {mode}\n"));
    head.push_str(&format!("input {}\n", dims_str(net.input_dims())));
    head.push_str(&format!("layers {}\n", net.layers().len()));
    for l in net.layers() {
        head.push_str(&layer_line(l));
        head.push('\n');
    }
    head.push_str(&format!("params {}\n", net.params().len()));
    for p in net.params() {
        head.push_str(&format!("{} {}\n", p.name, dims_str(p.value.dims())));
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    for p in net.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated header"))?;
        self.pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))
    }

    fn field(&mut self, name: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(format!("expected `{name}` line, got `{line}`")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut lines = Lines { bytes, pos: 0 };
    if lines.next()? != MAGIC {
        return Err(bad("missing magic line"));
    }
    let seed: u64 = lines.field("seed")?.parse().map_err(|_| bad("bad seed"))?;
    let mode = match lines.field("mode")? {
        "train" => Mode::Train,
        "eval" => Mode::Eval,
        m => return Err(bad(format!("bad mode `{m}`"))),
    };
    let input = parse_dims(lines.field("input")?.split(' '))?;
    let n_layers: usize = lines.field("layers")?.parse().map_err(|_| bad("bad layer count"))?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        layers.push(parse_layer(lines.next()?)?);
    }
    let n_params: usize = lines.field("params")?.parse().map_err(|_| bad("bad param count"))?;
    let mut declared = Vec::with_capacity(n_params.min(1024));
    for _ in 0..n_params {
        let mut it = lines.next()?.split(' ');
        let name = it.next().unwrap_or_default().to_string();
        declared.push((name, parse_dims(it)?));
    }
    if lines.next()? != "end" {
        return Err(bad("missing `end` line"));
    }
    let pos = lines.pos;

    let mut net = Network::build_zeroed(&input, layers, seed)?;
    net.set_mode(mode);
    let body = &bytes[pos..];
    let params = net.param_slots_mut();
    if params.len() != declared.len() {
        return Err(bad(format!(
            "header declares {} params, layers imply {}",
            declared.len(),
            params.len()
        )));
    }
    let total: usize = params.iter().map(|p| p.value.numel()).sum();
    if body.len() != total * 8 {
        return Err(bad(format!("expected {} value bytes, found {}", total * 8, body.len())));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (p, (name, dims)) in params.iter_mut().zip(&declared) {
        if &p.name != name || p.value.dims() != dims.as_slice() {
            return Err(bad(format!("param `{name}` {dims:?} does not match layer stack")));
        }
        for v in p.value.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(net)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    from_bytes(&fs::read(path)?)
}
