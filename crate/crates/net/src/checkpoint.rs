//! Binary model checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ODFM"
//! 4       4     format version (u32)
//! 8       1     mode (0 standard, 1 xyz)
//! 9       1     direction aggregation (0 max, 1 concat)
//! 10      2     reserved, zero
//! 12      4     directions (u32)
//! 16      4     scales (u32)
//! 20      4     edge neighbors k (u32)
//! 24      4     classes (u32)
//! 28      4     layer count L (u32)
//! 32      12·L  layer table: group u8, activation u8, 2 zero bytes,
//!               input width u32, output width u32
//! ...           parameters as f32, per layer: weights row-major, then bias
//! ```
//!
//! All integers and floats are little-endian. Parameters are stored as f32,
//! so saving a loaded checkpoint reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{NetError, Result};
use crate::features::NetMode;
use crate::mlp::{Activation, Dense};
use crate::model::{DirAggregation, LayerGroup, MiniOdfNet, NetConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ODFM";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;
const LAYER_ENTRY_LEN: usize = 12;

pub fn checkpoint_bytes(net: &MiniOdfNet) -> Vec<u8> {
    let c = &net.config;
    let layers = net.layers();
    let mut out = Vec::with_capacity(HEADER_LEN + layers.len() * LAYER_ENTRY_LEN + net.param_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(c.mode.code());
    out.push(c.aggregation.code());
    out.extend_from_slice(&[0, 0]);
    for v in [c.n_directions, c.n_scales, c.k, c.classes, layers.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (g, l) in &layers {
        out.push(g.code());
        out.push(l.activation.code());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
    }
    for (_, l) in &layers {
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, net: &MiniOdfNet) -> Result<()> {
    fs::write(path, checkpoint_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MiniOdfNet> {
    let bytes = fs::read(path)?;
    parse_checkpoint(&path.display().to_string(), &bytes)
}

struct Reader<'a> {
    name: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> NetError {
        NetError::Checkpoint {
            path: self.name.to_string(),
            offset,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated: {what} needs {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Parses checkpoint bytes; `name` labels errors.
pub fn parse_checkpoint(name: &str, bytes: &[u8]) -> Result<MiniOdfNet> {
    let mut r = Reader { name, bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.err(0, "bad magic, expected \"ODFM\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let mode = NetMode::from_code(r.u8("mode")?).ok_or_else(|| r.err(8, "unknown mode"))?;
    let aggregation = DirAggregation::from_code(r.u8("aggregation")?).ok_or_else(|| r.err(9, "unknown aggregation"))?;
    if r.take(2, "reserved")? != [0, 0] {
        return Err(r.err(10, "reserved bytes must be zero"));
    }
    let mut dims = [0usize; 4];
    for (i, (d, what)) in dims.iter_mut().zip(["directions", "scales", "k", "classes"]).enumerate() {
        *d = r.u32(what)? as usize;
        if *d == 0 {
            return Err(r.err(12 + 4 * i, format!("{what} must be positive")));
        }
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 || count > 1024 {
        return Err(r.err(28, format!("implausible layer count {count}")));
    }
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let group = LayerGroup::from_code(r.u8("layer group")?).ok_or_else(|| r.err(at, "unknown layer group"))?;
        let act = Activation::from_code(r.u8("activation")?).ok_or_else(|| r.err(at + 1, "unknown activation"))?;
        if r.take(2, "layer reserved")? != [0, 0] {
            return Err(r.err(at + 2, "reserved bytes must be zero"));
        }
        let input = r.u32("input width")? as usize;
        let output = r.u32("output width")? as usize;
        if input == 0 || output == 0 || input > 1 << 20 || output > 1 << 20 {
            return Err(r.err(at + 4, format!("implausible layer shape {input}x{output}")));
        }
        table.push((at, group, act, input, output));
    }
    let config = config_from_table(mode, aggregation, dims, &table).map_err(|(at, msg)| r.err(at, msg))?;
    let expected = config.layer_shapes();
    if expected.len() != table.len() {
        return Err(r.err(28, format!("{} layers, configuration implies {}", table.len(), expected.len())));
    }
    for (&(at, group, act, input, output), &(eg, ei, eo, ea)) in table.iter().zip(&expected) {
        if (group, act, input, output) != (eg, ea, ei, eo) {
            return Err(r.err(
                at,
                format!("layer {group:?} {input}x{output} {act:?}, expected {eg:?} {ei}x{eo} {ea:?}"),
            ));
        }
    }
    let needed: usize = table.iter().map(|e| 4 * (e.3 + 1) * e.4).sum();
    if bytes.len() - r.pos < needed {
        return Err(r.err(
            bytes.len(),
            format!("truncated: parameters need {needed} bytes, {} left", bytes.len() - r.pos),
        ));
    }
    let mut layers = Vec::with_capacity(count);
    for &(_, group, act, input, output) in &table {
        let mut values = Vec::with_capacity((input + 1) * output);
        for _ in 0..(input + 1) * output {
            let at = r.pos;
            let v = r.f32("parameter")?;
            if !v.is_finite() {
                return Err(r.err(at, "non-finite parameter"));
            }
            values.push(v as f64);
        }
        let bias = Array1::from(values.split_off(input * output));
        let weight = Array2::from_shape_vec((input, output), values).expect("sized");
        layers.push((group, Dense { weight, bias, activation: act }));
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(MiniOdfNet::from_layers(config, layers).expect("shapes checked"))
}

type TableEntry = (usize, LayerGroup, Activation, usize, usize);

/// Recovers the widths from the layer table.
fn config_from_table(
    mode: NetMode,
    aggregation: DirAggregation,
    dims: [usize; 4],
    table: &[TableEntry],
) -> std::result::Result<NetConfig, (usize, String)> {
    let outs = |g: LayerGroup| -> Vec<usize> { table.iter().filter(|e| e.1 == g).map(|e| e.4).collect() };
    let head = outs(LayerGroup::Head);
    let fin = outs(LayerGroup::Final);
    if head.is_empty() || fin.len() != 1 {
        return Err((32, "layer table needs one final layer and a head".into()));
    }
    let config = NetConfig {
        mode,
        aggregation,
        n_directions: dims[0],
        n_scales: dims[1],
        k: dims[2],
        classes: dims[3],
        dir_widths: outs(LayerGroup::OdfDir),
        glob_widths: outs(LayerGroup::OdfGlob),
        edge_widths: outs(LayerGroup::Edge),
        final_width: fin[0],
        head_widths: head[..head.len() - 1].to_vec(),
    };
    if *head.last().expect("non-empty") != config.classes {
        let at = table.iter().rfind(|e| e.1 == LayerGroup::Head).expect("head").0;
        return Err((at + 8, format!("head output {} != classes {}", head.last().unwrap(), config.classes)));
    }
    config.validate().map_err(|e| (12, e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use odf_core::rng::seeded;

    fn tiny() -> MiniOdfNet {
        let config = NetConfig {
            dir_widths: vec![3],
            glob_widths: vec![4],
            edge_widths: vec![5],
            final_width: 6,
            head_widths: vec![4],
            n_directions: 12,
            n_scales: 2,
            k: 4,
            ..NetConfig::desk(NetMode::XyzInvariant, 3)
        };
        MiniOdfNet::new(config, &mut seeded(5)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let bytes = checkpoint_bytes(&tiny());
        let net = parse_checkpoint("mem", &bytes).unwrap();
        assert_eq!(checkpoint_bytes(&net), bytes);
        assert_eq!(net.config, tiny().config);
    }

    #[test]
    fn header_layout() {
        let bytes = checkpoint_bytes(&tiny());
        assert_eq!(&bytes[0..4], b"ODFM");
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 6);
        assert_eq!(bytes.len(), 32 + 6 * 12 + 4 * tiny().param_count());
    }

    #[test]
    fn positioned_errors() {
        let bytes = checkpoint_bytes(&tiny());
        let offset = |b: &[u8]| match parse_checkpoint("mem", b) {
            Err(NetError::Checkpoint { offset, .. }) => offset,
            other => panic!("expected checkpoint error, got {other:?}"),
        };
        let mut b = bytes.clone();
        b[0] = b'X';
        assert_eq!(offset(&b), 0);
        let mut b = bytes.clone();
        b[10] = 1;
        assert_eq!(offset(&b), 10);
        assert_eq!(offset(&bytes[..bytes.len() - 1]), bytes.len() - 1);
        let mut b = bytes.clone();
        b.push(0);
        assert_eq!(offset(&b), bytes.len());
        let mut b = bytes.clone();
        let at = bytes.len() - 4;
        b[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset(&b), at);
    }
}
