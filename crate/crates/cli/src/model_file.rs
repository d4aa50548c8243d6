//! Model files: a text header followed by a little-endian `f64` payload.
//!
//! ```text
//! htlstm-model
//! version 1
//! payload_offset 0000000412
//! scalar f64
//! endian little
//! layout separate
//! d 2
//! in_shape 2 3
//! out_shape 2 2
//! classes 3
//! tree [1,2]([1,1] [2,2])
//! ranks 1 2 2
//! components ht0:[1,2] ht0:[1,1] ht0:[2,2] ... V_u V_f V_o V_c b_u b_f b_o b_c head_w head_b
//! end
//! ```
//!
//! `payload_offset` is the byte length of the header (always ten digits) and
//! `ranks` lists node ranks in the pre-order of `tree`. The payload holds the
//! components in the listed order. Only canonical headers are accepted, so
//! parsing and re-emitting a header reproduces it byte for byte.

use std::fs;
use std::path::Path;

use htlstm_core::ht::{component_shape, fused_shape, HtTensor};
use htlstm_core::lstm::GATES;
use htlstm_core::{DenseTensor, DimTree, GateLayout, HtLinearLayer, LstmParams};

pub const MAGIC: &str = "htlstm-model";
pub const FORMAT_VERSION: u32 = 1;
const OFFSET_WIDTH: usize = 10;
const GATE_NAMES: [&str; GATES] = ["u", "f", "o", "c"];

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Parse(String),
    #[error("unsupported model format version {0} (this build reads version {FORMAT_VERSION})")]
    Version(u32),
    #[error("payload length mismatch: header declares {expected} bytes, file holds {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("structural error: {0}")]
    Structure(String),
    #[error(transparent)]
    Model(#[from] htlstm_core::Error),
}

type Result<T> = std::result::Result<T, ModelFileError>;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelHeader {
    pub version: u32,
    pub payload_offset: usize,
    pub layout: GateLayout,
    pub in_shape: Vec<usize>,
    /// Per-gate output shape; its product is the hidden size.
    pub out_shape: Vec<usize>,
    pub classes: usize,
    /// Tree with ranks.
    pub tree: DimTree,
    pub components: Vec<String>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn layout_name(l: GateLayout) -> &'static str {
    match l {
        GateLayout::Separate => "separate",
        GateLayout::Concatenated => "concatenated",
    }
}

fn layer_count(l: GateLayout) -> usize {
    match l {
        GateLayout::Separate => GATES,
        GateLayout::Concatenated => 1,
    }
}

/// Canonical component list for a layout and tree.
pub fn component_names(layout: GateLayout, tree: &DimTree) -> Vec<String> {
    let mut names = Vec::new();
    for k in 0..layer_count(layout) {
        names.extend(tree.nodes().map(|(id, _)| format!("ht{k}:{}", tree.label(id))));
    }
    names.extend(GATE_NAMES.iter().map(|g| format!("V_{g}")));
    names.extend(GATE_NAMES.iter().map(|g| format!("b_{g}")));
    names.push("head_w".into());
    names.push("head_b".into());
    names
}

impl ModelHeader {
    pub fn for_params(p: &LstmParams) -> Self {
        let layer = &p.ht_layers()[0];
        let mut out_shape = layer.out_shape().to_vec();
        if p.layout() == GateLayout::Concatenated {
            out_shape[0] /= GATES;
        }
        let tree = layer.tree().clone();
        let mut h = Self {
            version: FORMAT_VERSION,
            payload_offset: 0,
            layout: p.layout(),
            in_shape: layer.in_shape().to_vec(),
            out_shape,
            classes: p.classes(),
            components: component_names(p.layout(), &tree),
            tree,
        };
        h.payload_offset = h.emit().len();
        h
    }

    pub fn d(&self) -> usize {
        self.in_shape.len()
    }

    pub fn hidden(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn emit(&self) -> String {
        let ranks: Vec<usize> = self.tree.nodes().map(|(_, n)| n.rank).collect();
        format!(
            "{MAGIC}\nversion {}\npayload_offset {:0w$}\nscalar f64\nendian little\nlayout {}\nd {}\nin_shape {}\nout_shape {}\nclasses {}\ntree {}\nranks {}\ncomponents {}\nend\n",
            self.version,
            self.payload_offset,
            layout_name(self.layout),
            self.d(),
            join(&self.in_shape),
            join(&self.out_shape),
            self.classes,
            self.tree.nested_intervals(),
            join(&ranks),
            self.components.join(" "),
            w = OFFSET_WIDTH,
        )
    }

    /// Parses a header, checks its structure and returns it. `text` must
    /// end right after the `end` line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n');
        let mut next = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| ModelFileError::Parse(format!("missing '{key}' line")))?;
            let line = line
                .strip_suffix('\n')
                .ok_or_else(|| ModelFileError::Parse(format!("unterminated '{key}' line")))?;
            if key == MAGIC || key == "end" {
                return if line == key {
                    Ok(String::new())
                } else {
                    Err(ModelFileError::Parse(format!("expected '{key}', found '{line}'")))
                };
            }
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| ModelFileError::Parse(format!("expected '{key} ...', found '{line}'")))
        };
        fn num(s: &str, what: &str) -> Result<usize> {
            s.parse()
                .map_err(|_| ModelFileError::Parse(format!("{what}: '{s}' is not a non-negative integer")))
        }
        fn list(s: &str, what: &str) -> Result<Vec<usize>> {
            s.split(' ').map(|t| num(t, what)).collect()
        }

        next(MAGIC)?;
        let version = num(&next("version")?, "version")? as u32;
        if version != FORMAT_VERSION {
            return Err(ModelFileError::Version(version));
        }
        let offset_text = next("payload_offset")?;
        if offset_text.len() != OFFSET_WIDTH {
            return Err(ModelFileError::Parse(format!(
                "payload_offset must have {OFFSET_WIDTH} digits"
            )));
        }
        let payload_offset = num(&offset_text, "payload_offset")?;
        if next("scalar")? != "f64" {
            return Err(ModelFileError::Parse("only 'scalar f64' is supported".into()));
        }
        if next("endian")? != "little" {
            return Err(ModelFileError::Parse("only 'endian little' is supported".into()));
        }
        let layout = match next("layout")?.as_str() {
            "separate" => GateLayout::Separate,
            "concatenated" => GateLayout::Concatenated,
            other => return Err(ModelFileError::Parse(format!("unknown layout '{other}'"))),
        };
        let d = num(&next("d")?, "d")?;
        let in_shape = list(&next("in_shape")?, "in_shape")?;
        let out_shape = list(&next("out_shape")?, "out_shape")?;
        let classes = num(&next("classes")?, "classes")?;
        let tree_text = next("tree")?;
        let ranks = list(&next("ranks")?, "ranks")?;
        let components: Vec<String> = next("components")?.split(' ').map(str::to_string).collect();
        next("end")?;

        if in_shape.len() != d || out_shape.len() != d {
            return Err(ModelFileError::Structure(format!(
                "d = {d} but in_shape has {} modes and out_shape {}",
                in_shape.len(),
                out_shape.len()
            )));
        }
        let mut tree = DimTree::from_nested_intervals(&tree_text)
            .map_err(|e| ModelFileError::Structure(e.to_string()))?;
        if tree.d() != d {
            return Err(ModelFileError::Structure(format!("tree covers {} modes, header says d = {d}", tree.d())));
        }
        if ranks.len() != tree.len() {
            return Err(ModelFileError::Structure(format!(
                "{} ranks listed for {} tree nodes",
                ranks.len(),
                tree.len()
            )));
        }
        for (i, &r) in ranks.iter().enumerate() {
            tree.set_rank(htlstm_core::NodeId(i), r)
                .map_err(|e| ModelFileError::Structure(e.to_string()))?;
        }
        check_components(layout, &tree, &components)?;

        let header = Self {
            version,
            payload_offset,
            layout,
            in_shape,
            out_shape,
            classes,
            tree,
            components,
        };
        if header.emit() != text {
            return Err(ModelFileError::Parse("header is not in canonical form".into()));
        }
        if payload_offset != text.len() {
            return Err(ModelFileError::Parse(format!(
                "payload_offset {payload_offset} does not match header length {}",
                text.len()
            )));
        }
        Ok(header)
    }

    /// Shapes of the components in payload order.
    pub fn component_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let h = self.hidden();
        let mut layer_out = self.out_shape.clone();
        if self.layout == GateLayout::Concatenated {
            layer_out[0] *= GATES;
        }
        let fused = fused_shape(&self.in_shape, &layer_out)?;
        let mut shapes = Vec::new();
        for _ in 0..layer_count(self.layout) {
            shapes.extend(self.tree.nodes().map(|(id, _)| component_shape(&self.tree, &fused, id)));
        }
        shapes.extend(std::iter::repeat_n(vec![h, h], GATES));
        shapes.extend(std::iter::repeat_n(vec![h], GATES));
        shapes.push(vec![self.classes, h]);
        shapes.push(vec![self.classes]);
        Ok(shapes)
    }

    pub fn payload_len(&self) -> Result<usize> {
        Ok(8 * self
            .component_shapes()?
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum::<usize>())
    }
}

fn check_components(layout: GateLayout, tree: &DimTree, listed: &[String]) -> Result<()> {
    let want = component_names(layout, tree);
    for k in 0..layer_count(layout) {
        let prefix = format!("ht{k}:");
        let leaves = |names: &[String]| {
            names
                .iter()
                .filter(|n| {
                    n.strip_prefix(&prefix)
                        .and_then(|l| l.strip_prefix('[')?.strip_suffix(']'))
                        .and_then(|l| l.split_once(','))
                        .is_some_and(|(a, b)| a == b)
                })
                .count()
        };
        let (have, need) = (leaves(listed), leaves(&want));
        if have != need {
            return Err(ModelFileError::Structure(format!(
                "layer ht{k} lists {have} leaf frames but the tree has {need} leaves"
            )));
        }
    }
    if listed != want.as_slice() {
        let at = listed.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(want.len().min(listed.len()));
        return Err(ModelFileError::Structure(format!(
            "component list differs from the layout at entry {at}: expected {:?}, found {:?}",
            want.get(at),
            listed.get(at)
        )));
    }
    Ok(())
}

pub fn encode(p: &LstmParams) -> Vec<u8> {
    let header = ModelHeader::for_params(p);
    let mut bytes = header.emit().into_bytes();
    for s in p.param_slices() {
        for v in s {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn split_header(bytes: &[u8]) -> Result<(ModelHeader, &[u8])> {
    const END: &[u8] = b"\nend\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| ModelFileError::Parse("no 'end' line found".into()))?
        + END.len();
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| ModelFileError::Parse("header is not valid UTF-8".into()))?;
    let header = ModelHeader::parse(text)?;
    Ok((header, &bytes[end..]))
}

pub fn decode(bytes: &[u8]) -> Result<LstmParams> {
    let (header, payload) = split_header(bytes)?;
    let expected = header.payload_len()?;
    if payload.len() != expected {
        return Err(ModelFileError::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut tensors = header
        .component_shapes()?
        .into_iter()
        .map(|shape| {
            let len = shape.iter().product();
            DenseTensor::new(shape, values.by_ref().take(len).collect())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter();

    let mut layer_out = header.out_shape.clone();
    if header.layout == GateLayout::Concatenated {
        layer_out[0] *= GATES;
    }
    let fused = fused_shape(&header.in_shape, &layer_out)?;
    let layers = (0..layer_count(header.layout))
        .map(|_| {
            let comps: Vec<DenseTensor> = tensors.by_ref().take(header.tree.len()).collect();
            let core = HtTensor::from_components(header.tree.clone(), fused.clone(), comps)?;
            HtLinearLayer::from_core(core, header.in_shape.clone(), layer_out.clone())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let recurrent: Vec<DenseTensor> = tensors.by_ref().take(GATES).collect();
    let bias: Vec<DenseTensor> = tensors.by_ref().take(GATES).collect();
    let head_w = tensors.next().expect("head weight");
    let head_b = tensors.next().expect("head bias");
    Ok(LstmParams::from_parts(header.layout, layers, recurrent, bias, head_w, head_b)?)
}

/// Parses only the header of a model file.
pub fn read_header(bytes: &[u8]) -> Result<ModelHeader> {
    Ok(split_header(bytes)?.0)
}

pub fn save_model(path: &Path, p: &LstmParams) -> Result<()> {
    fs::write(path, encode(p)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<LstmParams> {
    let bytes = fs::read(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use htlstm_core::{InteriorSplit, LstmConfig};

    fn model(layout: GateLayout) -> LstmParams {
        LstmParams::new(&LstmConfig {
            in_shape: vec![2, 3, 2, 2, 1],
            out_shape: vec![2, 1, 1, 2, 1],
            leaf_rank: 2,
            internal_rank: 3,
            split: InteriorSplit::CeilLeft,
            classes: 3,
            layout,
            seed: 11,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        for layout in [GateLayout::Separate, GateLayout::Concatenated] {
            let p = model(layout);
            let bytes = encode(&p);
            let q = decode(&bytes).unwrap();
            let a: Vec<u64> = p.param_slices().concat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = q.param_slices().concat().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(encode(&q), bytes);
        }
    }

    #[test]
    fn header_emit_parse_identity() {
        let h = ModelHeader::for_params(&model(GateLayout::Separate));
        let text = h.emit();
        assert_eq!(text.len(), h.payload_offset);
        let parsed = ModelHeader::parse(&text).unwrap();
        assert_eq!(parsed, h);
        assert_eq!(parsed.emit(), text);
    }

    #[test]
    fn payload_is_eight_bytes_per_parameter() {
        let p = model(GateLayout::Separate);
        let bytes = encode(&p);
        let h = read_header(&bytes).unwrap();
        assert_eq!(bytes.len() - h.payload_offset, 8 * p.param_count());
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&model(GateLayout::Separate));
        let err = decode(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn unknown_version_refused() {
        let bytes = encode(&model(GateLayout::Separate));
        let text = String::from_utf8_lossy(&bytes).replacen("version 1\n", "version 7\n", 1);
        let err = decode(text.as_bytes()).unwrap_err();
        assert!(matches!(err, ModelFileError::Version(7)));
    }

    #[test]
    fn missing_leaf_frame_is_structural() {
        let bytes = encode(&model(GateLayout::Separate));
        let h = read_header(&bytes).unwrap();
        let text = h.emit().replacen(" ht0:[5,5]", "", 1);
        let err = ModelHeader::parse(&text).unwrap_err();
        assert!(matches!(err, ModelFileError::Structure(_)), "{err}");
        assert!(err.to_string().contains("4 leaf frames"), "{err}");
    }

    #[test]
    fn noncanonical_header_rejected() {
        let h = ModelHeader::for_params(&model(GateLayout::Separate));
        let text = h.emit().replacen("classes 3", "classes 03", 1);
        assert!(ModelHeader::parse(&text).is_err());
    }
}
