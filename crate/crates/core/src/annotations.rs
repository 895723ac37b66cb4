//! Viewer region-annotation XML.
//!
//! The modeled subset is
//!
//! ```text
//! <Annotations MicronsPerPixel="f?">
//!   <Annotation Id="i" Name="s?" LineColor="d">
//!     <Regions>
//!       <Region Id="i" NegativeROA="0|1">
//!         <Vertices>
//!           <Vertex X="f" Y="f"/>
//! ```
//!
//! Any other element or attribute is skipped when parsing and is not written
//! back. Coordinates keep their exact parsed value; serialization prints the
//! shortest text that reparses to the same value.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 24-bit display color stored as `R + 256·G + 65536·B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineColor(pub u32);

impl LineColor {
    pub fn from_rgb(rgb: [u8; 3]) -> Self {
        LineColor(rgb[0] as u32 + 256 * rgb[1] as u32 + 65536 * rgb[2] as u32)
    }

    pub fn rgb(self) -> [u8; 3] {
        [
            (self.0 & 0xff) as u8,
            ((self.0 >> 8) & 0xff) as u8,
            ((self.0 >> 16) & 0xff) as u8,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vertex<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T> Vertex<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Clone, Debug, PartialEq)]
pub struct Region<T = f64> {
    pub id: u32,
    /// Hole flag (`NegativeROA="1"`).
    pub negative: bool,
    pub vertices: Vec<Vertex<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationLayer<T = f64> {
    pub id: u32,
    pub name: Option<String>,
    pub line_color: LineColor,
    pub regions: Vec<Region<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationDocument<T = f64> {
    pub microns_per_pixel: Option<T>,
    pub layers: Vec<AnnotationLayer<T>>,
}

impl<T> Default for AnnotationDocument<T> {
    fn default() -> Self {
        Self {
            microns_per_pixel: None,
            layers: Vec::new(),
        }
    }
}

impl<T: Scalar> AnnotationDocument<T> {
    pub fn layer(&self, id: u32) -> Option<&AnnotationLayer<T>> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn region_count(&self) -> usize {
        self.layers.iter().map(|l| l.regions.len()).sum()
    }

    /// Checks id uniqueness and coordinate finiteness.
    pub fn validate(&self) -> Result<()> {
        let mut layer_ids = HashSet::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let lpath = format!("Annotations/Annotation[{}]", li + 1);
            if !layer_ids.insert(layer.id) {
                return Err(xml_err(&lpath, format!("duplicate layer Id {}", layer.id)));
            }
            let mut region_ids = HashSet::new();
            for (ri, region) in layer.regions.iter().enumerate() {
                let rpath = format!("{lpath}/Regions/Region[{}]", ri + 1);
                if !region_ids.insert(region.id) {
                    return Err(xml_err(&rpath, format!("duplicate region Id {}", region.id)));
                }
                for (vi, v) in region.vertices.iter().enumerate() {
                    if !v.x.is_finite() || !v.y.is_finite() {
                        return Err(xml_err(
                            &format!("{rpath}/Vertices/Vertex[{}]", vi + 1),
                            "non-finite coordinate".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> AnnotationDocument<U> {
        let c = |v: T| U::from_f64_lossy(v.to_f64_exact());
        AnnotationDocument {
            microns_per_pixel: self.microns_per_pixel.map(c),
            layers: self
                .layers
                .iter()
                .map(|l| AnnotationLayer {
                    id: l.id,
                    name: l.name.clone(),
                    line_color: l.line_color,
                    regions: l
                        .regions
                        .iter()
                        .map(|r| Region {
                            id: r.id,
                            negative: r.negative,
                            vertices: r.vertices.iter().map(|v| Vertex::new(c(v.x), c(v.y))).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Binding between an annotation layer and a mask class index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBinding {
    pub layer_id: u32,
    pub class: u8,
    pub color: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Project-level layer↔class table. Class 0 is background and never bound.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClassMapRepr", into = "ClassMapRepr")]
pub struct ClassMap {
    bindings: Vec<ClassBinding>,
}

#[derive(Serialize, Deserialize)]
struct ClassMapRepr {
    bindings: Vec<ClassBinding>,
}

impl TryFrom<ClassMapRepr> for ClassMap {
    type Error = Error;
    fn try_from(r: ClassMapRepr) -> Result<Self> {
        ClassMap::new(r.bindings)
    }
}

impl From<ClassMap> for ClassMapRepr {
    fn from(m: ClassMap) -> Self {
        ClassMapRepr { bindings: m.bindings }
    }
}

impl ClassMap {
    pub fn new(bindings: Vec<ClassBinding>) -> Result<Self> {
        let mut classes = HashSet::new();
        let mut layers = HashSet::new();
        for b in &bindings {
            if b.class == 0 {
                return Err(Error::ClassMap(format!(
                    "layer {} is bound to class 0 (background)",
                    b.layer_id
                )));
            }
            if !classes.insert(b.class) {
                return Err(Error::ClassMap(format!("class {} bound twice", b.class)));
            }
            if !layers.insert(b.layer_id) {
                return Err(Error::ClassMap(format!("layer {} bound twice", b.layer_id)));
            }
        }
        Ok(Self { bindings })
    }

    /// Layer `k` ↔ class `k` for `k` in `1..=n`.
    pub fn identity(n: u8) -> Self {
        const PALETTE: [[u8; 3]; 6] = [
            [0, 255, 0],
            [255, 0, 0],
            [0, 0, 255],
            [255, 255, 0],
            [0, 255, 255],
            [255, 0, 255],
        ];
        Self {
            bindings: (1..=n)
                .map(|c| ClassBinding {
                    layer_id: c as u32,
                    class: c,
                    color: PALETTE[(c as usize - 1) % PALETTE.len()],
                    name: None,
                })
                .collect(),
        }
    }

    pub fn bindings(&self) -> &[ClassBinding] {
        &self.bindings
    }

    pub fn class_for_layer(&self, layer_id: u32) -> Option<u8> {
        self.bindings.iter().find(|b| b.layer_id == layer_id).map(|b| b.class)
    }

    pub fn binding_for_class(&self, class: u8) -> Option<&ClassBinding> {
        self.bindings.iter().find(|b| b.class == class)
    }

    /// Size of the class space including background.
    pub fn n_classes(&self) -> u8 {
        self.bindings.iter().map(|b| b.class).max().unwrap_or(0) + 1
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ClassMap(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("class map serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn xml_err(path: &str, message: String) -> Error {
    Error::Xml {
        path: path.to_string(),
        message,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Root,
    Layer,
    Regions,
    Region,
    Vertices,
    Vertex,
    Ignored,
}

struct Frame {
    ctx: Ctx,
    path: String,
    // (child element name, count) for indexing same-named siblings.
    children: Vec<(String, usize)>,
}

impl Frame {
    fn child_path(&mut self, name: &str) -> String {
        let n = match self.children.iter_mut().find(|(k, _)| k == name) {
            Some((_, n)) => {
                *n += 1;
                *n
            }
            None => {
                self.children.push((name.to_string(), 1));
                1
            }
        };
        let base = if self.path.is_empty() {
            String::new()
        } else {
            format!("{}/", self.path)
        };
        if matches!(name, "Annotation" | "Region" | "Vertex") {
            format!("{base}{name}[{n}]")
        } else {
            format!("{base}{name}")
        }
    }
}

fn attr(e: &BytesStart<'_>, key: &str, path: &str) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| xml_err(path, err.to_string()))?;
        if a.key.as_ref() == key {
            let v = a
                .normalized_value(XmlVersion::Implicit1_0)
                .map_err(|err| xml_err(path, err.to_string()))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn required(e: &BytesStart<'_>, key: &str, path: &str) -> Result<String> {
    attr(e, key, path)?.ok_or_else(|| xml_err(path, format!("missing required attribute {key}")))
}

fn parse_num<N: std::str::FromStr>(text: &str, key: &str, path: &str) -> Result<N> {
    text.trim()
        .parse::<N>()
        .map_err(|_| xml_err(path, format!("attribute {key}: invalid number {text:?}")))
}

fn parse_coord<T: Scalar>(text: &str, key: &str, path: &str) -> Result<T> {
    let v: T = parse_num(text, key, path)?;
    if !v.is_finite() {
        return Err(xml_err(path, format!("attribute {key}: invalid number {text:?}")));
    }
    Ok(v)
}

/// Parses a viewer annotation document.
pub fn parse_annotations<T: Scalar>(text: &str) -> Result<AnnotationDocument<T>> {
    let mut reader = Reader::from_str(text);
    let mut doc = AnnotationDocument::<T>::default();
    let mut stack: Vec<Frame> = vec![Frame {
        ctx: Ctx::Root,
        path: String::new(),
        children: Vec::new(),
    }];
    let mut seen_root = false;

    loop {
        let pos = reader.buffer_position();
        let event = reader.read_event().map_err(|e| {
            let path = stack.last().map(|f| f.path.clone()).unwrap_or_default();
            xml_err(
                if path.is_empty() { "/" } else { &path },
                format!("malformed XML near byte {pos}: {e}"),
            )
        })?;
        let (start, is_empty) = match event {
            Event::Start(e) => (e, false),
            Event::Empty(e) => (e, true),
            Event::End(_) => {
                stack.pop();
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let name = start.name().as_ref().to_string();
        let parent = stack.last_mut().expect("root frame");
        let parent_ctx = parent.ctx;
        let path = parent.child_path(&name);

        let ctx = match (parent_ctx, name.as_str()) {
            (Ctx::Root, "Annotations") if stack.len() == 1 && !seen_root => {
                seen_root = true;
                if let Some(v) = attr(&start, "MicronsPerPixel", &path)? {
                    doc.microns_per_pixel = Some(parse_coord(&v, "MicronsPerPixel", &path)?);
                }
                Ctx::Layer
            }
            (Ctx::Root, _) if stack.len() == 1 => {
                return Err(xml_err(&path, format!("expected <Annotations> root, found <{name}>")));
            }
            (Ctx::Layer, "Annotation") => {
                let id = parse_num(&required(&start, "Id", &path)?, "Id", &path)?;
                let name_attr = attr(&start, "Name", &path)?;
                let line_color = match attr(&start, "LineColor", &path)? {
                    Some(v) => LineColor(parse_num(&v, "LineColor", &path)?),
                    None => LineColor::default(),
                };
                doc.layers.push(AnnotationLayer {
                    id,
                    name: name_attr,
                    line_color,
                    regions: Vec::new(),
                });
                Ctx::Regions
            }
            (Ctx::Regions, "Regions") => Ctx::Region,
            (Ctx::Region, "Region") => {
                let id = parse_num(&required(&start, "Id", &path)?, "Id", &path)?;
                let negative = match attr(&start, "NegativeROA", &path)?.as_deref().map(str::trim) {
                    None | Some("0") | Some("false") => false,
                    Some("1") | Some("true") => true,
                    Some(other) => {
                        return Err(xml_err(&path, format!("attribute NegativeROA: invalid flag {other:?}")))
                    }
                };
                let layer = doc.layers.last_mut().expect("inside a layer");
                layer.regions.push(Region {
                    id,
                    negative,
                    vertices: Vec::new(),
                });
                Ctx::Vertices
            }
            (Ctx::Vertices, "Vertices") => Ctx::Vertex,
            (Ctx::Vertex, "Vertex") => {
                let x = parse_coord(&required(&start, "X", &path)?, "X", &path)?;
                let y = parse_coord(&required(&start, "Y", &path)?, "Y", &path)?;
                let region = doc
                    .layers
                    .last_mut()
                    .and_then(|l| l.regions.last_mut())
                    .expect("inside a region");
                region.vertices.push(Vertex::new(x, y));
                Ctx::Ignored
            }
            _ => Ctx::Ignored,
        };
        if !is_empty {
            stack.push(Frame {
                ctx,
                path,
                children: Vec::new(),
            });
        }
    }
    if !seen_root {
        return Err(xml_err("/", "missing <Annotations> root".into()));
    }
    if stack.len() != 1 {
        return Err(xml_err(
            &stack.last().map(|f| f.path.clone()).unwrap_or_default(),
            "unexpected end of document".into(),
        ));
    }
    doc.validate()?;
    Ok(doc)
}

pub fn read_annotations<T: Scalar>(path: &Path) -> Result<AnnotationDocument<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text).map_err(|e| match e {
        Error::Xml { path: p, message } => Error::Xml {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })
}

/// Serializes the modeled attribute set with two-space indentation.
pub fn serialize_annotations<T: Scalar>(doc: &AnnotationDocument<T>) -> String {
    use quick_xml::escape::escape;

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    match doc.microns_per_pixel {
        Some(mpp) => writeln!(out, "<Annotations MicronsPerPixel=\"{mpp}\">").unwrap(),
        None => out.push_str("<Annotations>\n"),
    }
    for layer in &doc.layers {
        write!(out, "  <Annotation Id=\"{}\"", layer.id).unwrap();
        if let Some(name) = &layer.name {
            write!(out, " Name=\"{}\"", escape(name.as_str())).unwrap();
        }
        writeln!(out, " LineColor=\"{}\">", layer.line_color.0).unwrap();
        out.push_str("    <Regions>\n");
        for region in &layer.regions {
            writeln!(
                out,
                "      <Region Id=\"{}\" NegativeROA=\"{}\">",
                region.id,
                u8::from(region.negative)
            )
            .unwrap();
            out.push_str("        <Vertices>\n");
            for v in &region.vertices {
                writeln!(out, "          <Vertex X=\"{}\" Y=\"{}\"/>", v.x, v.y).unwrap();
            }
            out.push_str("        </Vertices>\n      </Region>\n");
        }
        out.push_str("    </Regions>\n  </Annotation>\n");
    }
    out.push_str("</Annotations>\n");
    out
}

pub fn write_annotations<T: Scalar>(path: &Path, doc: &AnnotationDocument<T>) -> Result<()> {
    std::fs::write(path, serialize_annotations(doc)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<Annotations MicronsPerPixel="0.252">
  <Annotation Id="1" Name="glomerulus" LineColor="65280">
    <Regions>
      <Region Id="7" NegativeROA="0">
        <Vertices>
          <Vertex X="10.5" Y="20"/>
          <Vertex X="30" Y="20.25"/>
          <Vertex X="30" Y="40"/>
        </Vertices>
      </Region>
    </Regions>
  </Annotation>
</Annotations>"#;

    #[test]
    fn minimal_document() {
        let doc: AnnotationDocument = parse_annotations(MINIMAL).unwrap();
        assert_eq!(doc.microns_per_pixel, Some(0.252));
        assert_eq!(doc.layers.len(), 1);
        let l = &doc.layers[0];
        assert_eq!((l.id, l.name.as_deref(), l.line_color), (1, Some("glomerulus"), LineColor(65280)));
        assert_eq!(l.regions[0].id, 7);
        assert!(!l.regions[0].negative);
        assert_eq!(
            l.regions[0].vertices,
            vec![Vertex::new(10.5, 20.0), Vertex::new(30.0, 20.25), Vertex::new(30.0, 40.0)]
        );
    }

    #[test]
    fn negative_roa_sets_hole_flag() {
        let xml = MINIMAL.replace("NegativeROA=\"0\"", "NegativeROA=\"1\"");
        let doc: AnnotationDocument = parse_annotations(&xml).unwrap();
        assert!(doc.layers[0].regions[0].negative);
    }

    #[test]
    fn bad_coordinate_names_the_vertex() {
        let xml = MINIMAL.replace("X=\"30\" Y=\"40\"", "X=\"abc\" Y=\"40\"");
        let err = parse_annotations::<f64>(&xml).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Vertex[3]"), "{msg}");
        assert!(msg.contains("abc"), "{msg}");
    }

    #[test]
    fn missing_required_attributes() {
        for (from, to, key) in [
            ("Annotation Id=\"1\"", "Annotation", "Id"),
            ("Region Id=\"7\"", "Region", "Id"),
            ("Vertex X=\"10.5\"", "Vertex", "X"),
            ("Y=\"20\"/>", "/>", "Y"),
        ] {
            let xml = MINIMAL.replacen(from, to, 1);
            let msg = parse_annotations::<f64>(&xml).unwrap_err().to_string();
            assert!(msg.contains(&format!("missing required attribute {key}")), "{msg}");
        }
    }

    #[test]
    fn malformed_xml_is_reported() {
        let xml = MINIMAL.replace("</Regions>", "");
        assert!(matches!(parse_annotations::<f64>(&xml), Err(Error::Xml { .. })));
        assert!(matches!(parse_annotations::<f64>("<Foo/>"), Err(Error::Xml { .. })));
    }

    #[test]
    fn unmodeled_content_is_skipped() {
        let xml = r#"<?xml version="1.0"?>
<Annotations MicronsPerPixel="0.5">
  <Annotation Id="2" ReadOnly="0" LineColorReadOnly="0" Visible="1">
    <Attributes><Attribute Name="x" Id="0" Value=""/></Attributes>
    <Regions>
      <RegionAttributeHeaders><AttributeHeader Id="9999" Name="Region"/></RegionAttributeHeaders>
      <Region Id="1" Type="0" Zoom="0.04" Selected="0" NegativeROA="0" Length="10">
        <Attributes/>
        <Vertices><Vertex X="1" Y="2" Z="0"/><Vertex X="3" Y="4" Z="0"/><Vertex X="5" Y="0" Z="0"/></Vertices>
      </Region>
    </Regions>
    <Plots/>
  </Annotation>
</Annotations>"#;
        let doc: AnnotationDocument = parse_annotations(xml).unwrap();
        assert_eq!(doc.layers[0].id, 2);
        assert_eq!(doc.layers[0].line_color, LineColor(0));
        assert_eq!(doc.layers[0].regions[0].vertices.len(), 3);
    }

    #[test]
    fn empty_document_serializes_to_bare_root() {
        let text = serialize_annotations(&AnnotationDocument::<f64>::default());
        assert_eq!(text, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<Annotations>\n</Annotations>\n");
        assert_eq!(parse_annotations::<f64>(&text).unwrap(), AnnotationDocument::default());
    }

    #[test]
    fn order_is_preserved() {
        let mk = |id| Region {
            id,
            negative: id % 2 == 0,
            vertices: vec![Vertex::new(0.0, 0.0), Vertex::new(id as f64, 0.0), Vertex::new(0.0, 1.5)],
        };
        let doc = AnnotationDocument {
            microns_per_pixel: None,
            layers: vec![
                AnnotationLayer { id: 5, name: None, line_color: LineColor(1), regions: vec![mk(3), mk(1)] },
                AnnotationLayer { id: 2, name: Some("a<b".into()), line_color: LineColor(2), regions: vec![mk(9), mk(4)] },
            ],
        };
        let back: AnnotationDocument = parse_annotations(&serialize_annotations(&doc)).unwrap();
        assert_eq!(back, doc);
        let ids: Vec<_> = back.layers.iter().flat_map(|l| l.regions.iter().map(|r| r.id)).collect();
        assert_eq!(ids, vec![3, 1, 9, 4]);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let xml = MINIMAL.replace(
            "  </Annotation>\n",
            "  </Annotation>\n  <Annotation Id=\"1\" LineColor=\"0\"><Regions/></Annotation>\n",
        );
        assert!(parse_annotations::<f64>(&xml).unwrap_err().to_string().contains("duplicate layer Id"));
    }

    #[test]
    fn line_color_encoding() {
        assert_eq!(LineColor::from_rgb([0, 255, 0]), LineColor(65280));
        assert_eq!(LineColor(65280).rgb(), [0, 255, 0]);
        assert_eq!(LineColor::from_rgb([1, 2, 3]).rgb(), [1, 2, 3]);
    }

    #[test]
    fn class_map_rules() {
        let b = |layer_id, class| ClassBinding { layer_id, class, color: [0, 0, 0], name: None };
        assert!(ClassMap::new(vec![b(1, 0)]).is_err());
        assert!(ClassMap::new(vec![b(1, 1), b(2, 1)]).is_err());
        assert!(ClassMap::new(vec![b(1, 1), b(1, 2)]).is_err());
        let m = ClassMap::new(vec![b(10, 2), b(4, 1)]).unwrap();
        assert_eq!(m.class_for_layer(4), Some(1));
        assert_eq!(m.n_classes(), 3);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<ClassMap>(&json).unwrap(), m);
        assert!(serde_json::from_str::<ClassMap>(r#"{"bindings":[{"layer_id":1,"class":0,"color":[0,0,0]}]}"#).is_err());
    }

    #[test]
    fn f32_documents_roundtrip() {
        let doc: AnnotationDocument<f32> = parse_annotations(MINIMAL).unwrap();
        assert_eq!(doc.layers[0].regions[0].vertices[1].y, 20.25f32);
        let back: AnnotationDocument<f32> = parse_annotations(&serialize_annotations(&doc)).unwrap();
        assert_eq!(back, doc);
    }
}
