//! On-disk scene directory:
//!
//! ```text
//! scene.json        counts, cameras, environment metadata, attribute schema
//! attributes.bin    little-endian f32, primitive-major, + u64 FNV-1a checksum
//! env/{px,nx,py,ny,pz,nz}.pfm
//! views/<id>/{rgb.png, mask_obj.png, mask_region.png, normal.pfm}
//! ```

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{validate_scene, Camera, CubeFace, EnvironmentMap, GaussianPrimitive, Scene, ViewData};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::sh_rest_count;

/// Fixed attribute fields in schema order; `sh_rest` follows when the SH
/// degree is above zero.
pub const ATTRIBUTE_FIELDS: [(&str, usize); 12] = [
    ("position", 3),
    ("scale", 3),
    ("rotation", 4),
    ("opacity", 1),
    ("color", 3),
    ("diffuse", 3),
    ("fresnel0", 3),
    ("roughness", 1),
    ("label", 1),
    ("region", 1),
    ("normal", 3),
    ("sh_rest", 0),
];

const FORMAT_TAG: &str = "gserase-scene";

#[derive(Serialize, Deserialize)]
struct SchemaField {
    name: String,
    offset: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct EnvHeader {
    size: usize,
    levels: usize,
    faces: Vec<String>,
}

#[derive(Serialize, Deserialize, Default)]
struct ViewHeader {
    id: usize,
    rgb: bool,
    mask_obj: bool,
    mask_region: bool,
    normal: bool,
}

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    format: String,
    version: u32,
    primitive_count: usize,
    sh_degree: u32,
    stride: usize,
    attributes: Vec<SchemaField>,
    checksum: String,
    cameras: Vec<Camera>,
    environment: EnvHeader,
    #[serde(default)]
    views: Vec<ViewHeader>,
}

fn schema(sh_degree: u32) -> (Vec<SchemaField>, usize) {
    let mut offset = 0;
    let mut fields = Vec::new();
    for (name, count) in ATTRIBUTE_FIELDS {
        let count = if name == "sh_rest" { 3 * sh_rest_count(sh_degree) } else { count };
        if count == 0 {
            continue;
        }
        fields.push(SchemaField {
            name: name.to_string(),
            offset,
            count,
        });
        offset += count;
    }
    (fields, offset)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn primitive_floats(g: &GaussianPrimitive, name: &str) -> Vec<f32> {
    match name {
        "position" => g.position.to_vec(),
        "scale" => g.scale.to_vec(),
        "rotation" => g.rotation.to_vec(),
        "opacity" => vec![g.opacity],
        "color" => g.color.to_vec(),
        "diffuse" => g.diffuse.to_vec(),
        "fresnel0" => g.fresnel0.to_vec(),
        "roughness" => vec![g.roughness],
        "label" => vec![g.label],
        "region" => vec![g.region],
        "normal" => g.normal.to_vec(),
        "sh_rest" => g.sh_rest.iter().flatten().copied().collect(),
        _ => unreachable!("unknown attribute {name}"),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `scene` as a scene directory. Fails on invalid scenes.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    let violations = validate_scene(scene);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    create_dir(dir)?;
    create_dir(&dir.join("env"))?;

    let (fields, stride) = schema(scene.sh_degree);
    let mut blob = Vec::with_capacity(scene.primitives.len() * stride * 4 + 8);
    for g in &scene.primitives {
        for f in &fields {
            for v in primitive_floats(g, &f.name) {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let sum = fnv1a(&blob);
    blob.extend_from_slice(&sum.to_le_bytes());
    write_file(&dir.join("attributes.bin"), &blob)?;

    let mut faces = Vec::new();
    for face in CubeFace::ALL {
        let rel = format!("env/{}.pfm", face.file_stem());
        scene.env.face(0, face).write_pfm(&dir.join(&rel))?;
        faces.push(rel);
    }

    let mut views = Vec::new();
    for (id, v) in scene.views.iter().enumerate() {
        if v.is_empty() {
            continue;
        }
        let vdir = dir.join("views").join(id.to_string());
        create_dir(&vdir)?;
        if let Some(img) = &v.rgb {
            img.write_png16(&vdir.join("rgb.png"))?;
        }
        if let Some(m) = &v.mask_obj {
            m.write_png(&vdir.join("mask_obj.png"))?;
        }
        if let Some(m) = &v.mask_region {
            m.write_png(&vdir.join("mask_region.png"))?;
        }
        if let Some(n) = &v.normal {
            n.write_pfm(&vdir.join("normal.pfm"))?;
        }
        views.push(ViewHeader {
            id,
            rgb: v.rgb.is_some(),
            mask_obj: v.mask_obj.is_some(),
            mask_region: v.mask_region.is_some(),
            normal: v.normal.is_some(),
        });
    }

    let header = SceneHeader {
        format: FORMAT_TAG.into(),
        version: 1,
        primitive_count: scene.primitives.len(),
        sh_degree: scene.sh_degree,
        stride,
        attributes: fields,
        checksum: "fnv1a64".into(),
        cameras: scene.cameras.clone(),
        environment: EnvHeader {
            size: scene.env.size(),
            levels: scene.env.levels(),
            faces,
        },
        views,
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&dir.join("scene.json"), json.as_bytes())
}

/// Reads a scene directory written by [`save_scene`] and validates it.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let header_path = dir.join("scene.json");
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: SceneHeader =
        serde_json::from_str(&text).map_err(|e| Error::malformed("scene.json", e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(Error::malformed("scene.json", format!("unknown format {:?}", header.format)));
    }
    if header.sh_degree > 3 {
        return Err(Error::malformed("scene.json", format!("sh_degree {} > 3", header.sh_degree)));
    }

    // Resolve field offsets from the stored schema.
    let mut layout = Vec::new();
    for (name, count) in ATTRIBUTE_FIELDS {
        let want = if name == "sh_rest" { 3 * sh_rest_count(header.sh_degree) } else { count };
        if want == 0 {
            continue;
        }
        let field = header
            .attributes
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::malformed("scene.json", format!("schema lacks field `{name}`")))?;
        if field.count != want {
            return Err(Error::malformed(
                "scene.json",
                format!("field `{name}` has {} components, expected {want}", field.count),
            ));
        }
        if field.offset + field.count > header.stride {
            return Err(Error::malformed("scene.json", format!("field `{name}` exceeds stride")));
        }
        layout.push((name, field.offset, field.count));
    }

    let bin_path = dir.join("attributes.bin");
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = header.primitive_count * header.stride;
    if blob.len() < 8 || (blob.len() - 8) % 4 != 0 {
        return Err(Error::AttributeCount {
            expected,
            found: blob.len().saturating_sub(8) / 4,
        });
    }
    let (data, tail) = blob.split_at(blob.len() - 8);
    let found = data.len() / 4;
    if found != expected {
        return Err(Error::AttributeCount { expected, found });
    }
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a(data);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let floats: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut primitives = Vec::with_capacity(header.primitive_count);
    for (i, rec) in floats.chunks_exact(header.stride.max(1)).take(header.primitive_count).enumerate() {
        let mut g = GaussianPrimitive::default();
        for &(name, offset, count) in &layout {
            let vals = &rec[offset..offset + count];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field: name, index: i });
            }
            let v3 = || [vals[0], vals[1], vals[2]];
            match name {
                "position" => g.position = v3(),
                "scale" => g.scale = v3(),
                "rotation" => g.rotation = [vals[0], vals[1], vals[2], vals[3]],
                "opacity" => g.opacity = vals[0],
                "color" => g.color = v3(),
                "diffuse" => g.diffuse = v3(),
                "fresnel0" => g.fresnel0 = v3(),
                "roughness" => g.roughness = vals[0],
                "label" => g.label = vals[0],
                "region" => g.region = vals[0],
                "normal" => g.normal = v3(),
                "sh_rest" => g.sh_rest = vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                _ => unreachable!(),
            }
        }
        primitives.push(g);
    }

    if header.environment.faces.len() != 6 {
        return Err(Error::malformed("scene.json", "environment needs 6 faces"));
    }
    let mut faces = Vec::with_capacity(6);
    for rel in &header.environment.faces {
        let img = Image::read_pfm(&dir.join(rel))?;
        if img.width != header.environment.size || img.channels != 3 {
            return Err(Error::malformed(rel.clone(), "face size does not match environment header"));
        }
        faces.push(img);
    }
    let faces: [Image; 6] = faces.try_into().expect("six faces");
    let env = EnvironmentMap::from_faces(faces, header.environment.levels)
        .map_err(|e| Error::malformed("environment", e))?;

    let mut views = Vec::new();
    if !header.views.is_empty() {
        views = vec![ViewData::default(); header.cameras.len()];
        for vh in &header.views {
            let slot = views
                .get_mut(vh.id)
                .ok_or_else(|| Error::malformed("scene.json", format!("view {} has no camera", vh.id)))?;
            let vdir = dir.join("views").join(vh.id.to_string());
            if vh.rgb {
                slot.rgb = Some(Image::read_png(&vdir.join("rgb.png"))?);
            }
            if vh.mask_obj {
                slot.mask_obj = Some(Mask::read_png(&vdir.join("mask_obj.png"))?);
            }
            if vh.mask_region {
                slot.mask_region = Some(Mask::read_png(&vdir.join("mask_region.png"))?);
            }
            if vh.normal {
                slot.normal = Some(Image::read_pfm(&vdir.join("normal.pfm"))?);
            }
        }
    }

    let scene = Scene {
        primitives,
        sh_degree: header.sh_degree,
        env,
        cameras: header.cameras,
        views,
    };
    let violations = validate_scene(&scene);
    if violations.is_empty() {
        Ok(scene)
    } else {
        Err(Error::Invalid(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::tiny_scene;

    #[test]
    fn minimal_scene_round_trips_field_for_field() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny_scene();
        save_scene(&s, dir.path()).unwrap();
        assert_eq!(load_scene(dir.path()).unwrap(), s);
    }

    #[test]
    fn corrupted_blob_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&tiny_scene(), dir.path()).unwrap();
        let p = dir.path().join("attributes.bin");
        let mut b = fs::read(&p).unwrap();
        b[5] ^= 0x10;
        fs::write(&p, b).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_blob_is_a_count_error() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&tiny_scene(), dir.path()).unwrap();
        let p = dir.path().join("attributes.bin");
        let mut b = fs::read(&p).unwrap();
        b.drain(0..4);
        fs::write(&p, b).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::AttributeCount { .. })));
    }

    #[test]
    fn missing_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn malformed_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("scene.json"), "{ not json").unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::Malformed { .. })));
    }

    fn rewrite_blob(dir: &Path, edit: impl FnOnce(&mut Vec<f32>)) {
        let p = dir.join("attributes.bin");
        let b = fs::read(&p).unwrap();
        let mut f: Vec<f32> = b[..b.len() - 8]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        edit(&mut f);
        let mut out: Vec<u8> = f.iter().flat_map(|v| v.to_le_bytes()).collect();
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        fs::write(&p, out).unwrap();
    }

    #[test]
    fn non_finite_value_names_field() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&tiny_scene(), dir.path()).unwrap();
        rewrite_blob(dir.path(), |f| f[14] = f32::NAN); // diffuse[0]
        match load_scene(dir.path()) {
            Err(Error::NonFinite { field, index }) => {
                assert_eq!(field, "diffuse");
                assert_eq!(index, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_opacity_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&tiny_scene(), dir.path()).unwrap();
        rewrite_blob(dir.path(), |f| f[10] = 1.5);
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
        assert!(err.to_string().contains("opacity"));
    }

    #[test]
    fn unwritable_location_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = save_scene(&tiny_scene(), &blocker.join("scene")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }
}
