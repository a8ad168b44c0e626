//! Regenerates docs/weights-manifest-*.txt from the built-in layer tables.
//! Run from the workspace root after changing a backbone definition.

use senti_core::backbone::{BackboneId, BackboneSpec};

fn main() {
    for id in [BackboneId::Densenet121, BackboneId::Vgg19] {
        let spec = BackboneSpec::for_id(id);
        let mut out = String::new();
        out.push_str(&format!(
            "# Weight archive manifest for {id}: one \"key  shape\" pair per line.\n\
             # Archives are safetensors files of float32 tensors with exactly these keys.\n"
        ));
        for (key, shape) in spec.weight_manifest() {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{key}  {}\n", dims.join("x")));
        }
        let path = format!("docs/weights-manifest-{id}.txt");
        std::fs::write(&path, out).unwrap();
        println!("wrote {path}");
    }
}
