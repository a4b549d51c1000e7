use std::fs;
use std::path::Path;

use super::Model;
use crate::error::Result;

/// Write the model as a single JSON document. serde_json emits
/// shortest-representation floats, so weights round-trip exactly.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let json = serde_json::to_string(model)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;
    use crate::recurrent::{CellKind, ModelInit};

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let mut rng = Rng::new(99);
        let model = Model::init(
            &ModelInit {
                cell: CellKind::Lstm,
                input_dim: 3,
                hidden: 4,
                classes: 3,
                vocab: Some(7),
                bidirectional: true,
                crf: true,
            },
            &mut rng,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let a = model.to_flat();
        let b = loaded.to_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
