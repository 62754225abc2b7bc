use hvsim_core::rng;
use hvsim_core::{DatasetManifest, Label};

use crate::error::{StudyError, StudyResult};

/// Draw `per_condition` stacks for every (level, label) pair. Depends only
/// on the manifest contents and `seed`, so every observer gets the same set.
/// Returned ids are sorted.
pub fn select_stacks(
    manifest: &DatasetManifest,
    levels: &[u8],
    per_condition: usize,
    seed: u64,
) -> StudyResult<Vec<String>> {
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let mut chosen = Vec::with_capacity(levels.len() * 2 * per_condition);
    for &level in &levels {
        for label in [Label::Healthy, Label::Lesion] {
            let mut ids: Vec<&str> = manifest
                .entries
                .iter()
                .filter(|e| e.complexity == level && e.label == label)
                .map(|e| e.id.as_str())
                .collect();
            if ids.len() < per_condition {
                return Err(StudyError::InsufficientStacks {
                    level,
                    label: label.as_str(),
                    available: ids.len(),
                    required: per_condition,
                });
            }
            // manifest order must not matter
            ids.sort_unstable();
            let condition = ((level as u64) << 1) | (label == Label::Lesion) as u64;
            rng::shuffle(&mut ids, rng::mix(seed, condition));
            chosen.extend(ids[..per_condition].iter().map(|s| s.to_string()));
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Per-observer presentation order of a selection.
pub fn presentation_order(selection: &[String], seed: u64, observer_id: &str) -> Vec<String> {
    let mut order = selection.to_vec();
    order.sort_unstable();
    rng::shuffle(&mut order, rng::mix(seed, rng::fnv1a(observer_id)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use hvsim_core::{Dims, ManifestEntry, ViewingConfig};
    use std::collections::BTreeSet;

    fn manifest(per_class: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new(ViewingConfig::default());
        for level in 0..5u8 {
            for s in 0..per_class {
                for (label, tag) in [(Label::Healthy, "h"), (Label::Lesion, "l")] {
                    let id = format!("c{level}-s{s:05}-{tag}");
                    m.entries.push(ManifestEntry {
                        path: format!("{id}.f32").into(),
                        id,
                        label,
                        complexity: level,
                        seed: s as u64,
                        dims: Dims::new(4, 4, 2),
                    });
                }
            }
        }
        m
    }

    #[test]
    fn default_protocol_gives_210() {
        let sel = select_stacks(&manifest(50), &[0, 2, 4], 35, 11).unwrap();
        assert_eq!(sel.len(), 210);
        assert_eq!(sel.iter().collect::<BTreeSet<_>>().len(), 210);
        for level in [0, 2, 4] {
            for tag in ["h", "l"] {
                let n = sel
                    .iter()
                    .filter(|id| id.starts_with(&format!("c{level}-")) && id.ends_with(tag))
                    .count();
                assert_eq!(n, 35);
            }
        }
    }

    #[test]
    fn selection_ignores_manifest_order() {
        let m = manifest(50);
        let mut rev = m.clone();
        rev.entries.reverse();
        assert_eq!(
            select_stacks(&m, &[0, 2, 4], 35, 11).unwrap(),
            select_stacks(&rev, &[4, 0, 2], 35, 11).unwrap()
        );
        assert_ne!(
            select_stacks(&m, &[0, 2, 4], 35, 11).unwrap(),
            select_stacks(&m, &[0, 2, 4], 35, 12).unwrap()
        );
    }

    #[test]
    fn deficient_condition_is_named() {
        let err = select_stacks(&manifest(20), &[0, 2, 4], 35, 11).unwrap_err();
        assert_eq!(err.code(), "insufficient_stacks");
        assert!(err.to_string().contains("complexity 0 healthy"), "{err}");
    }

    #[test]
    fn order_depends_on_observer_only() {
        let sel = select_stacks(&manifest(50), &[0, 2, 4], 35, 11).unwrap();
        let a = presentation_order(&sel, 11, "A");
        let b = presentation_order(&sel, 11, "B");
        assert_eq!(a, presentation_order(&sel, 11, "A"));
        assert_ne!(a, b);
        assert_eq!(a.iter().collect::<BTreeSet<_>>(), b.iter().collect::<BTreeSet<_>>());
    }
}
