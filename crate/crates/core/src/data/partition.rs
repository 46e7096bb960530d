use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{LmcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShiftKind {
    /// Disjoint halves with equal per-class counts.
    #[serde(rename = "covariate-5050")]
    Covariate5050,
    /// Subset A holds `x`% of every class in `low` and (100-x)% of every
    /// class in `high`; subset B holds the rest.
    LabelImbalance {
        x: f64,
        low: Vec<usize>,
        high: Vec<usize>,
    },
    /// Both subsets see every sample; each keeps only its own channels.
    ChannelDomain {
        channels_a: Vec<usize>,
        channels_b: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    #[serde(flatten)]
    pub kind: ShiftKind,
    #[serde(default)]
    pub seed: u64,
}

impl ShiftSpec {
    pub fn covariate(seed: u64) -> Self {
        ShiftSpec {
            kind: ShiftKind::Covariate5050,
            seed,
        }
    }

    pub fn label_imbalance(x: f64, low: Vec<usize>, high: Vec<usize>, seed: u64) -> Self {
        ShiftSpec {
            kind: ShiftKind::LabelImbalance { x, low, high },
            seed,
        }
    }

    pub fn channel_domain(channels_a: Vec<usize>, channels_b: Vec<usize>) -> Self {
        ShiftSpec {
            kind: ShiftKind::ChannelDomain {
                channels_a,
                channels_b,
            },
            seed: 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ShiftKind::Covariate5050 => "covariate-5050",
            ShiftKind::LabelImbalance { .. } => "label-imbalance",
            ShiftKind::ChannelDomain { .. } => "channel-domain",
        }
    }

    /// True when the subsets can share one noise sample (equal class counts).
    pub fn supports_fixed_noise(&self) -> bool {
        match &self.kind {
            ShiftKind::LabelImbalance { x, .. } => *x == 50.0,
            _ => true,
        }
    }

    pub fn validate(&self, classes: usize, channels: usize) -> Result<()> {
        let bad = |m: String| Err(LmcError::InvalidShift(m));
        match &self.kind {
            ShiftKind::Covariate5050 => Ok(()),
            ShiftKind::LabelImbalance { x, low, high } => {
                if !(*x > 0.0 && *x < 100.0) {
                    return bad(format!("imbalance percent {x} outside (0, 100)"));
                }
                let mut seen = vec![false; classes];
                for &c in low.iter().chain(high) {
                    if c >= classes {
                        return bad(format!("class {c} outside [0, {classes})"));
                    }
                    if std::mem::replace(&mut seen[c], true) {
                        return bad(format!("class {c} appears in both or twice"));
                    }
                }
                if let Some(c) = seen.iter().position(|s| !s) {
                    return bad(format!("class {c} is in neither class set"));
                }
                Ok(())
            }
            ShiftKind::ChannelDomain {
                channels_a,
                channels_b,
            } => {
                if channels_a.is_empty() || channels_b.is_empty() {
                    return bad("each subset needs at least one channel".into());
                }
                if let Some(&c) = channels_a
                    .iter()
                    .chain(channels_b)
                    .find(|&&c| c >= channels)
                {
                    return bad(format!("channel {c} outside [0, {channels})"));
                }
                if let Some(c) = channels_a.iter().find(|c| channels_b.contains(c)) {
                    return bad(format!("channel {c} assigned to both subsets"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsetId {
    A,
    B,
}

impl SubsetId {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsetId::A => "a",
            SubsetId::B => "b",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    /// Source rows of each subset, ascending.
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
    pub a: Dataset,
    pub b: Dataset,
}

/// `ceil(n * pct / 100)` with a tolerance so exact products are not bumped up.
fn share(n: usize, pct: f64) -> usize {
    let v = n as f64 * pct / 100.0;
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as usize
    } else {
        v.ceil() as usize
    }
}

pub fn partition(data: &Dataset, spec: &ShiftSpec) -> Result<Partition> {
    spec.validate(data.classes(), data.info.shape.channels)?;
    match &spec.kind {
        ShiftKind::Covariate5050 => split_by_class(data, spec.seed, |_| 50.0),
        ShiftKind::LabelImbalance { x, low, .. } => {
            let x = *x;
            split_by_class(data, spec.seed, |c| {
                if low.contains(&c) {
                    x
                } else {
                    100.0 - x
                }
            })
        }
        ShiftKind::ChannelDomain {
            channels_a,
            channels_b,
        } => {
            let all: Vec<usize> = (0..data.len()).collect();
            let keep_only = |keep: &[usize], tag: &str| {
                let mut d = data.select(&all, format!("{}/{tag}", data.info.name));
                let hw = data.info.shape.height * data.info.shape.width;
                for c in (0..data.info.shape.channels).filter(|c| !keep.contains(c)) {
                    d.inputs
                        .slice_mut(ndarray::s![.., c * hw..(c + 1) * hw])
                        .fill(0.0);
                }
                d
            };
            Ok(Partition {
                indices_a: all.clone(),
                indices_b: all.clone(),
                a: keep_only(channels_a, "a"),
                b: keep_only(channels_b, "b"),
            })
        }
    }
}

/// Per class, shuffles the class's rows with the split seed and gives the
/// first `ceil(n * pct(class) / 100)` to subset A.
fn split_by_class(data: &Dataset, seed: u64, pct_a: impl Fn(usize) -> f64) -> Result<Partition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (c, mut rows) in data.class_indices().into_iter().enumerate() {
        rows.shuffle(&mut rng);
        let k = share(rows.len(), pct_a(c));
        a.extend_from_slice(&rows[..k]);
        b.extend_from_slice(&rows[k..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    Ok(Partition {
        a: data.select(&a, format!("{}/a", data.info.name)),
        b: data.select(&b, format!("{}/b", data.info.name)),
        indices_a: a,
        indices_b: b,
    })
}

/// CSV audit trail: `index,subset,class`, one row per (sample, subset).
pub fn write_partition_manifest(
    path: impl AsRef<Path>,
    data: &Dataset,
    part: &Partition,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "subset", "class"])?;
    for (id, rows) in [
        (SubsetId::A, &part.indices_a),
        (SubsetId::B, &part.indices_b),
    ] {
        for &i in rows {
            w.write_record([
                i.to_string(),
                id.as_str().to_string(),
                data.labels[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};
    use crate::nn::InputShape;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn blobs(classes: usize, per_class: usize) -> Dataset {
        make_synthetic(&SyntheticSpec {
            classes,
            per_class,
            dim: 3,
            spread: 1.0,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn covariate_split_is_disjoint_and_balanced() {
        let ds = blobs(4, 11);
        let p = partition(&ds, &ShiftSpec::covariate(9)).unwrap();
        assert_eq!(p.indices_a.len() + p.indices_b.len(), ds.len());
        assert!(p.indices_a.iter().all(|i| !p.indices_b.contains(i)));
        // odd counts: A gets the extra sample
        assert_eq!(p.a.info.class_counts, vec![6; 4]);
        assert_eq!(p.b.info.class_counts, vec![5; 4]);
    }

    #[test]
    fn imbalance_counts_follow_percentages() {
        let ds = blobs(10, 100);
        let spec = ShiftSpec::label_imbalance(20.0, (0..5).collect(), (5..10).collect(), 4);
        let p = partition(&ds, &spec).unwrap();
        assert_eq!(p.a.info.class_counts, [vec![20; 5], vec![80; 5]].concat());
        assert_eq!(p.b.info.class_counts, [vec![80; 5], vec![20; 5]].concat());
    }

    #[test]
    fn imbalance_at_fifty_is_the_covariate_split() {
        let ds = blobs(4, 9);
        let half = ShiftSpec::label_imbalance(50.0, vec![0, 1], vec![2, 3], 5);
        let a = partition(&ds, &half).unwrap();
        let b = partition(&ds, &ShiftSpec::covariate(5)).unwrap();
        assert_eq!(a.indices_a, b.indices_a);
        assert_eq!(
            a.a.info.class_counts,
            a.b.info
                .class_counts
                .iter()
                .map(|c| c + 1)
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_bad_specs() {
        let ds = blobs(4, 4);
        let overlap = ShiftSpec::label_imbalance(20.0, vec![0, 1], vec![1, 2, 3], 0);
        assert!(matches!(
            partition(&ds, &overlap),
            Err(LmcError::InvalidShift(_))
        ));
        let missing = ShiftSpec::label_imbalance(20.0, vec![0], vec![1, 2], 0);
        assert!(partition(&ds, &missing).is_err());
        let range = ShiftSpec::label_imbalance(100.0, vec![0, 1], vec![2, 3], 0);
        assert!(partition(&ds, &range).is_err());
        let single_channel = ShiftSpec::channel_domain(vec![0], vec![1]);
        assert!(partition(&ds, &single_channel).is_err());
    }

    #[test]
    fn channel_domain_keeps_scene_alignment() {
        let x = Array2::from_shape_fn((4, 3 * 2 * 2), |(i, j)| (i * 12 + j) as f32 + 1.0);
        let ds = Dataset::new("rgb", InputShape::image(3, 2, 2), 2, x, vec![0, 1, 1, 0]).unwrap();
        let p = partition(&ds, &ShiftSpec::channel_domain(vec![0], vec![1])).unwrap();
        assert_eq!(p.a.labels, ds.labels);
        assert_eq!(p.b.labels, ds.labels);
        assert!(p
            .a
            .inputs
            .slice(ndarray::s![.., 4..])
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(
            p.a.inputs.slice(ndarray::s![.., ..4]),
            ds.inputs.slice(ndarray::s![.., ..4])
        );
        assert!(p
            .b
            .inputs
            .slice(ndarray::s![.., ..4])
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(
            p.b.inputs.slice(ndarray::s![.., 4..8]),
            ds.inputs.slice(ndarray::s![.., 4..8])
        );
    }

    #[test]
    fn manifest_lists_every_assignment() {
        let ds = blobs(2, 3);
        let p = partition(&ds, &ShiftSpec::covariate(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("m.csv");
        write_partition_manifest(&f, &ds, &p).unwrap();
        let text = std::fs::read_to_string(f).unwrap();
        assert!(text.starts_with("index,subset,class\n"));
        assert_eq!(text.lines().count(), 1 + ds.len());
    }

    proptest! {
        #[test]
        fn split_invariants(per_class in 1usize..40, classes in 2usize..6, x in 1u32..99, seed in any::<u64>()) {
            let ds = blobs(classes, per_class);
            let low: Vec<usize> = (0..classes / 2).collect();
            let high: Vec<usize> = (classes / 2..classes).collect();
            let spec = ShiftSpec::label_imbalance(x as f64, low.clone(), high, seed);
            let p = partition(&ds, &spec).unwrap();
            prop_assert_eq!(p.indices_a.len() + p.indices_b.len(), ds.len());
            let mut all = [p.indices_a.clone(), p.indices_b.clone()].concat();
            all.sort();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            for c in 0..classes {
                let pct = if low.contains(&c) { x as f64 } else { 100.0 - x as f64 };
                prop_assert_eq!(p.a.info.class_counts[c], share(per_class, pct));
            }
            // stable across runs
            let again = partition(&ds, &spec).unwrap();
            prop_assert_eq!(again.indices_a, p.indices_a);
        }
    }
}
