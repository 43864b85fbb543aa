use proptest::prelude::*;
use rand::RngExt;

use super::*;
use crate::cluster::ClusterId;
use crate::dataset::{generate_synthetic, SyntheticSpec};
use crate::model::Activation;
use crate::rng;

fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
    v.iter().map(|p| p.to_vec()).collect()
}

fn two_groups(metric: Metric, a: &[Vec<f64>], b: &[Vec<f64>]) -> LabeledPointSet {
    LabeledPointSet::from_groups(metric, &[(0, a), (1, b)]).unwrap()
}

mod oracle {
    pub fn l1(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]).abs();
        }
        s
    }

    pub fn l2(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s.sqrt()
    }

    pub fn mean(ps: &[Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; ps[0].len()];
        for p in ps {
            for i in 0..m.len() {
                m[i] += p[i] / ps.len() as f64;
            }
        }
        m
    }

    pub fn ald(a: &[Vec<f64>], b: &[Vec<f64>], d: fn(&[f64], &[f64]) -> f64) -> f64 {
        let mut s = 0.0;
        for p in a {
            for q in b {
                s += d(p, q);
            }
        }
        s / (a.len() * b.len()) as f64
    }

    /// Direct per-point silhouette over groups given as separate lists.
    pub fn silhouette(groups: &[Vec<Vec<f64>>], d: fn(&[f64], &[f64]) -> f64) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for (gi, g) in groups.iter().enumerate() {
            for (i, p) in g.iter().enumerate() {
                n += 1;
                if g.len() == 1 {
                    continue;
                }
                let mut intra = 0.0;
                for (j, q) in g.iter().enumerate() {
                    if i != j {
                        intra += d(p, q);
                    }
                }
                intra /= (g.len() - 1) as f64;
                let mut inter = f64::INFINITY;
                for (hi, h) in groups.iter().enumerate() {
                    if hi == gi {
                        continue;
                    }
                    let m = h.iter().map(|q| d(p, q)).sum::<f64>() / h.len() as f64;
                    inter = inter.min(m);
                }
                let den = intra.max(inter);
                if den > 0.0 {
                    total += (inter - intra) / den;
                }
            }
        }
        total / n as f64
    }
}

fn random_points(rng: &mut rng::Rng, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| shift + rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn acld_examples() {
    let set = two_groups(Metric::L1, &pts(&[&[0.0, 0.0]]), &pts(&[&[3.0, 4.0]]));
    assert_eq!(acld(&set, 0, 1, Center::Mean).unwrap(), 7.0);
    let set = two_groups(Metric::L1, &pts(&[&[0.0, 0.0], &[0.0, 2.0]]), &pts(&[&[4.0, 0.0]]));
    assert_eq!(acld(&set, 0, 1, Center::Mean).unwrap(), 5.0);
    assert_eq!(acld(&set, 1, 0, Center::Median).unwrap(), 5.0);
    assert!(matches!(acld(&set, 0, 7, Center::Mean), Err(AnalysisError::UnknownGroup(7))));
}

#[test]
fn acld_matches_oracle() {
    let mut rng = rng::seeded(11, 0);
    let a = random_points(&mut rng, 120, 4, 0.0);
    let b = random_points(&mut rng, 80, 4, 2.0);
    let set = two_groups(Metric::L1, &a, &b);
    let want = oracle::l1(&oracle::mean(&a), &oracle::mean(&b));
    assert!((acld(&set, 0, 1, Center::Mean).unwrap() - want).abs() < 1e-12);
}

#[test]
fn ald_examples() {
    let set = two_groups(Metric::L1, &pts(&[&[0.0, 0.0], &[0.0, 2.0]]), &pts(&[&[4.0, 0.0]]));
    assert_eq!(ald(&set, 0, 1).unwrap(), 5.0);
    let set = two_groups(Metric::L2, &pts(&[&[1.0, 1.0]]), &pts(&[&[4.0, 5.0]]));
    assert_eq!(ald(&set, 0, 1).unwrap(), 5.0);
    assert_eq!(acld(&set, 0, 1, Center::Mean).unwrap(), 5.0);
}

#[test]
fn ald_matches_oracle() {
    let mut rng = rng::seeded(12, 0);
    let a = random_points(&mut rng, 30, 3, 0.0);
    let b = random_points(&mut rng, 40, 3, 1.5);
    let set = two_groups(Metric::L1, &a, &b);
    assert!((ald(&set, 0, 1).unwrap() - oracle::ald(&a, &b, oracle::l1)).abs() < 1e-12);
    let set = two_groups(Metric::L2, &a, &b);
    assert!((ald(&set, 0, 1).unwrap() - oracle::ald(&a, &b, oracle::l2)).abs() < 1e-12);
}

#[test]
fn silhouette_on_a_line() {
    let set = two_groups(Metric::L2, &pts(&[&[0.0], &[0.1]]), &pts(&[&[10.0], &[10.1]]));
    let s = silhouette(&set).unwrap();
    let want = (9.95 / 10.05 + 9.85 / 9.95) / 2.0;
    assert!((s - want).abs() < 1e-12);
    assert!((s - 0.9900).abs() < 5e-5);
}

#[test]
fn silhouette_conventions() {
    let mut rng = rng::seeded(16, 0);
    let g = random_points(&mut rng, 200, 2, 0.0);
    let set = two_groups(Metric::L2, &g, &g);
    assert!(silhouette(&set).unwrap().abs() < 0.01);

    let set = two_groups(Metric::L2, &pts(&[&[0.0]]), &pts(&[&[5.0]]));
    assert_eq!(silhouette(&set).unwrap(), 0.0);

    let one = LabeledPointSet::from_groups(Metric::L2, &[(3, &g)]).unwrap();
    assert!(matches!(silhouette(&one), Err(AnalysisError::TooFewGroups(1))));
}

#[test]
fn silhouette_matches_oracle() {
    let mut rng = rng::seeded(13, 0);
    for _ in 0..20 {
        let groups: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|g| {
                let n = rng.random_range(1..6);
                random_points(&mut rng, n, 2, g as f64)
            })
            .collect();
        let refs: Vec<(usize, &[Vec<f64>])> = groups.iter().enumerate().map(|(g, p)| (g, p.as_slice())).collect();
        let set = LabeledPointSet::from_groups(Metric::L2, &refs).unwrap();
        let want = oracle::silhouette(&groups, oracle::l2);
        assert!((silhouette(&set).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn well_separated_groups_score_high() {
    let mut rng = rng::seeded(14, 0);
    let a: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]).collect();
    let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 100.0, p[1]]).collect();
    assert!(silhouette(&two_groups(Metric::L2, &a, &b)).unwrap() > 0.95);
}

#[test]
fn relative_distance_examples() {
    assert!((relative_score(3.0, 6.0) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(format!("{:.2}", relative_score(3.0, 6.0)), "0.33");
    assert_eq!(relative_score(0.0, 0.0), 0.5);

    // L1 distance 3 to the explicit center, 6 to the non-hate one.
    let s = relative_explicit_distance(&[vec![0.0, 0.0]], &[vec![6.0, 0.0]], &[vec![1.0, 2.0]]).unwrap();
    assert!((s[0] - 1.0 / 3.0).abs() < 1e-15);

    let s = relative_explicit_distance(&[vec![0.0]], &[vec![-2.0]], &[vec![2.0]]).unwrap();
    assert_eq!(s, vec![0.5]);
    assert!(relative_explicit_distance(&[vec![0.0]], &[], &[vec![2.0]]).is_err());
}

#[test]
fn relative_distance_matches_oracle() {
    let mut rng = rng::seeded(15, 0);
    let imp = random_points(&mut rng, 10, 3, 0.0);
    let non = random_points(&mut rng, 3, 3, -1.0);
    let exp = random_points(&mut rng, 3, 3, 1.0);
    let got = relative_explicit_distance(&imp, &non, &exp).unwrap();
    for (p, g) in imp.iter().zip(got) {
        let de = exp.iter().map(|c| oracle::l1(p, c)).sum::<f64>() / 3.0;
        let dn = non.iter().map(|c| oracle::l1(p, c)).sum::<f64>() / 3.0;
        assert!((g - de / (de + dn)).abs() < 1e-12);
    }
}

#[test]
fn motivation_report_on_synthetic_data() {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let r = motivation_report(&ds, EmbeddingSource::Raw, Roles::default(), Metric::L1, Center::Mean).unwrap();
    assert!(r.acld_ni < r.acld_ne);
    let json = serde_json::to_value(&r).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = MotivationReport::COLUMNS.to_vec();
    want.sort();
    let mut keys = keys;
    keys.sort();
    assert_eq!(keys, want);
}

#[test]
fn motivation_report_identical_classes() {
    let mut spec = SyntheticSpec::default();
    for c in &mut spec.classes {
        c.mean = vec![0.0, 0.0];
        c.count = 400;
    }
    let ds = generate_synthetic(&spec, 3).unwrap();
    let r = motivation_report(&ds, EmbeddingSource::Raw, Roles::default(), Metric::L1, Center::Mean).unwrap();
    assert!((r.ald_ne - r.ald_ni).abs() < 0.1 * r.ald_ne);
    assert!(r.acld_ne < 0.3 && r.acld_ni < 0.3);
}

#[test]
fn motivation_report_missing_class() {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let only: Vec<_> = ds.samples.iter().filter(|s| s.label != 1).cloned().collect();
    let ds = ds.with_samples(only);
    assert!(matches!(
        motivation_report(&ds, EmbeddingSource::Raw, Roles::default(), Metric::L1, Center::Mean),
        Err(AnalysisError::MissingClass(_))
    ));
}

#[test]
fn latent_dump_round_trip() {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let heads = Heads::init(2, 3, 3, Activation::Tanh, 4);
    let ids: Vec<String> = ds.samples.iter().map(|s| s.id.clone()).collect();
    let projected: Vec<Vec<f64>> = ds.samples.iter().map(|s| heads.project(&s.vector).unwrap()).collect();
    let index = crate::cluster::build_index(&ids, &projected, &ds.labels(), 3, 3, 100, 1).unwrap();

    let mut buf = Vec::new();
    assert_eq!(dump_latent(&heads, &index, &ds, &mut buf).unwrap(), 150);
    let recs = load_latent(buf.as_slice()).unwrap();
    assert_eq!(recs.len(), 150);
    assert_eq!(recs.iter().filter(|r| r.r_tilde_d.is_some()).count(), 50);
    for (r, p) in recs.iter().zip(&projected) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r.r_d), bits(p));
        let id = index.assignment_of(&r.id).unwrap();
        assert_eq!(r.subcluster, Some((id.class, id.sub)));
    }
}

#[test]
fn latent_dump_falls_back_to_nearest_centroid() {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let heads = Heads {
        projection: crate::model::ProjectionHead::identity(2),
        classifier: crate::model::ClassificationHead::zeros(2, 3),
    };
    let index = ClusterIndex::from_centroids(
        1,
        vec![
            (ClusterId::new(0, 0), vec![0.0, 0.0]),
            (ClusterId::new(1, 0), vec![8.0, 0.0]),
            (ClusterId::new(2, 0), vec![2.0, 0.0]),
        ],
    );
    let mut buf = Vec::new();
    dump_latent(&heads, &index, &ds, &mut buf).unwrap();
    let recs = load_latent(buf.as_slice()).unwrap();
    assert!(recs.iter().all(|r| r.subcluster == Some((r.label, 0))));
}

#[test]
fn implied_silhouette_needs_implied_vectors() {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let heads = Heads::init(2, 3, 3, Activation::Identity, 1);
    assert!(implied_silhouette(&heads, &ds, Metric::L2).unwrap().is_some());
    let stripped: Vec<_> = ds
        .samples
        .iter()
        .cloned()
        .map(|mut s| {
            s.implied_vector = None;
            s
        })
        .collect();
    assert_eq!(implied_silhouette(&heads, &ds.with_samples(stripped), Metric::L2).unwrap(), None);
}

fn arb_groups() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let pt = prop::collection::vec(-10.0f64..10.0, 2);
    (prop::collection::vec(pt.clone(), 1..6), prop::collection::vec(pt, 1..6))
}

proptest! {
    #[test]
    fn linkage_is_symmetric_and_scales((a, b) in arb_groups(), scale in 0.1f64..10.0) {
        for metric in [Metric::L1, Metric::L2] {
            let set = two_groups(metric, &a, &b);
            let ab = ald(&set, 0, 1).unwrap();
            prop_assert!((ab - ald(&set, 1, 0).unwrap()).abs() <= 1e-12 * (1.0 + ab));
            let c = acld(&set, 0, 1, Center::Mean).unwrap();
            prop_assert!((c - acld(&set, 1, 0, Center::Mean).unwrap()).abs() <= 1e-12 * (1.0 + c));

            let sc = |g: &Vec<Vec<f64>>| g.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect::<Vec<Vec<f64>>>();
            let scaled = two_groups(metric, &sc(&a), &sc(&b));
            prop_assert!((ald(&scaled, 0, 1).unwrap() - scale * ab).abs() <= 1e-9 * (1.0 + scale * ab));
            prop_assert!((acld(&scaled, 0, 1, Center::Mean).unwrap() - scale * c).abs() <= 1e-9 * (1.0 + scale * c));
        }
    }

    #[test]
    fn silhouette_invariances((a, b) in arb_groups(), shift in -50.0f64..50.0, angle in 0.0f64..6.3) {
        let s = silhouette(&two_groups(Metric::L2, &a, &b)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        let relabeled = LabeledPointSet::from_groups(Metric::L2, &[(9, &b), (4, &a)]).unwrap();
        prop_assert!((silhouette(&relabeled).unwrap() - s).abs() < 1e-9);
        let (sn, cs) = angle.sin_cos();
        let moved = |g: &Vec<Vec<f64>>| g.iter()
            .map(|p| vec![cs * p[0] - sn * p[1] + shift, sn * p[0] + cs * p[1] - shift])
            .collect::<Vec<Vec<f64>>>();
        let moved_set = two_groups(Metric::L2, &moved(&a), &moved(&b));
        prop_assert!((silhouette(&moved_set).unwrap() - s).abs() < 1e-7);
    }

    #[test]
    fn relative_distance_scale_invariant(
        imp in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5),
        non in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..4),
        exp in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..4),
        scale in 0.01f64..100.0,
    ) {
        let sc = |g: &Vec<Vec<f64>>| g.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect::<Vec<Vec<f64>>>();
        let a = relative_explicit_distance(&imp, &non, &exp).unwrap();
        let b = relative_explicit_distance(&sc(&imp), &sc(&non), &sc(&exp)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
