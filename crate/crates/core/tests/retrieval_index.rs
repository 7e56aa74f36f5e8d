use eet_core::retrieval::{
    average_precision, binarize, bytes_per_code, evaluate, hamming, search, unpack, ApNormalizer, BinaryCodeSet,
    EvalOptions,
};
use eet_core::{Matrix, Rng};
use proptest::prelude::*;

fn random_set(rng: &mut Rng, k: usize, n: usize, classes: usize) -> BinaryCodeSet {
    let h = Matrix::from_fn(n, k, |_, _| rng.normal());
    let labels = (0..n).map(|_| rng.below(classes) as u32).collect();
    BinaryCodeSet::from_real(&h, labels).unwrap()
}

fn naive_hamming(a: &[u8], b: &[u8], k: usize) -> u32 {
    (0..k).filter(|&i| (a[i / 8] >> (i % 8) & 1) != (b[i / 8] >> (i % 8) & 1)).count() as u32
}

fn naive_ap(rel: &[bool], q: usize) -> f64 {
    let mut num = 0.0;
    let mut r_q = 0;
    for t in 1..=q {
        if rel[t - 1] {
            r_q += 1;
            let hits = rel[..t].iter().filter(|&&x| x).count();
            num += hits as f64 / t as f64;
        }
    }
    if r_q == 0 {
        0.0
    } else {
        num / r_q as f64
    }
}

#[test]
fn pack_unpack_round_trip() {
    let mut rng = Rng::new(1);
    for k in [1, 7, 8, 9, 16, 48, 63, 64, 65, 130] {
        for _ in 0..20 {
            let x: Vec<f64> = (0..k).map(|_| if rng.below(2) == 1 { 1.0 } else { -1.0 }).collect();
            let packed = binarize(&x);
            assert_eq!(packed.len(), bytes_per_code(k));
            assert_eq!(unpack(&packed, k), x);
        }
    }
}

#[test]
fn hamming_extremes_and_naive_oracle() {
    let a = binarize(&[1.0; 48]);
    let b = binarize(&[-1.0; 48]);
    assert_eq!(hamming(&a, &a, 48).unwrap(), 0);
    assert_eq!(hamming(&a, &b, 48).unwrap(), 48);
    assert!(hamming(&a, &b[..5], 48).is_err());

    let mut rng = Rng::new(2);
    for k in [5, 16, 48, 64, 100, 200] {
        let set = random_set(&mut rng, k, 40, 3);
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(hamming(set.code(i), set.code(j), k).unwrap(), naive_hamming(set.code(i), set.code(j), k));
            }
        }
    }
}

#[test]
fn hamming_matches_cosine_on_random_codes() {
    let mut rng = Rng::new(3);
    let k = 48;
    let set = random_set(&mut rng, k, 30, 2);
    for i in 0..30 {
        for j in 0..30 {
            let (a, b) = (unpack(set.code(i), k), unpack(set.code(j), k));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let cos = dot / k as f64;
            let d = hamming(set.code(i), set.code(j), k).unwrap();
            assert_eq!(d, ((k as f64 - dot) / 2.0) as u32);
            assert!((d as f64 - k as f64 / 2.0 * (1.0 - cos)).abs() < 1e-12);
        }
    }
}

#[test]
fn query_in_database_ranks_first() {
    let mut rng = Rng::new(4);
    let db = random_set(&mut rng, 32, 50, 5);
    for i in 0..50 {
        let r = search(db.code(i), db.labels()[i], i, &db).unwrap();
        assert_eq!(r.distances[0], 0);
        assert_eq!(r.order[0], (0..50).find(|&j| db.code(j) == db.code(i)).unwrap());
    }
}

#[test]
fn search_matches_sort_oracle() {
    let mut rng = Rng::new(5);
    let k = 16;
    let db = random_set(&mut rng, k, 500, 10);
    let queries = random_set(&mut rng, k, 20, 10);
    for qi in 0..20 {
        let q = queries.code(qi);
        let r = search(q, queries.labels()[qi], qi, &db).unwrap();
        let mut oracle: Vec<(u32, usize)> = (0..500).map(|j| (naive_hamming(q, db.code(j), k), j)).collect();
        oracle.sort();
        assert_eq!(r.order, oracle.iter().map(|&(_, j)| j).collect::<Vec<_>>());
        assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
        for (t, &j) in r.order.iter().enumerate() {
            assert_eq!(r.relevant[t], db.labels()[j] == queries.labels()[qi]);
        }
    }
    assert!(search(&[0u8; 3], 0, 0, &db).is_err());
}

#[test]
fn ap_matches_direct_formula() {
    let mut rng = Rng::new(6);
    for _ in 0..200 {
        let n = 1 + rng.below(60);
        let rel: Vec<bool> = (0..n).map(|_| rng.below(3) == 0).collect();
        let q = 1 + rng.below(n);
        let ap = average_precision(&rel, q, ApNormalizer::WithinCutoff);
        assert!((ap - naive_ap(&rel, q)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&ap));
    }
}

#[test]
fn ap_is_one_iff_relevant_items_lead() {
    let mut rng = Rng::new(7);
    for _ in 0..300 {
        let n = 1 + rng.below(12);
        let rel: Vec<bool> = (0..n).map(|_| rng.below(2) == 0).collect();
        let ap = average_precision(&rel, n, ApNormalizer::WithinCutoff);
        let hits = rel.iter().filter(|&&r| r).count();
        let leading = hits > 0 && rel[..hits].iter().all(|&r| r);
        assert_eq!(ap == 1.0, leading, "{rel:?}");
    }
}

#[test]
fn single_class_and_separable_cases_are_perfect() {
    let mut rng = Rng::new(8);
    let h = Matrix::from_fn(10, 16, |_, _| rng.normal());
    let db = BinaryCodeSet::from_real(&h, vec![3; 10]).unwrap();
    let rep = evaluate(&db, &db, &EvalOptions::default()).unwrap();
    assert_eq!(rep.map, 1.0);

    let h = Matrix::from_fn(20, 16, |i, j| if (i < 10) == (j < 8) { 1.0 } else { -1.0 });
    let labels = (0..20).map(|i| u32::from(i >= 10)).collect();
    let db = BinaryCodeSet::from_real(&h, labels).unwrap();
    let rep = evaluate(&db, &db, &EvalOptions::default()).unwrap();
    assert_eq!(rep.map, 1.0);
    for &(_, p) in &rep.pr_curve {
        assert_eq!(p, 1.0);
    }
    for &(r, p) in &rep.pr_raw[..10] {
        assert_eq!(p, 1.0);
        assert!(r <= 1.0);
    }
    assert_eq!(rep.pr_raw[9].0, 1.0);
}

#[test]
fn evaluate_matches_naive_end_to_end() {
    let mut rng = Rng::new(9);
    let k = 12;
    let db = random_set(&mut rng, k, 120, 6);
    let queries = random_set(&mut rng, k, 25, 6);
    for q_cutoff in [None, Some(30), Some(120)] {
        let opts = EvalOptions {
            q_cutoff,
            ..EvalOptions::default()
        };
        let rep = evaluate(&queries, &db, &opts).unwrap();
        let mut total = 0.0;
        for qi in 0..25 {
            let q = queries.code(qi);
            let mut order: Vec<usize> = (0..120).collect();
            order.sort_by_key(|&j| (naive_hamming(q, db.code(j), k), j));
            let rel: Vec<bool> = order.iter().map(|&j| db.labels()[j] == queries.labels()[qi]).collect();
            let ap = naive_ap(&rel, q_cutoff.unwrap_or(120));
            assert!((rep.ap[qi] - ap).abs() < 1e-12);
            total += ap;
        }
        assert!((rep.map - total / 25.0).abs() < 1e-12);
        let mean_ap = rep.ap.iter().sum::<f64>() / rep.ap.len() as f64;
        assert!((rep.map - mean_ap).abs() < 1e-15);
        assert_eq!(rep.pr_curve.len(), 11);
        assert!(rep.pr_curve.windows(2).all(|w| w[0].1 >= w[1].1 - 1e-15));
    }
    assert!(evaluate(&queries, &db, &EvalOptions { q_cutoff: Some(121), ..EvalOptions::default() }).is_err());
}

#[test]
fn exclude_self_drops_the_matching_item() {
    let mut rng = Rng::new(10);
    let db = random_set(&mut rng, 8, 30, 3);
    let opts = EvalOptions {
        exclude_self: true,
        ..EvalOptions::default()
    };
    let rep = evaluate(&db, &db, &opts).unwrap();
    assert_eq!(rep.pr_raw.len(), 29);
    for qi in 0..30 {
        let r = search(db.code(qi), db.labels()[qi], qi, &db).unwrap();
        let (rel, _): (Vec<bool>, Vec<usize>) = r
            .relevant
            .iter()
            .zip(&r.order)
            .filter(|(_, &j)| j != qi)
            .map(|(&x, &j)| (x, j))
            .unzip();
        assert!((rep.ap[qi] - naive_ap(&rel, 29)).abs() < 1e-12);
    }
}

#[test]
fn k_mismatch_rejected() {
    let mut rng = Rng::new(11);
    let a = random_set(&mut rng, 8, 4, 2);
    let b = random_set(&mut rng, 16, 4, 2);
    assert!(evaluate(&a, &b, &EvalOptions::default()).is_err());
}

proptest! {
    #[test]
    fn ranking_invariant_under_database_permutation(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = Rng::new(seed);
        let k = 10;
        let db = random_set(&mut rng, k, n, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut bits = Vec::new();
        let mut labels = Vec::new();
        for &p in &perm {
            bits.extend_from_slice(db.code(p));
            labels.push(db.labels()[p]);
        }
        let shuffled = BinaryCodeSet::from_packed(k, bits, labels).unwrap();
        let q = binarize(&(0..k).map(|_| rng.normal()).collect::<Vec<_>>());
        let a = search(&q, 0, 0, &db).unwrap();
        let b = search(&q, 0, 0, &shuffled).unwrap();
        prop_assert_eq!(&a.distances, &b.distances);
        // same items per distance level
        let mapped: Vec<usize> = b.order.iter().map(|&j| perm[j]).collect();
        let mut lo = 0;
        while lo < n {
            let mut hi = lo;
            while hi < n && a.distances[hi] == a.distances[lo] { hi += 1; }
            let mut x = a.order[lo..hi].to_vec();
            let mut y = mapped[lo..hi].to_vec();
            x.sort();
            y.sort();
            prop_assert_eq!(x, y);
            lo = hi;
        }
    }
}
