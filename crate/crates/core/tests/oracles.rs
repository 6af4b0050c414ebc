use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajlet::baselines::{build_distance_matrix, query_distance_matrix, KdTree, MultipointKnn};
use trajlet::eval::{avg_ade, avg_fde, min_ade, min_fde};
use trajlet::geometry::{ade, fde, normalize, NormalizedTrajectory, Point, Trajectory};
use trajlet::retrieval::{build_ivf, recall_at_k, search_exact, search_ivf, EmbeddingBank};
use trajlet::similarity::{dft_half, similarity_matrix, spectral_feature, Metric, SimilarityMatrix};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_points(r: &mut ChaCha8Rng, t: usize) -> Vec<Point> {
    let mut p = Point::new(r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0));
    let mut out = vec![p];
    for _ in 1..t {
        p = Point::new(p.x + r.gen_range(0.1..1.0), p.y + r.gen_range(-0.5..0.5));
        out.push(p);
    }
    out
}

fn random_bank(r: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<NormalizedTrajectory> {
    (0..n)
        .map(|i| normalize(&Trajectory::new(format!("t{i:04}"), None, random_points(r, t)).unwrap()).unwrap())
        .collect()
}

fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f32> {
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        rows.extend(v.iter().map(|x| (x / norm) as f32));
    }
    rows
}

fn embedding_bank(r: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingBank {
    let trajs = random_bank(r, n, 3);
    let rows = unit_rows(r, n, d);
    EmbeddingBank::new(d, rows, trajs).unwrap()
}

fn ade_oracle(a: &[Point], b: &[Point]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += ((a[i].x - b[i].x).powi(2) + (a[i].y - b[i].y).powi(2)).sqrt();
    }
    s / a.len() as f64
}

fn fde_oracle(a: &[Point], b: &[Point]) -> f64 {
    let (p, q) = (a[a.len() - 1], b[b.len() - 1]);
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

/// Sorts every candidate by `(score, id)`.
fn full_sort(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(ids[a].cmp(&ids[b])));
    idx
}

#[test]
fn displacement_errors_match_loops() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let t = r.gen_range(2..40);
        let q = random_points(&mut r, t);
        let cands: Vec<Vec<Point>> = (0..r.gen_range(1..8)).map(|_| random_points(&mut r, t)).collect();
        let ades: Vec<f64> = cands.iter().map(|c| ade_oracle(&q, c)).collect();
        let fdes: Vec<f64> = cands.iter().map(|c| fde_oracle(&q, c)).collect();
        assert!((ade(&q, &cands[0]).unwrap() - ades[0]).abs() <= 1e-9);
        assert!((fde(&q, &cands[0]).unwrap() - fdes[0]).abs() <= 1e-9);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((min_ade(&q, &cands).unwrap() - min(&ades)).abs() <= 1e-9);
        assert!((min_fde(&q, &cands).unwrap() - min(&fdes)).abs() <= 1e-9);
        assert!((avg_ade(&q, &cands).unwrap() - mean(&ades)).abs() <= 1e-9);
        assert!((avg_fde(&q, &cands).unwrap() - mean(&fdes)).abs() <= 1e-9);
    }
}

#[test]
fn hand_worked_candidate_means() {
    let q = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
    let c1: Vec<Point> = q.iter().map(|p| Point::new(p.x, p.y + 1.0)).collect();
    let c2: Vec<Point> = q.iter().map(|p| Point::new(p.x, p.y - 3.0)).collect();
    let cands = [c1, c2];
    assert_eq!(avg_ade(&q, &cands).unwrap(), 2.0);
    assert_eq!(min_ade(&q, &cands).unwrap(), 1.0);
    assert_eq!(avg_fde(&q, &[q.clone(), q.clone()]).unwrap(), 0.0);
}

#[test]
fn dft_matches_complex_exponential_sum() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let n = r.gen_range(1..64);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let got = dft_half(&x);
        assert_eq!(got.len(), n / 2 + 1);
        for (k, &(re, im)) in got.iter().enumerate() {
            let (mut ore, mut oim) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                ore += v * w.cos();
                oim += v * w.sin();
            }
            assert!((re - ore).abs() <= 1e-9 && (im - oim).abs() <= 1e-9, "n={n} k={k}");
        }
    }
}

#[test]
fn similarity_matrices_match_pairwise_oracles() {
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let n = r.gen_range(2..12);
        let t = r.gen_range(2..20);
        let bank = random_bank(&mut r, n, t);
        let alpha = r.gen_range(0.1..2.0);
        let cos = similarity_matrix(&bank, Metric::CosineCombined, alpha).unwrap();
        let fft = similarity_matrix(&bank, Metric::FftSpectral, alpha).unwrap();
        let feats: Vec<Vec<f64>> = bank
            .iter()
            .map(|b| {
                let mut m: Vec<f64> = Vec::new();
                for axis in [0, 1] {
                    let s: Vec<f64> = b.points.iter().map(|p| if axis == 0 { p.x } else { p.y }).collect();
                    m.extend(dft_half(&s).iter().map(|(re, im)| (re * re + im * im).sqrt()));
                }
                let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                m.iter().map(|v| v / norm).collect()
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&bank[i].points, &bank[j].points);
                let (ax, ay) = (a[t - 1].x - a[0].x, a[t - 1].y - a[0].y);
                let (bx, by) = (b[t - 1].x - b[0].x, b[t - 1].y - b[0].y);
                let c = (ax * bx + ay * by) / ((ax * ax + ay * ay).sqrt() * (bx * bx + by * by).sqrt());
                let expect = c / (1.0 + alpha * ade_oracle(a, b));
                assert!((cos.get(i, j) - expect).abs() <= 1e-9);
                let dot: f64 = feats[i].iter().zip(&feats[j]).map(|(x, y)| x * y).sum();
                assert!((fft.get(i, j) - dot.clamp(0.0, 1.0)).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn mirror_images_share_a_spectrum() {
    let mut r = rng(3);
    let bank = random_bank(&mut r, 1, 30);
    let mirrored: Vec<Point> = bank[0].points.iter().map(|p| Point::new(p.x, -p.y)).collect();
    let m = NormalizedTrajectory::from_canonical("m", None, mirrored);
    let (a, b) = (spectral_feature(&bank[0]), spectral_feature(&m));
    for (x, y) in a.magnitudes.iter().zip(&b.magnitudes) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn kd_tree_equals_linear_scan() {
    for seed in 0..100 {
        let mut r = rng(2000 + seed);
        let n = r.gen_range(1..500);
        let mut points: Vec<Point> = (0..n)
            .map(|_| Point::new(r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)))
            .collect();
        // duplicated coordinates exercise the id tiebreak
        for i in 0..n / 10 {
            points[i] = points[n - 1 - i];
        }
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:04}")).collect();
        let tree = KdTree::build(&points);
        for _ in 0..5 {
            let q = Point::new(r.gen_range(-12.0..12.0), r.gen_range(-12.0..12.0));
            let k = r.gen_range(1..12);
            let got = tree.nearest(&ids, q, k);
            let dists: Vec<f64> = points.iter().map(|p| p.dist(q)).collect();
            let expect: Vec<usize> = full_sort(&ids, &dists).into_iter().take(k).collect();
            assert_eq!(got.indices(), expect, "seed {seed}");
            for nb in &got.neighbors {
                assert_eq!(nb.distance, dists[nb.index]);
            }
        }
    }
}

#[test]
fn exact_search_equals_full_sort() {
    let mut r = rng(7);
    let bank = embedding_bank(&mut r, 500, 8);
    for _ in 0..20 {
        let q: Vec<f64> = unit_rows(&mut r, 1, 8).iter().map(|&v| v as f64).collect();
        let dists: Vec<f64> = (0..bank.len())
            .map(|i| {
                bank.row(i)
                    .iter()
                    .zip(&q)
                    .map(|(&a, b)| (a as f64 - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let expect: Vec<usize> = full_sort(bank.ids(), &dists).into_iter().take(6).collect();
        let got = search_exact(&bank, &q, 6);
        assert_eq!(got.indices(), expect);
        for nb in &got.neighbors {
            assert!((nb.distance - dists[nb.index]).abs() <= 1e-9);
        }
    }
}

#[test]
fn exhaustive_ivf_probe_equals_exact() {
    for seed in 0..100 {
        let mut r = rng(3000 + seed);
        let n = r.gen_range(10..200);
        let bank = embedding_bank(&mut r, n, 6);
        let nlist = r.gen_range(1..=n.min(16));
        let ivf = build_ivf(&bank, nlist, seed).unwrap();
        let total: usize = ivf.lists.iter().map(Vec::len).sum();
        assert_eq!(total, n);
        let q: Vec<f64> = unit_rows(&mut r, 1, 6).iter().map(|&v| v as f64).collect();
        assert_eq!(search_ivf(&ivf, &bank, &q, 6, nlist), search_exact(&bank, &q, 6));
    }
}

#[test]
fn ivf_recall_is_monotone_in_nprobe() {
    let mut r = rng(11);
    let bank = embedding_bank(&mut r, 2000, 8);
    let ivf = build_ivf(&bank, 32, 0).unwrap();
    let queries: Vec<Vec<f64>> = (0..50)
        .map(|_| unit_rows(&mut r, 1, 8).iter().map(|&v| v as f64).collect())
        .collect();
    let mut last = 0.0;
    for nprobe in [1, 2, 4, 8, 16, 32] {
        let recall = queries
            .iter()
            .map(|q| recall_at_k(&search_exact(&bank, q, 6), &search_ivf(&ivf, &bank, q, 6, nprobe)))
            .sum::<f64>()
            / queries.len() as f64;
        assert!(recall >= last, "nprobe {nprobe}: {recall} < {last}");
        last = recall;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn distance_matrix_retrieval_equals_full_sort() {
    for seed in 0..100 {
        let mut r = rng(4000 + seed);
        let n = r.gen_range(1..50);
        let t = r.gen_range(2..12);
        let bank = random_bank(&mut r, n, t);
        let store = build_distance_matrix(&bank).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((store.get(i, j) - ade_oracle(&bank[i].points, &bank[j].points)).abs() <= 1e-9);
            }
        }
        let q = random_bank(&mut r, 1, t).remove(0);
        let ids: Vec<String> = bank.iter().map(|b| b.source_id.clone()).collect();
        let dists: Vec<f64> = bank.iter().map(|b| ade_oracle(&q.points, &b.points)).collect();
        let k = r.gen_range(1..8);
        let got = query_distance_matrix(&store, &bank, &q.points, k).unwrap();
        let expect: Vec<usize> = full_sort(&ids, &dists).into_iter().take(k).collect();
        assert_eq!(got.indices(), expect);
    }
}

#[test]
fn multipoint_scores_match_brute_force() {
    for seed in 0..20 {
        let mut r = rng(5000 + seed);
        let bank = random_bank(&mut r, 100, 12);
        let ids: Vec<String> = bank.iter().map(|b| b.source_id.clone()).collect();
        let waypoints = vec![3, 7, 11];
        let engine = MultipointKnn::build(&bank, waypoints.clone()).unwrap();
        let reference: Vec<Point> = random_bank(&mut r, 1, 12)[0].points.clone();
        let reference: Vec<Point> = waypoints.iter().map(|&w| reference[w]).collect();
        let k = 6;
        let per: Vec<Vec<f64>> = waypoints
            .iter()
            .zip(&reference)
            .map(|(&w, &q)| bank.iter().map(|b| b.points[w].dist(q)).collect())
            .collect();
        let tops: Vec<Vec<usize>> = per
            .iter()
            .map(|d| full_sort(&ids, d).into_iter().take(k).collect())
            .collect();
        let mut members: Vec<usize> = tops.iter().flatten().copied().collect();
        members.sort_unstable();
        members.dedup();
        let scores: Vec<f64> = (0..bank.len())
            .map(|i| {
                if !members.contains(&i) {
                    return f64::INFINITY;
                }
                (0..waypoints.len())
                    .map(|w| {
                        if tops[w].contains(&i) {
                            per[w][i]
                        } else {
                            per[w][tops[w][k - 1]]
                        }
                    })
                    .sum()
            })
            .collect();
        let expect: Vec<usize> = full_sort(&ids, &scores).into_iter().take(k).collect();
        let got = engine.query_points(&reference, k).unwrap();
        assert_eq!(got.indices(), expect, "seed {seed}");
    }
}

#[test]
fn threshold_for_rate_hits_the_requested_fraction() {
    let mut r = rng(5);
    for _ in 0..20 {
        let n = 12;
        let mut rows = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rows[i][j] = (r.gen_range(0..1000) as f64) / 1000.0;
                }
            }
        }
        let m = SimilarityMatrix::from_rows(&rows, Metric::FftSpectral);
        let rate = r.gen_range(0.0..0.5);
        let thr = m.threshold_for_rate(rate);
        assert!(m.positive_rate(thr) <= rate + 1e-12);
        let values: Vec<f64> = m.off_diagonal().collect();
        // any lower threshold admits at least one more pair
        let below = values
            .iter()
            .copied()
            .filter(|&v| v < thr)
            .fold(f64::NEG_INFINITY, f64::max);
        if below.is_finite() {
            assert!(m.positive_rate(below) > m.positive_rate(thr));
        }
    }
}
