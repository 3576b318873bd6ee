//! KMeans clustering and the cluster-to-congestion-label mapping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::streamproc::FeatureVector;

use super::matrix::{dist_sq, Matrix};
use super::scale::StandardScaler;
use super::CongestionLabel;

/// Stream base keeping restart draws disjoint from the other model streams
/// derived from the same seed.
const STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 3,
            max_iter: 100,
            tol: 1e-4,
            restarts: 1,
        }
    }
}

/// A fitted clustering in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel<F> {
    pub centroids: Matrix<F>,
    pub iterations: usize,
    pub inertia: F,
    /// Inertia recorded at every assignment step; non-increasing.
    pub inertia_history: Vec<F>,
}

impl<F: Real> KMeansModel<F> {
    pub fn k(&self) -> usize {
        self.centroids.n_rows()
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, row: &[F]) -> usize {
        let mut best = 0;
        let mut best_d = dist_sq(row, self.centroids.row(0));
        for c in 1..self.centroids.n_rows() {
            let d = dist_sq(row, self.centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    pub fn assign(&self, x: &Matrix<F>) -> Vec<usize> {
        x.iter_rows().map(|r| self.nearest(r)).collect()
    }
}

/// RNG for one restart; every restart owns an independent stream.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_BASE + restart as u64);
    rng
}

/// Fits KMeans with k-means++ seeding and Lloyd iterations, keeping the
/// best restart by inertia. Deterministic per seed.
pub fn fit<F: Real>(x: &Matrix<F>, cfg: &KMeansConfig, seed: u64) -> Result<KMeansModel<F>> {
    if cfg.k < 1 || cfg.max_iter < 1 || cfg.restarts < 1 {
        return Err(Error::Config(
            "kmeans needs k, max_iter and restarts all at least 1".into(),
        ));
    }
    if x.n_rows() < cfg.k {
        return Err(Error::InsufficientData {
            need: cfg.k,
            got: x.n_rows(),
        });
    }
    let mut best: Option<KMeansModel<F>> = None;
    for r in 0..cfg.restarts {
        let model = fit_once(x, cfg, restart_rng(seed, r))?;
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_once<F: Real>(
    x: &Matrix<F>,
    cfg: &KMeansConfig,
    mut rng: ChaCha8Rng,
) -> Result<KMeansModel<F>> {
    let n = x.n_rows();
    let mut centroids = init_plus_plus(x, cfg.k, &mut rng)?;
    let mut assignment = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        // Assignment step; the summed minimum distances are the inertia of
        // the previous centroids, which is the non-increasing series.
        let mut inertia = F::zero();
        let mut min_d = vec![F::zero(); n];
        for (i, row) in x.iter_rows().enumerate() {
            let mut best = 0;
            let mut best_d = dist_sq(row, centroids.row(0));
            for c in 1..cfg.k {
                let d = dist_sq(row, centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
            min_d[i] = best_d;
            inertia += best_d;
        }
        history.push(inertia);

        // Update step.
        let mut sums = Matrix::<F>::zeros(cfg.k, x.n_cols());
        let mut counts = vec![0usize; cfg.k];
        for (i, row) in x.iter_rows().enumerate() {
            counts[assignment[i]] += 1;
            let s = sums.row_mut(assignment[i]);
            for (a, v) in s.iter_mut().zip(row) {
                *a += *v;
            }
        }
        let mut shift = F::zero();
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                // Re-seed an emptied cluster at the point farthest from its
                // current centroid, then keep iterating.
                let far = (0..n)
                    .max_by(|&a, &b| min_d[a].partial_cmp(&min_d[b]).expect("finite"))
                    .expect("nonempty input");
                let row = x.row(far).to_vec();
                centroids.row_mut(c).copy_from_slice(&row);
                min_d[far] = F::zero();
                shift = F::infinity();
                continue;
            }
            let cnt = F::from_usize_real(count);
            let mut moved = F::zero();
            let dest = centroids.row_mut(c);
            let src = sums.row(c);
            for (d, s) in dest.iter_mut().zip(src) {
                let next = *s / cnt;
                let delta = next - *d;
                moved += delta * delta;
                *d = next;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < F::from_f64_real(cfg.tol) {
            break;
        }
    }

    // Final inertia against the final centroids.
    let mut inertia = F::zero();
    for row in x.iter_rows() {
        let mut best_d = dist_sq(row, centroids.row(0));
        for c in 1..cfg.k {
            best_d = best_d.min(dist_sq(row, centroids.row(c)));
        }
        inertia += best_d;
    }
    history.push(inertia);

    Ok(KMeansModel {
        centroids,
        iterations,
        inertia,
        inertia_history: history,
    })
}

/// k-means++ seeding: the first centroid is a uniform point, each later one
/// is drawn with probability proportional to squared distance from the
/// chosen set. Inputs with fewer than k distinct points are degenerate.
fn init_plus_plus<F: Real>(x: &Matrix<F>, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix<F>> {
    let n = x.n_rows();
    let mut centroids = Matrix::<F>::zeros(k, x.n_cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));

    let mut dist: Vec<f64> = x
        .iter_rows()
        .map(|r| dist_sq(r, centroids.row(0)).as_f64())
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateClustering);
        }
        let target = rng.random::<f64>() * total;
        let mut cum = 0.0;
        let mut chosen = None;
        for (i, d) in dist.iter().enumerate() {
            if *d > 0.0 {
                cum += d;
                chosen = Some(i);
                if cum > target {
                    break;
                }
            }
        }
        let chosen = chosen.expect("positive total implies a positive weight");
        centroids.row_mut(c).copy_from_slice(x.row(chosen));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(dist_sq(x.row(i), centroids.row(c)).as_f64());
        }
    }
    Ok(centroids)
}

/// Maps each cluster to a congestion label by its de-standardized centroid:
/// fastest cluster is Low, slowest is High. Velocity ties fall to space
/// headway, where tighter spacing means more congestion.
pub fn map_clusters_to_labels<F: Real>(
    model: &KMeansModel<F>,
    scaler: &StandardScaler<F>,
) -> Result<Vec<CongestionLabel>> {
    let k = model.k();
    if k != CongestionLabel::ALL.len() {
        return Err(Error::Config(format!(
            "label mapping expects {} clusters, model has {k}",
            CongestionLabel::ALL.len()
        )));
    }
    let raw: Vec<Vec<F>> = (0..k)
        .map(|c| scaler.inverse_row(model.centroids.row(c)))
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let va = raw[a][0].as_f64();
        let vb = raw[b][0].as_f64();
        vb.partial_cmp(&va)
            .expect("finite centroids")
            .then_with(|| {
                let sa = raw[a][2].as_f64();
                let sb = raw[b][2].as_f64();
                sb.partial_cmp(&sa).expect("finite centroids")
            })
    });
    let mut labels = vec![CongestionLabel::Low; k];
    for (rank, &cluster) in order.iter().enumerate() {
        labels[cluster] = CongestionLabel::ALL[rank];
    }
    Ok(labels)
}

/// Scaler, clustering and label map bundled into the function the pipeline
/// actually uses: feature vector in, congestion label out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeler {
    pub scaler: StandardScaler<f64>,
    pub model: KMeansModel<f64>,
    pub cluster_labels: Vec<CongestionLabel>,
}

impl Labeler {
    /// Standardizes the features, clusters them and derives the label map.
    pub fn fit(features: &[FeatureVector], cfg: &KMeansConfig, seed: u64) -> Result<Labeler> {
        let x = Matrix::from_features(features);
        let (z, scaler) = StandardScaler::fit_transform(&x)?;
        let model = fit(&z, cfg, seed)?;
        let cluster_labels = map_clusters_to_labels(&model, &scaler)?;
        Ok(Labeler {
            scaler,
            model,
            cluster_labels,
        })
    }

    pub fn label(&self, f: &FeatureVector) -> CongestionLabel {
        let z = self.scaler.transform_row(&f.0);
        self.cluster_labels[self.model.nearest(&z)]
    }

    pub fn label_all(&self, features: &[FeatureVector]) -> Vec<CongestionLabel> {
        features.iter().map(|f| self.label(f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig};
    use crate::streamproc::{clean, featurize};

    fn embed(points: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn distinct_points_become_their_own_centroids() {
        let x = embed(&[0.0, 10.0, 20.0]);
        let model = fit(&x, &KMeansConfig::default(), 1).unwrap();
        let mut got: Vec<f64> = (0..3).map(|c| model.centroids.get(c, 0)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![0.0, 10.0, 20.0]);
        assert_eq!(model.inertia, 0.0);
    }

    #[test]
    fn matches_exhaustive_partition_search_on_tiny_instances() {
        // Brute force: minimum within-cluster SSE over every assignment of
        // the points to 3 groups.
        fn optimal_sse(x: &Matrix<f64>) -> f64 {
            let n = x.n_rows();
            let d = x.n_cols();
            let mut best = f64::INFINITY;
            for mask in 0..3usize.pow(n as u32) {
                let mut groups = vec![Vec::new(); 3];
                let mut m = mask;
                for i in 0..n {
                    groups[m % 3].push(i);
                    m /= 3;
                }
                let mut sse = 0.0;
                for g in &groups {
                    if g.is_empty() {
                        continue;
                    }
                    let mut mean = vec![0.0; d];
                    for &i in g {
                        for (a, v) in mean.iter_mut().zip(x.row(i)) {
                            *a += v;
                        }
                    }
                    for a in &mut mean {
                        *a /= g.len() as f64;
                    }
                    for &i in g {
                        sse += dist_sq(x.row(i), &mean);
                    }
                }
                best = best.min(sse);
            }
            best
        }

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = KMeansConfig {
            restarts: 10,
            ..KMeansConfig::default()
        };
        for case in 0..50 {
            let n = rng.random_range(6..=10usize);
            let d = rng.random_range(1..=3usize);
            // Three well-separated blob centers, each with at least one point.
            let centers: Vec<Vec<f64>> = (0..3)
                .map(|c| (0..d).map(|_| c as f64 * 40.0 + rng.random_range(-5.0..5.0)).collect())
                .collect();
            let mut data = Vec::new();
            for i in 0..n {
                let c = &centers[i % 3];
                for v in c {
                    data.push(v + rng.random_range(-1.0..1.0));
                }
            }
            let x = Matrix::from_vec(n, d, data).unwrap();
            let model = fit(&x, &cfg, case).unwrap();
            let best = optimal_sse(&x);
            assert!(
                (model.inertia - best).abs() <= 1e-9 * best.max(1.0),
                "case {case}: inertia {} vs optimal {best}",
                model.inertia
            );
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let x = embed(&[4.0; 10]);
        assert!(matches!(
            fit(&x, &KMeansConfig::default(), 0),
            Err(Error::DegenerateClustering)
        ));
        // Two distinct values cannot seed three clusters either.
        let x = embed(&[1.0, 1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            fit(&x, &KMeansConfig::default(), 0),
            Err(Error::DegenerateClustering)
        ));
    }

    #[test]
    fn fewer_rows_than_clusters_is_an_error() {
        let x = embed(&[1.0, 2.0]);
        assert!(matches!(
            fit(&x, &KMeansConfig::default(), 0),
            Err(Error::InsufficientData { need: 3, got: 2 })
        ));
    }

    #[test]
    fn refits_identically_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..200 * 4).map(|_| rng.random_range(-10.0..10.0)).collect();
        let x = Matrix::from_vec(200, 4, data).unwrap();
        let a = fit(&x, &KMeansConfig::default(), 42).unwrap();
        let b = fit(&x, &KMeansConfig::default(), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inertia_shrinks_and_assignments_are_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut data = Vec::new();
        for _ in 0..500 {
            let c = rng.random_range(0..3) as f64 * 12.0;
            for _ in 0..4 {
                data.push(c + rng.random_range(-2.0..2.0));
            }
        }
        let x = Matrix::from_vec(500, 4, data).unwrap();
        let model = fit(&x, &KMeansConfig::default(), 5).unwrap();

        assert!(model.inertia >= 0.0);
        assert!(model.iterations <= 100);
        for w in model.inertia_history.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12) + 1e-9,
                "inertia rose: {} -> {}",
                w[0],
                w[1]
            );
        }
        for c in 0..3 {
            for other in c + 1..3 {
                assert!(dist_sq(model.centroids.row(c), model.centroids.row(other)) > 0.0);
            }
        }
        let assignment = model.assign(&x);
        for (i, row) in x.iter_rows().enumerate() {
            let mine = dist_sq(row, model.centroids.row(assignment[i]));
            for c in 0..3 {
                assert!(mine <= dist_sq(row, model.centroids.row(c)));
            }
        }
    }

    #[test]
    fn label_map_orders_by_velocity_then_headway() {
        let identity = StandardScaler {
            means: vec![0.0; 4],
            stds: vec![1.0; 4],
        };
        let model_with = |rows: &[[f64; 4]]| KMeansModel {
            centroids: Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
                .unwrap(),
            iterations: 1,
            inertia: 0.0,
            inertia_history: vec![0.0],
        };

        let m = model_with(&[[25.0, 0.0, 40.0, 2.0], [12.0, 0.0, 20.0, 2.0], [3.0, 0.0, 7.0, 2.0]]);
        assert_eq!(
            map_clusters_to_labels(&m, &identity).unwrap(),
            vec![CongestionLabel::Low, CongestionLabel::Medium, CongestionLabel::High]
        );

        // Equal velocities: the tightest spacing is the most congested.
        let m = model_with(&[[10.0, 0.0, 40.0, 2.0], [10.0, 0.0, 7.0, 2.0], [10.0, 0.0, 20.0, 2.0]]);
        assert_eq!(
            map_clusters_to_labels(&m, &identity).unwrap(),
            vec![CongestionLabel::Low, CongestionLabel::High, CongestionLabel::Medium]
        );

        // The map follows centroid content, not cluster index order.
        let m = model_with(&[[3.0, 0.0, 7.0, 2.0], [25.0, 0.0, 40.0, 2.0], [12.0, 0.0, 20.0, 2.0]]);
        assert_eq!(
            map_clusters_to_labels(&m, &identity).unwrap(),
            vec![CongestionLabel::High, CongestionLabel::Low, CongestionLabel::Medium]
        );
    }

    #[test]
    fn labeler_orders_speeds_sensibly_end_to_end() {
        let mut cfg = GeneratorConfig::new(5000, 77);
        cfg.missing_prob = 0.02;
        let features: Vec<_> = generate(&cfg)
            .unwrap()
            .iter()
            .map(|r| featurize(&clean(r, 0)))
            .collect();
        let labeler = Labeler::fit(&features, &KMeansConfig::default(), 11).unwrap();

        let labels = labeler.label_all(&features);
        let mut sums = [0.0f64; 3];
        let mut counts = [0u64; 3];
        for (f, l) in features.iter().zip(&labels) {
            sums[l.index()] += f.v_vel();
            counts[l.index()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "all labels appear: {counts:?}");
        let means: Vec<f64> = (0..3).map(|i| sums[i] / counts[i] as f64).collect();
        assert!(
            means[0] > means[1] && means[1] > means[2],
            "mean speeds by label should fall with congestion: {means:?}"
        );
        for (f, l) in features.iter().take(50).zip(&labels) {
            assert_eq!(labeler.label(f), *l);
        }
    }
}
