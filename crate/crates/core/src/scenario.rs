//! k-means scenario reduction and the two-stage scenario tree.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub centroid: Vec<f64>,
    pub member_count: usize,
}

#[derive(Clone, Debug)]
pub struct KMeans {
    pub clusters: Vec<Cluster>,
    pub assignment: Vec<usize>,
    /// J after every centroid update, first entry from the initial assignment.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn means(
    points: &[Vec<f64>],
    assignment: &[usize],
    k: usize,
    old: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            sums[j] = old[j].clone();
        } else {
            let n = counts[j] as f64;
            sums[j].iter_mut().for_each(|s| *s /= n);
        }
    }
    (sums, counts)
}

fn sse(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Lloyd's algorithm on squared Euclidean distance.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if k == 0 || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "k and max_iter must be positive".into(),
        ));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points differ in dimension".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    for &i in &order {
        if seeds.len() == k {
            break;
        }
        if seeds.iter().all(|&s| points[s] != points[i]) {
            seeds.push(i);
        }
    }
    for &i in &order {
        if seeds.len() == k {
            break;
        }
        if !seeds.contains(&i) {
            seeds.push(i);
        }
    }
    let mut centroids: Vec<Vec<f64>> = seeds.iter().map(|&i| points[i].clone()).collect();
    let mut assignment: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next != assignment;
        if !changed {
            break;
        }
        assignment = next;
        iterations += 1;

        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&a| counts[a] += 1);
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[j])
                        .total_cmp(&sq_dist(&points[b], &centroids[j]))
                        .then(b.cmp(&a))
                });
            if let Some(i) = donor {
                counts[assignment[i]] -= 1;
                assignment[i] = j;
                counts[j] = 1;
                centroids[j] = points[i].clone();
            }
        }
        centroids = means(points, &assignment, k, &centroids).0;
        history.push(sse(points, &assignment, &centroids));
    }

    let (centroids, counts) = means(points, &assignment, k, &centroids);
    let clusters = centroids
        .into_iter()
        .zip(counts)
        .map(|(centroid, member_count)| Cluster {
            centroid,
            member_count,
        })
        .collect();
    Ok(KMeans {
        clusters,
        assignment,
        objective_history: history,
        iterations,
    })
}

pub fn cluster_probabilities(assignment: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &a in assignment {
        counts[a] += 1;
    }
    let n = assignment.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        if scenarios.len() != probabilities.len() {
            return Err(Error::Shape(format!(
                "{} scenarios with {} probabilities",
                scenarios.len(),
                probabilities.len()
            )));
        }
        if scenarios.is_empty() {
            return Err(Error::InvalidArgument("empty scenario set".into()));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "negative scenario probability".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self {
            scenarios,
            probabilities,
        })
    }

    /// Drops zero-probability clusters and renormalizes.
    pub fn from_clusters(clusters: &[Cluster], probabilities: &[f64]) -> Result<Self> {
        let kept: Vec<(Vec<f64>, f64)> = clusters
            .iter()
            .zip(probabilities)
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| (c.centroid.clone(), p))
            .collect();
        let total: f64 = kept.iter().map(|k| k.1).sum();
        let (scenarios, probabilities) = kept.into_iter().map(|(c, p)| (c, p / total)).unzip();
        Self::new(scenarios, probabilities)
    }

    pub fn deterministic(prices: Vec<f64>) -> Self {
        Self {
            scenarios: vec![prices],
            probabilities: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn width(&self) -> usize {
        self.scenarios[0].len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub da: usize,
    pub id: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub da: ScenarioSet,
    /// ID scenarios conditional on each DA scenario.
    pub id_sets: Vec<ScenarioSet>,
    /// Leaves ordered by DA scenario, then ID scenario.
    pub leaves: Vec<Leaf>,
}

impl ScenarioTree {
    pub fn hours(&self) -> usize {
        self.da.width()
    }

    pub fn quarters(&self) -> usize {
        self.id_sets[0].width()
    }

    pub fn leaf_da_prices(&self, leaf: &Leaf) -> &[f64] {
        &self.da.scenarios[leaf.da]
    }

    pub fn leaf_id_prices(&self, leaf: &Leaf) -> &[f64] {
        &self.id_sets[leaf.da].scenarios[leaf.id]
    }

    /// Leaf indices belonging to DA scenario `da`.
    pub fn group(&self, da: usize) -> impl Iterator<Item = usize> + '_ {
        self.leaves
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.da == da)
            .map(|(i, _)| i)
    }

    /// Every price in the tree for one market.
    pub fn price_range(&self) -> ((f64, f64), (f64, f64)) {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        let da = span(&mut self.da.scenarios.iter().flatten().copied());
        let id = span(
            &mut self
                .id_sets
                .iter()
                .flat_map(|s| s.scenarios.iter().flatten())
                .copied(),
        );
        (da, id)
    }
}

/// Cross-product tree with DA and ID scenarios treated as independent.
pub fn build_tree(da: &ScenarioSet, id: &ScenarioSet) -> Result<ScenarioTree> {
    build_tree_conditional(da, vec![id.clone(); da.len()])
}

/// Tree with one ID set per DA scenario, leaf probability π_ξ1 · π_ξ2|ξ1.
pub fn build_tree_conditional(da: &ScenarioSet, id_sets: Vec<ScenarioSet>) -> Result<ScenarioTree> {
    if da.is_empty() || id_sets.len() != da.len() {
        return Err(Error::Shape(format!(
            "{} DA scenarios but {} ID sets",
            da.len(),
            id_sets.len()
        )));
    }
    let hours = da.width();
    if hours == 0 || da.scenarios.iter().any(|s| s.len() != hours) {
        return Err(Error::Shape("DA scenarios differ in length".into()));
    }
    for set in &id_sets {
        if set.scenarios.iter().any(|s| s.len() != 4 * hours) {
            return Err(Error::Shape(format!(
                "ID scenarios must have {} quarters for {hours} DA hours",
                4 * hours
            )));
        }
    }
    let mut leaves = Vec::new();
    for (d, &pd) in da.probabilities.iter().enumerate() {
        for (i, &pi) in id_sets[d].probabilities.iter().enumerate() {
            leaves.push(Leaf {
                da: d,
                id: i,
                probability: pd * pi,
            });
        }
    }
    Ok(ScenarioTree {
        da: da.clone(),
        id_sets,
        leaves,
    })
}

/// Clusters the ID days of every DA cluster separately.
pub fn conditional_id_sets(
    da_assignment: &[usize],
    da_k: usize,
    id_rows: &[Vec<f64>],
    id_k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Vec<ScenarioSet>> {
    if da_assignment.len() != id_rows.len() {
        return Err(Error::Shape(format!(
            "{} DA days but {} ID days",
            da_assignment.len(),
            id_rows.len()
        )));
    }
    let mut sets = Vec::new();
    for d in 0..da_k {
        let members: Vec<Vec<f64>> = id_rows
            .iter()
            .zip(da_assignment)
            .filter(|(_, &a)| a == d)
            .map(|(r, _)| r.clone())
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = id_k.min(members.len());
        let km = kmeans(&members, k, seed.wrapping_add(d as u64), max_iter)?;
        let probs = cluster_probabilities(&km.assignment, k);
        sets.push(ScenarioSet::from_clusters(&km.clusters, &probs)?);
    }
    Ok(sets)
}

pub fn write_scenarios_csv(path: &Path, set: &ScenarioSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scenario".to_string(), "probability".to_string()];
    header.extend((0..set.width()).map(|j| format!("p{j}")));
    w.write_record(&header)?;
    for (s, (prices, p)) in set.scenarios.iter().zip(&set.probabilities).enumerate() {
        let mut rec = vec![s.to_string(), p.to_string()];
        rec.extend(prices.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes every conditional ID set with a leading `da_scenario` column.
pub fn write_conditional_csv(path: &Path, sets: &[ScenarioSet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "da_scenario".to_string(),
        "scenario".to_string(),
        "probability".to_string(),
    ];
    header.extend((0..sets[0].width()).map(|j| format!("p{j}")));
    w.write_record(&header)?;
    for (d, set) in sets.iter().enumerate() {
        for (s, (prices, p)) in set.scenarios.iter().zip(&set.probabilities).enumerate() {
            let mut rec = vec![d.to_string(), s.to_string(), p.to_string()];
            rec.extend(prices.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a scenario file; conditional files yield one set per DA scenario.
pub fn read_scenarios_csv(path: &Path) -> Result<Vec<ScenarioSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let conditional = reader.headers()?.get(0) == Some("da_scenario");
    let skip = if conditional { 3 } else { 2 };
    let mut groups: Vec<(Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                path: path.into(),
                line: k + 2,
                msg: format!("`{s}`: {e}"),
            })
        };
        let g = if conditional {
            parse(&rec[0])? as usize
        } else {
            0
        };
        if g >= groups.len() {
            groups.resize(g + 1, (Vec::new(), Vec::new()));
        }
        groups[g].1.push(parse(&rec[skip - 1])?);
        groups[g]
            .0
            .push(rec.iter().skip(skip).map(parse).collect::<Result<_>>()?);
    }
    groups
        .into_iter()
        .map(|(s, p)| ScenarioSet::new(s, p))
        .collect()
}
