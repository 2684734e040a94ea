//! Hamming ranking and retrieval metrics.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::hashing::{hamming_distance, BinaryCode, CodeMatrix};

/// Database indices by ascending Hamming distance, ties by index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub indices: Vec<usize>,
    pub distances: Vec<usize>,
}

pub fn rank_database(q: &BinaryCode, codes: &CodeMatrix) -> Result<RankedList> {
    if q.len() != codes.code_length() {
        return Err(Error::dim("rank_database", &[codes.code_length()], &[q.len()]));
    }
    // One bucket per distance; each bucket keeps database order.
    let mut buckets = vec![Vec::new(); q.len() + 1];
    for (j, c) in codes.columns().iter().enumerate() {
        buckets[hamming_distance(q, c)?].push(j);
    }
    let mut indices = Vec::with_capacity(codes.len());
    let mut distances = Vec::with_capacity(codes.len());
    for (d, bucket) in buckets.into_iter().enumerate() {
        distances.extend(std::iter::repeat_n(d, bucket.len()));
        indices.extend(bucket);
    }
    Ok(RankedList { indices, distances })
}

/// `(1/R) Σ_{k: rel_k} (relevant in top k) / k`, and 0 when nothing is relevant.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        total / hits as f64
    }
}

/// Relevance of each ranked item to `label` (at least one shared class).
pub fn ranked_relevance(q: &BinaryCode, label: &LabelVector, codes: &CodeMatrix, db_labels: &[LabelVector]) -> Result<Vec<bool>> {
    if db_labels.len() != codes.len() {
        return Err(Error::dim("database labels", &[codes.len()], &[db_labels.len()]));
    }
    let ranked = rank_database(q, codes)?;
    Ok(ranked.indices.iter().map(|&j| db_labels[j].shares_class(label)).collect())
}

/// Ranked relevance for every query, in query order.
pub fn relevance_lists(
    queries: &[BinaryCode],
    labels: &[LabelVector],
    codes: &CodeMatrix,
    db_labels: &[LabelVector],
) -> Result<Vec<Vec<bool>>> {
    if queries.is_empty() {
        return Err(Error::Input("no queries to evaluate".into()));
    }
    if queries.len() != labels.len() {
        return Err(Error::dim("query labels", &[queries.len()], &[labels.len()]));
    }
    queries
        .par_iter()
        .zip(labels)
        .map(|(q, y)| ranked_relevance(q, y, codes, db_labels))
        .collect()
}

fn mean_ap(lists: &[Vec<bool>]) -> f64 {
    let aps: Vec<f64> = lists.par_iter().map(|r| average_precision(r)).collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// Mean AP where relevance is judged against each query's target label.
pub fn t_map(adv_codes: &[BinaryCode], targets: &[LabelVector], codes: &CodeMatrix, db_labels: &[LabelVector]) -> Result<f64> {
    Ok(mean_ap(&relevance_lists(adv_codes, targets, codes, db_labels)?))
}

/// Mean AP where relevance is judged against each query's true label.
pub fn map(query_codes: &[BinaryCode], labels: &[LabelVector], codes: &CodeMatrix, db_labels: &[LabelVector]) -> Result<f64> {
    Ok(mean_ap(&relevance_lists(query_codes, labels, codes, db_labels)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub cutoff: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TopN {
    pub n: usize,
    pub precision: f64,
}

/// About `points` evenly spaced rank cutoffs ending at `n`.
pub fn pr_cutoffs(n: usize, points: usize) -> Vec<usize> {
    let points = points.max(1);
    let mut out: Vec<usize> = (1..=points).map(|i| (n * i).div_ceil(points)).filter(|&c| c > 0).collect();
    out.dedup();
    out
}

/// Precision and recall at each cutoff averaged over queries, and precision at
/// each `topn` entry not beyond the list length. Recall averages only over
/// queries with at least one relevant item.
pub fn pr_and_topn(lists: &[Vec<bool>], cutoffs: &[usize], topn: &[usize]) -> Result<(Vec<PrPoint>, Vec<TopN>)> {
    let n = lists.first().map(Vec::len).ok_or_else(|| Error::Input("no ranked lists".into()))?;
    if lists.iter().any(|l| l.len() != n) {
        return Err(Error::Input("ranked lists differ in length".into()));
    }
    let prefix: Vec<Vec<usize>> = lists
        .iter()
        .map(|l| {
            let mut acc = 0;
            std::iter::once(0)
                .chain(l.iter().map(|&r| {
                    acc += r as usize;
                    acc
                }))
                .collect()
        })
        .collect();
    let with_relevant: Vec<&Vec<usize>> = prefix.iter().filter(|p| p[n] > 0).collect();
    let q = lists.len() as f64;
    let precision_at = |c: usize| prefix.iter().map(|p| p[c] as f64 / c as f64).sum::<f64>() / q;
    let pr = cutoffs
        .iter()
        .filter(|&&c| c >= 1 && c <= n)
        .map(|&c| PrPoint {
            cutoff: c,
            precision: precision_at(c),
            recall: if with_relevant.is_empty() {
                0.0
            } else {
                with_relevant.iter().map(|p| p[c] as f64 / p[n] as f64).sum::<f64>() / with_relevant.len() as f64
            },
        })
        .collect();
    let top = topn
        .iter()
        .filter(|&&c| c >= 1 && c <= n)
        .map(|&c| TopN {
            n: c,
            precision: precision_at(c),
        })
        .collect();
    Ok((pr, top))
}

/// `sqrt(‖x′ − x‖² / Z)`.
pub fn perceptibility(x: &[f64], x_adv: &[f64]) -> Result<f64> {
    if x.len() != x_adv.len() {
        return Err(Error::dim("perceptibility", &[x.len()], &[x_adv.len()]));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = x.iter().zip(x_adv).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub t_map: f64,
    pub map: f64,
    pub perceptibility: f64,
    /// Queries whose target label matches nothing in the database; their AP is 0.
    pub queries_without_relevant: usize,
    #[serde(skip)]
    pub pr_curve: Vec<PrPoint>,
    #[serde(skip)]
    pub precision_at_n: Vec<TopN>,
    #[serde(skip)]
    pub mean_generation_time: Option<f64>,
}

pub struct EvalInput<'a> {
    pub method: &'a str,
    pub codes: &'a [BinaryCode],
    pub true_labels: &'a [LabelVector],
    pub targets: &'a [LabelVector],
    pub database: &'a CodeMatrix,
    pub db_labels: &'a [LabelVector],
    pub originals: Option<&'a [Vec<f64>]>,
    pub perturbed: Option<&'a [Vec<f64>]>,
    pub cutoffs: &'a [usize],
    pub topn: &'a [usize],
    pub times: Option<&'a [f64]>,
}

pub fn evaluate(input: EvalInput<'_>) -> Result<EvalReport> {
    let target_lists = relevance_lists(input.codes, input.targets, input.database, input.db_labels)?;
    let true_lists = relevance_lists(input.codes, input.true_labels, input.database, input.db_labels)?;
    let (pr_curve, precision_at_n) = pr_and_topn(&target_lists, input.cutoffs, input.topn)?;
    let perceptibility = match (input.originals, input.perturbed) {
        (Some(xs), Some(advs)) => {
            if xs.len() != advs.len() {
                return Err(Error::dim("perturbed queries", &[xs.len()], &[advs.len()]));
            }
            let values = xs.iter().zip(advs).map(|(x, a)| perceptibility(x, a)).collect::<Result<Vec<_>>>()?;
            values.iter().sum::<f64>() / values.len().max(1) as f64
        }
        _ => 0.0,
    };
    Ok(EvalReport {
        method: input.method.to_string(),
        t_map: mean_ap(&target_lists),
        map: mean_ap(&true_lists),
        perceptibility,
        queries_without_relevant: target_lists.iter().filter(|l| !l.contains(&true)).count(),
        pr_curve,
        precision_at_n,
        mean_generation_time: input.times.map(|t| t.iter().sum::<f64>() / t.len().max(1) as f64),
    })
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("cutoff,precision,recall\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.cutoff, p.precision, p.recall));
    }
    out
}

pub fn topn_csv(points: &[TopN]) -> String {
    let mut out = String::from("N,precision\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.n, p.precision));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(bits: &[i8]) -> BinaryCode {
        BinaryCode::new(bits.to_vec()).unwrap()
    }

    fn lv(e: &[u8]) -> LabelVector {
        LabelVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true, false, false]), 1.0);
        assert!((average_precision(&[true, false, true, false]) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false; 4]), 0.0);
        assert_eq!(average_precision(&[]), 0.0);
    }

    #[test]
    fn exact_match_ranks_first() {
        let q = code(&[1, -1, 1]);
        let mut cols = vec![q.negated(); 8];
        cols[5] = q.clone();
        let b = CodeMatrix::new(3, cols).unwrap();
        let r = rank_database(&q, &b).unwrap();
        assert_eq!((r.indices[0], r.distances[0]), (5, 0));
        assert!(rank_database(&code(&[1]), &b).is_err());
    }

    #[test]
    fn identical_columns_keep_database_order() {
        let b = CodeMatrix::new(2, vec![code(&[1, 1]); 6]).unwrap();
        let r = rank_database(&code(&[-1, 1]), &b).unwrap();
        assert_eq!(r.indices, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn single_query_worked_value() {
        let q = code(&[1, 1]);
        let b = CodeMatrix::new(2, vec![code(&[1, 1]), code(&[1, -1]), code(&[-1, 1]), code(&[-1, -1])]).unwrap();
        let labels = [lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 0]), lv(&[0, 1])];
        let v = t_map(&[q], &[lv(&[1, 0])], &b, &labels).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_attack_and_ideal_codes() {
        let a = code(&[1, 1, 1, 1]);
        let b_code = a.negated();
        let b = CodeMatrix::new(4, vec![a.clone(), b_code.clone(), a.clone(), b_code.clone()]).unwrap();
        let labels = [lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 0]), lv(&[0, 1])];
        assert_eq!(t_map(std::slice::from_ref(&a), &[lv(&[1, 0])], &b, &labels).unwrap(), 1.0);
        assert_eq!(map(&[a, b_code], &[lv(&[1, 0]), lv(&[0, 1])], &b, &labels).unwrap(), 1.0);
        assert!(map(&[], &[], &b, &labels).is_err());
    }

    #[test]
    fn topn_examples() {
        let (pr, top) = pr_and_topn(&[vec![true, false]], &[1, 2], &[1, 2, 5]).unwrap();
        assert_eq!(top, vec![TopN { n: 1, precision: 1.0 }, TopN { n: 2, precision: 0.5 }]);
        assert_eq!(pr.last().unwrap().recall, 1.0);
        let (all, _) = pr_and_topn(&[vec![true; 5]], &pr_cutoffs(5, 5), &[]).unwrap();
        assert!(all.iter().all(|p| p.precision == 1.0));
    }

    #[test]
    fn cutoff_grid_ends_at_n() {
        assert_eq!(pr_cutoffs(10, 4), vec![3, 5, 8, 10]);
        assert_eq!(pr_cutoffs(3, 50), vec![1, 2, 3]);
    }

    #[test]
    fn perceptibility_examples() {
        assert_eq!(perceptibility(&[0.2, 0.3], &[0.2, 0.3]).unwrap(), 0.0);
        let x = [0.1, 0.4, 0.8];
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((perceptibility(&x, &shifted).unwrap() - 0.1).abs() < 1e-15);
        assert!(perceptibility(&x, &[0.0]).is_err());
    }

    #[test]
    fn csv_headers() {
        assert_eq!(
            pr_csv(&[PrPoint {
                cutoff: 1,
                precision: 0.5,
                recall: 0.25
            }]),
            "cutoff,precision,recall\n1,0.5,0.25\n"
        );
        assert_eq!(topn_csv(&[TopN { n: 10, precision: 1.0 }]), "N,precision\n10,1\n");
    }

    fn arb_bits(k: usize) -> impl Strategy<Value = Vec<i8>> {
        prop::collection::vec(prop::sample::select(vec![-1i8, 1]), k)
    }

    proptest! {
        #[test]
        fn ranking_by_distance_equals_ranking_by_inner(
            q in arb_bits(6),
            cols in prop::collection::vec(arb_bits(6), 1..30),
        ) {
            let q = code(&q);
            let b = CodeMatrix::new(6, cols.iter().map(|c| code(c)).collect()).unwrap();
            let ranked = rank_database(&q, &b).unwrap();
            let mut oracle: Vec<usize> = (0..b.len()).collect();
            oracle.sort_by_key(|&j| (-crate::hashing::inner(&q, b.column(j)).unwrap(), j));
            prop_assert_eq!(&ranked.indices, &oracle);
            prop_assert!(ranked.distances.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn ap_is_one_iff_relevant_items_lead(rel in prop::collection::vec(any::<bool>(), 1..40)) {
            let ap = average_precision(&rel);
            prop_assert!((0.0..=1.0).contains(&ap));
            let hits = rel.iter().filter(|&&r| r).count();
            let leads = hits > 0 && rel[..hits].iter().all(|&r| r);
            prop_assert_eq!(ap == 1.0, leads);
        }

        #[test]
        fn perceptibility_is_a_scaled_metric(
            v in prop::collection::vec(0.0f64..1.0, 12),
        ) {
            let (a, rest) = v.split_at(4);
            let (b, c) = rest.split_at(4);
            let ab = perceptibility(a, b).unwrap();
            prop_assert_eq!(ab, perceptibility(b, a).unwrap());
            prop_assert!(perceptibility(a, c).unwrap() <= ab + perceptibility(b, c).unwrap() + 1e-12);
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!((ab - (sq / 4.0).sqrt()).abs() < 1e-12);
        }

        #[test]
        fn pr_values_are_probabilities(rels in prop::collection::vec(prop::collection::vec(any::<bool>(), 8), 1..6)) {
            let (pr, top) = pr_and_topn(&rels, &pr_cutoffs(8, 8), &[1, 4, 8]).unwrap();
            prop_assert!(pr.iter().all(|p| (0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall)));
            prop_assert!(pr.windows(2).all(|w| w[0].recall <= w[1].recall));
            prop_assert!(top.iter().all(|t| (0.0..=1.0).contains(&t.precision)));
            if rels.iter().any(|r| r.contains(&true)) {
                prop_assert!((pr.last().unwrap().recall - 1.0).abs() < 1e-12);
            }
        }
    }
}
