use crate::error::{contract, Result, UbpError};
use crate::numkernel::{Matrix, Real};

/// Ranked gallery for each query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Gallery indices, best first.
    pub rankings: Vec<Vec<usize>>,
    /// 1-based rank of each query's true gallery item.
    pub true_ranks: Vec<usize>,
    pub gallery_size: usize,
}

/// Sorts the gallery by descending inner product with each query; equal
/// scores keep ascending gallery order. `targets[q]` is the gallery index
/// of query `q`'s true match.
pub fn rank_gallery<T: Real>(queries: &Matrix<T>, gallery: &Matrix<T>, targets: &[usize]) -> Result<RetrievalResult> {
    contract!(
        queries.cols() == gallery.cols(),
        "queries have dim {}, gallery has dim {}",
        queries.cols(),
        gallery.cols()
    );
    contract!(gallery.rows() >= 2, "gallery needs at least 2 items");
    contract!(
        targets.len() == queries.rows(),
        "{} targets for {} queries",
        targets.len(),
        queries.rows()
    );
    let g = gallery.rows();
    if let Some(bad) = targets.iter().find(|&&t| t >= g) {
        return Err(UbpError::Contract(format!("target {bad} outside a gallery of {g}")));
    }
    let mut rankings = Vec::with_capacity(queries.rows());
    let mut true_ranks = Vec::with_capacity(queries.rows());
    for (q, &target) in targets.iter().enumerate() {
        let row = queries.row(q);
        let scores: Vec<f64> = (0..g)
            .map(|j| row.iter().zip(gallery.row(j)).map(|(a, b)| a.as_f64() * b.as_f64()).sum())
            .collect();
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let rank = order.iter().position(|&j| j == target).expect("target is in range") + 1;
        true_ranks.push(rank);
        rankings.push(order);
    }
    Ok(RetrievalResult {
        rankings,
        true_ranks,
        gallery_size: g,
    })
}

/// Percent of queries whose true item is within the first `k`.
pub fn topk_accuracy(res: &RetrievalResult, k: usize) -> f64 {
    if res.true_ranks.is_empty() {
        return 0.0;
    }
    let hits = res.true_ranks.iter().filter(|&&r| r <= k).count();
    100.0 * hits as f64 / res.true_ranks.len() as f64
}

/// Mean reciprocal rank in percent (average precision with one relevant item).
pub fn map_score(res: &RetrievalResult) -> f64 {
    if res.true_ranks.is_empty() {
        return 0.0;
    }
    100.0 * res.true_ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / res.true_ranks.len() as f64
}

/// Mean cosine similarity of row-paired embeddings, without temperature.
pub fn mean_similarity<T: Real>(h_b: &Matrix<T>, h_v: &Matrix<T>) -> Result<f64> {
    contract!(
        h_b.shape() == h_v.shape(),
        "paired embeddings differ in shape: {:?} vs {:?}",
        h_b.shape(),
        h_v.shape()
    );
    contract!(h_b.rows() >= 1, "no pairs");
    let mut total = 0.0;
    for (a, b) in h_b.row_iter().zip(h_v.row_iter()) {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (x, y) = (x.as_f64(), y.as_f64());
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        if aa == 0.0 || bb == 0.0 {
            return Err(UbpError::Degenerate("zero embedding in similarity".into()));
        }
        total += ab / (aa * bb).sqrt();
    }
    Ok(total / h_b.rows() as f64)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    contract!(x.len() == y.len(), "correlation inputs differ in length: {} vs {}", x.len(), y.len());
    contract!(x.len() >= 3, "correlation needs at least 3 points, got {}", x.len());
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(UbpError::Degenerate("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranks(r: &[usize], g: usize) -> RetrievalResult {
        RetrievalResult {
            rankings: vec![],
            true_ranks: r.to_vec(),
            gallery_size: g,
        }
    }

    #[test]
    fn hand_counted_examples() {
        assert!((topk_accuracy(&ranks(&[1, 3, 7], 10), 5) - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(topk_accuracy(&ranks(&[1, 1], 10), 1), 100.0);
        assert!((map_score(&ranks(&[1, 2, 4], 10)) - 175.0 / 3.0).abs() < 1e-12);
        assert!((map_score(&ranks(&[8, 8], 8)) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn self_retrieval_and_orthogonal_gallery() {
        let g = Matrix::<f64>::identity(5);
        let res = rank_gallery(&g, &g, &[0, 1, 2, 3, 4]).unwrap();
        assert!(res.true_ranks.iter().all(|&r| r == 1));
        let q = Matrix::from_rows(&[g.row(3).to_vec()]).unwrap();
        assert_eq!(rank_gallery(&q, &g, &[3]).unwrap().rankings[0][0], 3);
    }

    #[test]
    fn ties_break_by_index() {
        let g = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let res = rank_gallery(&q, &g, &[1]).unwrap();
        assert_eq!(res.rankings[0], vec![0, 1, 2]);
        assert_eq!(res.true_ranks[0], 2);
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = Matrix::<f64>::identity(3);
        let q = Matrix::<f64>::zeros(1, 2);
        assert!(rank_gallery(&q, &g, &[0]).is_err());
        assert!(rank_gallery(&g, &g, &[0, 1, 5]).is_err());
        assert!(rank_gallery(&g, &Matrix::identity(1), &[0, 0, 0]).is_err());
    }

    #[test]
    fn correlations() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &lin).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &lin).unwrap() - 1.0).abs() < 1e-12);
        let cube: Vec<f64> = x.iter().map(|v| -v * v * v).collect();
        let p = pearson(&x, &cube).unwrap();
        assert!(p > -1.0 && p < 0.0);
        assert!((spearman(&x, &cube).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(UbpError::Degenerate(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn similarity_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!((mean_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(mean_similarity(&a, &b).unwrap(), 0.0);
    }
}
