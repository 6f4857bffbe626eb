use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::SparseVector;
use crate::error::{Error, Result};
use crate::numeric::Scalar;

/// Handles to the pieces of the fine-tuning objective.
#[derive(Clone, Copy, Debug)]
pub struct RankingLoss {
    pub total: Var,
    pub contrastive: Var,
    /// `lambda_q * F(q) + lambda_d * F(docs)`.
    pub flops: Var,
}

/// FLOPS regularizer `sum_j (mean over rows of w_j)^2` for non-negative reps.
pub fn flops<T: Scalar>(tape: &mut Tape<T>, reps: Var) -> Result<Var> {
    let m = tape.col_mean(reps)?;
    let sq = tape.mul(m, m)?;
    tape.sum(sq)
}

/// In-batch softmax contrastive loss plus FLOPS regularization.
///
/// `q`, `pos` and `neg` are `[B x V]`. Query `i` is scored against its own
/// positive (class 0) and every negative in the batch. The document FLOPS
/// term averages over all `2B` document rows.
pub fn ranking_loss<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    pos: Var,
    neg: Var,
    lambda_q: f64,
    lambda_d: f64,
) -> Result<RankingLoss> {
    let b = tape.value(q)?.rows();
    if b == 0 {
        return Err(Error::Dimension("ranking loss needs a non-empty batch".into()));
    }
    let pos_scores = tape.row_dot(q, pos)?;
    let neg_scores = tape.matmul_nt(q, neg)?;
    let logits = tape.concat_cols(pos_scores, neg_scores)?;
    let contrastive = tape.softmax_cross_entropy(logits, &vec![0; b], usize::MAX)?;

    let fq = flops(tape, q)?;
    let fq = tape.scale(fq, T::lit(lambda_q))?;
    let mp = tape.col_mean(pos)?;
    let mn = tape.col_mean(neg)?;
    let md = tape.add(mp, mn)?;
    let md = tape.scale(md, T::lit(0.5))?;
    let sq = tape.mul(md, md)?;
    let fd = tape.sum(sq)?;
    let fd = tape.scale(fd, T::lit(lambda_d))?;
    let reg = tape.add(fq, fd)?;
    let total = tape.add(contrastive, reg)?;
    Ok(RankingLoss {
        total,
        contrastive,
        flops: reg,
    })
}

/// Value of [`ranking_loss`] for fixed representations of dimension `dim`.
pub fn ranking_loss_value(
    q: &[SparseVector],
    pos: &[SparseVector],
    neg: &[SparseVector],
    dim: usize,
    lambda_q: f64,
    lambda_d: f64,
) -> Result<f64> {
    if q.is_empty() || q.len() != pos.len() || q.len() != neg.len() {
        return Err(Error::Dimension(format!(
            "ranking loss batch sizes: {} queries, {} positives, {} negatives",
            q.len(),
            pos.len(),
            neg.len()
        )));
    }
    let dense = |vs: &[SparseVector]| -> Result<Tensor<f64>> {
        let data = vs
            .iter()
            .flat_map(|v| v.to_dense(dim).into_iter().map(f64::from))
            .collect();
        Tensor::new(vec![vs.len(), dim], data)
    };
    let mut tape = Tape::<f64>::new();
    let (qv, pv, nv) = (
        tape.constant(dense(q)?),
        tape.constant(dense(pos)?),
        tape.constant(dense(neg)?),
    );
    let loss = ranking_loss(&mut tape, qv, pv, nv, lambda_q, lambda_d)?;
    Ok(tape.value(loss.total)?.item())
}
