//! Build block operators, regroup rows and inspect block norms.

use spdhg::BlockLinearOperator;

fn main() -> spdhg::Result<()> {
    // 4x3, one block per row
    let a = BlockLinearOperator::from_dense(
        4,
        3,
        &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, -2.0],
    )?;
    println!("blocks {} nnz {}", a.n_blocks(), a.nnz());
    println!("per-row norms {:?}", a.block_norms());

    let x = [1.0, -1.0, 0.5];
    println!("A x = {:?}", a.full_apply(&x)?);
    println!("A_2 x = {:?}", a.block_apply(2, &x)?);
    println!("A_2^T [1] = {:?}", a.adjoint_block_apply(2, &[1.0])?);

    let pairs = a.grouped_by(2)?;
    println!("pairs of rows: dims {:?}, norms {:?}", pairs.block_dims(), pairs.block_norms());
    let uneven = a.regrouped(&[1, 3])?;
    println!("1+3 split: norms {:?}", uneven.block_norms());
    println!("whole operator: ‖A‖ = {:.6}", a.single_block().max_block_norm());

    let sparse = BlockLinearOperator::from_sparse_rows(5, &[vec![(0, 1.0), (4, -1.0)], vec![(2, 3.0)]])?;
    println!("sparse block 0 touches columns {:?}", sparse.block_support(0));
    Ok(())
}
