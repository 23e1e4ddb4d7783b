//! Built-in partitioning strategies: block ranges with halo views,
//! two-dimensional blocks, and the compressed-row element splitter.

use somd::partition::{block_block_partition, index_partition, row_disjoint_partition};

fn main() {
    println!("block partition of [0, 10) three ways, view <1,1>:");
    for (rank, r) in index_partition(10, 3, (1, 1)).iter().enumerate() {
        println!(
            "  rank {rank}: owns [{}, {}), sees [{}, {})",
            r.lo, r.hi, r.view_lo, r.view_hi
        );
    }

    let plan = block_block_partition(8, 8, 4, ((1, 1), (1, 1)));
    println!("\n8x8 matrix over 4 instances -> {}x{} grid:", plan.grid.0, plan.grid.1);
    for k in 0..4 {
        let rr = plan.row_ranges[k / plan.grid.1];
        let cr = plan.col_ranges[k % plan.grid.1];
        println!(
            "  rank {k}: rows [{}, {}) x cols [{}, {}), window rows [{}, {})",
            rr.lo, rr.hi, cr.lo, cr.hi, rr.view_lo, rr.view_hi
        );
    }

    // compressed-row data: element boundaries never split a row
    let rows = vec![0, 0, 0, 1, 1, 2, 2, 2, 2, 3];
    println!("\nrow-disjoint split of {rows:?} two ways:");
    for (rank, r) in row_disjoint_partition(&rows, 2).iter().enumerate() {
        println!("  rank {rank}: elements [{}, {})", r.lo, r.hi);
    }
}
