//! Write a generated dataset in LIBSVM format, read it back and build a
//! problem from the file.

use spdhg::problems::{self, GeneratorSpec, LoadOptions, ProblemKind};

fn main() -> spdhg::Result<()> {
    let dir = std::env::temp_dir().join("spdhg-libsvm-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("svm.txt");

    let mut spec = GeneratorSpec::new(ProblemKind::SvmHinge, 50, 8);
    spec.lambda = 0.1;
    let g = problems::generate(&spec)?;
    problems::write_libsvm(&path, &g.data)?;
    println!("wrote {}", path.display());
    for line in std::fs::read_to_string(&path)?.lines().take(3) {
        println!("  {line}");
    }

    let back = problems::load_libsvm(&path, LoadOptions { p_override: Some(8), normalize: false })?;
    println!("round trip exact: {}", back == g.data);

    let normalized = problems::load_libsvm(&path, LoadOptions { p_override: Some(8), normalize: true })?;
    let p = problems::assemble(ProblemKind::SvmHinge, &normalized, 0.1, 5)?;
    println!("{} blocks of 5 rows, max block norm {:.4}", p.n_blocks(), p.a.max_block_norm());
    Ok(())
}
