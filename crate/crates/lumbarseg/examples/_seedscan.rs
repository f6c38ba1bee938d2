use lumbarseg::dataset::{gen_phantom, PhantomSpec};

fn main() {
    let mut rejected = 0usize;
    for seed in 0..1000u64 {
        let spec = PhantomSpec {
            seed,
            ..PhantomSpec::default()
        };
        if let Err(e) = gen_phantom(&spec) {
            rejected += 1;
            println!("seed {seed}: {e}");
        }
    }
    println!("{rejected} of 1000 seeds rejected");
}
