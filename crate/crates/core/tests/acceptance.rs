use anchored_opt::acceptance::{AcceptOptions, Suite};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let suite = Suite::new(AcceptOptions { out: dir.path().to_path_buf() });
    let verbose = std::env::args().any(|a| a == "--nocapture") || std::env::var_os("ACCEPT_VERBOSE").is_some();
    let mut failed = 0;
    let results = suite.run_all();
    for r in &results {
        println!("{}", r.line());
        if verbose || !r.passed() {
            print!("{}", r.details());
        }
        failed += usize::from(!r.passed());
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
