use mfgp_search::cli::{main_with_args, THREADS_ENV};

fn main() {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring {THREADS_ENV}={v}: expected a positive integer"),
        }
    }
    std::process::exit(main_with_args(std::env::args_os()));
}
