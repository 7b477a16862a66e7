fn main() {
    std::process::exit(markov_approx::cli::run(std::env::args_os()));
}
