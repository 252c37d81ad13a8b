fn main() {
    std::process::exit(planforge::cli::run_from_env());
}
