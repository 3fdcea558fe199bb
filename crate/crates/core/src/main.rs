fn main() {
    std::process::exit(siov_sim::cli::main_from_env());
}
