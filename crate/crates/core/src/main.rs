fn main() {
    std::process::exit(swarm_imitation::cli::run(std::env::args_os()));
}
