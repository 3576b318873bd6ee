use laneflow::cli;

fn main() {
    std::process::exit(cli::run());
}
