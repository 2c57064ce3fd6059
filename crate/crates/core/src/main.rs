fn main() {
    std::process::exit(plcauchy::cli::run(std::env::args_os()));
}
