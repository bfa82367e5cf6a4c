fn main() {
    std::process::exit(risfl::exp::cli::run(std::env::args_os()));
}
