fn main() {
    std::process::exit(farey_skew::cli::run(std::env::args_os()));
}
