fn main() {
    std::process::exit(cutpoint_select::cli::run(std::env::args_os()));
}
