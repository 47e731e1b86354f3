fn main() {
    std::process::exit(tsalign::cli::dispatch(std::env::args_os()));
}
