fn main() {
    std::process::exit(pltr::cli::dispatch(std::env::args_os()));
}
