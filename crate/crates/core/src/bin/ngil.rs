fn main() {
    std::process::exit(ngil::cli::dispatch(std::env::args_os()));
}
