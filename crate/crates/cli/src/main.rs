fn main() {
    std::process::exit(mminforec::cli::dispatch(std::env::args_os()));
}
