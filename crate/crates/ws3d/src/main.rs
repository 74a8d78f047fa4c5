fn main() {
    std::process::exit(ws3d::cli::dispatch(std::env::args()));
}
