fn main() {
    std::process::exit(mrdmix::cli::run(std::env::args_os().collect()));
}
