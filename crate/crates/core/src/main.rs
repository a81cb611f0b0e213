fn main() {
    std::process::exit(memcode::harness::cli_main(std::env::args_os()));
}
