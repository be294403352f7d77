fn main() {
    std::process::exit(biobj_tune::driver::cli::cli_main(std::env::args_os()));
}
