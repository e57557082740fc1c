fn main() {
    std::process::exit(iqc_peak::cli::main_with_args(std::env::args_os()));
}
