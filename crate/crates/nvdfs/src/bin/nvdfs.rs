fn main() {
    std::process::exit(nvdfs::cli::run_command(std::env::args_os()));
}
