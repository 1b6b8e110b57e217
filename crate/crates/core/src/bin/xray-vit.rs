fn main() {
    std::process::exit(xray_vit::cli::run(std::env::args_os()));
}
