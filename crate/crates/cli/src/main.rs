fn main() {
    std::process::exit(svreg_cli::run(std::env::args_os()));
}
