fn main() {
    std::process::exit(sentigan::app::run(std::env::args_os()));
}
