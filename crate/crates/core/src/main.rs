fn main() {
    std::process::exit(mail_core::harness::run(std::env::args_os()));
}
