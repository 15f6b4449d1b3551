fn main() {
    eprintln!("command-line driver is not wired up yet");
    std::process::exit(2);
}
