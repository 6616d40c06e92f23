fn main() {
    std::process::exit(hsi_unfold::cli::main());
}
