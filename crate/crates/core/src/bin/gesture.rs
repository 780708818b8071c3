fn main() {
    std::process::exit(gesture_synth::cli::run(std::env::args_os()));
}
