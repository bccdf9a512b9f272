fn main() {
    std::process::exit(bolostat::cli::run(std::env::args_os()));
}
