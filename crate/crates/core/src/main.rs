fn main() { std::process::exit(idealbn::cli::cli_main(&std::env::args().collect::<Vec<_>>())); }
