use std::process::exit;

fn main() {
    exit(distexchange::harness::cli(std::env::args()));
}
