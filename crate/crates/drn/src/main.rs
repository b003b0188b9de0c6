fn main() {
    std::process::exit(drn::run());
}
