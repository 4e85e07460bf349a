fn main() {
    std::process::exit(agora_core::sandbox::fake_guest::main_stdio());
}
