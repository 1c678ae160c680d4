fn main() -> std::process::ExitCode {
    rbm_prune::cli::main()
}
