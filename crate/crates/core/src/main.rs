fn main() {
    zefoz::exec::configure_threads_from_env();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = zefoz::cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::process::exit(code);
}
