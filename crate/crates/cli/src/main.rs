use std::process::ExitCode;

fn main() -> ExitCode {
    match pairtrade_cli::thread_cap() {
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: thread pool: {e}");
                return ExitCode::from(1);
            }
        }
        Ok(None) => {}
    }
    ExitCode::from(pairtrade_cli::execute(std::env::args_os()))
}
