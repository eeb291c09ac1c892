use std::panic;

fn main() {
    // The conic solver can panic on numerically hard attempts; those panics
    // are caught and retried, so keep them off the terminal.
    let default_hook = panic::take_hook();
    panic::set_hook(Box::new(move |info| {
        if info.location().is_some_and(|l| l.file().contains("clarabel")) {
            return;
        }
        default_hook(info);
    }));
    std::process::exit(wcum_cli::app::run(std::env::args_os()));
}
